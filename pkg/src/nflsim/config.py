"""Run configuration: schema, validation, defaults, and named presets.

A config file is JSON. Unknown keys are rejected with their path;
omitted keys take the documented defaults and are echoed back by
``SimConfig.to_dict``. Top-level keys:

  n_clients, active_fraction | active_count, rounds, local_epochs,
  batch_size, eta, mode, nr, c, seed, eval_every, weights_mode,
  model {layer_sizes, activation},
  data {kind: synthetic, class_count, dim, per_class, spread} or
       {kind: file, path, delimiter},
  partition {scheme, group_fractions, size_lognormal, train_fraction},
  private {epochs, eta, batch_size},
  dp {clip, sigma} | null,
  aggregator {kind, trim_k, f, m, k},
  adaptation {frozen_lower_layers, lambda_mode, lambda_value},
  behaviors {attacker_fraction, vanilla_fraction,
             fabrication {kind, value, low, high}}
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from .adversary import BehaviorAssignment, FabricationPolicy
from .data import PartitionPlan
from .errors import ConfigError
from .model import ModelSpec
from .recovery import AdaptationConfig
from .robust import AggregatorChoice

MODES = ("fedavg", "detect_recover", "all_time", "short_term")


@dataclass
class DataSpec:
    kind: str = "synthetic"
    class_count: int = 10
    dim: int = 32
    per_class: int = 2500
    spread: float = 0.3
    path: str | None = None
    delimiter: str = ","

    def __post_init__(self) -> None:
        if self.kind not in ("synthetic", "file"):
            raise ConfigError("data kind must be 'synthetic' or 'file'")
        if self.kind == "file" and not self.path:
            raise ConfigError("file data needs a path")


@dataclass
class PrivateSpec:
    epochs: int = 8
    eta: float = 0.5
    batch_size: int = 10

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigError("private epochs must be at least 1")


@dataclass
class DPSpec:
    clip: float = 0.05
    sigma: float = 0.005

    def __post_init__(self) -> None:
        if self.clip <= 0:
            raise ConfigError("dp clip bound must be positive")
        if self.sigma < 0:
            raise ConfigError("dp sigma must be nonnegative")


@dataclass
class SimConfig:
    n_clients: int = 50
    active_fraction: float | None = 0.1
    active_count: int | None = None
    rounds: int = 400
    local_epochs: int = 1
    batch_size: int = 10
    eta: float = 0.5
    mode: str = "detect_recover"
    nr: int = 50
    c: int = 50
    seed: int = 0
    eval_every: int = 5
    weights_mode: str = "equal"
    model: ModelSpec = field(default_factory=lambda: ModelSpec((32, 16, 10)))
    data: DataSpec = field(default_factory=DataSpec)
    partition: PartitionPlan = field(default_factory=PartitionPlan)
    private: PrivateSpec = field(default_factory=PrivateSpec)
    dp: DPSpec | None = None
    aggregator: AggregatorChoice = field(default_factory=AggregatorChoice)
    adaptation: AdaptationConfig = field(default_factory=AdaptationConfig)
    behaviors: BehaviorAssignment = field(default_factory=BehaviorAssignment)

    def __post_init__(self) -> None:
        self.validate()

    @property
    def k(self) -> int:
        """Active clients per round."""
        if self.active_count is not None:
            return self.active_count
        return max(1, int(round(self.active_fraction * self.n_clients)))

    def validate(self) -> None:
        if self.n_clients < 1:
            raise ConfigError("n_clients must be positive")
        if self.active_count is None and self.active_fraction is None:
            raise ConfigError("set either active_fraction or active_count")
        if self.active_count is not None and not 1 <= self.active_count <= self.n_clients:
            raise ConfigError(
                f"active_count={self.active_count} must lie in [1, n_clients={self.n_clients}]"
            )
        if self.active_fraction is not None and not 0.0 < self.active_fraction <= 1.0:
            raise ConfigError("active_fraction must lie in (0, 1]")
        for name in ("rounds", "local_epochs", "batch_size", "nr", "c", "eval_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.eta < 0:
            raise ConfigError("eta must be nonnegative")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.weights_mode not in ("equal", "size"):
            raise ConfigError("weights_mode must be 'equal' or 'size'")
        if self.adaptation.frozen_lower_layers >= self.model.n_layers:
            raise ConfigError(
                f"frozen_lower_layers={self.adaptation.frozen_lower_layers} needs a model "
                f"with more than that many layers (have {self.model.n_layers})"
            )
        if self.data.kind == "synthetic" and self.data.class_count != self.model.class_count:
            raise ConfigError(
                f"data has {self.data.class_count} classes but the model outputs "
                f"{self.model.class_count}"
            )
        self._resolve_aggregator()

    def _resolve_aggregator(self) -> None:
        """Fill unset robust-aggregation knobs from the expected attacker count."""
        agg = self.aggregator
        if agg.kind == "fedavg":
            return
        n = self.k
        expected = int(round(n * self.behaviors.attacker_fraction))
        if agg.kind == "trimmed_mean" and agg.trim_k is None:
            agg.trim_k = min(expected, (n - 1) // 2)
        if agg.kind == "multi_krum":
            if agg.f is None:
                agg.f = max(0, min(expected, (n - 3) // 2))
            if agg.m is None:
                agg.m = max(1, n - agg.f - 2)
        if agg.kind == "k_norm" and agg.k is None:
            agg.k = min(expected, n - 1)
        # Feasibility against the per-round report count.
        if agg.kind == "trimmed_mean" and n <= 2 * agg.trim_k:
            raise ConfigError(f"trim_k={agg.trim_k} infeasible with {n} active clients")
        if agg.kind == "multi_krum" and n < 2 * agg.f + 3:
            raise ConfigError(f"multi_krum f={agg.f} infeasible with {n} active clients")
        if agg.kind == "k_norm" and agg.k >= n:
            raise ConfigError(f"k={agg.k} infeasible with {n} active clients")

    def to_dict(self) -> dict:
        d = {
            "n_clients": self.n_clients,
            "active_fraction": self.active_fraction,
            "active_count": self.active_count,
            "rounds": self.rounds,
            "local_epochs": self.local_epochs,
            "batch_size": self.batch_size,
            "eta": self.eta,
            "mode": self.mode,
            "nr": self.nr,
            "c": self.c,
            "seed": self.seed,
            "eval_every": self.eval_every,
            "weights_mode": self.weights_mode,
            "model": {
                "layer_sizes": list(self.model.layer_sizes),
                "activation": self.model.activation,
            },
            "data": {
                "kind": self.data.kind,
                "class_count": self.data.class_count,
                "dim": self.data.dim,
                "per_class": self.data.per_class,
                "spread": self.data.spread,
                "path": self.data.path,
                "delimiter": self.data.delimiter,
            },
            "partition": {
                "scheme": self.partition.scheme,
                "group_fractions": list(self.partition.group_fractions),
                "size_lognormal": list(self.partition.size_lognormal),
                "train_fraction": self.partition.train_fraction,
            },
            "private": {
                "epochs": self.private.epochs,
                "eta": self.private.eta,
                "batch_size": self.private.batch_size,
            },
            "dp": None if self.dp is None else {"clip": self.dp.clip, "sigma": self.dp.sigma},
            "aggregator": {
                "kind": self.aggregator.kind,
                "trim_k": self.aggregator.trim_k,
                "f": self.aggregator.f,
                "m": self.aggregator.m,
                "k": self.aggregator.k,
            },
            "adaptation": {
                "frozen_lower_layers": self.adaptation.frozen_lower_layers,
                "lambda_mode": self.adaptation.lambda_mode,
                "lambda_value": self.adaptation.lambda_value,
            },
            "behaviors": {
                "attacker_fraction": self.behaviors.attacker_fraction,
                "vanilla_fraction": self.behaviors.vanilla_fraction,
                "fabrication": {
                    "kind": self.behaviors.fabrication.kind,
                    "value": self.behaviors.fabrication.value,
                    "low": self.behaviors.fabrication.low,
                    "high": self.behaviors.fabrication.high,
                },
            },
        }
        return d


class _Reader:
    """Strict dict walker that reports unknown keys with their path."""

    def __init__(self, raw: dict, path: str):
        if not isinstance(raw, dict):
            raise ConfigError(f"{path or 'config'} must be an object")
        self.raw = dict(raw)
        self.path = path

    def take(self, key: str, default):
        return self.raw.pop(key, default)

    def sub(self, key: str, default: dict | None) -> "_Reader | None":
        val = self.raw.pop(key, default)
        if val is None:
            return None
        return _Reader(val, f"{self.path}{key}.")

    def done(self) -> None:
        if self.raw:
            stray = sorted(self.raw)
            raise ConfigError(f"unknown config key(s): {[self.path + s for s in stray]}")


def from_dict(raw: dict) -> SimConfig:
    """Build and validate a SimConfig from plain JSON data."""
    r = _Reader(raw, "")
    base = SimConfig()

    def section(key: str, builder, default_obj):
        sub = r.sub(key, None)
        if sub is None:
            return default_obj
        return builder(sub)

    def build_model(s: _Reader) -> ModelSpec:
        spec = ModelSpec(
            tuple(s.take("layer_sizes", list(base.model.layer_sizes))),
            s.take("activation", base.model.activation),
        )
        s.done()
        return spec

    def build_data(s: _Reader) -> DataSpec:
        d = DataSpec(
            kind=s.take("kind", "synthetic"),
            class_count=s.take("class_count", base.data.class_count),
            dim=s.take("dim", base.data.dim),
            per_class=s.take("per_class", base.data.per_class),
            spread=s.take("spread", base.data.spread),
            path=s.take("path", None),
            delimiter=s.take("delimiter", ","),
        )
        s.done()
        return d

    def build_partition(s: _Reader) -> PartitionPlan:
        p = PartitionPlan(
            scheme=s.take("scheme", base.partition.scheme),
            group_fractions=tuple(s.take("group_fractions", list(base.partition.group_fractions))),
            size_lognormal=tuple(s.take("size_lognormal", list(base.partition.size_lognormal))),
            train_fraction=s.take("train_fraction", base.partition.train_fraction),
        )
        s.done()
        return p

    def build_private(s: _Reader) -> PrivateSpec:
        p = PrivateSpec(
            epochs=s.take("epochs", base.private.epochs),
            eta=s.take("eta", base.private.eta),
            batch_size=s.take("batch_size", base.private.batch_size),
        )
        s.done()
        return p

    def build_dp(s: _Reader) -> DPSpec:
        d = DPSpec(clip=s.take("clip", 0.05), sigma=s.take("sigma", 0.005))
        s.done()
        return d

    def build_aggregator(s: _Reader) -> AggregatorChoice:
        a = AggregatorChoice(
            kind=s.take("kind", "fedavg"),
            trim_k=s.take("trim_k", None),
            f=s.take("f", None),
            m=s.take("m", None),
            k=s.take("k", None),
        )
        s.done()
        return a

    def build_adaptation(s: _Reader) -> AdaptationConfig:
        a = AdaptationConfig(
            frozen_lower_layers=s.take("frozen_lower_layers", 0),
            lambda_mode=s.take("lambda_mode", "dynamic"),
            lambda_value=s.take("lambda_value", None),
        )
        s.done()
        return a

    def build_behaviors(s: _Reader) -> BehaviorAssignment:
        fab = s.sub("fabrication", None)
        if fab is None:
            policy = FabricationPolicy()
        else:
            policy = FabricationPolicy(
                kind=fab.take("kind", "honest"),
                value=fab.take("value", None),
                low=fab.take("low", None),
                high=fab.take("high", None),
            )
            fab.done()
        b = BehaviorAssignment(
            attacker_fraction=s.take("attacker_fraction", 0.0),
            vanilla_fraction=s.take("vanilla_fraction", 0.0),
            fabrication=policy,
        )
        s.done()
        return b

    active_fraction = r.take("active_fraction", None)
    active_count = r.take("active_count", None)
    if active_fraction is None and active_count is None:
        active_fraction = base.active_fraction

    cfg = SimConfig(
        n_clients=r.take("n_clients", base.n_clients),
        active_fraction=active_fraction,
        active_count=active_count,
        rounds=r.take("rounds", base.rounds),
        local_epochs=r.take("local_epochs", base.local_epochs),
        batch_size=r.take("batch_size", base.batch_size),
        eta=r.take("eta", base.eta),
        mode=r.take("mode", base.mode),
        nr=r.take("nr", base.nr),
        c=r.take("c", base.c),
        seed=r.take("seed", base.seed),
        eval_every=r.take("eval_every", base.eval_every),
        weights_mode=r.take("weights_mode", base.weights_mode),
        model=section("model", build_model, base.model),
        data=section("data", build_data, base.data),
        partition=section("partition", build_partition, base.partition),
        private=section("private", build_private, base.private),
        dp=section("dp", build_dp, None),
        aggregator=section("aggregator", build_aggregator, AggregatorChoice()),
        adaptation=section("adaptation", build_adaptation, AdaptationConfig()),
        behaviors=section("behaviors", build_behaviors, BehaviorAssignment()),
    )
    r.done()
    return cfg


def load_config(path) -> SimConfig:
    """Parse and validate a JSON config file."""
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from e
    return from_dict(raw)


def save_config(cfg: SimConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


# --- presets -----------------------------------------------------------

PRESET_HELP = {
    "ideal": "IID data, no attackers, no privacy noise; the healthy baseline",
    "nfl_default": "mixed non-IID data, 30% label-flip attackers, 10% active clients, noised aggregation",
    "vanilla_mix(p)": "nfl_default with fraction p of clients refusing recovery",
    "partial_adapt(L)": "nfl_default with the lowest L layers frozen during adaptation",
}

_PARAM_RE = re.compile(r"^(?P<name>[a-z_]+)\((?P<arg>-?[0-9.]+)\)$")


def preset(name: str) -> SimConfig:
    """A ready-made scenario config; parametrized presets use name(value)."""
    arg = None
    m = _PARAM_RE.match(name.strip())
    if m:
        name = m.group("name")
        arg = float(m.group("arg"))

    if name == "ideal":
        return from_dict(
            {
                "rounds": 300,
                "partition": {"scheme": "iid"},
                "behaviors": {"attacker_fraction": 0.0, "vanilla_fraction": 0.0},
                "dp": None,
            }
        )
    if name == "nfl_default":
        return from_dict(
            {
                "rounds": 400,
                "partition": {"scheme": "noniid_mixed"},
                "behaviors": {"attacker_fraction": 0.3, "vanilla_fraction": 0.0},
                "dp": {"clip": 0.05, "sigma": 0.005},
            }
        )
    if name == "vanilla_mix":
        if arg is None:
            raise ConfigError("vanilla_mix needs a fraction, e.g. vanilla_mix(0.5)")
        cfg = preset("nfl_default")
        cfg.behaviors = BehaviorAssignment(
            attacker_fraction=cfg.behaviors.attacker_fraction,
            vanilla_fraction=arg,
            fabrication=cfg.behaviors.fabrication,
        )
        cfg.validate()
        return cfg
    if name == "partial_adapt":
        if arg is None:
            raise ConfigError("partial_adapt needs a layer count, e.g. partial_adapt(1)")
        cfg = preset("nfl_default")
        cfg.adaptation = replace(cfg.adaptation, frozen_lower_layers=int(arg))
        cfg.validate()
        return cfg
    raise ConfigError(f"unknown preset {name!r}; known: {sorted(PRESET_HELP)}")
