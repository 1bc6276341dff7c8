"""Client behavior layer: poisoners, fabricated gain reports, vanilla clients.

Attackers hold a label-flipped copy of their data (train and test alike,
fixed at run start) so every model they train or score is consistently
poisoned; optionally they replace the gain estimate they upload. Vanilla
clients follow the plain protocol and never touch recovery.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import LabeledDataset
from .errors import ConfigError
from .model import Batch, ParamVector
from .protocol import ClientReport, ClientState, LocalUpdateParams, client_update

BEHAVIORS = ("honest_guard", "vanilla", "attacker")
_POLICIES = ("honest", "constant", "uniform_random")


@dataclass
class FabricationPolicy:
    """What an attacker uploads as its gain estimate."""

    kind: str = "honest"
    value: float | None = None  # constant
    low: float | None = None  # uniform_random
    high: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in _POLICIES:
            raise ConfigError(f"fabrication policy must be one of {_POLICIES}")
        if self.kind == "constant":
            if self.value is None or not -1.0 <= self.value <= 1.0:
                raise ConfigError("constant fabrication needs a value in [-1, 1]")
        if self.kind == "uniform_random":
            if self.low is None or self.high is None:
                raise ConfigError("uniform_random fabrication needs low and high")
            if not -1.0 <= self.low <= self.high <= 1.0:
                raise ConfigError("fabrication range must satisfy -1 <= low <= high <= 1")


@dataclass
class BehaviorAssignment:
    attacker_fraction: float = 0.0
    vanilla_fraction: float = 0.0
    fabrication: FabricationPolicy | None = None

    def __post_init__(self) -> None:
        if self.fabrication is None:
            self.fabrication = FabricationPolicy()
        if not 0.0 <= self.attacker_fraction <= 1.0:
            raise ConfigError("attacker_fraction must lie in [0, 1]")
        if not 0.0 <= self.vanilla_fraction <= 1.0:
            raise ConfigError("vanilla_fraction must lie in [0, 1]")
        if self.attacker_fraction + self.vanilla_fraction > 1.0 + 1e-12:
            raise ConfigError("attacker and vanilla fractions may not overlap")


def _flip(labels: np.ndarray, class_count: int) -> np.ndarray:
    return class_count - 1 - labels


def flip_labels(data: LabeledDataset, class_count: int) -> LabeledDataset:
    """Relabel every example y -> class_count - 1 - y; features untouched."""
    if class_count < 2:
        raise ConfigError("label flipping needs at least 2 classes")
    return LabeledDataset(data.features.copy(), _flip(data.labels, class_count), class_count)


def flip_batch(batch: Batch, class_count: int) -> Batch:
    return Batch(batch.features.copy(), _flip(batch.labels, class_count))


def assign_behaviors(
    n_clients: int, assignment: BehaviorAssignment, rng: np.random.Generator
) -> list[str]:
    """Static behavior per client: round(N * fraction) attackers and vanilla
    clients drawn without replacement, the rest honest."""
    n_attack = int(np.floor(n_clients * assignment.attacker_fraction + 0.5))
    n_vanilla = int(np.floor(n_clients * assignment.vanilla_fraction + 0.5))
    if n_attack + n_vanilla > n_clients:
        raise ConfigError("behavior fractions round to more clients than exist")
    picks = rng.choice(n_clients, size=n_attack + n_vanilla, replace=False)
    behaviors = ["honest_guard"] * n_clients
    for cid in picks[:n_attack]:
        behaviors[int(cid)] = "attacker"
    for cid in picks[n_attack:]:
        behaviors[int(cid)] = "vanilla"
    return behaviors


def fabricate_beta(policy: FabricationPolicy, beta_hat: float, rng: np.random.Generator) -> float:
    if policy.kind == "constant":
        return float(policy.value)
    if policy.kind == "uniform_random":
        return float(rng.uniform(policy.low, policy.high))
    return beta_hat


def attacker_report(
    client: ClientState,
    w_prev: ParamVector,
    nfl_flag: bool,
    params: LocalUpdateParams,
    rng: np.random.Generator,
) -> ClientReport:
    """Standard client update over the attacker's (label-flipped) data, with
    the uploaded gain estimate replaced per its fabrication policy."""
    report = client_update(client, w_prev, nfl_flag, params, rng)
    policy = client.fabrication or FabricationPolicy()
    if policy.kind == "honest":
        return report
    return ClientReport(
        report.client_id, report.params, fabricate_beta(policy, report.beta_hat, rng), report.n_samples
    )


def vanilla_client_report(
    client: ClientState,
    w_prev: ParamVector,
    params: LocalUpdateParams,
    rng: np.random.Generator,
) -> ClientReport:
    """Plain protocol client: recovery flag pinned off, no individual policy,
    so it never initializes or trains an adapted model."""
    plain = replace(params, allow_local_policy=False)
    return client_update(client, w_prev, False, plain, rng)
