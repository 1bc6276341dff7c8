"""Round primitives of the federated protocol.

A round samples a subset of clients, each of which estimates its gain on
its first batch, trains the received global model locally (and, when
recovery is active, steps its adapted model after every batch), and
reports back. The server combines reports by sample-size-weighted
averaging, optionally with update clipping and Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .detection import (
    ClientDetector,
    DetectorState,
    client_local_policy,
    estimate_client_gain,
)
from .errors import ConfigError, ProtocolError
from .model import Batch, ModelSpec, ParamVector, grad, sgd_step
from .recovery import AdaptationConfig, adapt_step
from .rng import substream

if TYPE_CHECKING:  # pragma: no cover
    from .adversary import FabricationPolicy


class SkipClient(Exception):
    """Raised when a sampled client cannot contribute this round."""


@dataclass
class ClientReport:
    """One client's upload: updated parameters, estimated gain, sample count."""

    client_id: int
    params: ParamVector
    beta_hat: float
    n_samples: int

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ProtocolError("a report must cover at least one sample")
        if not -1.0 <= self.beta_hat <= 1.0:
            raise ProtocolError(f"beta_hat {self.beta_hat} outside [-1, 1]")


@dataclass
class ClientState:
    client_id: int
    train: Batch
    test: Batch
    p_i: float
    private_params: ParamVector
    behavior: str = "honest_guard"
    adapted: ParamVector | None = None
    local: ClientDetector = field(default_factory=ClientDetector)
    fabrication: "FabricationPolicy | None" = None
    # Per-round bookkeeping the driver reads back after an update.
    adapt_steps: int = 0
    last_policy_action: str | None = None

    @property
    def n_samples(self) -> int:
        return len(self.train)


@dataclass
class ServerState:
    round: int
    global_params: ParamVector
    detector: DetectorState

    @property
    def beta_round_history(self) -> list[float]:
        return self.detector.history

    @property
    def cnt(self) -> int:
        return self.detector.cnt

    @property
    def nfl_flag(self) -> bool:
        return self.detector.nfl_flag


@dataclass(frozen=True)
class LocalUpdateParams:
    """Static knobs every client update needs."""

    epochs: int
    batch_size: int
    eta: float
    adaptation: AdaptationConfig
    nr: int
    c: int
    allow_local_policy: bool = True


def sample_active(n_clients: int, k: int, round_idx: int, seed: int) -> list[int]:
    """The round's active set: k of n clients, uniform without replacement,
    deterministic in (seed, round). Returned in ascending id order."""
    if not 1 <= k <= n_clients:
        raise ConfigError(f"active count k={k} must lie in [1, {n_clients}]")
    rng = substream(seed, "sampling", round_idx)
    return sorted(int(i) for i in rng.choice(n_clients, size=k, replace=False))


def client_update(
    client: ClientState,
    w_prev: ParamVector,
    nfl_flag: bool,
    params: LocalUpdateParams,
    rng: np.random.Generator,
) -> ClientReport:
    """Run one client's round and build its report.

    Order of operations: shuffle the local data into size-B batches,
    initialize the adapted model if recovery just began, estimate the gain
    on the first batch (against the adapted model when recovery is active,
    else the received global model), apply the client's own
    activate/stop policy, then run E epochs of SGD, stepping the adapted
    model after each batch while recovery is active.
    """
    n = client.n_samples
    if n == 0:
        raise SkipClient(client.client_id)
    order = rng.permutation(n)
    bs = params.batch_size
    batches = [
        Batch(client.train.features[order[s : s + bs]], client.train.labels[order[s : s + bs]])
        for s in range(0, n, bs)
    ]

    adapting = nfl_flag or (params.allow_local_policy and client.local.active)
    if adapting and client.adapted is None:
        client.adapted = w_prev.copy()
    eval_model = client.adapted if adapting else w_prev
    beta_hat = estimate_client_gain(eval_model, batches[0], client.p_i)

    client.last_policy_action = None
    if params.allow_local_policy:
        client.local, action = client_local_policy(
            client.local, beta_hat, nfl_flag, params.nr, params.c
        )
        client.last_policy_action = action
        if action == "activate_adaptation":
            adapting = True
            if client.adapted is None:
                client.adapted = w_prev.copy()
        elif action == "stop_adaptation" and not nfl_flag:
            adapting = False

    w = w_prev
    steps = 0
    for _ in range(params.epochs):
        for b in batches:
            w = sgd_step(w, grad(w, b), params.eta)
            if adapting:
                client.adapted, _ = adapt_step(
                    client.adapted, w, b, params.eta, params.adaptation
                )
                steps += 1
    client.adapt_steps = steps
    return ClientReport(client.client_id, w, beta_hat, n)


def _sorted_checked(reports: Sequence[ClientReport], layout: ModelSpec) -> list[ClientReport]:
    if not reports:
        raise ProtocolError("cannot aggregate zero reports")
    reps = sorted(reports, key=lambda r: r.client_id)
    for r in reps:
        if r.params.spec != layout:
            raise ProtocolError(f"report from client {r.client_id} uses a different layout")
    return reps


def aggregate_fedavg(reports: Sequence[ClientReport], layout: ModelSpec) -> ParamVector:
    """Sample-size-weighted mean of the reported parameters.

    Weights are renormalized over the clients that actually reported, and
    summation runs in ascending client id order for bit determinism.
    """
    reps = _sorted_checked(reports, layout)
    total = sum(r.n_samples for r in reps)
    out = np.zeros(layout.param_count)
    for r in reps:
        out += (r.n_samples / total) * r.params.values
    return ParamVector(out, layout)


def clip_update(delta: ParamVector, s: float) -> ParamVector:
    """Rescale delta onto the L2 ball of radius s when it sticks out."""
    if s <= 0:
        raise ConfigError("clip bound must be positive")
    norm = float(np.linalg.norm(delta.values))
    if norm <= s:
        return delta
    return ParamVector(delta.values * (s / norm), delta.spec)


def aggregate_dp(
    w_prev: ParamVector,
    reports: Sequence[ClientReport],
    s: float,
    sigma: float,
    rng: np.random.Generator,
) -> ParamVector:
    """Privacy-noised aggregation: previous model plus the uniform mean of
    norm-clipped update deltas plus isotropic Gaussian noise."""
    if sigma < 0:
        raise ConfigError("noise scale must be nonnegative")
    reps = _sorted_checked(reports, w_prev.spec)
    acc = np.zeros(w_prev.spec.param_count)
    for r in reps:
        acc += clip_update(
            ParamVector(r.params.values - w_prev.values, w_prev.spec), s
        ).values
    out = w_prev.values + acc / len(reps)
    if sigma > 0:
        out = out + rng.normal(0.0, sigma, out.size)
    return ParamVector(out, w_prev.spec)
