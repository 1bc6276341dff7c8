"""Run-time detection of negative federated learning.

Clients estimate their per-round performance gain from the first training
batch; the server takes the per-round median, smooths it over a window of
c rounds, and flags the negative-learning state once the smoothed gain has
been negative in nr rounds. A flagged state is cancelled again after c
consecutive rounds whose per-round median is nonnegative.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from statistics import median
from typing import TYPE_CHECKING, Sequence

from .errors import ProtocolError
from .model import Batch, ParamVector, accuracy

if TYPE_CHECKING:  # pragma: no cover
    from .protocol import ClientState

ACTIVATE = "activate_adaptation"
STOP = "stop_adaptation"


@dataclass
class DetectorState:
    """Server-side detector: window length c, negative-rounds threshold nr."""

    c: int
    nr: int
    history: list[float] = field(default_factory=list)
    cnt: int = 0
    nfl_flag: bool = False
    last_negative_round: int | None = None

    @property
    def round(self) -> int:
        return len(self.history)

    @property
    def windowed(self) -> float:
        return windowed_gain(self.history, self.c)


def estimate_client_gain(eval_model: ParamVector, first_batch: Batch, p_i: float) -> float:
    """Estimated gain over the private model: accuracy on the round's first batch minus p_i."""
    if len(first_batch) == 0:
        raise ProtocolError("cannot estimate gain from an empty batch")
    return accuracy(eval_model, first_batch) - p_i


def round_median(gains: Sequence[float]) -> float:
    """Median of the round's reported client gains (even count: middle-pair mean)."""
    if not gains:
        raise ProtocolError("no client gains reported this round")
    return float(median(gains))


def windowed_gain(history: Sequence[float], c: int) -> float:
    """Mean of the last min(c, len) per-round gains."""
    if not history:
        raise ProtocolError("gain history is empty")
    tail = history[-c:] if c < len(history) else history
    return float(sum(tail) / len(tail))


def detector_step(state: DetectorState, beta_r: float) -> tuple[DetectorState, tuple[str, ...]]:
    """Advance the detector by one round.

    Appends beta_r, recomputes the windowed gain and, in order: bumps cnt
    when the windowed gain is negative, reports once cnt reaches nr,
    refreshes the last negative round, and cancels a standing report when
    more than c rounds have passed since that. cnt is never reset, so a
    cancelled report can re-arm immediately.
    """
    history = state.history + [float(beta_r)]
    r = len(history)
    win = windowed_gain(history, state.c)
    cnt = state.cnt + (1 if win < 0 else 0)
    flag = state.nfl_flag
    last_neg = state.last_negative_round
    events: list[str] = []
    if cnt >= state.nr and not flag:
        flag = True
        events.append("report")
    if beta_r < 0:
        last_neg = r
    if flag and last_neg is not None and r - last_neg > state.c:
        flag = False
        events.append("cancel")
    new = replace(
        state, history=history, cnt=cnt, nfl_flag=flag, last_negative_round=last_neg
    )
    return new, tuple(events)


def record_round(state: DetectorState, beta_r: float) -> DetectorState:
    """Append a per-round gain without running the detector (detector-off modes)."""
    return replace(state, history=state.history + [float(beta_r)])


@dataclass
class ClientDetector:
    """A client's private view for the individual-level measures."""

    neg_rounds: int = 0
    nonneg_streak: int = 0
    active: bool = False


def client_local_policy(
    state: ClientDetector, beta_i: float, system_flag: bool, nr: int, c: int
) -> tuple[ClientDetector, str | None]:
    """Independent per-client adaptation policy.

    A client activates its own adaptation after observing a negative gain
    in more than nr of its rounds while no system-wide flag stands, and
    stops (resetting its negative count) after c consecutive nonnegative
    gains.
    """
    neg = state.neg_rounds
    streak = state.nonneg_streak
    active = state.active
    if beta_i < 0:
        neg += 1
        streak = 0
    else:
        streak += 1
    action = None
    if not active and not system_flag and neg > nr:
        active = True
        action = ACTIVATE
    elif active and streak >= c:
        active = False
        neg = 0
        action = STOP
    return ClientDetector(neg, streak, active), action


@dataclass
class GainRecord:
    """Ground-truth gains over the private models: per client and weighted overall."""

    per_client: list[float]
    overall: float
    estimated_per_client: list[float] | None = None
    estimated_overall: float | None = None


def true_beta(
    clients: Sequence["ClientState"],
    inference_models: Sequence[ParamVector],
    weights_mode: str = "equal",
) -> GainRecord:
    """Exact gain of each client's inference model on its full test set.

    weights_mode "equal" averages uniformly; "size" weights by local
    sample counts.
    """
    if weights_mode not in ("equal", "size"):
        raise ProtocolError(f"unknown weights_mode {weights_mode!r}")
    betas = [
        accuracy(m, cl.test) - cl.p_i for cl, m in zip(clients, inference_models, strict=True)
    ]
    if weights_mode == "equal":
        overall = sum(betas) / len(betas)
    else:
        counts = [len(cl.train) for cl in clients]
        total = sum(counts)
        overall = sum(n * b for n, b in zip(counts, betas)) / total
    return GainRecord(betas, float(overall))
