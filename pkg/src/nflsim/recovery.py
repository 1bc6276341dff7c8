"""Per-client adapted models for recovering from negative federated learning.

While recovery is active a client trains, next to its copy of the global
model, an adapted model that minimizes local loss plus a dynamically
weighted pull toward the in-progress local update. The weight is the
product of two sigmoids: one of the loss gap between the two models, one
of the alignment between their parameter difference and the local
gradient. Lower layers can be frozen to the global model to cut cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import ConfigError
from .model import Batch, ModelSpec, ParamVector, grad, loss

if TYPE_CHECKING:  # pragma: no cover
    from .protocol import ClientState

_GRAD_NORM_FLOOR = 1e-12
# Keep the weight inside the open unit interval even when a sigmoid
# saturates in float64; the clamp moves it by at most 2.3e-16.
_LAMBDA_MIN = float(np.nextafter(0.0, 1.0))
_LAMBDA_MAX = float(np.nextafter(1.0, 0.0))

_LAMBDA_MODES = ("dynamic", "fixed")


@dataclass
class AdaptationConfig:
    frozen_lower_layers: int = 0
    lambda_mode: str = "dynamic"
    lambda_value: float | None = None  # only read in fixed mode

    def __post_init__(self) -> None:
        self.frozen_lower_layers = int(self.frozen_lower_layers)
        if self.frozen_lower_layers < 0:
            raise ConfigError("frozen_lower_layers must be nonnegative")
        if self.lambda_mode not in _LAMBDA_MODES:
            raise ConfigError(f"lambda_mode must be one of {_LAMBDA_MODES}")
        if self.lambda_mode == "fixed":
            if self.lambda_value is None or self.lambda_value < 0:
                raise ConfigError("fixed lambda_mode needs a nonnegative lambda_value")


@dataclass
class LambdaDiagnostics:
    loss_div: float
    grad_div: float
    lam: float


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _lambda_with_grad(
    v: ParamVector, w_local: ParamVector, batch: Batch
) -> tuple[LambdaDiagnostics, ParamVector]:
    g = grad(v, batch)
    loss_div = loss(v, batch) - loss(w_local, batch)
    gnorm = float(np.linalg.norm(g.values))
    if gnorm < _GRAD_NORM_FLOOR:
        grad_div = 0.0
    else:
        grad_div = float((v.values - w_local.values) @ g.values) / gnorm
    lam = sigmoid(loss_div) * sigmoid(grad_div)
    lam = min(max(lam, _LAMBDA_MIN), _LAMBDA_MAX)
    return LambdaDiagnostics(loss_div, grad_div, lam), g


def compute_lambda(v: ParamVector, w_local: ParamVector, batch: Batch) -> LambdaDiagnostics:
    """Dynamic divergence weight from the loss gap and gradient alignment."""
    diag, _ = _lambda_with_grad(v, w_local, batch)
    return diag


def adapted_loss(v: ParamVector, w_local: ParamVector, batch: Batch, lam: float) -> float:
    """Local loss of the adapted model plus lam times its squared distance to w_local."""
    diff = v.values - w_local.values
    return loss(v, batch) + lam * float(diff @ diff)


def frozen_mask(spec: ModelSpec, n_frozen: int) -> np.ndarray:
    """Boolean mask of flat coordinates belonging to the lowest n_frozen layers."""
    if n_frozen >= spec.n_layers:
        raise ConfigError(
            f"cannot freeze {n_frozen} layers of a {spec.n_layers}-layer model"
        )
    mask = np.zeros(spec.param_count, dtype=bool)
    for w_sl, b_sl in spec.layer_spans()[:n_frozen]:
        mask[w_sl] = True
        mask[b_sl] = True
    return mask


def adapt_step(
    v: ParamVector,
    w_local: ParamVector,
    batch: Batch,
    eta: float,
    cfg: AdaptationConfig,
) -> tuple[ParamVector, LambdaDiagnostics | None]:
    """One SGD step of the adapted model.

    The divergence weight is held constant while differentiating, so the
    step direction is grad(loss) + 2*lam*(v - w_local). Frozen lower
    layers are not stepped; they mirror w_local instead. Fixed lambda_mode
    skips the diagnostics entirely.
    """
    if cfg.lambda_mode == "fixed":
        diag = None
        lam = float(cfg.lambda_value)
        g = grad(v, batch)
    else:
        diag, g = _lambda_with_grad(v, w_local, batch)
        lam = diag.lam
    step = g.values + 2.0 * lam * (v.values - w_local.values)
    new_values = v.values - eta * step
    if cfg.frozen_lower_layers > 0:
        mask = frozen_mask(v.spec, cfg.frozen_lower_layers)
        new_values[mask] = w_local.values[mask]
    return ParamVector(new_values, v.spec), diag


def inference_model(client: "ClientState", global_params: ParamVector) -> ParamVector:
    """The model a client tests with: its adapted model if one was ever made, else the global."""
    return client.adapted if client.adapted is not None else global_params
