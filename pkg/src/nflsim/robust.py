"""Alternative aggregation rules that tolerate poisoned reports.

All four operate unweighted on stacked update vectors (one row per
reporting client, rows in ascending client id). The distance-scoring and
norm-based rules break ties by client id so runs stay deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ProtocolError

KINDS = ("fedavg", "median", "trimmed_mean", "multi_krum", "k_norm")


@dataclass
class AggregatorChoice:
    kind: str = "fedavg"
    trim_k: int | None = None
    f: int | None = None
    m: int | None = None
    k: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"aggregator kind must be one of {KINDS}, got {self.kind!r}")


def _as_matrix(updates) -> np.ndarray:
    mat = np.asarray(updates, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] < 1:
        raise ProtocolError("need a nonempty 2-d stack of update vectors")
    return mat


def agg_median(updates) -> np.ndarray:
    """Coordinate-wise median (even count: middle-pair mean)."""
    return np.median(_as_matrix(updates), axis=0)


def agg_trimmed_mean(updates, trim_k: int) -> np.ndarray:
    """Per coordinate, drop the trim_k largest and smallest values and average the rest."""
    mat = _as_matrix(updates)
    n = mat.shape[0]
    if trim_k < 0 or n <= 2 * trim_k:
        raise ConfigError(f"trim_k={trim_k} infeasible for {n} reports")
    ordered = np.sort(mat, axis=0)
    return ordered[trim_k : n - trim_k].mean(axis=0)


def agg_multi_krum(updates, client_ids, f: int, m: int) -> np.ndarray:
    """Average the m reports whose summed squared distance to their
    n - f - 2 nearest peers is smallest; score ties go to the lower client id."""
    mat = _as_matrix(updates)
    n = mat.shape[0]
    if f < 0 or n < 2 * f + 3:
        raise ConfigError(f"multi_krum needs at least 2f+3={2 * f + 3} reports, got {n}")
    if not 1 <= m <= n - f:
        raise ConfigError(f"m={m} must lie in [1, n-f={n - f}]")
    ids = np.asarray(client_ids, dtype=np.int64)
    sq = ((mat[:, None, :] - mat[None, :, :]) ** 2).sum(axis=2)
    neighbors = n - f - 2
    scores = np.empty(n)
    for i in range(n):
        others = np.sort(np.delete(sq[i], i))
        scores[i] = others[:neighbors].sum()
    order = np.lexsort((ids, scores))
    return mat[order[:m]].mean(axis=0)


def agg_k_norm(updates, client_ids, k: int) -> np.ndarray:
    """Drop the k update vectors with the largest norms (ties: higher client id
    goes first), average the rest."""
    mat = _as_matrix(updates)
    n = mat.shape[0]
    if k < 0 or k >= n:
        raise ConfigError(f"k={k} infeasible for {n} reports")
    ids = np.asarray(client_ids, dtype=np.int64)
    norms = np.linalg.norm(mat, axis=1)
    drop_order = np.lexsort((-ids, -norms))
    keep = np.sort(drop_order[k:])
    return mat[keep].mean(axis=0)
