"""Synthetic dataset generation and per-client partitioning.

Supports an IID split and a mixed non-IID scheme in which client groups
see all classes, half the classes, or two classes, with client sizes
drawn from a Lognormal law. Partitioning conserves the input multiset
exactly: no example is dropped or duplicated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, PartitionError
from .model import Batch

_SCHEMES = ("iid", "noniid_mixed")


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.class_count = int(self.class_count)
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise ConfigError("features must be 2-d and labels 1-d")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ConfigError("features and labels disagree on example count")
        if self.class_count < 1:
            raise ConfigError("class_count must be positive")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ConfigError("labels out of range for class_count")

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass
class PartitionPlan:
    """How a dataset is spread over clients.

    group_fractions gives the share of clients that see (all, half, two)
    of the classes under the mixed non-IID scheme; size_lognormal is the
    (mu, sigma) of the client-size law for that scheme. train_fraction is
    the per-client train/test split.
    """

    scheme: str = "iid"
    group_fractions: tuple[float, float, float] = (0.5, 0.3, 0.2)
    size_lognormal: tuple[float, float] = (0.0, 2.0)
    train_fraction: float = 0.9

    def __post_init__(self) -> None:
        if self.scheme not in _SCHEMES:
            raise ConfigError(f"scheme must be one of {_SCHEMES}, got {self.scheme!r}")
        self.group_fractions = tuple(float(f) for f in self.group_fractions)
        if len(self.group_fractions) != 3 or any(f < 0 for f in self.group_fractions):
            raise ConfigError("group_fractions must be three nonnegative values")
        if abs(sum(self.group_fractions) - 1.0) > 1e-9:
            raise ConfigError("group_fractions must sum to 1")
        self.size_lognormal = (float(self.size_lognormal[0]), float(self.size_lognormal[1]))
        if self.size_lognormal[1] < 0:
            raise ConfigError("lognormal sigma must be nonnegative")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie strictly between 0 and 1")


def gen_synthetic(
    class_count: int,
    dim: int,
    per_class: int,
    spread: float,
    rng: np.random.Generator,
) -> LabeledDataset:
    """Gaussian blobs: one mean per class on the unit sphere, isotropic noise.

    Deterministic in the generator passed in; rows come out grouped by class.
    """
    if class_count < 2:
        raise ConfigError("need at least 2 classes")
    if per_class < 1:
        raise ConfigError("need at least 1 example per class")
    if dim < 1:
        raise ConfigError("feature dimension must be positive")
    means = rng.normal(size=(class_count, dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    features = np.repeat(means, per_class, axis=0)
    features = features + spread * rng.normal(size=features.shape)
    labels = np.repeat(np.arange(class_count), per_class)
    return LabeledDataset(features, labels, class_count)


def load_delimited(path, delimiter: str = ",") -> LabeledDataset:
    """Import a dense dataset from text: one row per example, label in the last column."""
    raw = np.loadtxt(path, delimiter=delimiter, ndmin=2)
    if raw.shape[1] < 2:
        raise ConfigError("need at least one feature column plus the label column")
    labels = raw[:, -1]
    if not np.allclose(labels, np.round(labels)):
        raise ConfigError("last column must hold integer class labels")
    labels = labels.astype(np.int64)
    if labels.min() < 0:
        raise ConfigError("labels must be nonnegative")
    return LabeledDataset(raw[:, :-1], labels, int(labels.max()) + 1)


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer shares proportional to weights, summing to total exactly."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.sum() <= 0:
        raise PartitionError("weights must have positive sum")
    shares = weights / weights.sum() * total
    base = np.floor(shares).astype(np.int64)
    short = total - int(base.sum())
    # Stable sort keeps ties deterministic (lower index wins).
    order = np.argsort(-(shares - base), kind="stable")
    base[order[:short]] += 1
    return base


def _client_sizes(n_examples: int, n_clients: int, plan: PartitionPlan, rng) -> np.ndarray:
    mu, sigma = plan.size_lognormal
    raw = rng.lognormal(mu, sigma, n_clients)
    sizes = _largest_remainder(raw, n_examples)
    # Every client needs at least one train and one test example.
    for i in range(n_clients):
        while sizes[i] < 2:
            donor = int(np.argmax(sizes))
            sizes[donor] -= 1
            sizes[i] += 1
    return sizes


def _class_subsets(n_clients: int, class_count: int, plan: PartitionPlan, rng) -> list[np.ndarray]:
    counts = _largest_remainder(np.asarray(plan.group_fractions), n_clients)
    subsets: list[np.ndarray] = []
    sizes = (class_count, max(1, class_count // 2), min(2, class_count))
    for group, n_in_group in enumerate(counts):
        for _ in range(n_in_group):
            if group == 0:
                subsets.append(np.arange(class_count))
            else:
                subsets.append(np.sort(rng.choice(class_count, sizes[group], replace=False)))
    return subsets


def _allocate_noniid(labels: np.ndarray, subsets, sizes, rng) -> list[np.ndarray]:
    """Hand out example indices so client i draws only from its class subset.

    Clients are served most-constrained-first (fewest classes), each taking
    up to its target size proportionally to what remains of its classes;
    leftovers are then drained onto clients that may hold the class,
    under-target ones first. Conservation is exact; a client that cannot
    even reach two examples makes the plan infeasible.
    """
    class_count = int(labels.max()) + 1
    pools = []
    cursor = []
    for c in range(class_count):
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        pools.append(idx)
        cursor.append(0)

    taken: list[list[np.ndarray]] = [[] for _ in subsets]
    got = np.zeros(len(subsets), dtype=np.int64)

    def remaining(pool_id: int) -> int:
        return len(pools[pool_id]) - cursor[pool_id]

    def draw(client: int, pool_id: int, count: int) -> int:
        count = min(count, remaining(pool_id))
        if count > 0:
            taken[client].append(pools[pool_id][cursor[pool_id] : cursor[pool_id] + count])
            cursor[pool_id] += count
            got[client] += count
        return count

    order = sorted(range(len(subsets)), key=lambda i: (len(subsets[i]), i))
    for i in order:
        classes = subsets[i]
        avail = np.array([remaining(int(c)) for c in classes], dtype=np.int64)
        target = min(int(sizes[i]), int(avail.sum()))
        if target <= 0:
            continue
        quotas = _largest_remainder(np.maximum(avail, 0), target)
        for c, q in zip(classes, quotas):
            draw(i, int(c), int(q))

    for c in range(class_count):
        if remaining(c) == 0:
            continue
        eligible = [i for i, classes in enumerate(subsets) if c in classes]
        if not eligible:
            raise PartitionError(f"class {c} has leftover examples no client may hold")
        # Clients still short of their target get first pick.
        spot = 0
        while remaining(c) > 0:
            hungry = [i for i in eligible if got[i] < sizes[i]] or eligible
            draw(hungry[spot % len(hungry)], c, 1)
            spot += 1

    for i in range(len(subsets)):
        if got[i] < 2:
            raise PartitionError(
                f"client {i} received {int(got[i])} example(s); its classes "
                f"{list(map(int, subsets[i]))} cannot supply a train/test split"
            )
    return [np.concatenate(parts) for parts in taken]


def _split_train_test(
    features: np.ndarray, labels: np.ndarray, train_fraction: float, rng
) -> tuple[Batch, Batch]:
    """Per-client split, stratified by label whenever a class has >= 2 examples."""
    train_rows: list[np.ndarray] = []
    test_rows: list[np.ndarray] = []
    train_counts: dict[int, int] = {}
    for c in np.unique(labels):
        rows = np.flatnonzero(labels == c)
        rng.shuffle(rows)
        m = len(rows)
        if m >= 2:
            k = int(round(train_fraction * m))
            k = min(max(k, 1), m - 1)
        else:
            k = 1  # singleton classes go entirely to train
        train_rows.append(rows[:k])
        test_rows.append(rows[k:])
        train_counts[int(c)] = k
    train_idx = np.concatenate(train_rows)
    test_idx = np.concatenate(test_rows) if test_rows else np.empty(0, dtype=np.int64)
    if test_idx.size == 0:
        # All classes were singletons; move one example over from the
        # best-stocked class so the client still has a test set.
        donor = max(train_counts, key=lambda c: (train_counts[c], -c))
        donor_rows = [r for r in train_idx if labels[r] == donor]
        moved = donor_rows[-1]
        train_idx = np.array([r for r in train_idx if r != moved], dtype=np.int64)
        test_idx = np.array([moved], dtype=np.int64)
    return (
        Batch(features[train_idx], labels[train_idx]),
        Batch(features[test_idx], labels[test_idx]),
    )


def partition(
    data: LabeledDataset,
    n_clients: int,
    plan: PartitionPlan,
    rng: np.random.Generator,
) -> list[tuple[Batch, Batch]]:
    """Split a dataset into per-client (train, test) pairs.

    iid: shuffle, then near-equal contiguous chunks. noniid_mixed: assign
    class subsets by client group, draw relative sizes from the Lognormal
    law, and allocate examples of matching classes. Both schemes then
    split each client's share by train_fraction with per-label
    stratification where possible.
    """
    if n_clients < 1:
        raise ConfigError("need at least one client")
    n = len(data)
    if n < 2 * n_clients:
        raise PartitionError(
            f"{n} examples cannot give {n_clients} clients a train and a test example each"
        )
    if plan.scheme == "iid":
        perm = rng.permutation(n)
        base = n // n_clients
        extra = n % n_clients
        sizes = np.full(n_clients, base, dtype=np.int64)
        sizes[:extra] += 1
        bounds = np.concatenate(([0], np.cumsum(sizes)))
        chunks = [perm[bounds[i] : bounds[i + 1]] for i in range(n_clients)]
    else:
        sizes = _client_sizes(n, n_clients, plan, rng)
        subsets = _class_subsets(n_clients, data.class_count, plan, rng)
        chunks = _allocate_noniid(data.labels, subsets, sizes, rng)
    return [
        _split_train_test(data.features[idx], data.labels[idx], plan.train_fraction, rng)
        for idx in chunks
    ]
