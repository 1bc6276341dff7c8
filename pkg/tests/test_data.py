import numpy as np
import pytest

from nflsim.data import (
    LabeledDataset,
    PartitionPlan,
    gen_synthetic,
    load_delimited,
    partition,
)
from nflsim.errors import ConfigError, PartitionError
from nflsim.model import ModelSpec, ParamVector, accuracy, Batch


def rng(seed=0):
    return np.random.default_rng(seed)


def multiset(features, labels):
    rows = np.column_stack([features, labels])
    return rows[np.lexsort(rows.T)]


def client_multiset(pairs):
    feats = np.concatenate(
        [p[0].features for p in pairs] + [p[1].features for p in pairs]
    )
    labs = np.concatenate([p[0].labels for p in pairs] + [p[1].labels for p in pairs])
    return multiset(feats, labs)


class TestGenSynthetic:
    def test_shape_and_label_counts(self):
        data = gen_synthetic(4, 6, 100, 1.0, rng(1))
        assert len(data) == 400
        assert data.features.shape == (400, 6)
        assert np.array_equal(np.bincount(data.labels), [100] * 4)

    def test_deterministic(self):
        a = gen_synthetic(3, 5, 20, 0.7, rng(2))
        b = gen_synthetic(3, 5, 20, 0.7, rng(2))
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)

    def test_zero_spread_is_linearly_separable(self):
        data = gen_synthetic(3, 4, 30, 0.0, rng(3))
        # Nearest-mean classifier as linear weights: W = means^T, logits x.mean_c.
        means = np.stack([data.features[data.labels == c][0] for c in range(3)])
        spec = ModelSpec((4, 3), "identity")
        values = np.concatenate([means.T.ravel(), np.zeros(3)])
        clf = ParamVector(values, spec)
        assert accuracy(clf, Batch(data.features, data.labels)) == 1.0

    def test_validation(self):
        with pytest.raises(ConfigError):
            gen_synthetic(1, 4, 10, 1.0, rng(0))
        with pytest.raises(ConfigError):
            gen_synthetic(3, 4, 0, 1.0, rng(0))


class TestPartitionIID:
    def test_single_client_gets_everything(self):
        data = gen_synthetic(3, 4, 20, 1.0, rng(4))
        pairs = partition(data, 1, PartitionPlan(scheme="iid"), rng(5))
        assert len(pairs) == 1
        assert np.array_equal(client_multiset(pairs), multiset(data.features, data.labels))

    def test_conservation_and_near_equal_sizes(self):
        data = gen_synthetic(5, 4, 41, 1.0, rng(6))  # 205 examples over 10 clients
        pairs = partition(data, 10, PartitionPlan(scheme="iid"), rng(7))
        sizes = [len(tr) + len(te) for tr, te in pairs]
        assert sum(sizes) == 205
        assert max(sizes) - min(sizes) <= 1
        assert np.array_equal(client_multiset(pairs), multiset(data.features, data.labels))

    def test_train_fraction_roughly_respected(self):
        data = gen_synthetic(2, 3, 200, 1.0, rng(8))
        pairs = partition(data, 4, PartitionPlan(scheme="iid", train_fraction=0.9), rng(9))
        for tr, te in pairs:
            frac = len(tr) / (len(tr) + len(te))
            assert 0.85 <= frac <= 0.95

    def test_determinism(self):
        data = gen_synthetic(3, 4, 50, 1.0, rng(10))
        a = partition(data, 5, PartitionPlan(scheme="iid"), rng(11))
        b = partition(data, 5, PartitionPlan(scheme="iid"), rng(11))
        for (tr1, te1), (tr2, te2) in zip(a, b):
            assert np.array_equal(tr1.features, tr2.features)
            assert np.array_equal(te1.labels, te2.labels)


class TestPartitionNonIID:
    def plan(self, sigma=2.0):
        return PartitionPlan(scheme="noniid_mixed", size_lognormal=(0.0, sigma))

    def test_group_class_counts(self):
        # Mild size skew so every client can materialize its class subset.
        data = gen_synthetic(10, 4, 200, 1.0, rng(12))
        pairs = partition(data, 10, self.plan(sigma=0.4), rng(13))
        distinct = sorted(
            len(np.unique(np.concatenate([tr.labels, te.labels]))) for tr, te in pairs
        )
        assert distinct == [2, 2, 5, 5, 5, 10, 10, 10, 10, 10]

    def test_conservation_under_heavy_skew(self):
        data = gen_synthetic(10, 4, 100, 1.0, rng(14))
        pairs = partition(data, 10, self.plan(sigma=2.0), rng(15))
        assert np.array_equal(client_multiset(pairs), multiset(data.features, data.labels))

    def test_every_client_can_train_and_test(self):
        data = gen_synthetic(10, 4, 100, 1.0, rng(16))
        pairs = partition(data, 20, self.plan(sigma=2.0), rng(17))
        for tr, te in pairs:
            assert len(tr) >= 1 and len(te) >= 1

    def test_size_skew_exceeds_iid(self):
        data = gen_synthetic(10, 4, 200, 1.0, rng(18))
        noniid = partition(data, 10, self.plan(sigma=2.0), rng(19))
        iid = partition(data, 10, PartitionPlan(scheme="iid"), rng(19))

        def cv(pairs):
            sizes = np.array([len(tr) + len(te) for tr, te in pairs], dtype=float)
            return sizes.std() / sizes.mean()

        assert cv(noniid) > cv(iid)

    def test_restricted_clients_hold_only_their_classes(self):
        data = gen_synthetic(10, 4, 200, 1.0, rng(20))
        pairs = partition(data, 10, self.plan(sigma=0.4), rng(21))
        for tr, te in pairs:
            classes = np.unique(np.concatenate([tr.labels, te.labels]))
            assert len(classes) in (2, 5, 10)

    def test_infeasible_plan_names_client(self):
        # 2 examples per class cannot feed a client that needs thousands.
        data = gen_synthetic(2, 3, 2, 1.0, rng(22))
        with pytest.raises(PartitionError):
            partition(data, 3, self.plan(), rng(23))

    def test_too_few_examples_rejected(self):
        data = gen_synthetic(2, 3, 3, 1.0, rng(24))
        with pytest.raises(PartitionError):
            partition(data, 5, PartitionPlan(scheme="iid"), rng(25))


class TestPlanValidation:
    def test_bad_scheme(self):
        with pytest.raises(ConfigError):
            PartitionPlan(scheme="dirichlet")

    def test_fractions_must_sum_to_one(self):
        with pytest.raises(ConfigError):
            PartitionPlan(group_fractions=(0.5, 0.5, 0.5))

    def test_train_fraction_range(self):
        with pytest.raises(ConfigError):
            PartitionPlan(train_fraction=1.0)


class TestLoadDelimited:
    def test_roundtrip(self, tmp_path):
        data = gen_synthetic(3, 4, 10, 1.0, rng(26))
        path = tmp_path / "data.csv"
        rows = np.column_stack([data.features, data.labels])
        np.savetxt(path, rows, delimiter=",")
        loaded = load_delimited(path)
        assert loaded.class_count == 3
        assert np.allclose(loaded.features, data.features)
        assert np.array_equal(loaded.labels, data.labels)

    def test_rejects_fractional_labels(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1.0,2.0,0.5\n")
        with pytest.raises(ConfigError):
            load_delimited(path)


def test_labeled_dataset_validation():
    with pytest.raises(ConfigError):
        LabeledDataset(np.zeros((3, 2)), [0, 1, 5], 3)
