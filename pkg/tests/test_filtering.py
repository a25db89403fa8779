import csv

import numpy as np
import pytest

from deepknn import filtering
from deepknn.baselines import run_baseline
from deepknn.data import Dataset, SplitSpec, concat, split_clean_noisy
from deepknn.filtering import (
    FilterConfig,
    Reference,
    Selection,
    default_k,
    knn_classify,
    knn_filter,
    run_pipeline,
    select_filter_train_set,
    write_filter_audit,
)
from deepknn.knn import KnnIndex
from deepknn.net import Architecture, DenseNet, TrainConfig, accuracy, train_dataset
from deepknn.noise import NoiseSpec, corrupt

from conftest import noisy_blob_split


def identity_net(K: int) -> DenseNet:
    """Linear net whose logits are the raw features (needs d == K)."""
    return DenseNet(Architecture(K, (), K), [np.eye(K)], [np.zeros(K)])


def two_gaussians(n, seed, sep=6.0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = rng.normal(size=(n, 2)) + np.where(y[:, None] == 1, sep / 2, -sep / 2)
    return Dataset(X, y, 2)


ARCH2 = Architecture(2, (16,), 2)
FAST = TrainConfig(epochs=20)


class TestSelection:
    def test_empty_clean_trains_nothing(self, monkeypatch):
        def boom(*a, **k):
            raise AssertionError("no candidate should be trained")

        monkeypatch.setattr(filtering, "train_dataset", boom)
        choice = select_filter_train_set(two_gaussians(20, 0), Dataset.empty(2, 2), ARCH2, FAST)
        assert choice is Selection.UNION

    def test_tiny_clean_falls_back_with_warning(self, caplog):
        clean = two_gaussians(1, 1)
        with caplog.at_level("WARNING"):
            assert select_filter_train_set(two_gaussians(20, 0), clean, ARCH2, FAST) is Selection.UNION
        assert "too small" in caplog.text

    def test_randomized_noise_prefers_clean_only(self):
        clean = two_gaussians(200, 1)
        noisy = two_gaussians(2000, 2)
        labels, _ = corrupt(noisy.labels, 2, NoiseSpec("uniform", 1.0, seed=3))
        # the standard single-hidden-layer-100 net, trained for 100 epochs, fits the random labels
        arch = Architecture(2, (100,), 2)
        choice = select_filter_train_set(noisy.with_labels(labels), clean, arch, TrainConfig(epochs=100))
        assert choice is Selection.CLEAN_ONLY

    def test_uncorrupted_noisy_prefers_union(self):
        assert select_filter_train_set(two_gaussians(1000, 2), two_gaussians(40, 1), ARCH2, FAST) is Selection.UNION


class TestFilter:
    def test_zero_noise_keeps_almost_everything(self):
        data = two_gaussians(1000, 0)
        clean, noisy = split_clean_noisy(data, SplitSpec(0.05, 0))
        model = train_dataset(ARCH2, data, FAST)
        out = knn_filter(noisy, clean, model, FilterConfig(k=10))
        assert len(out.kept_indices) >= 0.98 * noisy.n

    def test_lone_flipped_point_is_removed(self):
        data = two_gaussians(200, 4)
        target = int(np.argmin(np.abs(data.features[:, 1] - 3.0)))  # deep inside class 1
        labels = data.labels.copy()
        assert labels[target] == 1
        labels[target] = 0
        noisy = data.with_labels(labels)
        out = knn_filter(noisy, Dataset.empty(2, 2), identity_net(2), FilterConfig(k=10))
        assert target in out.removed_indices

    def test_k1_with_self_keeps_everything(self):
        data = two_gaussians(100, 3)
        labels = np.random.default_rng(0).integers(0, 2, 100)
        out = knn_filter(data.with_labels(labels), Dataset.empty(2, 2), identity_net(2),
                         FilterConfig(k=1, exclude_self=False))
        assert len(out.kept_indices) == 100

    def test_partition_and_oracle_agreement(self):
        rng = np.random.default_rng(9)
        noisy = Dataset(rng.normal(size=(80, 3)), rng.integers(0, 3, 80), 3)
        clean = Dataset(rng.normal(size=(20, 3)), rng.integers(0, 3, 20), 3)
        out = knn_filter(noisy, clean, identity_net(3), FilterConfig(k=7))
        assert np.array_equal(np.sort(np.r_[out.kept_indices, out.removed_indices]), np.arange(80))
        assert not set(out.kept_indices) & set(out.removed_indices)
        ref = concat(clean, noisy)
        for i in range(noisy.n):
            d = np.sqrt(((ref.features - noisy.features[i]) ** 2).sum(axis=1))
            d[clean.n + i] = np.inf
            members = d <= np.sort(d)[6]
            vote = int(np.argmax(np.bincount(ref.labels[members], minlength=3)))
            assert (i in out.kept_indices) == (vote == noisy.labels[i])

    def test_unanimous_agreement_kept_and_none_removed(self):
        # two tight, distant clusters: members agreeing with all neighbours stay,
        # a member disagreeing with all of them goes
        X = np.r_[np.zeros((6, 2)) + np.arange(6)[:, None] * 0.01, 10 + np.zeros((6, 2))]
        y = np.r_[np.zeros(6, int), np.ones(6, int)]
        y[0] = 1
        out = knn_filter(Dataset(X, y, 2), Dataset.empty(2, 2), identity_net(2), FilterConfig(k=3))
        assert 0 in out.removed_indices
        assert set(range(1, 12)) <= set(out.kept_indices)

    def test_noisy_only_reference(self):
        rng = np.random.default_rng(1)
        noisy = Dataset(rng.normal(size=(30, 2)), rng.integers(0, 2, 30), 2)
        clean = Dataset(rng.normal(size=(10, 2)) + 50, np.zeros(10, int), 2)
        both = knn_filter(noisy, clean, identity_net(2), FilterConfig(k=29, reference=Reference.NOISY))
        index = KnnIndex(noisy.features, noisy.labels, 2)
        expected = index.query_batch(noisy.features, 29, exclude=np.arange(30)).predictions
        np.testing.assert_array_equal(both.predictions, expected)

    def test_k_too_large(self):
        data = two_gaussians(10, 0)
        with pytest.raises(ValueError):
            knn_filter(data, Dataset.empty(2, 2), identity_net(2), FilterConfig(k=10))

    def test_audit_csv(self, tmp_path):
        data = two_gaussians(12, 0)
        out = knn_filter(data, Dataset.empty(2, 2), identity_net(2), FilterConfig(k=3))
        write_filter_audit(out, tmp_path / "audit.csv")
        with open(tmp_path / "audit.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 12
        assert list(rows[0]) == ["index", "kept", "label", "knn_prediction", "score_0", "score_1"]
        kept = [int(r["kept"]) for r in rows]
        np.testing.assert_array_equal(kept, out.kept_mask.astype(int))
        total = float(rows[0]["score_0"]) + float(rows[0]["score_1"])
        assert total == pytest.approx(1.0)


class TestPipeline:
    def test_empty_noisy_trains_on_clean(self):
        clean = two_gaussians(40, 1)
        cfg = TrainConfig(epochs=5, seed=0)
        final, out = run_pipeline(Dataset.empty(2, 2), clean, ARCH2, cfg, FilterConfig(k=5, seed=3))
        expected = train_dataset(ARCH2, clean, TrainConfig(epochs=5, seed=3 + filtering.SEED_OFFSETS["final_model"]))
        for p, q in zip(final.params(), expected.params()):
            np.testing.assert_array_equal(p, q)
        assert out.num_noisy == 0

    def test_deterministic(self):
        noisy, clean = two_gaussians(300, 0), two_gaussians(30, 1)
        a = run_pipeline(noisy, clean, ARCH2, FAST, FilterConfig(k=5, seed=2))
        b = run_pipeline(noisy, clean, ARCH2, FAST, FilterConfig(k=5, seed=2))
        np.testing.assert_array_equal(a[1].kept_indices, b[1].kept_indices)
        for p, q in zip(a[0].params(), b[0].params()):
            np.testing.assert_array_equal(p, q)

    def test_rate_zero_matches_full(self):
        arch = Architecture(2, (100,), 10)
        diffs = []
        for seed in range(3):
            noisy, clean, test = noisy_blob_split(seed, 0.0, n=2000)
            cfg = TrainConfig(epochs=30, seed=seed)
            full = 1 - accuracy(run_baseline("Full", noisy, clean, arch, cfg), test)
            final, out = run_pipeline(noisy, clean, arch, cfg, FilterConfig(k=50, seed=seed))
            diffs.append(1 - accuracy(final, test) - full)
            assert len(out.removed_indices) <= 0.05 * noisy.n
        assert abs(np.mean(diffs)) < 0.01

    @pytest.mark.slow
    def test_beats_full_on_separable_blobs_at_40_percent(self, separable_blobs_40):
        full, _, knn = separable_blobs_40.mean(axis=0)
        assert knn < full


class TestClassify:
    def test_single_class_reference(self):
        ref = Dataset(np.random.default_rng(0).normal(size=(10, 2)), np.full(10, 1), 2)
        np.testing.assert_array_equal(knn_classify(identity_net(2), ref, 3, [[0.0, 0.0], [9.0, 9.0]]), [1, 1])

    def test_k_equals_reference_size_gives_majority(self):
        rng = np.random.default_rng(1)
        ref = Dataset(rng.normal(size=(11, 2)), [0] * 4 + [1] * 7, 2)
        np.testing.assert_array_equal(knn_classify(identity_net(2), ref, 11, rng.normal(size=(5, 2)) * 9), [1] * 5)

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(2)
        model = train_dataset(Architecture(3, (5,), 3), Dataset(rng.normal(size=(60, 3)), rng.integers(0, 3, 60), 3),
                              TrainConfig(epochs=3))
        ref = Dataset(rng.normal(size=(60, 3)), rng.integers(0, 3, 60), 3)
        Q = rng.normal(size=(20, 3))
        E, q = model.logits(ref.features), model.logits(Q)
        for i, row in enumerate(knn_classify(model, ref, 5, Q)):
            d = np.sqrt(((E - q[i]) ** 2).sum(axis=1))
            members = d <= np.sort(d)[4]
            assert row == int(np.argmax(np.bincount(ref.labels[members], minlength=3)))

    def test_k_too_large(self):
        ref = Dataset(np.zeros((3, 2)), [0, 1, 0], 2)
        with pytest.raises(ValueError):
            knn_classify(identity_net(2), ref, 4, [[0.0, 0.0]])


def test_default_k_threshold():
    assert (default_k(9_999), default_k(10_000)) == (50, 500)
    with pytest.raises(ValueError):
        FilterConfig(k=0)
