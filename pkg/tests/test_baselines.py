import csv

import numpy as np
import pytest
from scipy.stats import norm

from deepknn.baselines import (
    distill_labels,
    forward_estimate,
    glc_estimate,
    run_baseline,
    train_corrected,
    validate_corruption_matrix,
    write_matrix_csv,
)
from deepknn.data import Dataset, concat, make_blobs
from deepknn.net import Architecture, TrainConfig, accuracy, train_dataset
from deepknn.noise import NoiseSpec, corrupt

C_FLIP = np.array([[0.8, 0.2], [0.2, 0.8]])


class TwoGaussianPosterior:
    """Exact noisy-label posterior for classes N(-mu, 1) and N(+mu, 1) on the
    first coordinate, with equal priors and corruption matrix ``C``."""

    def __init__(self, C, mu=2.0):
        self.C = np.asarray(C)
        self.mu = mu

    def softmax(self, X):
        x = np.asarray(X)[:, 0]
        p1 = norm.pdf(x, self.mu) / (norm.pdf(x, self.mu) + norm.pdf(x, -self.mu))
        true = np.c_[1 - p1, p1]
        return true @ self.C


class FixedSoftmax:
    def __init__(self, probs):
        self.probs = np.asarray(probs)

    def softmax(self, X):
        return self.probs[: len(X)]


def gaussian_clean(n=5000, mu=2.0, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = rng.normal(size=(n, 2))
    X[:, 0] += np.where(y == 1, mu, -mu)
    return Dataset(X, y, 2)


def same_params(a, b):
    return all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))


class TestMatrixValidation:
    def test_accepts_stochastic(self):
        np.testing.assert_array_equal(validate_corruption_matrix(C_FLIP, 2), C_FLIP)

    @pytest.mark.parametrize("bad", [
        [[0.5, 0.6], [0.5, 0.5]],
        [[1.2, -0.2], [0.0, 1.0]],
        [[0.5, 0.5], [0.5, 0.5]],
        [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
    ])
    def test_rejects_invalid(self, bad):
        with pytest.raises(ValueError):
            validate_corruption_matrix(bad)

    def test_singular_rejected_by_training(self):
        data = gaussian_clean(20)
        with pytest.raises(ValueError):
            train_corrected(data, [[0.5, 0.5], [0.5, 0.5]], Architecture(2, (), 2), TrainConfig(epochs=1))


class TestGlc:
    def test_identity_with_oracle_posterior(self):
        clean = gaussian_clean(2000, mu=30.0)
        C = glc_estimate(TwoGaussianPosterior(np.eye(2), mu=30.0), clean)
        np.testing.assert_allclose(C, np.eye(2), atol=1e-6)

    def test_recovers_planted_flip(self):
        clean = gaussian_clean(5000)
        C = glc_estimate(TwoGaussianPosterior(C_FLIP), clean)
        assert np.max(np.abs(C - C_FLIP)) < 0.05

    def test_rows_stochastic(self):
        rng = np.random.default_rng(0)
        P = rng.random((30, 3))
        P /= P.sum(axis=1, keepdims=True)
        clean = Dataset(rng.normal(size=(30, 2)), np.arange(30) % 3, 3)
        np.testing.assert_allclose(glc_estimate(FixedSoftmax(P), clean).sum(axis=1), 1.0, atol=1e-12)

    def test_missing_class_falls_back_to_identity(self, caplog):
        clean = Dataset(np.zeros((4, 2)), [0, 0, 1, 1], 3)
        P = np.full((4, 3), 1 / 3)
        with caplog.at_level("WARNING"):
            C = glc_estimate(FixedSoftmax(P), clean, 3)
        np.testing.assert_array_equal(C[2], [0, 0, 1])
        assert "absent" in caplog.text

    def test_empty_clean_rejected(self):
        with pytest.raises(ValueError):
            glc_estimate(FixedSoftmax(np.ones((1, 2))), Dataset.empty(2, 2))


class TestForward:
    def test_near_identity_for_separated_classes(self):
        noisy = gaussian_clean(1000, mu=4.0)
        C = forward_estimate(TwoGaussianPosterior(np.eye(2), mu=4.0), noisy)
        off = C[~np.eye(2, dtype=bool)]
        assert np.all(off < 0.1)

    def test_single_class(self):
        noisy = Dataset(np.zeros((3, 2)), [0, 0, 0], 1)
        np.testing.assert_array_equal(forward_estimate(FixedSoftmax(np.ones((3, 1))), noisy), [[1.0]])

    def test_prototype_row(self):
        P = np.array([[0.6, 0.4], [0.1, 0.9], [0.9, 0.1]])
        noisy = Dataset(np.zeros((3, 2)), [0, 1, 0], 2)
        C = forward_estimate(FixedSoftmax(P), noisy)
        np.testing.assert_array_equal(C, [[0.9, 0.1], [0.1, 0.9]])
        np.testing.assert_allclose(C.sum(axis=1), 1.0)


class TestDistill:
    def setup_method(self):
        self.noisy = Dataset(np.zeros((3, 2)), [0, 1, 0], 2)
        self.soft = FixedSoftmax([[0.5, 0.5], [0.3, 0.7], [0.9, 0.1]])

    def test_lambda_one_is_one_hot(self):
        np.testing.assert_array_equal(distill_labels(self.soft, self.noisy, 1.0), [[1, 0], [0, 1], [1, 0]])

    def test_lambda_zero_is_teacher_softmax(self):
        np.testing.assert_array_equal(distill_labels(self.soft, self.noisy, 0.0), self.soft.probs)

    def test_half_with_uniform_teacher(self):
        out = distill_labels(FixedSoftmax([[0.5, 0.5]]), Dataset(np.zeros((1, 2)), [0], 2), 0.5)
        np.testing.assert_array_equal(out, [[0.75, 0.25]])

    def test_rows_sum_to_one(self):
        np.testing.assert_allclose(distill_labels(self.soft, self.noisy, 0.37).sum(axis=1), 1.0, atol=1e-15)

    def test_lambda_range(self):
        with pytest.raises(ValueError):
            distill_labels(self.soft, self.noisy, 1.5)


class TestTraining:
    arch = Architecture(2, (8,), 2)
    cfg = TrainConfig(epochs=3, seed=4)

    def test_identity_correction_is_plain_training(self):
        data = gaussian_clean(300)
        assert same_params(train_corrected(data, np.eye(2), self.arch, self.cfg),
                           train_dataset(self.arch, data, self.cfg))

    def test_identity_correction_with_clean_is_full(self):
        noisy, clean = gaussian_clean(300, seed=1), gaussian_clean(30, seed=2)
        assert same_params(train_corrected(noisy, np.eye(2), self.arch, self.cfg, clean),
                           run_baseline("Full", noisy, clean, self.arch, self.cfg))

    def test_full_at_rate_zero_is_plain_union_training(self):
        noisy, clean = gaussian_clean(200, seed=1), gaussian_clean(20, seed=2)
        assert same_params(run_baseline("Full", noisy, clean, self.arch, self.cfg),
                           train_dataset(self.arch, concat(noisy, clean), self.cfg))

    def test_clean_ignores_noisy_contents(self):
        clean = gaussian_clean(40, seed=2)
        a = run_baseline("Clean", gaussian_clean(100, seed=1), clean, self.arch, self.cfg)
        b = run_baseline("Clean", Dataset.empty(2, 2), clean, self.arch, self.cfg)
        assert same_params(a, b)

    @pytest.mark.parametrize("name", ["Clean", "GLC", "Distill"])
    def test_methods_needing_clean(self, name):
        with pytest.raises(ValueError):
            run_baseline(name, gaussian_clean(50), Dataset.empty(2, 2), self.arch, self.cfg)

    def test_forward_runs_without_clean(self):
        net = run_baseline("Forward", gaussian_clean(100), Dataset.empty(2, 2), self.arch, self.cfg)
        assert net.arch == self.arch

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            run_baseline("Magic", gaussian_clean(10), gaussian_clean(10), self.arch, self.cfg)

    @pytest.mark.slow
    def test_true_matrix_helps_under_planted_flip(self):
        arch = Architecture(2, (100,), 2)
        C = np.array([[0.7, 0.3], [0.3, 0.7]])
        gains = []
        for seed in range(5):
            train = make_blobs(2000, 2, seed=seed)
            test = make_blobs(2000, 2, seed=100 + seed)
            labels, _ = corrupt(train.labels, 2, NoiseSpec("flip", 0.3, seed=seed))
            noisy = train.with_labels(labels)
            cfg = TrainConfig(epochs=50, seed=seed)
            gains.append(accuracy(train_corrected(noisy, C, arch, cfg), test)
                         - accuracy(train_dataset(arch, noisy, cfg), test))
        assert np.mean(gains) >= 0.03


@pytest.mark.slow
def test_glc_and_deep_knn_beat_full(separable_blobs_40):
    full, glc, knn = separable_blobs_40.mean(axis=0)
    assert glc < full
    assert knn < full


def test_matrix_csv(tmp_path):
    write_matrix_csv(C_FLIP, tmp_path / "c.csv")
    with open(tmp_path / "c.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["true_class", "observed_0", "observed_1"]
    np.testing.assert_array_equal(np.array(rows[1:], dtype=float)[:, 1:], C_FLIP)
