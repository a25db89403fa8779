import functools
import time

import numpy as np
import pytest

from deepknn.baselines import run_baseline
from deepknn.data import SplitSpec, make_blobs, split_clean_noisy
from deepknn.filtering import FilterConfig, run_pipeline
from deepknn.net import Architecture, TrainConfig, accuracy
from deepknn.noise import NoiseSpec, corrupt


def noisy_blob_split(seed, rate, *, n=5000, K=10, std=0.5, clean_fraction=0.05, scheme="uniform"):
    train = make_blobs(n, K, std=std, seed=seed)
    test = make_blobs(2000, K, std=std, seed=10_000 + seed)
    clean, noisy = split_clean_noisy(train, SplitSpec(clean_fraction, seed))
    labels, _ = corrupt(noisy.labels, K, NoiseSpec(scheme, rate, seed=seed))
    return noisy.with_labels(labels), clean, test


@pytest.fixture(scope="session")
def separable_blobs_40():
    """Test errors of Full, GLC and deep k-NN on separable blobs with 40%
    Uniform noise and 5% clean data, one row per seed (5 seeds)."""
    arch = Architecture(2, (100,), 10)
    rows = []
    for seed in range(5):
        noisy, clean, test = noisy_blob_split(seed, 0.4)
        cfg = TrainConfig(epochs=100, seed=seed)
        full = 1 - accuracy(run_baseline("Full", noisy, clean, arch, cfg), test)
        glc = 1 - accuracy(run_baseline("GLC", noisy, clean, arch, cfg), test)
        knn = 1 - accuracy(run_pipeline(noisy, clean, arch, cfg, FilterConfig(k=50, seed=seed))[0], test)
        rows.append((full, glc, knn))
    return np.array(rows)


# wall-clock seconds of the first (uncached) call, keyed by run name
RUN_SECONDS: dict[str, float] = {}


@functools.lru_cache(maxsize=None)
def ramp_rate_run(seeds: int = 60):
    """Margin-rate sweep on the linear ramp (alpha = 1, D = 1), shared by tests."""
    from deepknn.theory import PowerRamp, rate_experiment

    start = time.perf_counter()
    res = rate_experiment(PowerRamp(1.0, 1), [500, 1000, 2000, 4000, 8000], seeds=range(seeds))
    RUN_SECONDS[f"rate-{seeds}"] = time.perf_counter() - start
    return res


@functools.lru_cache(maxsize=None)
def ramp_risk_run(seeds: int = 60):
    from deepknn.theory import PowerRamp, excess_risk_experiment

    start = time.perf_counter()
    res = excess_risk_experiment(PowerRamp(1.0, 1), [500, 1000, 2000, 4000, 8000], seeds=range(seeds))
    RUN_SECONDS[f"risk-{seeds}"] = time.perf_counter() - start
    return res
