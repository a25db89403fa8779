"""Synthetic families and simulations of raw-feature k-NN under corrupted labels.

Everything here runs k-NN directly on the features (no network).  The
experiments measure

* how test accuracy and the clean-sample requirement depend on the minimum
  pairwise distance of a grid of flipped points (2-D Gaussian task),
* whether the k-NN vote agrees with the Bayes label on the margin region
  ``{x : |eta(x) - 1/2| >= delta}`` when corrupted points are spread out or
  clustered,
* the decay of the smallest reliable margin and of the excess risk with n
  when ``k`` grows like ``n^(2 alpha / (2 alpha + D))``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import spearmanr

from .data import Dataset
from .knn import Backend, KnnIndex, min_pairwise_distance

TEST_SEED_OFFSET = 1_000_003


# families ---------------------------------------------------------------

class PowerRamp:
    """Uniform features on ``[0, 1]^D`` with a ramp posterior in the first
    coordinate: ``eta = 1/2 + sign(t) |2t|^gamma / 2`` where ``t = x_0 - 1/2``.

    The posterior is Hölder with exponent ``min(gamma, 1)`` and satisfies the
    Tsybakov condition with ``beta = 1 / gamma`` and constant ``2^beta``.
    ``gamma = 1`` is ``eta(x) = x_0``.
    """

    def __init__(self, exponent: float = 1.0, dim: int = 1):
        if exponent <= 0:
            raise ValueError("exponent must be positive")
        if dim < 1:
            raise ValueError("dim must be positive")
        self.exponent = float(exponent)
        self.dim = int(dim)

    @property
    def alpha(self) -> float:
        return min(self.exponent, 1.0)

    @property
    def beta(self) -> float:
        return 1.0 / self.exponent

    @property
    def holder_constant(self) -> float:
        return max(1.0, self.exponent)

    @property
    def tsybakov_constant(self) -> float:
        return 2.0 ** self.beta

    @property
    def bayes_risk(self) -> float:
        return 0.5 - 0.5 / (self.exponent + 1.0)

    def eta(self, X) -> np.ndarray:
        t = np.asarray(X, dtype=np.float64).reshape(-1, self.dim)[:, 0] - 0.5
        return np.clip(0.5 + 0.5 * np.sign(t) * np.abs(2 * t) ** self.exponent, 0.0, 1.0)

    def in_support(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64).reshape(-1, self.dim)
        return np.all((X >= 0) & (X <= 1), axis=1)

    def sample_features(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.random((n, self.dim))

    def test_points(self, m: int, rng: np.random.Generator | None = None) -> np.ndarray:
        """Midpoint grid in 1-D; uniform draws otherwise."""
        if self.dim == 1:
            return ((np.arange(m) + 0.5) / m)[:, None]
        rng = rng or np.random.default_rng(TEST_SEED_OFFSET)
        return rng.random((m, self.dim))

    def lattice(self, spacing: float) -> np.ndarray:
        ticks = np.arange(spacing / 2, 1.0, spacing)
        mesh = np.meshgrid(*([ticks] * self.dim), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    def margin(self, X) -> np.ndarray:
        return np.abs(0.5 - self.eta(X))

    def bayes_label(self, X) -> np.ndarray:
        return (self.eta(X) >= 0.5).astype(np.int64)


class SeparatedBands(PowerRamp):
    """Deterministic labels: the first coordinate lives on
    ``[0, 1/2 - gap/2] ∪ [1/2 + gap/2, 1]`` with label 0 on the left band and
    1 on the right, so every point has margin 1/2."""

    def __init__(self, gap: float = 0.2, dim: int = 1):
        super().__init__(1.0, dim)
        if not 0 < gap < 1:
            raise ValueError("gap must be in (0, 1)")
        self.gap = float(gap)

    @property
    def bayes_risk(self) -> float:
        return 0.0

    def eta(self, X) -> np.ndarray:
        x0 = np.asarray(X, dtype=np.float64).reshape(-1, self.dim)[:, 0]
        return (x0 >= 0.5).astype(np.float64)

    def in_support(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64).reshape(-1, self.dim)
        x0 = X[:, 0]
        band = np.abs(x0 - 0.5) >= self.gap / 2
        return np.all((X >= 0) & (X <= 1), axis=1) & band

    def _stretch(self, u: np.ndarray) -> np.ndarray:
        # map [0, 1] onto the two bands, uniform in length
        half = 0.5 - self.gap / 2
        left = u * 2 * half
        return np.where(left <= half, left, left + self.gap)

    def sample_features(self, n, rng):
        X = rng.random((n, self.dim))
        X[:, 0] = self._stretch(X[:, 0])
        return X

    def test_points(self, m, rng=None):
        X = super().test_points(m, rng).copy()
        X[:, 0] = self._stretch(X[:, 0])
        return X


class GaussianTask:
    """Two balanced classes ``N(mu_0, I)`` and ``N(mu_1, I)`` in 2-D.

    With the default means ``(0, -2)`` and ``(0, 2)`` the Bayes boundary is the
    line ``x_1 = 0`` and ``eta(x) = 1 / (1 + exp(-4 x_1))``.
    """

    dim = 2

    def __init__(self, mu0=(0.0, -2.0), mu1=(0.0, 2.0)):
        self.mu0 = np.asarray(mu0, dtype=np.float64)
        self.mu1 = np.asarray(mu1, dtype=np.float64)

    def log_odds(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64).reshape(-1, 2)
        return X @ (self.mu1 - self.mu0) + 0.5 * (self.mu0 @ self.mu0 - self.mu1 @ self.mu1)

    def eta(self, X) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.log_odds(X)))

    def margin(self, X) -> np.ndarray:
        return np.abs(0.5 - self.eta(X))

    def bayes_label(self, X) -> np.ndarray:
        return (self.log_odds(X) >= 0).astype(np.int64)

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        # alternating labels: any prefix of a sample is itself balanced
        y = np.arange(n) % 2
        X = rng.standard_normal((n, 2)) + np.where(y[:, None] == 1, self.mu1, self.mu0)
        return X, y


GAUSSIAN_TASK = GaussianTask()


def sample_family(family, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Features from the family's marginal, labels drawn from ``eta``."""
    if isinstance(family, GaussianTask):
        return family.sample(n, rng)
    X = family.sample_features(n, rng)
    y = (rng.random(n) < family.eta(X)).astype(np.int64)
    return X, y


def gen_gaussian_task(n: int, seed: int) -> Dataset:
    if n < 1:
        raise ValueError("n must be positive")
    X, y = GAUSSIAN_TASK.sample(n, np.random.default_rng(seed))
    return Dataset(X, y, 2)


# corrupted placements ------------------------------------------------------

@dataclass(frozen=True)
class CorruptedPlacement:
    points: np.ndarray
    labels: np.ndarray
    s2: float

    @property
    def size(self) -> int:
        return len(self.points)


def _placement(family, points) -> CorruptedPlacement:
    P = np.asarray(points, dtype=np.float64)
    if P.ndim == 1:
        P = P[:, None]
    labels = (1 - family.bayes_label(P)).astype(np.int64) if len(P) else np.zeros(0, dtype=np.int64)
    s2 = min_pairwise_distance(P) if len(P) >= 2 else float("inf")
    return CorruptedPlacement(P, labels, s2)


def gen_grid_corruption(count: int = 100, width: float = 0.5, center=(0.0, 0.0), family=GAUSSIAN_TASK) -> CorruptedPlacement:
    """``sqrt(count) x sqrt(count)`` square grid with spacing ``width`` centred
    on ``center``, each point labelled against the Bayes rule."""
    side = int(round(np.sqrt(count)))
    if side * side != count:
        raise ValueError(f"count must be a perfect square, got {count}")
    if width <= 0:
        raise ValueError("width must be positive")
    ticks = (np.arange(side) - (side - 1) / 2) * width
    gx, gy = np.meshgrid(ticks, ticks, indexing="ij")
    points = np.c_[gx.ravel(), gy.ravel()] + np.asarray(center, dtype=np.float64)
    return _placement(family, points)


def spread_placement(family, spacing: float) -> CorruptedPlacement:
    """Lattice of flipped points with the given spacing over the support."""
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    pts = family.lattice(spacing)
    return _placement(family, pts[family.in_support(pts)])


def cluster_placement(family, size: int, location) -> CorruptedPlacement:
    """``size`` flipped points stacked at one location (pairwise distance 0)."""
    loc = np.asarray(location, dtype=np.float64).reshape(1, -1)
    return _placement(family, np.repeat(loc, size, axis=0))


def no_corruption(dim: int) -> CorruptedPlacement:
    return CorruptedPlacement(np.zeros((0, dim)), np.zeros(0, dtype=np.int64), float("inf"))


def _with_placement(X, y, placement: CorruptedPlacement | None):
    if placement is None or placement.size == 0:
        return X, y
    return np.concatenate([X, placement.points]), np.concatenate([y, placement.labels])


def max_knn_radius(points, k: int, queries) -> float:
    """Largest k-NN radius over ``queries`` with respect to ``points``."""
    index = KnnIndex(points, np.zeros(len(points), dtype=np.int64), 1, Backend.SPATIAL_TREE)
    return float(index.query_batch(queries, k).radii.max())


# Gaussian grid experiments ---------------------------------------------------

@dataclass(frozen=True)
class CurvePoint:
    x: float
    mean: float
    stderr: float


def _stderr(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    return float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0


def _spread_accuracy(width, X_clean, y_clean, X_test, y_test, k, count, correct_labels) -> float:
    if width is None:
        X, y = X_clean, y_clean
    else:
        placement = gen_grid_corruption(count, width)
        labels = 1 - placement.labels if correct_labels else placement.labels
        X = np.concatenate([X_clean, placement.points])
        y = np.concatenate([y_clean, labels])
    pred = KnnIndex(X, y, 2, Backend.SPATIAL_TREE).query_batch(X_test, k).predictions
    return float(np.mean(pred == y_test))


def _task_samples(seed: int, clean_n: int, test_n: int):
    X_clean, y_clean = GAUSSIAN_TASK.sample(clean_n, np.random.default_rng(seed))
    X_test, y_test = GAUSSIAN_TASK.sample(test_n, np.random.default_rng(seed + TEST_SEED_OFFSET))
    return X_clean, y_clean, X_test, y_test


def spread_experiment(
    widths: Sequence[float],
    clean_n: int = 100,
    test_n: int = 1000,
    k: int = 10,
    seeds: Iterable[int] = range(10),
    count: int = 100,
    correct_labels: bool = False,
) -> list[CurvePoint]:
    """Seed-averaged k-NN test accuracy for each grid width (= S2 of the grid).

    ``None`` as a width means no grid at all.  ``correct_labels`` keeps the
    grid but labels it with the Bayes rule.
    """
    seeds = list(seeds)
    samples = [_task_samples(s, clean_n, test_n) for s in seeds]
    curve = []
    for w in widths:
        accs = [_spread_accuracy(w, *smp, k, count, correct_labels) for smp in samples]
        curve.append(CurvePoint(float("nan") if w is None else float(w), float(np.mean(accs)), _stderr(accs)))
    return curve


@dataclass(frozen=True)
class TargetPoint:
    width: float | None
    required_n: int | None
    accuracy: float | None
    accuracy_below: float | None


def clean_samples_to_target(
    widths: Sequence[float | None],
    target_acc: float = 0.90,
    step: int = 10,
    cap: int = 5000,
    test_n: int = 1000,
    k: int = 10,
    seeds: Iterable[int] = range(10),
    count: int = 100,
) -> list[TargetPoint]:
    """Smallest multiple of ``step`` clean samples whose seed-averaged accuracy
    reaches ``target_acc``, found by bisection between a failing and a passing
    count.  ``required_n`` is ``None`` when even ``cap`` falls short."""
    seeds = list(seeds)
    pools = [_task_samples(s, cap, test_n) for s in seeds]

    def acc(width, n):
        return float(np.mean([_spread_accuracy(width, Xc[:n], yc[:n], Xt, yt, k, count, False)
                              for Xc, yc, Xt, yt in pools]))

    out = []
    for w in widths:
        lo, hi = 0, cap // step
        # without the grid the training set must still hold k points
        if w is None:
            lo = max(0, -(-k // step) - 1)
        top = acc(w, hi * step)
        if top < target_acc:
            out.append(TargetPoint(w, None, top, None))
            continue
        scores = {hi: top}
        while hi - lo > 1:
            mid = (lo + hi) // 2
            scores[mid] = acc(w, mid * step)
            if scores[mid] >= target_acc:
                hi = mid
            else:
                lo = mid
        below = scores.get(lo) if lo > 0 else None
        if lo > 0 and below is None:
            below = acc(w, lo * step)
        out.append(TargetPoint(w, hi * step, scores[hi], below))
    return out


def spearman(x, y) -> float:
    return float(spearmanr(x, y).statistic)


# margin-region checks ---------------------------------------------------------

@dataclass(frozen=True)
class Theorem1Report:
    violation_fraction: float
    num_test: int
    num_violations: int
    max_knn_radius: float
    s2: float
    k: int
    n: int


def theorem1_check(
    family,
    n: int,
    k: int,
    placement: CorruptedPlacement | None,
    delta: float,
    seed: int = 0,
    test_points=None,
    n_test: int = 2000,
    clean_sample=None,
) -> Theorem1Report:
    """Fraction of (test point, candidate label) pairs on the margin region
    where "the k-NN vote equals the label" and "the label is Bayes-optimal"
    disagree, for k-NN on ``n`` clean draws plus the corrupted placement."""
    rng = np.random.default_rng(seed)
    X_clean, y_clean = clean_sample if clean_sample is not None else sample_family(family, n, rng)
    T = family.test_points(n_test) if test_points is None else np.asarray(test_points, dtype=np.float64)
    T = T[family.margin(T) >= delta]
    if len(T) == 0:
        raise ValueError(f"no test points with margin >= {delta}")
    X, y = _with_placement(X_clean, y_clean, placement)
    pred = KnnIndex(X, y, 2, Backend.SPATIAL_TREE).query_batch(T, k).predictions
    bayes = family.bayes_label(T)
    violations = 0
    for label in (0, 1):
        violations += int(np.sum((pred == label) != (bayes == label)))
    return Theorem1Report(
        violation_fraction=violations / (2 * len(T)),
        num_test=len(T),
        num_violations=violations,
        max_knn_radius=max_knn_radius(X_clean, k, T),
        s2=float("inf") if placement is None else placement.s2,
        k=k,
        n=n,
    )


def theorem1_k_sweep(family, n, k_values, placement, delta, seed=0, n_test=2000) -> list[Theorem1Report]:
    """Margin-region violation fraction over a range of k on one shared sample."""
    sample = sample_family(family, n, np.random.default_rng(seed))
    return [theorem1_check(family, n, k, placement, delta, seed, n_test=n_test, clean_sample=sample)
            for k in k_values]


@dataclass(frozen=True)
class SpreadVersusCluster:
    spread: list[Theorem1Report]
    cluster: list[Theorem1Report]

    @property
    def spread_mean(self) -> float:
        return float(np.mean([r.violation_fraction for r in self.spread]))

    @property
    def cluster_mean(self) -> float:
        return float(np.mean([r.violation_fraction for r in self.cluster]))


def spread_versus_cluster(
    family,
    n: int = 5000,
    k: int = 50,
    delta: float = 0.15,
    seeds: Iterable[int] = range(10),
    spacing_factor: float = 4.0,
    cluster_location=(0.85,),
    cluster_size: int | None = None,
    n_test: int = 2000,
) -> SpreadVersusCluster:
    """Margin-region violation fractions for a spread-out lattice of flipped points
    (spacing ``spacing_factor`` times the largest clean k-NN radius on the
    margin region) against ``cluster_size`` (default ``2k``) flipped points
    stacked at ``cluster_location``, on the same clean draws."""
    size = 2 * k if cluster_size is None else cluster_size
    spread, cluster = [], []
    for s in seeds:
        sample = sample_family(family, n, np.random.default_rng(s))
        T = family.test_points(n_test)
        T = T[family.margin(T) >= delta]
        spacing = spacing_factor * max_knn_radius(sample[0], k, T)
        spread.append(theorem1_check(family, n, k, spread_placement(family, spacing), delta, s,
                                     test_points=T, clean_sample=sample))
        cluster.append(theorem1_check(family, n, k, cluster_placement(family, size, cluster_location), delta, s,
                                      test_points=T, clean_sample=sample))
    return SpreadVersusCluster(spread, cluster)


def rate_k(n: int, alpha: float, dim: int, scale: float = 1.0) -> int:
    return max(1, int(round(scale * n ** (2 * alpha / (2 * alpha + dim)))))


def smallest_reliable_margin(margins, errors, quantile: float = 0.99) -> float:
    """Smallest ``delta`` among the observed margins such that at most a
    ``1 - quantile`` fraction of points with margin >= delta are errors."""
    m = np.asarray(margins, dtype=np.float64)
    e = np.asarray(errors, dtype=np.float64)
    order = np.argsort(m, kind="stable")
    m, e = m[order], e[order]
    suffix_err = np.cumsum(e[::-1])[::-1]
    suffix_cnt = np.arange(len(m), 0, -1)
    starts = np.r_[0, np.nonzero(np.diff(m) > 0)[0] + 1]
    ok = suffix_err[starts] <= (1 - quantile) * suffix_cnt[starts] + 1e-12
    hits = starts[ok]
    return float(m[hits[0]]) if len(hits) else float(m[-1])


def fit_loglog_slope(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise ValueError("log-log fit needs positive values")
    if len(x) < 2:
        return float("nan")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def count_inversions(values) -> int:
    v = np.asarray(values, dtype=np.float64)
    return int(np.sum(np.diff(v) > 0))


@dataclass(frozen=True)
class RateResult:
    n_values: list[int]
    k_values: list[int]
    means: list[float]
    stderrs: list[float]
    slope: float
    theoretical_slope: float
    inversions: int

    def curve(self) -> list[CurvePoint]:
        return [CurvePoint(n, m, s) for n, m, s in zip(self.n_values, self.means, self.stderrs)]


def _spread_for(family, spacing):
    return None if spacing is None else spread_placement(family, spacing)


def rate_experiment(
    family,
    n_list: Sequence[int],
    seeds: Iterable[int] = range(10),
    k_scale: float = 1.0,
    quantile: float = 1.0,
    n_test: int = 4000,
    corruption_spacing: float | None = None,
) -> RateResult:
    """Empirical smallest reliable margin versus n, with its log-log slope.

    With the default ``quantile=1.0`` the margin of a run is the smallest
    ``delta`` such that no test point at margin ``delta`` or more is
    misclassified.  Lower quantiles tolerate a fixed fraction of errors above
    the threshold, which biases the slope with the constant in ``k``.
    The theoretical slope is ``-alpha / (2 alpha + D)``.
    """
    seeds = list(seeds)
    alpha, D = family.alpha, family.dim
    T = family.test_points(n_test)
    margins = family.margin(T)
    bayes = family.bayes_label(T)
    placement = _spread_for(family, corruption_spacing)
    means, errs, ks = [], [], []
    for n in n_list:
        k = rate_k(n, alpha, D, k_scale)
        deltas = []
        for s in seeds:
            X, y = _with_placement(*sample_family(family, n, np.random.default_rng(s)), placement)
            pred = KnnIndex(X, y, 2, Backend.SPATIAL_TREE).query_batch(T, k).predictions
            deltas.append(smallest_reliable_margin(margins, pred != bayes, quantile))
        ks.append(k)
        means.append(float(np.mean(deltas)))
        errs.append(_stderr(deltas))
    return RateResult(list(n_list), ks, means, errs, fit_loglog_slope(n_list, means),
                      -alpha / (2 * alpha + D), count_inversions(means))


def excess_risk(family, T, pred) -> float:
    """Excess risk over the test grid: mean of ``|2 eta - 1|`` where the
    prediction departs from the Bayes label."""
    eta = family.eta(T)
    return float(np.mean(np.abs(2 * eta - 1) * (pred != family.bayes_label(T))))


def excess_risk_experiment(
    family,
    n_list: Sequence[int],
    seeds: Iterable[int] = range(10),
    k_scale: float = 1.0,
    n_test: int = 4000,
    corruption_spacing: float | None = None,
    placement: CorruptedPlacement | None = None,
) -> RateResult:
    """k-NN excess risk versus n; theoretical slope ``-alpha (beta + 1) / (2 alpha + D)``."""
    seeds = list(seeds)
    alpha, D, beta = family.alpha, family.dim, family.beta
    T = family.test_points(n_test)
    if placement is None:
        placement = _spread_for(family, corruption_spacing)
    means, errs, ks = [], [], []
    for n in n_list:
        k = rate_k(n, alpha, D, k_scale)
        risks = []
        for s in seeds:
            X, y = _with_placement(*sample_family(family, n, np.random.default_rng(s)), placement)
            pred = KnnIndex(X, y, 2, Backend.SPATIAL_TREE).query_batch(T, k).predictions
            risks.append(excess_risk(family, T, pred))
        ks.append(k)
        means.append(float(np.mean(risks)))
        errs.append(_stderr(risks))
    return RateResult(list(n_list), ks, means, errs, fit_loglog_slope(n_list, means),
                      -alpha * (beta + 1) / (2 * alpha + D), count_inversions(means))
