"""Label corruption: Uniform, Flip and Hard Flip noise."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .data import round_half_up


class Scheme(str, Enum):
    UNIFORM = "uniform"
    FLIP = "flip"
    HARD_FLIP = "hard_flip"

    @classmethod
    def parse(cls, value: "Scheme | str") -> "Scheme":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_").replace(" ", "_")
        if key == "hardflip":
            key = "hard_flip"
        return cls(key)


@dataclass(frozen=True)
class NoiseSpec:
    """Corruption scheme and rate.

    Each example is selected independently with probability ``rate``; with
    ``exact_count`` exactly ``round(rate * n)`` examples are selected instead.
    """

    scheme: Scheme
    rate: float
    permutation: tuple[int, ...] | None = None
    seed: int = 0
    exact_count: bool = False

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme.parse(self.scheme))
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"noise rate must be in [0, 1], got {self.rate}")
        if self.permutation is not None:
            perm = tuple(int(p) for p in self.permutation)
            if sorted(perm) != list(range(len(perm))):
                raise ValueError(f"{perm} is not a permutation of 0..{len(perm) - 1}")
            object.__setattr__(self, "permutation", perm)
        if self.scheme is Scheme.HARD_FLIP and self.permutation is None:
            raise ValueError("hard flip noise needs a permutation")


@dataclass(frozen=True)
class CorruptionReport:
    corrupted_indices: np.ndarray
    original_labels: np.ndarray
    new_labels: np.ndarray

    @property
    def changed_indices(self) -> np.ndarray:
        return np.nonzero(self.original_labels != self.new_labels)[0]


def corrupt(labels, num_classes: int, spec: NoiseSpec) -> tuple[np.ndarray, CorruptionReport]:
    y = np.asarray(labels, dtype=np.int64)
    K = int(num_classes)
    if len(y) and (y.min() < 0 or y.max() >= K):
        raise ValueError(f"labels must lie in [0, {K})")
    if spec.scheme is Scheme.FLIP and K < 2:
        raise ValueError("flip noise needs at least 2 classes")
    if spec.scheme is Scheme.HARD_FLIP and len(spec.permutation) != K:
        raise ValueError(f"permutation has length {len(spec.permutation)}, expected {K}")

    rng = np.random.default_rng(spec.seed)
    n = len(y)
    if spec.exact_count:
        selected = np.sort(rng.permutation(n)[: round_half_up(spec.rate * n)])
    else:
        selected = np.nonzero(rng.random(n) < spec.rate)[0]

    new = y.copy()
    old = y[selected]
    if spec.scheme is Scheme.UNIFORM:
        new[selected] = rng.integers(0, K, size=len(selected))
    elif spec.scheme is Scheme.FLIP:
        new[selected] = (old + rng.integers(1, K, size=len(selected))) % K
    else:
        perm = np.asarray(spec.permutation, dtype=np.int64)
        coin = rng.random(len(selected)) < 0.5
        new[selected] = np.where(coin, perm[old], old)
    return new, CorruptionReport(selected, y.copy(), new.copy())


def expected_change_rate(scheme: Scheme | str, rate: float, num_classes: int) -> float:
    """Probability that a label ends up changed, assuming a fixed-point-free
    permutation for hard flip."""
    scheme = Scheme.parse(scheme)
    if scheme is Scheme.UNIFORM:
        return rate * (num_classes - 1) / num_classes
    if scheme is Scheme.FLIP:
        return rate
    return rate / 2


def circular_permutation(num_classes: int) -> tuple[int, ...]:
    if num_classes < 2:
        raise ValueError("circular permutation needs at least 2 classes")
    return tuple((i + 1) % num_classes for i in range(num_classes))


def pair_swap_permutation(pairs: Sequence[Sequence[int]], num_classes: int) -> tuple[int, ...]:
    perm = list(range(num_classes))
    seen: set[int] = set()
    for a, b in pairs:
        a, b = int(a), int(b)
        for c in (a, b):
            if not 0 <= c < num_classes:
                raise ValueError(f"class {c} out of range for {num_classes} classes")
        if a == b or a in seen or b in seen:
            raise ValueError(f"pairs overlap at ({a}, {b})")
        seen.update((a, b))
        perm[a], perm[b] = b, a
    return tuple(perm)


def resolve_permutation(source, num_classes: int) -> tuple[int, ...]:
    """Build a permutation from a config value: ``"circular"``, an explicit
    list, or ``{"pairs": [[a, b], ...]}``."""
    if source is None or source == "circular":
        return circular_permutation(num_classes)
    if isinstance(source, dict):
        return pair_swap_permutation(source.get("pairs", []), num_classes)
    perm = tuple(int(p) for p in source)
    if sorted(perm) != list(range(num_classes)):
        raise ValueError(f"{perm} is not a permutation of 0..{num_classes - 1}")
    return perm
