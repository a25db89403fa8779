"""Comparison methods: Clean, Full, Forward, GLC and Distill.

Corruption matrices are row-stochastic with rows indexed by the true class
and columns by the observed class.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import replace

import numpy as np

from .data import Dataset, concat, one_hot
from .net import (
    Architecture,
    CorrectedCrossEntropy,
    DenseNet,
    SoftLabelCrossEntropy,
    TrainConfig,
    init,
    train,
    train_dataset,
)

log = logging.getLogger(__name__)

METHODS = ("Clean", "Full", "Forward", "GLC", "Distill")
NEEDS_CLEAN = {"Clean", "GLC", "Distill"}

# seed offset for the auxiliary model a method trains before its final model
_AUX_SEED_OFFSET = 7


def validate_corruption_matrix(matrix, num_classes: int | None = None, allow_singular: bool = False) -> np.ndarray:
    C = np.array(matrix, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"corruption matrix must be square, got shape {C.shape}")
    if num_classes is not None and C.shape[0] != num_classes:
        raise ValueError(f"corruption matrix is {C.shape[0]}x{C.shape[0]}, expected {num_classes} classes")
    if not np.all(np.isfinite(C)) or np.any(C < 0):
        raise ValueError("corruption matrix entries must be finite and nonnegative")
    if not np.allclose(C.sum(axis=1), 1.0, atol=1e-9, rtol=0):
        raise ValueError("corruption matrix rows must sum to 1")
    if not allow_singular and np.linalg.matrix_rank(C) < C.shape[0]:
        raise ValueError("corruption matrix is singular")
    return C


def _normalize_rows(C: np.ndarray) -> np.ndarray:
    return C / C.sum(axis=1, keepdims=True)


def glc_estimate(model_on_noisy, clean: Dataset, num_classes: int | None = None) -> np.ndarray:
    """Row ``t`` is the mean softmax of the noisy-trained model over clean
    examples whose true label is ``t``.

    ``model_on_noisy`` only needs a ``softmax(X)`` method.  Classes without
    clean examples get an identity row.
    """
    if clean.n == 0:
        raise ValueError("GLC needs a non-empty clean set")
    K = num_classes or clean.num_classes
    probs = np.asarray(model_on_noisy.softmax(clean.features), dtype=np.float64)
    C = np.eye(K)
    for t in range(K):
        rows = clean.labels == t
        if not np.any(rows):
            log.warning("class %d absent from the clean set; using an identity row", t)
            continue
        mean = probs[rows].mean(axis=0)
        if mean.sum() <= 0:
            log.warning("class %d has zero predicted mass; using an identity row", t)
            continue
        C[t] = mean
    return _normalize_rows(C)


def forward_estimate(model_on_noisy, noisy: Dataset, num_classes: int | None = None) -> np.ndarray:
    """Row ``t`` is the softmax at the noisy example the model is most
    confident belongs to class ``t``."""
    if noisy.n == 0:
        raise ValueError("forward estimation needs a non-empty noisy set")
    K = num_classes or noisy.num_classes
    probs = np.asarray(model_on_noisy.softmax(noisy.features), dtype=np.float64)
    C = np.eye(K)
    for t in range(K):
        best = int(np.argmax(probs[:, t]))
        if probs[best, t] <= 0:
            log.warning("no example has positive confidence for class %d; using an identity row", t)
            continue
        C[t] = probs[best]
    return _normalize_rows(C)


def train_corrected(
    noisy: Dataset,
    matrix,
    arch: Architecture,
    cfg: TrainConfig,
    clean: Dataset | None = None,
) -> DenseNet:
    """Train with ``C^T softmax`` scored on noisy labels; clean examples, if
    given, are mixed into the same shuffled stream with the plain loss."""
    C = validate_corruption_matrix(matrix, arch.output_dim)
    if clean is not None and clean.n:
        data = concat(noisy, clean)
        mask = np.r_[np.ones(noisy.n, dtype=bool), np.zeros(clean.n, dtype=bool)]
    else:
        data, mask = noisy, None
    return train(init(arch, cfg.seed), data.features, data.labels, cfg, CorrectedCrossEntropy(C, mask))


def distill_labels(model_on_clean, noisy: Dataset, lam: float = 0.5, num_classes: int | None = None) -> np.ndarray:
    """``lam * onehot(label) + (1 - lam) * softmax`` of the clean-trained model."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    K = num_classes or noisy.num_classes
    hard = one_hot(noisy.labels, K)
    if noisy.n == 0:
        return hard
    if lam == 1.0:
        return hard
    soft = np.asarray(model_on_clean.softmax(noisy.features), dtype=np.float64)
    if lam == 0.0:
        return soft
    return lam * hard + (1.0 - lam) * soft


def _aux(cfg: TrainConfig) -> TrainConfig:
    return replace(cfg, seed=cfg.seed + _AUX_SEED_OFFSET)


def run_baseline(
    name: str,
    noisy: Dataset,
    clean: Dataset,
    arch: Architecture,
    cfg: TrainConfig,
    distill_lambda: float = 0.5,
) -> DenseNet:
    if name not in METHODS:
        raise ValueError(f"unknown baseline {name!r}; choose from {METHODS}")
    if name in NEEDS_CLEAN and clean.n == 0:
        raise ValueError(f"{name} needs a non-empty clean set")
    K = arch.output_dim

    if name == "Clean":
        return train_dataset(arch, clean, cfg)
    if name == "Full":
        if noisy.n == 0:
            return train_dataset(arch, clean, cfg)
        return train_dataset(arch, concat(noisy, clean) if clean.n else noisy, cfg)

    if name == "Distill":
        teacher = train_dataset(arch, clean, _aux(cfg))
        targets = np.concatenate([distill_labels(teacher, noisy, distill_lambda, K), one_hot(clean.labels, K)])
        data = concat(noisy, clean) if noisy.n else clean
        return train(init(arch, cfg.seed), data.features, None, cfg, SoftLabelCrossEntropy(targets))

    if noisy.n == 0:
        return train_dataset(arch, clean, cfg)
    noisy_model = train_dataset(arch, noisy, _aux(cfg))
    if name == "GLC":
        C = glc_estimate(noisy_model, clean, K)
    else:
        C = forward_estimate(noisy_model, noisy, K)
    return train_corrected(noisy, C, arch, cfg, clean)


def write_matrix_csv(matrix, path) -> None:
    C = np.asarray(matrix)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true_class", *[f"observed_{j}" for j in range(C.shape[1])]])
        for t, row in enumerate(C):
            writer.writerow([t, *(repr(float(v)) for v in row)])
