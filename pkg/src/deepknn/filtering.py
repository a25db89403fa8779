"""Deep k-NN filtering of noisy training labels.

A preliminary network is trained on either the clean set or the union of
clean and noisy data (whichever validates better on held-out clean data).
Noisy examples whose label disagrees with the k-NN vote of their neighbours
in that network's logit space are dropped, and the final network is trained
on what remains plus the clean set.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .data import Dataset, concat, subsplit
from .knn import Backend, KnnIndex
from .net import Architecture, DenseNet, TrainConfig, accuracy, train_dataset

log = logging.getLogger(__name__)

# child seeds are the top-level seed plus these offsets
SEED_OFFSETS = {
    "subsplit": 1,
    "candidate_clean": 2,
    "candidate_union": 3,
    "filter_model": 4,
    "final_model": 5,
}


class Selection(str, Enum):
    CLEAN_ONLY = "clean_only"
    UNION = "union"


class Reference(str, Enum):
    BOTH = "both"
    NOISY = "noisy"


@dataclass(frozen=True)
class FilterConfig:
    k: int = 50
    selection_subsplit: float = 0.7
    exclude_self: bool = True
    reference: Reference = Reference.BOTH
    backend: Backend = Backend.BRUTE_FORCE
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be positive")
        object.__setattr__(self, "reference", Reference(self.reference))
        object.__setattr__(self, "backend", Backend(self.backend))


def default_k(n_train: int) -> int:
    """50 below ten thousand training examples, 500 from there on."""
    return 50 if n_train < 10_000 else 500


@dataclass
class FilterOutcome:
    kept_indices: np.ndarray
    removed_indices: np.ndarray
    labels: np.ndarray
    scores: np.ndarray
    predictions: np.ndarray
    selection: Selection | None = None
    model: DenseNet | None = None

    @property
    def num_noisy(self) -> int:
        return len(self.labels)

    @property
    def kept_mask(self) -> np.ndarray:
        mask = np.zeros(self.num_noisy, dtype=bool)
        mask[self.kept_indices] = True
        return mask


def _seeded(config: TrainConfig, seed: int, stage: str) -> TrainConfig:
    return replace(config, seed=seed + SEED_OFFSETS[stage])


def select_filter_train_set(
    noisy: Dataset,
    clean: Dataset,
    arch: Architecture,
    train_cfg: TrainConfig,
    subsplit_fraction: float = 0.7,
    seed: int = 0,
) -> Selection:
    """Decide whether the filtering model should see the noisy data.

    Ties go to ``UNION``.  With no usable clean validation data the answer is
    ``UNION`` without training anything.
    """
    if clean.n == 0:
        return Selection.UNION
    if clean.n < 2 or noisy.n == 0:
        if clean.n < 2:
            log.warning("clean set of size %d is too small to validate on; using the union", clean.n)
        return Selection.UNION
    clean_train, clean_val = subsplit(clean, subsplit_fraction, seed + SEED_OFFSETS["subsplit"])
    if clean_val.n == 0 or clean_train.n == 0:
        log.warning("clean subsplit left an empty side; using the union")
        return Selection.UNION
    only = train_dataset(arch, clean_train, _seeded(train_cfg, seed, "candidate_clean"))
    union = train_dataset(arch, concat(clean_train, noisy), _seeded(train_cfg, seed, "candidate_union"))
    acc_only = accuracy(only, clean_val)
    acc_union = accuracy(union, clean_val)
    log.debug("selection: clean-only %.4f vs union %.4f on %d validation examples",
              acc_only, acc_union, clean_val.n)
    return Selection.UNION if acc_union >= acc_only else Selection.CLEAN_ONLY


def knn_filter(noisy: Dataset, clean: Dataset, model: DenseNet, cfg: FilterConfig) -> FilterOutcome:
    """Keep each noisy example iff its label equals the k-NN vote in logit space."""
    if noisy.n == 0:
        empty = np.zeros(0, dtype=np.int64)
        return FilterOutcome(empty, empty, empty, np.zeros((0, model.arch.output_dim)), empty, model=model)
    if model.arch.output_dim < noisy.num_classes:
        raise ValueError("model output dimension is smaller than the number of classes")

    noisy_emb = model.logits(noisy.features)
    if cfg.reference is Reference.BOTH and clean.n:
        ref_points = np.concatenate([model.logits(clean.features), noisy_emb])
        ref_labels = np.concatenate([clean.labels, noisy.labels])
        offset = clean.n
    else:
        ref_points, ref_labels, offset = noisy_emb, noisy.labels, 0
    available = len(ref_points) - (1 if cfg.exclude_self else 0)
    if cfg.k > available:
        raise ValueError(f"k={cfg.k} exceeds the {available} reference examples available")

    index = KnnIndex(ref_points, ref_labels, model.arch.output_dim, cfg.backend)
    exclude = offset + np.arange(noisy.n) if cfg.exclude_self else None
    result = index.query_batch(noisy_emb, cfg.k, exclude=exclude)
    keep = result.predictions == noisy.labels
    return FilterOutcome(
        kept_indices=np.nonzero(keep)[0],
        removed_indices=np.nonzero(~keep)[0],
        labels=noisy.labels.copy(),
        scores=result.scores,
        predictions=result.predictions,
        model=model,
    )


def run_pipeline(
    noisy: Dataset,
    clean: Dataset,
    arch: Architecture,
    train_cfg: TrainConfig,
    filter_cfg: FilterConfig,
) -> tuple[DenseNet, FilterOutcome]:
    """Selection, filtering-model training, filtering and final training.

    Every stage seed is ``filter_cfg.seed`` plus an offset from ``SEED_OFFSETS``.
    """
    seed = filter_cfg.seed
    if noisy.n == 0:
        if clean.n == 0:
            raise ValueError("both the noisy and the clean set are empty")
        final = train_dataset(arch, clean, _seeded(train_cfg, seed, "final_model"))
        empty = np.zeros(0, dtype=np.int64)
        outcome = FilterOutcome(empty, empty, empty, np.zeros((0, arch.output_dim)), empty,
                                selection=Selection.CLEAN_ONLY, model=None)
        return final, outcome

    choice = select_filter_train_set(noisy, clean, arch, train_cfg, filter_cfg.selection_subsplit, seed)
    if choice is Selection.CLEAN_ONLY:
        filter_data = clean
    else:
        filter_data = concat(noisy, clean) if clean.n else noisy
    model = train_dataset(arch, filter_data, _seeded(train_cfg, seed, "filter_model"))
    outcome = knn_filter(noisy, clean, model, filter_cfg)
    outcome.selection = choice

    kept = noisy.subset(outcome.kept_indices)
    final_data = concat(kept, clean) if clean.n else kept
    if final_data.n == 0:
        raise ValueError("filtering removed every example and there is no clean data")
    final = train_dataset(arch, final_data, _seeded(train_cfg, seed, "final_model"))
    return final, outcome


def knn_classify(model: DenseNet, reference: Dataset, k: int, X, backend=Backend.BRUTE_FORCE) -> np.ndarray:
    """Classify ``X`` by majority vote of reference examples in logit space."""
    if k > reference.n:
        raise ValueError(f"k={k} exceeds the {reference.n} reference examples")
    index = KnnIndex(model.logits(reference.features), reference.labels, model.arch.output_dim, backend)
    return index.query_batch(model.logits(X), k).predictions


def write_filter_audit(outcome: FilterOutcome, path, extra: dict | None = None) -> None:
    """CSV with one row per noisy example: index, kept flag, label, vote, scores."""
    K = outcome.scores.shape[1] if outcome.scores.ndim == 2 else 0
    extra = extra or {}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([*extra, "index", "kept", "label", "knn_prediction", *[f"score_{c}" for c in range(K)]])
        kept = outcome.kept_mask
        for i in range(outcome.num_noisy):
            writer.writerow([*extra.values(), i, int(kept[i]), int(outcome.labels[i]),
                             int(outcome.predictions[i]), *(repr(float(s)) for s in outcome.scores[i])])
