"""Noise-rate sweeps over methods, seeds and rates, with CSV/JSON reports.

A sweep cell is one (seed, noise rate) pair.  Within a cell every method sees
the same clean/noisy split, the same corrupted labels and the same untouched
test set, so method comparisons are paired.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import platform
import subprocess
import tempfile
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .baselines import METHODS as BASELINE_METHODS, run_baseline
from .data import Dataset, SplitSpec, Standardizer, load_csv, make_blobs, split_clean_noisy, split_indices
from .filtering import FilterConfig, default_k, knn_classify, run_pipeline
from .net import Architecture, TrainConfig
from .noise import NoiseSpec, Scheme, corrupt, resolve_permutation

log = logging.getLogger(__name__)

METHODS = (*BASELINE_METHODS, "kNN", "kNN-Classify")
AUC_CONVENTION = "sum of seed-mean test error over the noise-rate grid (unit spacing)"


def default_rates() -> list[float]:
    return [i / 10 for i in range(11)]


def derive_seed(*keys) -> int:
    """Stable 32-bit seed from integers and strings."""
    entropy = [k if isinstance(k, int) else zlib.crc32(str(k).encode()) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


@dataclass
class ExperimentConfig:
    dataset: dict = field(default_factory=lambda: {"kind": "blobs", "n": 5000, "num_classes": 10,
                                                   "std": 1.0, "radius": 4.0, "test_n": 2000})
    clean_fraction: float = 0.05
    noise: dict = field(default_factory=lambda: {"scheme": "uniform", "permutation": "circular",
                                                 "exact_count": False})
    methods: list = field(default_factory=lambda: ["Full", "kNN"])
    architecture: dict = field(default_factory=lambda: {"hidden": [100]})
    train: dict = field(default_factory=lambda: {"learning_rate": 0.001, "batch_size": 128, "epochs": 100})
    filter: dict = field(default_factory=lambda: {"k": None, "exclude_self": True, "reference": "both",
                                                  "selection_subsplit": 0.7})
    distill_lambda: float = 0.5
    rates: list = field(default_factory=default_rates)
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    jobs: int = 1

    def __post_init__(self):
        if not self.methods:
            raise ValueError("at least one method is required")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; choose from {METHODS}")
        rates = [float(r) for r in self.rates]
        if any(not 0.0 <= r <= 1.0 for r in rates) or rates != sorted(rates) or not rates:
            raise ValueError("rates must be ascending values in [0, 1]")
        self.rates = rates
        self.seeds = [int(s) for s in self.seeds]
        Scheme.parse(self.noise.get("scheme", "uniform"))
        if not 0.0 <= self.clean_fraction <= 1.0:
            raise ValueError("clean_fraction must be in [0, 1]")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if "config" in doc and "manifest_version" in doc:
            doc = doc["config"]
        base = cls()
        kwargs = {}
        for name in asdict(base):
            if name not in doc:
                continue
            value = doc[name]
            default = getattr(base, name)
            if isinstance(default, dict) and isinstance(value, dict):
                value = {**default, **value} if name != "dataset" or value.get("kind", "blobs") == default["kind"] \
                    else dict(value)
            kwargs[name] = value
        extra = set(doc) - set(asdict(base))
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


# data preparation -------------------------------------------------------------

@dataclass
class SeedData:
    clean: Dataset
    noisy: Dataset
    test: Dataset
    standardized: bool


def load_source(config: ExperimentConfig) -> Dataset | None:
    spec = config.dataset
    if spec.get("kind", "blobs") != "csv":
        return None
    return load_csv(spec["path"], spec.get("label_col", -1), num_classes=spec.get("num_classes"))


def prepare_seed(config: ExperimentConfig, seed: int, source: Dataset | None = None) -> SeedData:
    spec = config.dataset
    kind = spec.get("kind", "blobs")
    if kind == "blobs":
        kw = {"num_classes": spec.get("num_classes", 10), "std": spec.get("std", 1.0),
              "radius": spec.get("radius", 4.0)}
        train = make_blobs(spec.get("n", 5000), seed=derive_seed(seed, "train"), **kw)
        test = make_blobs(spec.get("test_n", 2000), seed=derive_seed(seed, "test"), **kw)
    elif kind == "csv":
        data = source if source is not None else load_source(config)
        test_idx, train_idx = split_indices(data.n, spec.get("test_fraction", 0.2), derive_seed(seed, "test"))
        train, test = data.subset(train_idx), data.subset(test_idx)
    else:
        raise ValueError(f"unknown dataset kind {kind!r}")
    standardize = bool(spec.get("standardize", False))
    if standardize:
        scaler = Standardizer.fit(train)
        train, test = scaler.apply(train), scaler.apply(test)
    clean, noisy = split_clean_noisy(train, SplitSpec(config.clean_fraction, derive_seed(seed, "split")))
    return SeedData(clean, noisy, test, standardize)


def _noise_spec(config: ExperimentConfig, rate: float, K: int, seed: int, rate_index: int) -> NoiseSpec:
    scheme = Scheme.parse(config.noise.get("scheme", "uniform"))
    perm = resolve_permutation(config.noise.get("permutation", "circular"), K) \
        if scheme is Scheme.HARD_FLIP else None
    return NoiseSpec(scheme, rate, perm, derive_seed(seed, "noise", rate_index),
                     bool(config.noise.get("exact_count", False)))


def _arch(config: ExperimentConfig, data: SeedData) -> Architecture:
    K = max(data.clean.num_classes, data.noisy.num_classes, data.test.num_classes)
    dim = data.noisy.dim if data.noisy.n else data.clean.dim
    return Architecture(dim, tuple(config.architecture.get("hidden", [100])), K)


def _train_cfg(config: ExperimentConfig, seed: int) -> TrainConfig:
    t = config.train
    return TrainConfig(learning_rate=t.get("learning_rate", 0.001), batch_size=t.get("batch_size", 128),
                       epochs=t.get("epochs", 100), seed=seed)


def filter_config(config: ExperimentConfig, n_train: int, seed: int) -> FilterConfig:
    f = config.filter
    k = f.get("k") or default_k(n_train)
    return FilterConfig(k=int(k), selection_subsplit=f.get("selection_subsplit", 0.7),
                        exclude_self=f.get("exclude_self", True), reference=f.get("reference", "both"),
                        seed=seed)


# cells ----------------------------------------------------------------------

@dataclass
class CellResult:
    seed: int
    rate_index: int
    errors: dict[str, float | None]
    failures: dict[str, str]
    audit: dict | None = None


def run_cell(config: ExperimentConfig, seed: int, rate_index: int, source: Dataset | None = None,
             keep_audit: bool = True) -> CellResult:
    data = prepare_seed(config, seed, source)
    arch = _arch(config, data)
    rate = config.rates[rate_index]
    noisy = data.noisy
    if noisy.n:
        labels, _ = corrupt(noisy.labels, arch.output_dim, _noise_spec(config, rate, arch.output_dim, seed, rate_index))
        noisy = Dataset(noisy.features, labels, arch.output_dim)
    errors: dict[str, float | None] = {}
    failures: dict[str, str] = {}
    audit = None
    X_test, y_test = data.test.features, data.test.labels
    for method in config.methods:
        mseed = derive_seed(seed, "method", method)
        try:
            cfg = _train_cfg(config, mseed)
            if method == "kNN":
                fcfg = filter_config(config, noisy.n + data.clean.n, mseed)
                model, outcome = run_pipeline(noisy, data.clean, arch, cfg, fcfg)
                pred = model.predict(X_test)
                if keep_audit:
                    audit = {"labels": outcome.labels, "kept": outcome.kept_mask,
                             "predictions": outcome.predictions, "scores": outcome.scores,
                             "selection": None if outcome.selection is None else outcome.selection.value}
            elif method == "kNN-Classify":
                model = run_baseline("Full", noisy, data.clean, arch, cfg)
                reference = _union(noisy, data.clean)
                k = filter_config(config, reference.n, mseed).k
                pred = knn_classify(model, reference, min(k, reference.n), X_test)
            else:
                model = run_baseline(method, noisy, data.clean, arch, cfg, config.distill_lambda)
                pred = model.predict(X_test)
            errors[method] = float(np.mean(pred != y_test))
        except Exception as exc:  # one failed cell must not take down the others
            log.error("seed %d rate %.3g method %s failed: %s", seed, rate, method, exc)
            errors[method] = None
            failures[method] = f"{type(exc).__name__}: {exc}"
    return CellResult(seed, rate_index, errors, failures, audit)


def _union(noisy: Dataset, clean: Dataset) -> Dataset:
    from .data import concat
    if noisy.n and clean.n:
        return concat(noisy, clean)
    return noisy if noisy.n else clean


def _run_cell_job(args):
    config, seed, rate_index, source, keep_audit = args
    try:
        return run_cell(config, seed, rate_index, source, keep_audit)
    except Exception as exc:
        log.error("seed %d rate index %d failed before training: %s", seed, rate_index, exc)
        return CellResult(seed, rate_index, {m: None for m in config.methods},
                          {m: f"{type(exc).__name__}: {exc}" for m in config.methods})


# results --------------------------------------------------------------------

@dataclass
class SweepResult:
    methods: list[str]
    rates: list[float]
    seeds: list[int]
    errors: dict[tuple[str, int, int], float | None]
    failures: list[dict] = field(default_factory=list)
    audits: dict[tuple[int, int], dict] = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return all(v is not None for v in self.errors.values())

    def curve(self, method: str) -> list[tuple[float, float | None, float | None, int]]:
        """(rate, mean, stderr, number of seeds) per rate; mean is ``None``
        when every seed failed."""
        out = []
        for i, rate in enumerate(self.rates):
            vals = [self.errors.get((method, i, s)) for s in self.seeds]
            vals = [v for v in vals if v is not None]
            if not vals:
                out.append((rate, None, None, 0))
                continue
            arr = np.asarray(vals)
            se = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0
            out.append((rate, float(arr.mean()), se, len(arr)))
        return out

    def auc(self, method: str) -> float | None:
        means = [m for _, m, _, _ in self.curve(method)]
        if any(m is None for m in means):
            return None
        return compute_auc(list(zip(self.rates, means)))


def compute_auc(curve) -> float:
    """Area under a (rate, mean error) curve as the plain sum of the errors."""
    if not curve:
        raise ValueError("empty curve")
    if len(curve) < 2:
        raise ValueError("need at least two points")
    return float(sum(float(m) for _, m in curve))


def run_sweep(config: ExperimentConfig, keep_audit: bool = True) -> SweepResult:
    source = load_source(config)
    jobs = [(config, s, i, source, keep_audit) for s in config.seeds for i in range(len(config.rates))]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            cells = list(pool.map(_run_cell_job, jobs))
    else:
        cells = [_run_cell_job(j) for j in jobs]
    result = SweepResult(list(config.methods), list(config.rates), list(config.seeds), {})
    for cell in cells:
        for method, err in cell.errors.items():
            result.errors[(method, cell.rate_index, cell.seed)] = err
        for method, msg in cell.failures.items():
            result.failures.append({"seed": cell.seed, "rate": config.rates[cell.rate_index],
                                    "method": method, "error": msg})
        if cell.audit is not None:
            result.audits[(cell.seed, cell.rate_index)] = cell.audit
    return result


# reports --------------------------------------------------------------------

def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(rows) -> str:
    import io
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def git_hash() -> str | None:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).resolve().parent)
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() or None if out.returncode == 0 else None


def build_manifest(config_doc: dict, extra: dict | None = None) -> dict:
    return {
        "manifest_version": 1,
        "package": "deepknn",
        "version": __version__,
        "git_hash": git_hash(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "auc_convention": AUC_CONVENTION,
        "config": config_doc,
        **(extra or {}),
    }


def write_manifest(outdir, config_doc: dict, extra: dict | None = None) -> Path:
    path = Path(outdir) / "manifest.json"
    _atomic_write(path, json.dumps(build_manifest(config_doc, extra), indent=2, sort_keys=True) + "\n")
    return path


def emit_reports(result: SweepResult, outdir, config: ExperimentConfig | None = None) -> dict[str, Path]:
    out = Path(outdir)
    paths = {}
    rows = [["method", "rate", "mean", "stderr", "n_seeds"]]
    for method in result.methods:
        for rate, mean, se, n in result.curve(method):
            rows.append([method, repr(float(rate)), _fmt(mean), _fmt(se), n])
    paths["curves"] = out / "curves.csv"
    _atomic_write(paths["curves"], _csv_text(rows))

    rows = [["method", "auc", "convention"]]
    for method in result.methods:
        rows.append([method, _fmt(result.auc(method)), AUC_CONVENTION])
    paths["auc"] = out / "auc.csv"
    _atomic_write(paths["auc"], _csv_text(rows))

    rows = [["method", "rate", "seed", "error"]]
    for method in result.methods:
        for i, rate in enumerate(result.rates):
            for s in result.seeds:
                rows.append([method, repr(float(rate)), s, _fmt(result.errors.get((method, i, s)))])
    paths["cells"] = out / "cells.csv"
    _atomic_write(paths["cells"], _csv_text(rows))

    if result.audits:
        K = next(iter(result.audits.values()))["scores"].shape[1]
        rows = [["seed", "rate", "index", "kept", "label", "knn_prediction", *[f"score_{c}" for c in range(K)]]]
        for (seed, ri), a in sorted(result.audits.items()):
            for i in range(len(a["labels"])):
                rows.append([seed, repr(float(result.rates[ri])), i, int(a["kept"][i]), int(a["labels"][i]),
                             int(a["predictions"][i]), *(repr(float(v)) for v in a["scores"][i])])
        paths["filter_audit"] = out / "filter_audit.csv"
        _atomic_write(paths["filter_audit"], _csv_text(rows))

    config_doc = config.to_dict() if config is not None else {
        "methods": result.methods, "rates": result.rates, "seeds": result.seeds}
    extra = {"complete": result.complete, "failures": result.failures,
             "standardize": bool(config.dataset.get("standardize", False)) if config else None}
    paths["manifest"] = write_manifest(out, config_doc, extra)
    return paths


def read_curves(path) -> dict[tuple[str, float], tuple[float | None, float | None, int]]:
    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            mean = float(row["mean"]) if row["mean"] else None
            se = float(row["stderr"]) if row["stderr"] else None
            out[(row["method"], float(row["rate"]))] = (mean, se, int(row["n_seeds"]))
    return out


def write_curve_csv(path, points, x_name: str = "x") -> Path:
    """``points`` are objects with ``x``, ``mean`` and ``stderr`` or tuples."""
    rows = [[x_name, "mean", "stderr"]]
    for p in points:
        x, m, s = (p.x, p.mean, p.stderr) if hasattr(p, "mean") else p
        rows.append([_fmt(x), _fmt(m), _fmt(s)])
    path = Path(path)
    _atomic_write(path, _csv_text(rows))
    return path


def write_rows(path, header, rows) -> Path:
    path = Path(path)
    _atomic_write(path, _csv_text([list(header), *[list(r) for r in rows]]))
    return path


def replace_seeds(config: ExperimentConfig, seeds) -> ExperimentConfig:
    return replace(config, seeds=[int(s) for s in seeds])


def config_with(config: ExperimentConfig, **changes: Any) -> ExperimentConfig:
    return replace(config, **changes)
