"""Command-line entry point: ``deepknn {sweep,filter,theory,spread}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness, theory
from .data import DataError, Dataset, SplitSpec, Standardizer, load_csv, split_clean_noisy
from .filtering import run_pipeline, write_filter_audit
from .net import Architecture, TrainConfig, TrainingError
from .noise import NoiseSpec, Scheme, corrupt, resolve_permutation

log = logging.getLogger("deepknn")

EXIT_OK, EXIT_INCOMPLETE, EXIT_USAGE = 0, 1, 2


def _seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}")
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    return seeds


def _floats(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _label_col(text: str):
    try:
        return int(text)
    except ValueError:
        return text


def _load_json(path) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepknn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="JSON configuration (or a manifest.json from an earlier run)")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--seeds", type=_seeds, help="comma-separated seeds, e.g. 0,1,2")

    p = sub.add_parser("sweep", help="noise-rate sweep over methods and seeds")
    common(p)
    p.add_argument("--data", help="CSV dataset (overrides the configured dataset)")
    p.add_argument("--label-col", type=_label_col, help="label column index or header name")
    p.add_argument("--standardize", action="store_true", help="z-score features using training statistics")
    p.add_argument("--jobs", type=int, help="worker processes")
    p.add_argument("--methods", help="comma-separated method list")
    p.add_argument("--rates", type=_floats, help="comma-separated noise rates")

    p = sub.add_parser("filter", help="filter one labelled CSV and write the audit table")
    common(p)
    p.add_argument("--data", required=True, help="CSV dataset")
    p.add_argument("--clean-data", help="CSV of trusted examples; otherwise a clean fraction is split off")
    p.add_argument("--label-col", type=_label_col, default=-1)
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--clean-fraction", type=float, default=0.05)
    p.add_argument("--noise-rate", type=float, default=0.0, help="extra label noise injected before filtering")
    p.add_argument("--scheme", default="uniform", choices=[s.value for s in Scheme])
    p.add_argument("--k", type=int, help="neighbours (default depends on training-set size)")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--hidden", default="100", help="comma-separated hidden widths")
    p.add_argument("--jobs", type=int, default=1, help="accepted for symmetry; filtering is single-process")

    p = sub.add_parser("theory", help="raw k-NN margin checks and convergence rates on synthetic families")
    common(p)
    p.add_argument("--which", default="theorem1,rate,risk", help="subset of theorem1,rate,risk")

    p = sub.add_parser("spread", help="accuracy and clean-sample needs versus grid spacing of flipped points")
    common(p)
    p.add_argument("--widths", type=_floats, help="comma-separated grid widths")
    p.add_argument("--skip-samples", action="store_true", help="only run the accuracy curve")
    return parser


# verbs ------------------------------------------------------------------------

def cmd_sweep(args) -> int:
    doc = _load_json(args.config)
    if args.data:
        dataset = {"kind": "csv", "path": args.data}
        if isinstance(doc.get("dataset"), dict) and doc["dataset"].get("kind") == "csv":
            dataset = {**doc["dataset"], **dataset}
        doc["dataset"] = dataset
    if args.label_col is not None or args.standardize:
        dataset = dict(doc.get("dataset") or harness.ExperimentConfig().dataset)
        if args.label_col is not None:
            dataset["label_col"] = args.label_col
        if args.standardize:
            dataset["standardize"] = True
        doc["dataset"] = dataset
    if args.seeds:
        doc["seeds"] = args.seeds
    if args.jobs:
        doc["jobs"] = args.jobs
    if args.methods:
        doc["methods"] = [m.strip() for m in args.methods.split(",") if m.strip()]
    if args.rates:
        doc["rates"] = args.rates
    config = harness.ExperimentConfig.from_dict(doc)
    result = harness.run_sweep(config)
    paths = harness.emit_reports(result, args.out, config)
    for method in result.methods:
        auc = result.auc(method)
        print(f"{method:14s} AUC {'missing' if auc is None else f'{auc:.4f}'}")
    print(f"reports in {Path(args.out)} ({', '.join(p.name for p in paths.values())})")
    if not result.complete:
        print(f"{len(result.failures)} cell(s) failed; see manifest.json", file=sys.stderr)
        return EXIT_INCOMPLETE
    return EXIT_OK


def cmd_filter(args) -> int:
    doc = _load_json(args.config)
    seed = (args.seeds or [doc.get("seed", 0)])[0]
    data = load_csv(args.data, args.label_col)
    if args.clean_data:
        clean = load_csv(args.clean_data, args.label_col)
        K = max(clean.num_classes, data.num_classes)
        noisy = Dataset(data.features, data.labels, K)
        clean = Dataset(clean.features, clean.labels, K)
    else:
        clean, noisy = split_clean_noisy(data, SplitSpec(args.clean_fraction, seed))
        K = data.num_classes
    if args.standardize:
        scaler = Standardizer.fit(harness._union(noisy, clean))
        noisy, clean = scaler.apply(noisy), scaler.apply(clean)
    if args.noise_rate > 0 and noisy.n:
        scheme = Scheme.parse(args.scheme)
        perm = resolve_permutation(doc.get("permutation", "circular"), K) if scheme is Scheme.HARD_FLIP else None
        labels, _ = corrupt(noisy.labels, K, NoiseSpec(scheme, args.noise_rate, perm, seed))
        noisy = noisy.with_labels(labels)

    hidden = tuple(int(h) for h in args.hidden.split(",") if h.strip())
    arch = Architecture(data.dim, hidden, K)
    cfg = TrainConfig(epochs=args.epochs, seed=seed)
    fcfg = harness.filter_config(
        harness.ExperimentConfig(filter={**harness.ExperimentConfig().filter, "k": args.k}),
        noisy.n + clean.n, seed)
    final, outcome = run_pipeline(noisy, clean, arch, cfg, fcfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_filter_audit(outcome, out / "filter_audit.csv")
    final.save(out / "model.json")
    run_doc = {"data": str(args.data), "clean_data": args.clean_data, "label_col": args.label_col,
               "standardize": args.standardize, "clean_fraction": args.clean_fraction,
               "noise_rate": args.noise_rate, "scheme": args.scheme, "k": fcfg.k,
               "hidden": list(hidden), "epochs": args.epochs, "seed": seed}
    harness.write_manifest(out, run_doc, {
        "selection": None if outcome.selection is None else outcome.selection.value,
        "kept": int(len(outcome.kept_indices)), "removed": int(len(outcome.removed_indices))})
    print(f"selection {outcome.selection.value if outcome.selection else 'n/a'}: kept "
          f"{len(outcome.kept_indices)} of {outcome.num_noisy} noisy examples (k={fcfg.k})")
    return EXIT_OK


THEORY_DEFAULTS = {
    "exponent": 1.0, "n": 5000, "k": 50, "delta": 0.15, "spacing_factor": 4.0,
    "cluster_location": [0.85], "n_list": [500, 1000, 2000, 4000, 8000], "rate_seeds": 60,
    "k_scale": 1.0, "quantile": 1.0, "n_test": 4000,
}


def cmd_theory(args) -> int:
    opts = {**THEORY_DEFAULTS, **_load_json(args.config)}
    unknown = set(opts) - set(THEORY_DEFAULTS)
    if unknown:
        raise ValueError(f"unknown theory options {sorted(unknown)}")
    which = {w.strip() for w in args.which.split(",") if w.strip()}
    family = theory.PowerRamp(opts["exponent"], 1)
    out = Path(args.out)
    if "theorem1" in which:
        seeds = args.seeds or list(range(10))
        res = theory.spread_versus_cluster(family, opts["n"], opts["k"], opts["delta"], seeds,
                                           opts["spacing_factor"], tuple(opts["cluster_location"]))
        rows = [[s, "spread", repr(r.violation_fraction), repr(r.s2), repr(r.max_knn_radius)]
                for s, r in zip(seeds, res.spread)]
        rows += [[s, "cluster", repr(r.violation_fraction), repr(r.s2), repr(r.max_knn_radius)]
                 for s, r in zip(seeds, res.cluster)]
        harness.write_rows(out / "theorem1.csv", ["seed", "placement", "violation_fraction", "s2",
                                                   "max_knn_radius"], rows)
        print(f"theorem1: spread {res.spread_mean:.5f}, cluster {res.cluster_mean:.5f}")
    for name, fn in (("rate", theory.rate_experiment), ("risk", theory.excess_risk_experiment)):
        if name not in which:
            continue
        seeds = args.seeds or list(range(opts["rate_seeds"]))
        kw = {"quantile": opts["quantile"]} if name == "rate" else {}
        res = fn(family, opts["n_list"], seeds, opts["k_scale"], n_test=opts["n_test"], **kw)
        harness.write_rows(out / f"{'rate' if name == 'rate' else 'excess_risk'}.csv",
                           ["n", "k", "mean", "stderr"],
                           [[n, k, repr(m), repr(s)] for n, k, m, s in
                            zip(res.n_values, res.k_values, res.means, res.stderrs)])
        print(f"{name}: slope {res.slope:.3f} (theory {res.theoretical_slope:.3f}), "
              f"{res.inversions} inversion(s)")
    harness.write_manifest(out, {**opts, "which": sorted(which), "seeds": args.seeds})
    return EXIT_OK


DEFAULT_WIDTHS = [0.1, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0]


def cmd_spread(args) -> int:
    opts = _load_json(args.config)
    seeds = args.seeds or opts.get("seeds", list(range(10)))
    widths = args.widths or opts.get("widths", DEFAULT_WIDTHS)
    out = Path(args.out)
    curve = theory.spread_experiment(widths, seeds=seeds)
    harness.write_curve_csv(out / "spread.csv", curve, "width")
    rho = theory.spearman(widths, [p.mean for p in curve])
    print(f"spread: accuracy vs width Spearman {rho:.3f}")
    if not args.skip_samples:
        targets = theory.clean_samples_to_target(widths, seeds=seeds)
        harness.write_rows(out / "clean_samples.csv", ["width", "required_n", "accuracy", "accuracy_below"],
                           [[repr(t.width), "" if t.required_n is None else t.required_n,
                             "" if t.accuracy is None else repr(t.accuracy),
                             "" if t.accuracy_below is None else repr(t.accuracy_below)] for t in targets])
        usable = [(t.width, t.required_n) for t in targets if t.required_n is not None]
        if len(usable) >= 2:
            print(f"clean samples to 90%: Spearman {theory.spearman(*zip(*usable)):.3f}")
    harness.write_manifest(out, {"widths": widths, "seeds": seeds, "skip_samples": args.skip_samples})
    return EXIT_OK


COMMANDS = {"sweep": cmd_sweep, "filter": cmd_filter, "theory": cmd_theory, "spread": cmd_spread}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.verb](args)
    except (DataError, FileNotFoundError, ValueError, TrainingError, json.JSONDecodeError) as exc:
        print(f"deepknn {args.verb}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
