"""Command-line surface: gen | fit | eval | theta | cv | bench.

Every command is driven purely by flags (no environment variables) and is
reproducible: the same flags and seed produce byte-identical artifacts.
Exit codes: 0 success, 2 finished-with-solver-warning, 1 failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data as dt
from .evalbench import (
    ConfusionMatrix,
    macro_f1,
    run_excess_risk_check,
    run_theta_sweep,
    run_unlabeled_scaling,
)
from .kernel import DEFAULT_SIGMA_MULTIPLIERS, KernelSpec, median_heuristic
from .losses import LOSS_KINDS, SQUARE
from .mixture import DEFAULT_SLOPE_THRESHOLD, estimate_theta, theta_override
from .modelsel import DEFAULT_LAMBDAS, HyperGrid, cross_validate, fit_with_selection
from .risk import zero_one_risk
from .solver import DualModel

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_WARNING = 2

DEFAULT_SCALING_SIZES = (250, 500, 750, 1000, 1250, 1500)
DEFAULT_SWEEP_RATIOS = (0.0, 0.2, 0.6, 0.8)


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _dump_json(path: Path, payload: dict) -> None:
    _write_text(path, json.dumps(payload, sort_keys=True, indent=1) + "\n")


def _read_spec(path: str) -> dt.SyntheticSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return dt.parse_synthetic_spec(fh.read())


def _grid_from_args(args) -> HyperGrid:
    return HyperGrid(
        sigma_multipliers=tuple(args.sigma_mult),
        lambda_candidates=tuple(args.lam),
        loss_kind=args.loss,
        folds=args.folds,
    )


def _resolve_theta(args, labeled, unlabeled):
    if args.theta is not None:
        return theta_override(args.theta)
    kernel = KernelSpec(median_heuristic(np.vstack([labeled.X, unlabeled.X])))
    return estimate_theta(labeled, unlabeled, kernel, slope_threshold=args.theta_threshold)


def _config_echo(args) -> dict:
    """Flags that determined this artifact, echoed for reproducibility."""
    echo = {"command": args.command, "seed": args.seed}
    for key in ("labeled", "unlabeled", "loss", "theta", "theta_threshold", "folds"):
        if hasattr(args, key):
            value = getattr(args, key)
            echo[key] = str(value) if key in ("labeled", "unlabeled") else value
    if hasattr(args, "lam"):
        echo["lambda_candidates"] = list(args.lam)
        echo["sigma_multipliers"] = list(args.sigma_mult)
    return echo


def cmd_gen(args) -> int:
    spec = _read_spec(args.spec)
    spec = dt.SyntheticSpec(spec.class_priors, spec.class_mixtures, spec.new_mixture,
                            spec.theta, seed=args.seed)
    labeled, unlabeled, test = dt.sample_synthetic(
        spec, args.n_labeled, args.n_unlabeled, args.n_test
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dt.write_libsvm(out / "labeled.libsvm", labeled)
    dt.write_features_csv(out / "unlabeled.csv", unlabeled.X)
    dt.write_libsvm(out / "test.libsvm", test)
    bayes = dt.bayes_risk_oracle(spec, args.grid_resolution) if spec.dimension <= 2 else None
    _dump_json(out / "manifest.json", {
        "command": "gen",
        "seed": args.seed,
        "theta": spec.theta,
        "bayes_risk": bayes,
        "grid_resolution": args.grid_resolution if bayes is not None else None,
        "dimension": spec.dimension,
        "num_known_classes": spec.num_known_classes,
        "n_labeled": args.n_labeled,
        "n_unlabeled": args.n_unlabeled,
        "n_test": args.n_test,
        "files": ["labeled.libsvm", "unlabeled.csv", "test.libsvm"],
    })
    print(f"wrote labeled/unlabeled/test + manifest to {out}")
    return EXIT_OK


def _theta_payload(estimate) -> dict:
    return {
        "theta_hat": estimate.theta_hat,
        "no_novelty_detected": estimate.no_novelty_detected,
        "curve": [[c, d] for c, d in estimate.curve],
    }


def cmd_fit(args) -> int:
    labeled = dt.load_libsvm(args.labeled)
    unlabeled = dt.load_features_csv(args.unlabeled)
    estimate = _resolve_theta(args, labeled, unlabeled)
    grid = _grid_from_args(args)
    model, report = fit_with_selection(labeled, unlabeled, estimate.theta_hat, grid, args.seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    echo = _config_echo(args)
    _write_text(out / "model.json", model.to_json())
    _dump_json(out / "cv_report.json", {"config": echo, **json.loads(report.to_json())})
    _dump_json(out / "theta.json", {"config": echo, **_theta_payload(estimate)})
    converged = model.record is None or model.record.converged
    print(f"selected sigma={report.selected.sigma!r} lambda={report.selected.lam!r} "
          f"theta={estimate.theta_hat!r}; model written to {out / 'model.json'}")
    if not converged:
        print("warning: solver did not reach its gradient tolerance", file=sys.stderr)
        return EXIT_WARNING
    return EXIT_OK


def cmd_eval(args) -> int:
    model = DualModel.load(args.model)
    test = dt.load_libsvm(args.test, nc_label=dt.NC_FILE_LABEL,
                          num_known_classes=model.num_known_classes)
    if test.dimension != model.support_points.shape[1]:
        raise ValueError(
            f"test dimension {test.dimension} does not match model "
            f"{model.support_points.shape[1]}"
        )
    pred = model.predict(test.X)
    cm = ConfusionMatrix.from_labels(test.y, pred, model.num_known_classes)
    class_names = [str(k) for k in range(1, model.num_known_classes + 1)] + [dt.NC_NAME]
    payload = {
        "command": "eval",
        "model": str(args.model),
        "test": str(args.test),
        "n_test": cm.total,
        "accuracy": cm.accuracy,
        "macro_f1": macro_f1(cm),
        "zero_one_risk": zero_one_risk(pred, test.y),
        "confusion": {
            "classes": class_names,
            "counts": cm.counts.tolist(),
        },
    }
    text = json.dumps(payload, sort_keys=True, indent=1) + "\n"
    if args.out:
        _write_text(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_theta(args) -> int:
    labeled = dt.load_libsvm(args.labeled)
    unlabeled = dt.load_features_csv(args.unlabeled)
    estimate = _resolve_theta(args, labeled, unlabeled)
    payload = {"config": _config_echo(args), **_theta_payload(estimate)}
    text = json.dumps(payload, sort_keys=True, indent=1) + "\n"
    if args.out:
        _write_text(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_cv(args) -> int:
    labeled = dt.load_libsvm(args.labeled)
    unlabeled = dt.load_features_csv(args.unlabeled)
    estimate = _resolve_theta(args, labeled, unlabeled)
    report = cross_validate(labeled, unlabeled, estimate.theta_hat,
                            _grid_from_args(args), args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    echo = _config_echo(args)
    _dump_json(out / "cv_report.json", {"config": echo, **json.loads(report.to_json())})
    _dump_json(out / "theta.json", {"config": echo, **_theta_payload(estimate)})
    print(f"selected sigma={report.selected.sigma!r} lambda={report.selected.lam!r}")
    return EXIT_OK


def _bench_source(args):
    if args.spec:
        return _read_spec(args.spec)
    if args.data and args.config:
        full = dt.load_libsvm(args.data)
        with open(args.config, "r", encoding="utf-8") as fh:
            config = dt.parse_class_configuration(fh.read())
        return (full, config)
    raise ValueError("bench needs either --spec or both --data and --config")


def cmd_bench(args) -> int:
    source = _bench_source(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = tuple(args.seed + i for i in range(args.repeats))
    grid = _grid_from_args(args)

    if args.harness == "scaling":
        report = run_unlabeled_scaling(
            source, sizes=tuple(args.sizes), seeds=seeds,
            n_labeled=args.n_labeled, n_test=args.n_test,
            grid=grid, theta=args.theta,
        )
        _write_text(out / "scaling.json", report.to_json())
        _write_text(out / "scaling.csv", report.to_csv("macro_f1"))
        print(f"spearman(size, mean macro-F1) = {report.spearman('macro_f1')}")
        return EXIT_OK

    if args.harness == "theta-sweep":
        report = run_theta_sweep(
            source, ratios=tuple(args.ratios), seeds=seeds,
            n_labeled=args.n_labeled, n_unlabeled=args.n_unlabeled,
            n_test=args.n_test, grid=grid,
        )
        _write_text(out / "theta_sweep.json", report.to_json())
        _write_text(out / "theta_sweep_f1.csv", report.to_csv("macro_f1"))
        _write_text(out / "theta_sweep_accuracy.csv", report.to_csv("accuracy"))
        print("theta sweep written")
        return EXIT_OK

    # excess-risk: fit one model per seed on generated data and verify that
    # the square-loss surrogate excess bounds the observed 0-1 excess
    if not isinstance(source, dt.SyntheticSpec):
        raise ValueError("the excess-risk harness needs a synthetic --spec")
    if source.dimension > 2:
        raise ValueError("the excess-risk harness needs dimension <= 2")
    results = []
    for seed in seeds:
        spec = dt.SyntheticSpec(source.class_priors, source.class_mixtures,
                                source.new_mixture, source.theta, seed=seed)
        labeled, unlabeled, _ = dt.sample_synthetic(
            spec, args.n_labeled, args.n_unlabeled, 10
        )
        theta = args.theta if args.theta is not None else spec.theta
        model, _ = fit_with_selection(labeled, unlabeled, theta, grid, seed)
        check = run_excess_risk_check(spec, model, seed=seed)
        results.append({
            "seed": seed,
            "lhs": check.lhs,
            "rhs": check.rhs,
            "monte_carlo_se": check.monte_carlo_se,
            "bayes_risk": check.bayes_risk,
            "test_risk": check.test_risk,
            "passed": check.passed,
        })
        print(f"seed {seed}: lhs={check.lhs:.6f} <= rhs={check.rhs:.6f} "
              f"+ 3se={3 * check.monte_carlo_se:.6f} -> "
              f"{'PASS' if check.passed else 'FAIL'}")
    _dump_json(out / "excess_risk.json", {"command": "excess-risk", "runs": results})
    return EXIT_OK if all(r["passed"] for r in results) else EXIT_ERROR


def _add_common(p: argparse.ArgumentParser, grid: bool = False) -> None:
    p.add_argument("--seed", type=int, default=0, help="base random seed (default 0)")
    p.add_argument("--out", default="out", help="output directory or file")
    if grid:
        p.add_argument("--loss", choices=LOSS_KINDS, default=SQUARE)
        p.add_argument("--theta", type=float, default=None,
                       help="known mixture fraction; omit to estimate it")
        p.add_argument("--theta-threshold", type=float, default=DEFAULT_SLOPE_THRESHOLD,
                       help="slope threshold for the mixture estimator")
        p.add_argument("--lambda", dest="lam", type=float, nargs="+",
                       default=list(DEFAULT_LAMBDAS), help="regularization candidates")
        p.add_argument("--sigma-mult", type=float, nargs="+",
                       default=list(DEFAULT_SIGMA_MULTIPLIERS),
                       help="bandwidth multipliers of the median distance")
        p.add_argument("--folds", type=int, default=5)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eulac",
        description="Kernel one-vs-rest classification with an augmented novel "
                    "class, trained from labeled and unlabeled data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic class-shift benchmark")
    p.add_argument("--spec", required=True, help="synthetic spec (key-value text)")
    p.add_argument("--n-labeled", type=int, default=500)
    p.add_argument("--n-unlabeled", type=int, default=1000)
    p.add_argument("--n-test", type=int, default=1000)
    p.add_argument("--grid-resolution", type=int, default=400)
    _add_common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("fit", help="estimate theta, cross-validate, fit and save a model")
    p.add_argument("--labeled", required=True, help="labeled data (LIBSVM)")
    p.add_argument("--unlabeled", required=True, help="unlabeled features (CSV)")
    _add_common(p, grid=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="evaluate a saved model on a test file")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True, help="LIBSVM test file, novel class as label 0")
    p.add_argument("--out", default=None, help="metrics JSON path (default: stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("theta", help="estimate the known-class mixture fraction")
    p.add_argument("--labeled", required=True)
    p.add_argument("--unlabeled", required=True)
    _add_common(p, grid=True)
    p.set_defaults(func=cmd_theta, out=None)  # default to stdout for this command

    p = sub.add_parser("cv", help="cross-validate without refitting")
    p.add_argument("--labeled", required=True)
    p.add_argument("--unlabeled", required=True)
    _add_common(p, grid=True)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("bench", help="run a benchmark harness")
    p.add_argument("harness", choices=["scaling", "theta-sweep", "excess-risk"])
    p.add_argument("--spec", default=None, help="synthetic spec (key-value text)")
    p.add_argument("--data", default=None, help="full labeled dataset (LIBSVM)")
    p.add_argument("--config", default=None, help="class configuration (key-value text)")
    p.add_argument("--sizes", type=int, nargs="+", default=list(DEFAULT_SCALING_SIZES))
    p.add_argument("--ratios", type=float, nargs="+", default=list(DEFAULT_SWEEP_RATIOS))
    p.add_argument("--repeats", type=int, default=10, help="number of seeds per cell")
    p.add_argument("--n-labeled", type=int, default=500)
    p.add_argument("--n-unlabeled", type=int, default=1000)
    p.add_argument("--n-test", type=int, default=1000)
    _add_common(p, grid=True)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
