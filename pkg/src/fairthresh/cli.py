"""Command-line interface.

Subcommands: calibrate, predict, evaluate, benchmark, sweep-unlabeled,
consistency.  Every command is deterministic given its flags and seed,
prints an aligned human-readable summary to stdout, and writes machine
output (JSON, or CSV for tabular results) to the requested paths.

Exit codes: 0 ok, 2 schema error, 3 group-coverage error, 4 numeric error,
5 config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import benchmark as bench
from . import calibration, estimators, metrics, oracle
from .data import UnlabeledDataset, load_csv
from .errors import ConfigError, FairthreshError, SchemaError


def _fmt_table(headers, rows) -> str:
    cells = [[str(h) for h in headers]] + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _write_csv(path, headers, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(headers)
        writer.writerows(rows)


def _num(x, digits=6):
    if x is None:
        return "-"
    return f"{x:.{digits}f}"


def _load_score_file(path, need_marginal: bool):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty score file") from None
        rows = list(reader)
    for col in ("score_s0", "score_s1"):
        if col not in header:
            raise SchemaError(f"{path}: missing column {col!r}")
    if need_marginal and "score_marginal" not in header:
        raise SchemaError(f"{path}: blind mode needs a score_marginal column")

    def col(name):
        if name not in header:
            return None
        i = header.index(name)
        try:
            return np.asarray([float(r[i]) for r in rows])
        except (ValueError, IndexError) as exc:
            raise SchemaError(f"{path}: bad value in column {name!r}: {exc}") from exc

    return col("score_s0"), col("score_s1"), col("score_marginal")


def _load_feature_matrix(path, sensitive_col=None, label_col=None):
    """Feature columns (everything except the named ones) plus S when present."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = list(reader)
    keep = [i for i, h in enumerate(header) if h not in (sensitive_col, label_col)]
    try:
        X = np.asarray([[float(r[i]) for i in keep] for r in rows])
    except (ValueError, IndexError) as exc:
        raise SchemaError(f"{path}: cannot parse features: {exc}") from exc
    S = None
    if sensitive_col in header:
        i = header.index(sensitive_col)
        S = np.asarray([int(float(r[i])) for r in rows])
    return X, S


def _aligned(path, n_rows, n_expected):
    if n_rows != n_expected:
        raise SchemaError(f"{path}: {n_rows} rows, expected {n_expected} (row-aligned input required)")


def cmd_calibrate(args) -> int:
    train = load_csv(args.train, args.sensitive_col, args.label_col)
    unlabeled = None
    if args.unlabeled:
        try:
            unlabeled = load_csv(args.unlabeled, args.sensitive_col)
        except SchemaError:
            if args.mode != "blind":
                raise
            X, _ = _load_feature_matrix(args.unlabeled, args.sensitive_col, args.label_col)
            unlabeled = UnlabeledDataset(X)

    if args.scores:
        cal_n = unlabeled.n if unlabeled is not None else train.n
        s0, s1, marg = _load_score_file(args.scores, need_marginal=args.mode == "blind")
        _aligned(args.scores, len(s0), cal_n)
        sens = unlabeled.sensitive if unlabeled is not None else train.sensitive
        clf = calibration.calibrate_scores(
            s0, s1, sensitive=sens, marginal=marg, mode=args.mode, n_labeled=train.n
        )
        if args.mode == "aware":
            c = clf.model.floor
            rowwise = np.where(sens == 1, np.maximum(s1, c), np.maximum(s0, c))
            unfairness = calibration.empirical_unfairness(
                clf.theta_hat, rowwise[sens == 1], rowwise[sens == 0], clf.stats
            )
        else:
            c = clf.model.floor
            unfairness = calibration.blind_unfairness(
                clf.theta_hat, np.maximum(marg, c), np.maximum(s0, c), np.maximum(s1, c)
            )
    else:
        est = (
            estimators.KnnConfig(k=args.knn_k)
            if args.estimator == "knn"
            else estimators.LogisticConfig(l2_lambda=args.l2_lambda)
        )
        clf = calibration.calibrate(
            train, unlabeled, estimator=est, mode=args.mode, jitter_amplitude=args.jitter
        )
        X_u = unlabeled.features if unlabeled is not None else train.features
        S_u = unlabeled.sensitive if unlabeled is not None else train.sensitive
        if args.mode == "aware":
            sc = clf.model.score_rowwise(X_u, S_u)
            unfairness = calibration.empirical_unfairness(
                clf.theta_hat, sc[S_u == 1], sc[S_u == 0], clf.stats
            )
        else:
            unfairness = calibration.blind_unfairness(
                clf.theta_hat,
                clf.model.score_marginal(X_u),
                clf.model.score_group(X_u, 0),
                clf.model.score_group(X_u, 1),
            )

    if args.out:
        _write_json(args.out, clf.to_json())
    print(f"mode            {clf.mode}")
    print(f"theta_hat       {clf.theta_hat:.10g}")
    print(f"unfairness_hat  {unfairness:.10g}")
    if clf.stats is not None:
        print(f"joint           s0={clf.stats.joint[0]:.6g} s1={clf.stats.joint[1]:.6g}")
    if clf.model is not None and not clf.model.converged:
        print("warning: estimator did not converge within max_iters", file=sys.stderr)
    if args.out:
        print(f"model written   {args.out}")
    return 0


def _load_model(path) -> calibration.FairClassifier:
    try:
        with open(path, encoding="utf-8") as fh:
            return calibration.FairClassifier.from_json(json.load(fh))
    except (json.JSONDecodeError, KeyError) as exc:
        raise SchemaError(f"{path}: not a valid model file: {exc}") from exc


def cmd_predict(args) -> int:
    clf = _load_model(args.model)
    if args.scores:
        s0, s1, marg = _load_score_file(args.scores, need_marginal=clf.mode == "blind")
        if clf.mode == "aware":
            X, S = _load_feature_matrix(args.data, args.sensitive_col, args.label_col)
            if S is None:
                raise SchemaError(f"{args.data}: group-aware prediction needs column {args.sensitive_col!r}")
            _aligned(args.scores, len(s0), X.shape[0])
            pred = clf.predict_from_scores(scores_s0=s0, scores_s1=s1, sensitive=S)
        else:
            pred = clf.predict_from_scores(scores_s0=s0, scores_s1=s1, marginal=marg)
    else:
        X, S = _load_feature_matrix(args.data, args.sensitive_col, args.label_col)
        if clf.mode == "aware":
            if S is None:
                raise SchemaError(f"{args.data}: group-aware prediction needs column {args.sensitive_col!r}")
            pred = clf.predict(X, S)
        else:
            pred = clf.predict(X)
    if args.out:
        _write_csv(args.out, ["prediction"], [[int(p)] for p in pred])
        print(f"predictions written {args.out}")
    print(f"rows           {len(pred)}")
    print(f"positive rate  {float(np.mean(pred)):.6f}")
    return 0


def cmd_evaluate(args) -> int:
    clf = _load_model(args.model)
    test = load_csv(args.test, args.sensitive_col, args.label_col)
    if args.scores:
        s0, s1, marg = _load_score_file(args.scores, need_marginal=clf.mode == "blind")
        _aligned(args.scores, len(s0), test.n)
        if clf.mode == "aware":
            pred = clf.predict_from_scores(scores_s0=s0, scores_s1=s1, sensitive=test.sensitive)
        else:
            pred = clf.predict_from_scores(scores_s0=s0, scores_s1=s1, marginal=marg)
    elif clf.mode == "aware":
        pred = clf.predict(test.features, test.sensitive)
    else:
        pred = clf.predict(test.features)
    report = metrics.deo(pred, test.labels, test.sensitive)
    if args.out:
        _write_json(args.out, report.to_json())
    print(f"accuracy   {report.accuracy:.6f}")
    print(f"deo_test   {_num(report.deo)}")
    print(f"tpr_s0     {_num(report.tpr_per_group[0])}")
    print(f"tpr_s1     {_num(report.tpr_per_group[1])}")
    if report.flags:
        print(f"flags      {','.join(report.flags)}")
    return 0


def _benchmark_config(args) -> bench.BenchmarkConfig:
    fields = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                fields = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{args.config}: not valid JSON: {exc}") from exc
    overrides = {
        "sensitive_col": args.sensitive_col,
        "label_col": args.label_col,
        "estimator": args.estimator,
        "train_fraction": args.train_fraction,
        "n_repeats": args.repeats,
        "seed": args.seed,
        "cv_folds": args.cv_folds,
        "shortlist_fraction": args.shortlist_fraction,
        "mode": args.mode,
    }
    if args.methods:
        overrides["methods"] = tuple(args.methods.split(","))
    if args.unlabeled_fraction is not None:
        overrides["unlabeled"] = args.unlabeled_fraction
    fields.update({k: v for k, v in overrides.items() if v is not None})
    for key in ("logistic_grid", "knn_grid", "methods"):
        if key in fields and isinstance(fields[key], list):
            fields[key] = tuple(fields[key])
    try:
        return bench.BenchmarkConfig(**fields)
    except TypeError as exc:
        raise ConfigError(f"bad benchmark config: {exc}") from exc


def _print_method_table(summaries):
    rows = [
        [
            m.method,
            _num(m.acc_mean, 4),
            _num(m.acc_std, 4) if m.acc_std is not None else "-",
            _num(m.deo_mean, 4),
            _num(m.deo_std, 4) if m.deo_std is not None else "-",
        ]
        for m in summaries
    ]
    print(_fmt_table(["method", "acc_mean", "acc_std", "deo_mean", "deo_std"], rows))


def cmd_benchmark(args) -> int:
    config = _benchmark_config(args)
    ds = load_csv(args.data, config.sensitive_col, config.label_col)
    test = load_csv(args.test, config.sensitive_col, config.label_col) if args.test else None
    unl = load_csv(args.unlabeled, config.sensitive_col) if args.unlabeled else None
    report = bench.run_benchmark(ds, config, test=test, unlabeled_ds=unl)
    _print_method_table(report.methods)
    if args.out:
        _write_json(args.out, report.to_json())
    if args.csv:
        rows = [
            [m.method, r.repeat, r.param, f"{r.acc:.6f}", "" if r.deo is None else f"{r.deo:.6f}",
             f"{r.theta_hat:.10g}", ";".join(r.flags)]
            for m in report.methods
            for r in m.rows
        ]
        _write_csv(args.csv, ["method", "repeat", "param", "acc", "deo", "theta_hat", "flags"], rows)
    return 0


def cmd_sweep_unlabeled(args) -> int:
    config = _benchmark_config(args)
    ds = load_csv(args.data, config.sensitive_col, config.label_col)
    fractions = [float(v) for v in args.fractions.split(",")]
    report = bench.run_unlabeled_sweep(
        ds, config, labeled_fraction=args.labeled_fraction, unlabeled_fractions=fractions
    )
    rows = [
        [f"{p.unlabeled_fraction:g}", p.method, _num(p.acc_mean, 4), _num(p.acc_std, 4),
         _num(p.deo_mean, 4), _num(p.deo_std, 4)]
        for p in report.points
    ]
    print(_fmt_table(["unlabeled_fraction", "method", "acc_mean", "acc_std", "deo_mean", "deo_std"], rows))
    if args.out:
        _write_json(args.out, report.to_json())
    if args.csv:
        _write_csv(
            args.csv,
            ["unlabeled_fraction", "method", "acc_mean", "acc_std", "deo_mean", "deo_std"],
            [[p.unlabeled_fraction, p.method, p.acc_mean, p.acc_std, p.deo_mean, p.deo_std]
             for p in report.points],
        )
    return 0


def cmd_consistency(args) -> int:
    dist = oracle.load_distribution(args.dist)
    if args.estimator == "exact":
        est = "exact"
    elif args.estimator == "knn":
        est = estimators.KnnConfig(k=args.knn_k)
    else:
        est = estimators.LogisticConfig(l2_lambda=args.l2_lambda)
    n_grid = [int(v) for v in args.n_grid.split(",")]
    N_grid = [int(v) for v in args.N_grid.split(",")]
    cells = oracle.consistency_run(
        dist, n_grid, N_grid, repeats=args.repeats, seed=args.seed,
        estimator=est, test_size=args.test_size,
    )
    headers = ["n", "N", "repeats", "deo_mean", "deo_std", "excess_risk_mean", "excess_risk_std",
               "theta_abs_err_mean"]
    print(_fmt_table(
        headers,
        [[c.n, c.N, c.repeats, _num(c.deo_mean), _num(c.deo_std), _num(c.excess_risk_mean),
          _num(c.excess_risk_std), _num(c.theta_abs_err_mean)] for c in cells],
    ))
    if args.out:
        _write_csv(
            args.out,
            headers,
            [[c.n, c.N, c.repeats, c.deo_mean, c.deo_std, c.excess_risk_mean, c.excess_risk_std,
              c.theta_abs_err_mean] for c in cells],
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairthresh",
        description="Equal-opportunity-fair classification by group-dependent threshold calibration.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common_data(p):
        p.add_argument("--sensitive-col", default="S")
        p.add_argument("--label-col", default="Y")

    p = sub.add_parser("calibrate", help="fit scores and the fair threshold shift")
    p.add_argument("--train", required=True)
    p.add_argument("--unlabeled")
    p.add_argument("--scores", help="precomputed score file (score_s0, score_s1[, score_marginal])")
    common_data(p)
    p.add_argument("--estimator", choices=("logistic", "knn"), default="logistic")
    p.add_argument("--mode", choices=("aware", "blind"), default="aware")
    p.add_argument("--l2-lambda", type=float, default=1e-4)
    p.add_argument("--knn-k", type=int, default=11)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("predict", help="predict labels with a calibrated model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--scores")
    common_data(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="accuracy and test-set DEO of a model")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--scores")
    common_data(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    def common_bench(p):
        common_data(p)
        p.add_argument("--config", help="JSON file with BenchmarkConfig fields; flags override")
        p.add_argument("--estimator", choices=("logistic", "knn"))
        p.add_argument("--train-fraction", type=float)
        p.add_argument("--repeats", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--cv-folds", type=int)
        p.add_argument("--shortlist-fraction", type=float)
        p.add_argument("--mode", choices=("aware", "blind"))
        p.add_argument("--methods", help="comma list from: plugin,bayes")
        p.add_argument("--unlabeled-fraction", type=float, help="carve this train fraction out for calibration")
        p.add_argument("--out", help="JSON report path")
        p.add_argument("--csv", help="per-row CSV path (plot-ready)")

    p = sub.add_parser("benchmark", help="repeated-split protocol with two-step CV selection")
    p.add_argument("--data", required=True)
    p.add_argument("--test", help="fixed test set; disables repeated splitting")
    p.add_argument("--unlabeled", help="unlabeled CSV used for calibration")
    common_bench(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("sweep-unlabeled", help="effect of the unlabeled sample size")
    p.add_argument("--data", required=True)
    p.add_argument("--labeled-fraction", type=float, default=0.1)
    p.add_argument("--fractions", default="0,0.1,0.2,0.4,0.8")
    common_bench(p)
    p.set_defaults(func=cmd_sweep_unlabeled)

    p = sub.add_parser("consistency", help="oracle-backed consistency experiment")
    p.add_argument("--dist", required=True, help="synthetic distribution JSON")
    p.add_argument("--n-grid", default="1000")
    p.add_argument("--N-grid", dest="N_grid", default="100,1000,10000")
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--estimator", choices=("exact", "logistic", "knn"), default="exact")
    p.add_argument("--l2-lambda", type=float, default=1e-4)
    p.add_argument("--knn-k", type=int, default=11)
    p.add_argument("--test-size", type=int, default=100_000)
    p.add_argument("--out", help="CSV table path")
    p.set_defaults(func=cmd_consistency)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FairthreshError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
