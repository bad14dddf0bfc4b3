"""``mwclass`` command-line interface.

Every command logs its resolved configuration as one JSON line on stderr
(``resolved config: {...}``).  Saving that JSON object to a file and passing
it back with ``--config FILE`` reruns the command with the same settings;
flags given explicitly on the command line still win.

Errors are reported as a single JSON line on stderr,
``{"error": "<kind>", "message": "..."}``, with exit code 2 for invalid
flags and 1 for everything else.

Scenario config files (``simulate --scenario FILE``) hold ``key = value``
lines; ``#`` starts a comment.  Keys:

    p, m                 array dimensions (required)
    structure            full | 1 | 2 | r   (default 1)
    n_train              training size, both classes equal (default 40)
    n_test_per_class     test samples per class (default 50)
    sigma_e              noise SD for both classes (default 1)
    seed                 replicate seed (default 0)
    target_full_mis      calibration target for the full model (default 0.2)
    calibration_reps     replicates per calibration step (default 50)
    signal_scale         fixed signal scale; skips calibration when given
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .evaluation import bootstrap_weights, cross_validate, loocv, rank_selection, stratified_kfold
from .multiway import FULL, SOLVERS, PENALTY_RULES, FitOptions, fit, parse_rank
from .parallel import resolve_workers
from .simulation import Scenario, calibrate_signal, model_specs, run_experiment
from .tensor import DimensionError

log = logging.getLogger("mwclass")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ------------------------------------------------------------------ scenarios

def _table1(p, m, structure):
    return dict(p=p, m=m, structure=structure, n_train=40, n_test_per_class=50, sigma_e=1.0,
                seed=0, target_full_mis=0.2, calibration_reps=50)


SCENARIOS = {
    f"table1_{p}x{m}_{name}": _table1(p, m, s)
    for p, m in ((15, 4), (20, 10), (500, 30))
    for name, s in (("full", FULL), ("rank1", 1), ("rank2", 2))
}
SCENARIOS["fig1_500x30_full"] = _table1(500, 30, FULL)

_SCENARIO_TYPES = dict(p=int, m=int, structure=parse_rank, n_train=int, n_test_per_class=int,
                       sigma_e=float, seed=int, target_full_mis=float, calibration_reps=int,
                       signal_scale=float)


def load_scenario(spec: str) -> dict:
    """Named scenario or ``key = value`` config file."""
    if spec in SCENARIOS:
        return dict(SCENARIOS[spec])
    path = Path(spec)
    if not path.is_file():
        raise UsageError(f"argument --scenario: {spec!r} is neither a file nor one of "
                         f"{sorted(SCENARIOS)}")
    cfg = dict(structure=1, n_train=40, n_test_per_class=50, sigma_e=1.0, seed=0,
               target_full_mis=0.2, calibration_reps=50)
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise io.FormatError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _SCENARIO_TYPES:
            raise io.FormatError(f"{path}:{lineno}: unknown key {key!r}; known: {sorted(_SCENARIO_TYPES)}")
        try:
            cfg[key] = _SCENARIO_TYPES[key](value)
        except ValueError as exc:
            raise io.FormatError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    for key in ("p", "m"):
        if key not in cfg:
            raise io.FormatError(f"{path}: missing required key {key!r}")
    return cfg


# ------------------------------------------------------------------ argument types

def _rank_arg(text):
    try:
        return parse_rank(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid rank {text!r} (expected an integer >= 1 or 'full')")


def _ranks_arg(text):
    return [_rank_arg(t) for t in text.split(",") if t.strip()]


def _positive(kind):
    def conv(text):
        try:
            value = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid value {text!r} (expected a positive {kind.__name__})")
        if not value > 0:
            raise argparse.ArgumentTypeError(f"invalid value {text!r} (expected a positive {kind.__name__})")
        return value
    return conv


def _add_fit_flags(p):
    p.add_argument("--solver", choices=SOLVERS, default="dwd")
    p.add_argument("--rank", type=_rank_arg, default=1)
    p.add_argument("--epsilon", type=_positive(float), default=1e-5)
    p.add_argument("--max-iter", type=_positive(int), default=100)
    p.add_argument("--restarts", type=_positive(int), default=None,
                   help="ACS restarts (default 1 for dwd, 5 for svm)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--standardize", action="store_true",
                   help="z-score every cell with training statistics")
    p.add_argument("--svm-lambda", type=_positive(float), default=None,
                   help="SVM penalty (default 1/(2n))")
    p.add_argument("--penalty-rule", choices=PENALTY_RULES, default="median_ratio")


def _add_data_flags(p, labels=True):
    p.add_argument("--tensor")
    if labels:
        p.add_argument("--labels")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mwclass", description="Low-rank multi-way DWD/SVM classification.")
    parser.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = _Parser(add_help=False)
    common.add_argument("--workers", type=_positive(int), default=None,
                        help="worker processes (default: available CPUs; MWCLASS_WORKERS overrides)")
    common.add_argument("--config", default=None, help="JSON file with a logged resolved config")

    parser.subcommands = sub.choices
    p = sub.add_parser("fit", parents=[common], help="fit a model and write a JSON model file")
    _add_data_flags(p)
    _add_fit_flags(p)
    p.add_argument("--out")

    p = sub.add_parser("predict", parents=[common], help="score new samples with a model file")
    p.add_argument("--model")
    _add_data_flags(p, labels=False)
    p.add_argument("--out")

    p = sub.add_parser("cv", parents=[common], help="cross-validated scores, error rate and t")
    _add_data_flags(p)
    _add_fit_flags(p)
    p.add_argument("--folds", type=_positive(int), default=None,
                   help="stratified k-fold (default: leave-one-out)")
    p.add_argument("--out", help="REPORT.json,SCORES.csv")

    p = sub.add_parser("rank-select", parents=[common], help="leave-one-out comparison of ranks")
    _add_data_flags(p)
    _add_fit_flags(p)
    p.add_argument("--ranks", type=_ranks_arg, default=[1, 2, 3, FULL])
    p.add_argument("--out")

    p = sub.add_parser("bootstrap", parents=[common], help="stratified bootstrap weight intervals")
    _add_data_flags(p)
    _add_fit_flags(p)
    p.add_argument("--n-boot", type=_positive(int), default=5000)
    p.add_argument("--out")

    p = sub.add_parser("simulate", parents=[common], help="replicate table for a simulation scenario")
    p.add_argument("--scenario", help=f"name ({', '.join(sorted(SCENARIOS))}) or config file")
    p.add_argument("--reps", type=_positive(int), default=100)
    p.add_argument("--models", default="rank1,rank2,full",
                   help="comma list of rankK / full, optionally svm- or dwd- prefixed")
    p.add_argument("--solver", choices=SOLVERS, default="dwd")
    p.add_argument("--seed", type=int, default=None, help="overrides the scenario seed")
    p.add_argument("--out")
    return parser


def _options(args) -> FitOptions:
    return FitOptions(solver=args.solver, rank=args.rank, epsilon=args.epsilon,
                      max_acs_iterations=args.max_iter, restarts=args.restarts, seed=args.seed,
                      svm_lambda=args.svm_lambda, penalty_rule=args.penalty_rule,
                      standardize=args.standardize)


def _resolved(args) -> dict:
    out = {k: v for k, v in vars(args).items() if k not in ("config", "log_level")}
    out["workers"] = resolve_workers(args.workers)
    if "solver" in out and "restarts" in out and out["restarts"] is None:
        out["restarts"] = 1 if out["solver"] == "dwd" else 5
    return out


# ------------------------------------------------------------------ commands

def cmd_fit(args):
    data = io.ingest(args.tensor, args.labels)
    model = fit(data, _options(args))
    io.save_model(model, args.out)
    log.info("fit: rank=%s solver=%s converged=%s objective=%.10g", model.rank, model.solver,
             model.converged, model.objective_value)
    return model


def cmd_predict(args):
    model = io.load_model(args.model)
    tensor, ids, d1, d2 = io.read_tensor_csv(args.tensor)
    for axis, have, want in (("dim1", d1, model.dim1_names), ("dim2", d2, model.dim2_names)):
        if want is not None and tuple(have) != tuple(want):
            raise DimensionError(f"axis mismatch on {axis}: data levels {list(have)[:5]}... "
                                 f"differ from model levels {list(want)[:5]}...")
    if tensor.shape[1:] != model.B.shape:
        raise DimensionError(f"axis mismatch: data slices are {tensor.shape[1:]}, model expects {model.B.shape}")
    scores, labels = model.score(tensor), model.predict(tensor)
    io.write_rows(args.out, [dict(sample_id=s, score=float(v), predicted=int(lab))
                             for s, v, lab in zip(ids, scores, labels)])
    return scores


def _split_out(out, n):
    parts = [s.strip() for s in out.split(",")]
    if len(parts) != n:
        raise UsageError(f"argument --out: expected {n} comma-separated paths, got {out!r}")
    return parts


def cmd_cv(args):
    report_path, scores_path = _split_out(args.out, 2)
    data = io.ingest(args.tensor, args.labels)
    opts = _options(args)
    workers = resolve_workers(args.workers)
    if args.folds is None:
        rep = loocv(data, opts, workers)
    else:
        rep = cross_validate(data, opts, stratified_kfold(data.labels, args.folds, args.seed), workers)
    ids = data.sample_ids or [str(i) for i in range(data.n)]
    io.write_rows(scores_path, [dict(sample_id=s, label=int(y), score=float(v),
                                     predicted=(int(1 if v >= 0 else -1) if np.isfinite(v) else ""))
                                for s, y, v in zip(ids, data.labels, rep.per_sample_scores)])
    summary = dict(schema_version=io.SCHEMA_VERSION, scheme="loo" if args.folds is None else f"{args.folds}-fold",
                   n=data.n, misclassification_rate=rep.misclassification_rate,
                   t_statistic=rep.t_statistic, converged_folds=int(rep.per_fold_convergence.sum()),
                   folds=int(rep.per_fold_convergence.size), failed_folds=rep.n_failed,
                   fold_errors=[e for e in rep.fold_errors if e], options=rep.options)
    Path(report_path).write_text(json.dumps(summary, indent=1), encoding="utf-8")
    log.info("cv: misclassification=%.4f t=%.4f", rep.misclassification_rate, rep.t_statistic)
    return rep


def cmd_rank_select(args):
    data = io.ingest(args.tensor, args.labels)
    rows = rank_selection(data, args.ranks, _options(args), workers=resolve_workers(args.workers))
    io.write_rows(args.out, [{k: v for k, v in r.items() if k != "report"} for r in rows],
                  ["rank", "misclassification", "t_statistic", "converged_folds", "failed_folds", "selected"])
    for r in rows:
        log.info("rank %s: misclassification=%.4f t=%.4f%s", r["rank"], r["misclassification"],
                 r["t_statistic"], " (selected)" if r["selected"] else "")
    if (data.n, data.p, data.m) == (53, 76, 7):
        log.info("note: published leave-one-out error on the 53 x 76 x 7 interferon-beta "
                 "responder data is about 17%% for rank 1 and 23%% for the full model "
                 "(informational only)")
    return rows


def cmd_bootstrap(args):
    data = io.ingest(args.tensor, args.labels)
    opts = _options(args)
    rep = bootstrap_weights(data, opts, args.n_boot, resolve_workers(args.workers))
    ids, d1, d2 = io._names(data)
    rows = []
    if rep.point_W is not None:
        for axis, names, point, key in (("dim1", d1, rep.point_W, "W"), ("dim2", d2, rep.point_V, "V")):
            lo, hi = rep.lower95.get(key), rep.upper95.get(key)
            for z in range(point.shape[1]):
                for j, name in enumerate(names):
                    rows.append(dict(axis=axis, component=z + 1, level=name, estimate=float(point[j, z]),
                                     lower95=float(lo[j, z]) if lo is not None else float("nan"),
                                     upper95=float(hi[j, z]) if hi is not None else float("nan")))
    else:
        lo, hi = rep.lower95["B"], rep.upper95["B"]
        for j, a in enumerate(d1):
            for k, b in enumerate(d2):
                rows.append(dict(axis="cell", component=0, level=f"{a}:{b}",
                                 estimate=float(rep.point_B[j, k]), lower95=float(lo[j, k]),
                                 upper95=float(hi[j, k])))
    io.write_rows(args.out, rows)
    log.info("bootstrap: %d resamples, %d failed", rep.n_boot, rep.n_failed)
    return rep


def cmd_simulate(args):
    cfg = load_scenario(args.scenario)
    if args.seed is not None:
        cfg["seed"] = args.seed
    workers = resolve_workers(args.workers)
    log.info("scenario: %s", json.dumps(cfg, default=str))
    if "signal_scale" in cfg:
        scale = cfg["signal_scale"]
    else:
        cal = calibrate_signal(cfg["p"], cfg["m"], cfg["structure"], sigma_e=cfg["sigma_e"],
                               target_full_mis=cfg["target_full_mis"], n_reps=cfg["calibration_reps"],
                               n_train=cfg["n_train"], n_test_per_class=cfg["n_test_per_class"],
                               seed=cfg["seed"], workers=workers)
        scale = cal.scale
        log.info("calibrated signal scale %.10g (full-model error %.4f)", scale, cal.achieved)
    sc = Scenario(p=cfg["p"], m=cfg["m"], n_train=cfg["n_train"],
                  n_test_per_class=cfg["n_test_per_class"], structure=cfg["structure"],
                  sigma_e0=cfg["sigma_e"], sigma_e1=cfg["sigma_e"], seed=cfg["seed"]).with_signal_scale(scale)
    specs = model_specs(args.models.split(","), FitOptions(solver=args.solver))
    table = run_experiment(sc, specs, args.reps, workers=workers)
    summary = table.summary()
    for row in summary:
        row["signal_scale"] = float(scale)
    io.write_rows(args.out, summary, ["model", "Mis", "SE(Mis)", "Cor", "SE(Cor)", "converged",
                                      "failed", "replicates", "signal_scale"])
    return table


REQUIRED = {"fit": ("tensor", "labels", "out"), "predict": ("model", "tensor", "out"),
            "cv": ("tensor", "labels", "out"), "rank-select": ("tensor", "labels", "out"),
            "bootstrap": ("tensor", "labels", "out"), "simulate": ("scenario", "out")}

COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "cv": cmd_cv, "rank-select": cmd_rank_select,
            "bootstrap": cmd_bootstrap, "simulate": cmd_simulate}


def _parse(parser, argv):
    args = parser.parse_args(argv)
    if args.config:
        cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if cfg.get("command", args.command) != args.command:
            raise UsageError(f"argument --config: file is for command {cfg['command']!r}")
        sub = parser.subcommands[args.command]
        skip = ("command", "config", "workers", "log_level")
        # file values become defaults, so flags typed on the command line win
        sub.set_defaults(**{k: v for k, v in cfg.items() if k in vars(args) and k not in skip})
        args = parser.parse_args(argv)
    for key in REQUIRED[args.command]:
        if getattr(args, key) is None:
            raise UsageError(f"the following arguments are required: --{key.replace('_', '-')}")
    if hasattr(args, "rank"):
        args.rank = parse_rank(args.rank)
    if getattr(args, "ranks", None) is not None:
        args.ranks = [parse_rank(r) for r in args.ranks]
    return args


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _parse(parser, argv)
    except UsageError as exc:
        _report("usage", str(exc))
        return 2
    except (OSError, ValueError) as exc:
        _report(type(exc).__name__, str(exc))
        return 1
    logging.basicConfig(level=args.log_level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    log.info("resolved config: %s", json.dumps(_resolved(args), default=str, sort_keys=True))
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        _report("usage", str(exc))
        return 2
    except DimensionError as exc:
        _report("axis_mismatch", str(exc))
        return 1
    except Exception as exc:
        _report(type(exc).__name__, str(exc))
        return 1
    return 0


def _report(kind, message):
    print(json.dumps({"error": kind, "message": " ".join(str(message).split())}), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
