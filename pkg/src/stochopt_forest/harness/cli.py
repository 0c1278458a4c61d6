"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 infeasible decision.
"""

import argparse
import csv
import json
import sys

import numpy as np

from ..core_model import FitConfig, Forest, read_csv, read_features_csv, write_csv
from ..decide import decide_with_weights, forest_weight_matrix
from ..exceptions import (
    ConfigError,
    DimensionMismatchError,
    NoNeighborsError,
    NonFiniteError,
    NoSplitsError,
)
from ..forest_builder import fit_forest
from ..importance import mdi_importance
from ..problems import problem_from_dict
from .benchmark import bench_timing, run_benchmark
from .scenarios import get_scenario, simulate

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INFEASIBLE = 0, 2, 3, 4


class _DataError(Exception):
    pass


def _load_json(text_or_path):
    if text_or_path is None:
        return {}
    text = text_or_path
    if not text.lstrip().startswith("{"):
        try:
            with open(text_or_path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read {text_or_path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc


def _read_data(path):
    try:
        return read_csv(path)
    except OSError as exc:
        raise _DataError(f"cannot read {path}: {exc}") from exc
    except (NonFiniteError, DimensionMismatchError, StopIteration) as exc:
        raise _DataError(f"bad data file {path}: {exc}") from exc


def _ints(text):
    return [int(v) for v in text.split(",")] if text else []


def _write_rows(path, rows):
    if path is None:
        writer = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def cmd_simulate(args):
    ds = simulate(get_scenario(args.scenario), args.n, args.seed)
    write_csv(ds, args.out or "/dev/stdout")
    return EXIT_OK


def _fit_settings(args):
    config = _load_json(args.config)
    problem = _load_json(args.problem) if args.problem else config.get("problem")
    if not problem:
        raise ConfigError("a problem spec is required (--problem or config.problem)")
    forest_cfg = dict(config.get("forest", {}))
    if args.seed is not None:
        forest_cfg["seed"] = args.seed
    return problem_from_dict(problem), FitConfig.from_dict(forest_cfg), config.get("n_jobs", 1)


def cmd_fit(args):
    spec, cfg, n_jobs = _fit_settings(args)
    ds = _read_data(args.data)
    if ds.d != spec.d:
        raise _DataError(f"problem expects {spec.d} outcome columns, data has {ds.d}")
    forest = fit_forest(spec, ds, cfg, n_jobs=n_jobs)
    forest.save(args.out or "forest.json")
    if args.log:
        with open(args.log, "w", encoding="utf-8") as fh:
            fh.writelines(json.dumps(rec) + "\n" for rec in forest.fit_log)
    return EXIT_OK


def cmd_decide(args):
    forest = Forest.load(args.forest)
    spec = problem_from_dict(forest.problem)
    ds = _read_data(args.data)
    try:
        Xq = read_features_csv(args.query)
    except (OSError, ValueError, NonFiniteError) as exc:
        raise _DataError(f"bad query file: {exc}") from exc
    if Xq.shape[1] != ds.p:
        raise _DataError(f"query has {Xq.shape[1]} columns, training data has {ds.p}")
    W = forest_weight_matrix(forest, ds.features, Xq)
    rows, infeasible = [], False
    for w in W:
        dec = decide_with_weights(spec, np.asarray(ds.outcomes), w)
        infeasible |= not dec.feasible
        row = {f"z_{k + 1}": float(v) for k, v in enumerate(dec.z)}
        row.update(value=dec.value, feasible=int(dec.feasible))
        rows.append(row)
    _write_rows(args.out, rows)
    return EXIT_INFEASIBLE if infeasible else EXIT_OK


def cmd_importance(args):
    forest = Forest.load(args.forest)
    p = read_csv(args.data).p if args.data else None
    rep = mdi_importance(forest, n_features=p)
    rows = [{"feature": j + 1, "mdi": float(m), "split_frequency": float(f)}
            for j, (m, f) in enumerate(zip(rep.mdi, rep.split_frequency))]
    _write_rows(args.out, rows)
    return EXIT_OK


def cmd_eval(args):
    config = _load_json(args.config)
    if args.scenario:
        config["scenario"] = args.scenario
    if args.n:
        config["n"] = _ints(args.n)
    if args.reps is not None:
        config["reps"] = args.reps
    if args.seed is not None:
        config["seed"] = args.seed
    if args.criteria:
        base = config.get("forest", {})
        config["methods"] = {c: {**base, "criterion": c} for c in args.criteria.split(",")}
    missing = [k for k in ("scenario", "n", "methods") if k not in config]
    if missing:
        raise ConfigError(f"eval config lacks {missing}")
    config.setdefault("reps", 1)
    config.setdefault("seed", 0)
    report = run_benchmark(config)
    out = args.out or "report"
    report.to_csv(out + ".csv")
    report.to_json(out + ".json")
    return EXIT_OK


def cmd_bench_timing(args):
    criteria = (args.criteria or "apx-risk,oracle").split(",")
    config = _load_json(args.config).get("forest", {})
    rows = bench_timing(None, get_scenario(args.scenario), _ints(args.n) or [400], criteria,
                        reps=args.reps or 1, seed=args.seed or 0, config=config)
    _write_rows(args.out, rows)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="stochopt-forest", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, *flags):
        p = sub.add_parser(name)
        for flag in flags:
            kw = {"type": int} if flag in ("--reps", "--seed") else {}
            p.add_argument(flag, **kw)
        p.set_defaults(func=func)
        return p

    add("simulate", cmd_simulate, "--scenario", "--seed", "--out").add_argument("--n", type=int, required=True)
    add("fit", cmd_fit, "--data", "--problem", "--config", "--seed", "--out", "--log")
    add("decide", cmd_decide, "--forest", "--data", "--query", "--out")
    add("importance", cmd_importance, "--forest", "--data", "--out")
    add("eval", cmd_eval, "--scenario", "--config", "--n", "--reps", "--seed", "--criteria", "--out")
    add("bench-timing", cmd_bench_timing, "--scenario", "--config", "--n", "--reps", "--seed", "--criteria", "--out")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "seed", None) is None and args.command == "simulate":
        args.seed = 0
    try:
        return args.func(args)
    except _DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteError, DimensionMismatchError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, NoSplitsError, KeyError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoNeighborsError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
