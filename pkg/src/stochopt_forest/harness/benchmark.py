"""Benchmark grids and single-tree timing."""

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from ..core_model import FitConfig
from ..estimator import StochOptForest
from ..forest_builder import _grow
from .metrics import EvaluationSet
from .scenarios import get_scenario


def config_hash(config):
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:12]


def cell_seed(seed, n, rep):
    return int(np.random.SeedSequence([seed, n, rep]).generate_state(1)[0])


@dataclass
class BenchmarkReport:
    rows: list
    config: dict
    meta: dict = field(default_factory=dict)

    def column(self, key, **where):
        return np.array([r[key] for r in self.rows if all(r[k] == v for k, v in where.items())])

    def summary(self, key="relative_risk"):
        out = {}
        for r in self.rows:
            out.setdefault((r["method"], r["n"]), []).append(r[key])
        return {k: {"median": float(np.median(v)), "mean": float(np.mean(v)),
                    "q25": float(np.quantile(v, 0.25)), "q75": float(np.quantile(v, 0.75)), "count": len(v)}
                for k, v in sorted(out.items())}

    def to_csv(self, path):
        keys = list(self.rows[0]) if self.rows else []
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=keys)
            writer.writeheader()
            writer.writerows(self.rows)

    def to_json(self, path=None):
        text = json.dumps({"config": self.config, "rows": self.rows, "meta": self.meta}, sort_keys=True, indent=1)
        if path:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text


def run_benchmark(config, keep_models=False):
    """Cartesian grid of methods x sample sizes x replications.

    ``config`` keys: scenario (name), scenario_params, methods (name ->
    StochOptForest params), n (list), reps, seed, n_query, n_cond.
    All methods in a cell share the training data and evaluation draws.
    """
    scenario = get_scenario(config["scenario"], **config.get("scenario_params", {}))
    methods = config["methods"]
    chash = config_hash(config)
    rows, models = [], {}
    for n in config["n"]:
        for rep in range(config.get("reps", 1)):
            seed = cell_seed(config.get("seed", 0), n, rep)
            ds = scenario.simulate(n, seed)
            evaluation = EvaluationSet(scenario, config.get("n_query", 200), config.get("n_cond", 2000), seed)
            for name, params in methods.items():
                start = time.perf_counter()
                est = StochOptForest(problem=scenario.problem(), random_state=seed, **params)
                est.fit(ds.features, ds.outcomes)
                fit_seconds = time.perf_counter() - start
                Z = est.predict(evaluation.X)
                row = {"method": name, "n": n, "rep": rep, "seed": seed, "config_hash": chash,
                       "relative_risk": evaluation.relative_risk(Z), "fit_seconds": fit_seconds,
                       "total_seconds": time.perf_counter() - start}
                if hasattr(scenario, "realized_return"):
                    realized = np.array([scenario.realized_return(z, x)[0] for z, x in zip(Z, evaluation.X)])
                    row["mean_shortfall"] = float(np.mean(scenario.return_floor - realized))
                    row["infeasible_decisions"] = int(sum(not d.feasible for d in est.decide(evaluation.X)))
                rows.append(row)
                if keep_models:
                    models[(name, n, rep)] = est
    report = BenchmarkReport(rows, config, {"config_hash": chash})
    if keep_models:
        report.meta["models"] = models
    return report


def bench_timing(spec, scenario, n_list, criteria, reps=1, seed=0, config=None):
    """Seconds to grow one tree on the full sample, per criterion and n."""
    if isinstance(scenario, str):
        scenario = get_scenario(scenario)
    spec = scenario.problem() if spec is None else spec
    base = dict(config or {})
    rows = []
    for n in n_list:
        times = {c: [] for c in criteria}
        for rep in range(reps):
            ds = scenario.simulate(n, cell_seed(seed, n, rep))
            rows_all = np.arange(n)
            for c in criteria:
                cfg = FitConfig(**{**base, "criterion": c, "n_trees": 1})
                start = time.perf_counter()
                _grow(spec, ds.features, ds.outcomes, rows_all, cfg, np.random.default_rng([seed, rep]))
                times[c].append(time.perf_counter() - start)
        for c in criteria:
            t = np.array(times[c])
            rows.append({"criterion": c, "n": n, "reps": reps, "mean_seconds": float(t.mean()),
                         "sd_seconds": float(t.std(ddof=1)) if t.size > 1 else 0.0})
    return rows
