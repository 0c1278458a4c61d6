"""Reproduction and property checks, one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines as they are
produced; they are also collected into the terminal summary.
"""

import time

import numpy as np
import pytest
from scipy import stats

from helpers import ScaledProblem, report
from stochopt_forest import criteria as crit
from stochopt_forest import problems as pr
from stochopt_forest.core_model import Dataset, FitConfig, Forest
from stochopt_forest.decide import decide, forest_weights
from stochopt_forest.exceptions import NoNeighborsError
from stochopt_forest.forest_builder import _Counter, _grow, _NodeScorer, fit_forest
from stochopt_forest.harness import bench_timing, get_scenario, run_benchmark
from stochopt_forest.importance import mdi_importance, split_frequency

pytestmark = pytest.mark.slow


def _ds(Y):
    Y = np.asarray(Y, dtype=float).reshape(len(Y), -1)
    return Dataset(np.zeros((Y.shape[0], 1)), Y)


def _bootstrap_ci(values, seed=0):
    res = stats.bootstrap((np.asarray(values),), np.mean, n_resamples=2000, method="percentile",
                          random_state=np.random.default_rng(seed))
    return res.confidence_interval.low, res.confidence_interval.high


# 1. squared-cost identity

def test_squared_cost_identity():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        n, d = int(rng.integers(4, 60)), int(rng.integers(1, 5))
        Y = rng.normal(size=(n, d)) * rng.uniform(0.1, 10) + rng.normal(size=d)
        ds = _ds(Y)
        perm = rng.permutation(n)
        k = int(rng.integers(1, n))
        idx1, idx2 = perm[:k], perm[k:]
        spec = pr.SquaredError(d)
        node = pr.node_solve(spec, ds, np.arange(n))
        G = spec.grad_contributions(node.z0, Y, node.context)
        h1, h2 = G[idx1].mean(axis=0), G[idx2].mean(axis=0)
        soln = crit.apx_soln_unconstrained(node, h1, h2, spec, ds, idx1, idx2).value
        var = crit.variance_criterion(ds, idx1, idx2).value
        risk = node.value + crit.apx_risk_unconstrained(node, h1, h2, k, n - k, n).value
        # direct within-child sum of squares
        direct = 0.5 * (((Y[idx1] - Y[idx1].mean(axis=0)) ** 2).sum() + ((Y[idx2] - Y[idx2].mean(axis=0)) ** 2).sum()) / n
        worst = max(worst, abs(soln - var), abs(risk - var), abs(var - direct))
    elapsed = time.perf_counter() - start
    ok = report("1 squared-cost identity", worst <= 1e-10 and elapsed < 5,
                f"max disagreement {worst:.2e} (tol 1e-10), {elapsed:.2f}s (budget 5s)")
    assert ok


# 2 and 3. newsvendor reproduction and split behaviour

NEWSVENDOR_SEED = 11


@pytest.fixture(scope="module")
def newsvendor_runs():
    start = time.perf_counter()
    base = {"scenario": "newsvendor-trunc", "reps": 20, "seed": NEWSVENDOR_SEED, "n_query": 200, "n_cond": 2000}
    main = run_benchmark({**base, "n": [100, 400], "methods": {
        "apx-risk": {"criterion": "apx-risk", "n_estimators": 100},
        "apx-soln": {"criterion": "apx-soln", "n_estimators": 100},
        "variance": {"criterion": "variance", "n_estimators": 100}}}, keep_models=True)
    # same seeds, so the oracle forests see the same data as the n=400 cells above
    oracle = run_benchmark({**base, "n": [400], "methods": {"oracle": {"criterion": "oracle", "n_estimators": 25}}})
    return main, oracle, time.perf_counter() - start


def test_newsvendor_reproduction(newsvendor_runs):
    main, oracle, elapsed = newsvendor_runs
    med = lambda rep, m, n: float(np.median(rep.column("relative_risk", method=m, n=n)))
    oks = []
    for m in ("apx-risk", "apx-soln"):
        a, b = med(main, m, 100), med(main, m, 400)
        oks.append(report(f"2a {m} improves with n", b < a, f"median rr n=100 {a:.4f}, n=400 {b:.4f}"))
    orc = med(oracle, "oracle", 400)
    for m in ("apx-risk", "apx-soln"):
        gap = abs(med(main, m, 400) - orc)
        oks.append(report(f"2b {m} vs oracle at n=400", gap <= 0.05,
                          f"|{med(main, m, 400):.4f} - {orc:.4f}| = {gap:.4f} (tol 0.05)"))
    var = med(main, "variance", 400)
    for m in ("apx-risk", "apx-soln"):
        oks.append(report(f"2c {m} vs variance at n=400", med(main, m, 400) <= var - 0.03,
                          f"{med(main, m, 400):.4f} <= {var:.4f} - 0.03"))
    print("n=100 medians:", {m: round(med(main, m, 100), 4) for m in ("apx-risk", "apx-soln", "variance")})
    oks.append(report("2 runtime", elapsed <= 7200, f"{elapsed:.0f}s (budget 7200s)"))
    assert all(oks)


def _pooled_importance(main, method):
    freqs, mdis = [], []
    for (m, n, rep), est in main.meta["models"].items():
        if m == method and n == 400:
            freqs.append(split_frequency(est.forest_, est.n_features_in_))
            mdis.append(mdi_importance(est.forest_, n_features=est.n_features_in_).mdi)
    return np.mean(freqs, axis=0), np.mean(mdis, axis=0)


def test_split_behaviour(newsvendor_runs):
    main = newsvendor_runs[0]
    oks = []
    for m in ("apx-risk", "apx-soln"):
        freq, mdi = _pooled_importance(main, m)
        for label, v in (("split frequency", freq), ("MDI", mdi)):
            ok = v[0] > v[1] > v[2:].mean()
            oks.append(report(f"3 {m} {label} ordering", ok,
                              f"x1 {v[0]:.3f} > x2 {v[1]:.3f} > noise mean {v[2:].mean():.3f}"))
    freq, mdi = _pooled_importance(main, "variance")
    for label, v in (("split frequency", freq), ("MDI", mdi)):
        ratio = max(v[0], v[1]) / min(v[0], v[1])
        oks.append(report(f"3 variance {label} x1~x2", ratio <= 1.5,
                          f"x1 {v[0]:.3f}, x2 {v[1]:.3f}, ratio {ratio:.3f} (tol 1.5)"))
    assert all(oks)


# 4. constrained CVaR ordering

def test_cvar_constraint_ordering():
    rep = run_benchmark({"scenario": "cvar-lognormal", "n": [800], "reps": 15, "seed": 5, "n_query": 200,
                         "n_cond": 2000, "methods": {
                             "apx-risk": {"criterion": "apx-risk", "n_estimators": 100},
                             "apx-risk-unaware": {"criterion": "apx-risk", "constraint_aware": False,
                                                  "n_estimators": 100},
                             "variance": {"criterion": "variance", "n_estimators": 100},
                             "random": {"criterion": "random", "n_estimators": 100}}})
    means = {}
    for m in ("apx-risk", "apx-risk-unaware", "variance", "random"):
        v = rep.column("relative_risk", method=m)
        lo, hi = _bootstrap_ci(v)
        means[m] = v.mean()
        print(f"  {m}: mean rr {v.mean():.4f}  95% CI [{lo:.4f}, {hi:.4f}]")
    oks = [report(f"4 aware apx-risk < {m}", means["apx-risk"] < means[m],
                  f"{means['apx-risk']:.4f} < {means[m]:.4f}")
           for m in ("apx-risk-unaware", "variance", "random")]
    assert all(oks)


# 5. timing

def test_timing_ratio():
    start = time.perf_counter()
    rows = bench_timing(None, "cvar-lognormal", [400], ["apx-risk", "oracle"], reps=1, seed=3)
    t = {r["criterion"]: r["mean_seconds"] for r in rows}
    ratio = t["oracle"] / t["apx-risk"]
    elapsed = time.perf_counter() - start
    ok = report("5 oracle/apx-risk single-tree time", ratio >= 20 and elapsed <= 1800,
                f"{t['oracle']:.2f}s / {t['apx-risk']:.3f}s = {ratio:.0f}x (floor 20x), {elapsed:.0f}s")
    assert ok


# 6. property suite

def _zero_gradient_node(rng):
    if rng.random() < 0.5:
        d = int(rng.integers(1, 4))
        spec, Y = pr.SquaredError(d), rng.normal(size=(int(rng.integers(6, 30)), d))
    else:
        # an even number of distinct draws puts the median gradient exactly at zero
        spec = pr.Newsvendor([2.0, 2.0], [2.0, 2.0])
        Y = rng.exponential(size=(2 * int(rng.integers(5, 20)), 2))
    return spec, _ds(Y)


def _reduction_gap(rng):
    spec, ds = _zero_gradient_node(rng)
    node = pr.node_solve(spec, ds, np.arange(ds.n))
    assert np.abs(node.grad_f0).max() <= 1e-14
    Y, n = ds.outcomes, ds.n
    k = int(rng.integers(1, n))
    idx1, idx2 = np.arange(k), np.arange(k, n)
    G = spec.grad_contributions(node.z0, Y, node.context)
    h1, h2 = G[idx1].mean(axis=0), G[idx2].mean(axis=0)
    d1 = crit.kkt_direction(node, h1 - node.grad_f0)
    d2 = crit.kkt_direction(node, h2 - node.grad_f0)
    cons = crit.apx_risk_constrained(node, d1, d2, h1 - node.grad_f0, h2 - node.grad_f0, k, n - k, n).value
    unc = crit.apx_risk_unconstrained(node, h1, h2, k, n - k, n).value
    soln_c = (crit.apx_soln_constrained(node, d1, spec, ds, idx1, n).value
              + crit.apx_soln_constrained(node, d2, spec, ds, idx2, n).value)
    soln_u = crit.apx_soln_unconstrained(node, h1, h2, spec, ds, idx1, idx2).value
    return max(abs(cons - unc) / max(1.0, abs(unc)), abs(soln_c - soln_u) / max(1.0, abs(soln_u)))


def _constrained_specs():
    edges = [(0, 1), (1, 3), (0, 2), (2, 3), (1, 2)]
    return [pr.VariancePortfolio(3), pr.VariancePortfolio(3, allow_short=True, return_floor=1.0),
            pr.CVaRPortfolio(3, 0.2), pr.Newsvendor([1.0, 2.0], [3.0, 1.0], capacity=4.0),
            pr.CVaRShortestPath(4, edges, 0, 3, level=0.2)]


def _outcomes(spec, rng, n):
    if isinstance(spec, pr.CVaRShortestPath):
        return rng.exponential(size=(n, spec.d)) * rng.uniform(0.5, 2, spec.d)
    return rng.lognormal(0, 0.5, size=(n, spec.d)) * rng.uniform(0.5, 2, spec.d)


def _kkt_and_stationarity(rng):
    worst_rows, worst_stat = 0.0, 0.0
    for spec in _constrained_specs():
        for _ in range(4):
            n = int(rng.integers(60, 160))
            Y = _outcomes(spec, rng, n)
            node = pr.node_solve(spec, _ds(Y), np.arange(n))
            worst_stat = max(worst_stat, node.stationarity_residual)
            cfg = FitConfig(criterion="apx-risk", ridge=1e-3)
            scorer = _NodeScorer(spec, cfg, Y, n, rng, _Counter())
            if not scorer.prepare():
                continue
            order = rng.permutation(n)
            k = np.arange(max(1, n // 5), n - n // 5)
            cum = np.cumsum(scorer.G[order], axis=0)
            sides = [(cum[k - 1] / k[:, None], None), ((cum[-1] - cum[k - 1]) / (n - k)[:, None], None)]
            if scorer.S is not None:
                cs = np.cumsum(scorer.S[order], axis=0)
                sides = [(sides[0][0], cs[k - 1] / k[:, None] - scorer.S_mean),
                         (sides[1][0], (cs[-1] - cs[k - 1]) / (n - k)[:, None] - scorer.S_mean)]
            node = scorer.node
            for h, g in sides:
                D = crit.kkt_direction(node, h - scorer.G_mean, g)
                # deterministic rows must vanish, stochastic rows must track the constraint perturbation
                rhs = np.zeros((len(k), node.A_active.shape[0]))
                if g is not None:
                    rhs[:, : node.n_stoch_rows] = -g
                worst_rows = max(worst_rows, np.abs(D @ node.A_active.T - rhs).max(initial=0.0))
    return worst_rows, worst_stat


def _finite_difference_gap(rng, h=1e-5):
    worst = 0.0
    for spec in (pr.SquaredError(3), pr.VariancePortfolio(3), pr.VariancePortfolio(3, allow_short=True)):
        for _ in range(5):
            Y = rng.normal(1.0, 0.5, size=(int(rng.integers(30, 100)), 3))
            n = Y.shape[0]
            z = pr.node_solve(spec, _ds(Y), np.arange(n)).z0
            grad = spec.grad_contributions(z, Y, spec.node_context(z, Y)).mean(axis=0)
            w = np.full(n, 1.0 / n)
            fd = np.array([(spec.objective(z + h * e, w, Y) - spec.objective(z - h * e, w, Y)) / (2 * h)
                           for e in np.eye(z.size)])
            worst = max(worst, np.abs(grad - fd).max())
    return worst


def _scale_invariance(rng):
    X, Y = rng.normal(size=(80, 3)), rng.normal(1, 0.3, size=(80, 2))
    same = True
    for criterion in ("apx-risk", "apx-soln", "oracle", "variance"):
        cfg = FitConfig(criterion=criterion, min_leaf=8, balance_frac=0.2, ridge=0.0)
        for base in (pr.VariancePortfolio(2), pr.Newsvendor([1.0, 1.0], [3.0, 2.0])):
            t1, _ = _grow(base, X, np.abs(Y), np.arange(80), cfg, np.random.default_rng(0))
            t2, _ = _grow(ScaledProblem(base), X, np.abs(Y), np.arange(80), cfg, np.random.default_rng(0))
            same &= np.array_equal(t1.feature, t2.feature) and np.array_equal(t1.threshold, t2.threshold, equal_nan=True)
    return same


def _fine_partition_errors(deltas, reps=20, n=4000):
    """Mean |approximate - re-optimized| child cost when the node region shrinks."""
    spec = pr.VariancePortfolio(2)
    cfg = FitConfig(criterion="apx-risk", ridge=0.0)
    out = []
    for delta in deltas:
        errs = []
        for rep in range(reps):
            rng = np.random.default_rng([rep, 7])
            x = np.sort(rng.uniform(0, delta, n))
            sd = np.column_stack([1 + x, 2 - x])
            Y = 1.0 + sd * rng.standard_normal((n, 2))
            scorer = _NodeScorer(spec, cfg, Y, n, rng, _Counter())
            scorer.prepare()
            approx = scorer.value + scorer.score(np.arange(n), np.array([n // 2]))[0]
            exact = crit.oracle_criterion(spec, _ds(Y), np.arange(n // 2), np.arange(n // 2, n)).value
            errs.append(abs(approx - exact))
        out.append(float(np.mean(errs)))
    return out


def test_property_suite():
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    oks = []
    gap = max(_reduction_gap(rng) for _ in range(40))
    oks.append(report("6 constrained reduces to unconstrained", gap <= 1e-12, f"max rel gap {gap:.1e} (tol 1e-12)"))
    rows, stat = _kkt_and_stationarity(rng)
    oks.append(report("6 KKT feasibility rows", rows <= 1e-8, f"max |A d| {rows:.1e} (tol 1e-8)"))
    oks.append(report("6 NNLS stationarity", stat <= 1e-5, f"max residual {stat:.1e} (tol 1e-5)"))
    fd = _finite_difference_gap(rng)
    oks.append(report("6 gradient vs finite difference", fd <= 1e-4, f"max gap {fd:.1e} (tol 1e-4)"))
    oks.append(report("6 scale-invariant argmin", _scale_invariance(rng), "identical splits at 2x cost"))
    deltas = [1.0, 0.5, 0.25, 0.125]
    errs = _fine_partition_errors(deltas)
    trend = all(b < a for a, b in zip(errs, errs[1:]))
    oks.append(report("6 fine-partition error trend", trend,
                      ", ".join(f"delta={d:g}: {e:.2e}" for d, e in zip(deltas, errs))))
    elapsed = time.perf_counter() - start
    oks.append(report("6 runtime", elapsed < 600, f"{elapsed:.0f}s (budget 600s)"))
    assert all(oks)


# 7. forest mechanics

def test_forest_mechanics():
    start = time.perf_counter()
    scen = get_scenario("newsvendor-trunc")
    ds = scen.simulate(300, 21)
    spec = scen.problem()
    oks = []

    forest = fit_forest(spec, ds, FitConfig(n_trees=40, min_leaf=5, seed=2))
    queries = scen.sample_x(50, np.random.default_rng(3))
    worst = 0.0
    support_ok = True
    used = np.unique(np.concatenate(forest.dec_sets))
    for x in queries:
        w = forest_weights(forest, ds, x).w
        worst = max(worst, abs(w.sum() - 1.0))
        support_ok &= bool(np.all(w >= 0) and np.all(w[np.setdiff1d(np.arange(ds.n), used)] == 0))
    oks.append(report("7 weight simplex", worst <= 1e-12 and support_ok, f"max |sum w - 1| {worst:.1e}, w >= 0"))

    honest = fit_forest(spec, ds, FitConfig(n_trees=20, min_leaf=5, seed=4, subsample_mode="honest"))
    leaks = 0
    for t, (tree, tree_rows, dec_rows) in enumerate(zip(honest.trees, honest.tree_sets, honest.dec_sets)):
        single = Forest([tree], [dec_rows], [tree_rows], honest.config, honest.problem_id, n_train=ds.n)
        leaks += len(set(tree_rows) & set(dec_rows))
        for x in queries[:10]:
            try:
                w = forest_weights(single, ds, x).w
            except NoNeighborsError:
                continue
            leaks += int(np.count_nonzero(w[np.setdiff1d(tree_rows, dec_rows)]))
    oks.append(report("7 honesty zero-weight audit", leaks == 0, f"{leaks} structure rows with weight"))

    cfg = FitConfig(n_trees=16, min_leaf=5, seed=9)
    blobs = [fit_forest(spec, ds, cfg, n_jobs=j).to_json() for j in (1, 4, 8)]
    oks.append(report("7 parallel determinism", blobs[0] == blobs[1] == blobs[2], "1/4/8 workers byte-identical"))

    diff = 0.0
    for s in (spec, pr.CVaRPortfolio(2, 0.2)):
        Y = ds.outcomes if s is spec else np.random.default_rng(5).lognormal(size=(ds.n, 2))
        data = Dataset(ds.features, Y)
        trivial = fit_forest(s, data, FitConfig(n_trees=3, min_leaf=ds.n, seed=1, subsample_mode="without-replacement",
                                                  subsample_rate=1.0))
        saa = s.solve(np.full(ds.n, 1.0 / ds.n), Y)
        z = decide(trivial, s, data, queries[0]).z
        diff = max(diff, abs(s.objective(z, np.full(ds.n, 1.0 / ds.n), Y) - saa.value))
    oks.append(report("7 trivial tree equals SAA", diff <= 1e-9, f"objective gap {diff:.1e}"))
    elapsed = time.perf_counter() - start
    oks.append(report("7 runtime", elapsed < 300, f"{elapsed:.0f}s (budget 300s)"))
    assert all(oks)


# 8. stochastic constraint path

def test_stochastic_constraint_path():
    rep = run_benchmark({"scenario": "meanvar-return", "n": [400], "reps": 10, "seed": 8, "n_query": 200,
                         "n_cond": 2000, "methods": {
                             "apx-risk": {"criterion": "apx-risk", "n_estimators": 100},
                             "variance": {"criterion": "variance", "n_estimators": 100}}})
    oks = []
    infeasible = int(rep.column("infeasible_decisions", method="apx-risk").sum())
    oks.append(report("8 decisions feasible within estimate", infeasible == 0, f"{infeasible} flagged decisions"))
    violation = np.maximum(rep.column("mean_shortfall", method="apx-risk"), 0.0)
    oks.append(report("8 marginal return violation", violation.max() <= 0.02,
                      f"max over reps {violation.max():.4f} (tol 0.02)"))
    aware, var = rep.column("relative_risk", method="apx-risk"), rep.column("relative_risk", method="variance")
    oks.append(report("8 aware < variance relative risk", aware.mean() < var.mean(),
                      f"{aware.mean():.4f} < {var.mean():.4f}"))
    assert all(oks)
