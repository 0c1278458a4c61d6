"""Tree growing and forest assembly.

Split search sorts the node's rows once per candidate feature and sweeps
running sums of the per-sample contributions, so the approximate criteria
are scored for every threshold from a single node solve.
"""

import math
import time
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from . import criteria as crit
from .core_model import Forest, Tree
from .exceptions import NoValidCandidateError, RateOutOfRangeError
from .problems import DegenerateNode, _stoch_parts, node_solve_outcomes


@dataclass(frozen=True)
class CandidateSplit:
    feature: int
    threshold: float
    n_left: int
    n_right: int


@dataclass(frozen=True)
class SubsamplePlan:
    mode: str
    tree_rows: np.ndarray
    dec_rows: np.ndarray


def min_child_size(n_node, config):
    return max(config.min_leaf, math.ceil(config.balance_frac * n_node - 1e-12))


def _sample_features(p, config, rng):
    mtry = p if config.mtry is None else min(config.mtry, p)
    if mtry == p:
        return np.arange(p)
    return np.sort(rng.choice(p, size=mtry, replace=False))


def _feature_thresholds(xs, m_min, config, rng):
    """Left-side counts and thresholds for one feature's sorted values."""
    n = xs.size
    k = np.flatnonzero(xs[1:] > xs[:-1]) + 1
    if config.threshold_mode == "random" and k.size > config.n_thresholds:
        k = np.sort(rng.choice(k, size=config.n_thresholds, replace=False))
    k = k[(k >= m_min) & (n - k >= m_min)]
    lo, hi = xs[k - 1], xs[k]
    thr = 0.5 * (lo + hi)
    # rounding can push the midpoint onto the upper value, which would send it left
    thr = np.where(thr < hi, thr, lo)
    return k, thr


def generate_candidate_splits(ds, region_rows, config, rng):
    X = ds.features if hasattr(ds, "features") else np.asarray(ds)
    Xr = X[np.asarray(region_rows)]
    n = Xr.shape[0]
    m_min = min_child_size(n, config)
    out = []
    for j in _sample_features(Xr.shape[1], config, rng):
        xs = np.sort(Xr[:, j])
        k, thr = _feature_thresholds(xs, m_min, config, rng)
        out.extend(CandidateSplit(int(j), float(t), int(a), int(n - a)) for a, t in zip(k, thr))
    return out


class _Counter:
    def __init__(self):
        self.solves = 0
        self.projected = 0
        self.regularized = 0
        self.degenerate = 0


def _masked_side_costs(spec, Z, Ys, k, left):
    """Sum of ``c(Z[c]; Ys[i])`` over the left (i < k[c]) or right (i >= k[c]) block."""
    C = spec.costs(Z, Ys)
    pos = np.arange(Ys.shape[0])
    mask = pos[None, :] < k[:, None]
    if not left:
        mask = ~mask
    return np.where(mask, C, 0.0).sum(axis=1)


class _NodeScorer:
    """Scores every candidate threshold of a node for one criterion."""

    def __init__(self, spec, config, Y, n_fit, rng, counter):
        self.spec, self.config, self.Y, self.n = spec, config, Y, n_fit
        self.rng, self.counter = rng, counter
        self.kind = config.criterion
        self.node = None
        self.value = np.nan

    def prepare(self):
        """Node-level work done once. Returns False when the node must become a leaf."""
        Y = self.Y
        n0 = Y.shape[0]
        if self.kind == "variance":
            self.value = 0.5 * Y.var(axis=0).sum()
            return True
        if self.kind == "random":
            return True
        node = node_solve_outcomes(self.spec, Y, self.config.ridge)
        self.counter.solves += 1
        if isinstance(node, DegenerateNode):
            self.counter.degenerate += 1
            return False
        self.node = node
        self.value = node.value
        if self.kind == "oracle":
            return True
        self.aware = self.config.constraint_aware and self.spec.has_constraints
        # the unaware criteria only ever touch the Hessian factorization
        if (node.kkt_factor if self.aware else node.hess_factor).regularized:
            self.counter.regularized += 1
        G = self.spec.grad_contributions(node.z0, Y, node.context)
        if self.aware and node.lam.size and np.any(node.lam):
            _, sgrads = _stoch_parts(self.spec, node.z0, Y)
            G = G + np.einsum("nkd,k->nd", sgrads, node.lam)
        self.G = G
        self.G_mean = G.mean(axis=0)
        if self.aware and node.n_stoch_rows:
            svals, _ = _stoch_parts(self.spec, node.z0, Y)
            self.S = svals[:, node.stoch_rows]
            self.S_mean = self.S.mean(axis=0)
        else:
            self.S = None
        return True

    def score(self, order, k):
        """Scores for left counts ``k`` after sorting rows by ``order``."""
        n0 = order.size
        n1 = k.astype(float)
        n2 = n0 - n1
        if self.kind == "random":
            return self.rng.random(k.size)
        Ys = self.Y[order]
        if self.kind == "variance":
            c1 = np.cumsum(Ys, axis=0)
            c2 = np.cumsum(Ys ** 2, axis=0)
            s1, q1 = c1[k - 1], c2[k - 1]
            s2, q2 = c1[-1] - s1, c2[-1] - q1
            within = (q1 - s1 ** 2 / n1[:, None]).sum(axis=1) + (q2 - s2 ** 2 / n2[:, None]).sum(axis=1)
            return 0.5 * within / self.n
        if self.kind == "oracle":
            out = np.empty(k.size)
            for c, kc in enumerate(k):
                out[c], solves = crit._oracle(self.spec, Ys[:kc], Ys[kc:], self.n)
                self.counter.solves += solves
            return out
        node = self.node
        cum = np.cumsum(self.G[order], axis=0)
        h1 = cum[k - 1] / n1[:, None]
        h2 = (cum[-1] - cum[k - 1]) / n2[:, None]
        if not self.aware:
            if self.kind == "apx-risk":
                return crit.apx_risk_unconstrained(node, h1, h2, n1, n2, self.n).value
            Z1 = crit.extrapolated_solutions(node, h1)
            Z2 = crit.extrapolated_solutions(node, h2)
            return (_masked_side_costs(self.spec, Z1, Ys, k, True)
                    + _masked_side_costs(self.spec, Z2, Ys, k, False)) / self.n
        delta1 = h1 - self.G_mean
        delta2 = h2 - self.G_mean
        g1 = g2 = None
        if self.S is not None:
            cs = np.cumsum(self.S[order], axis=0)
            g1 = cs[k - 1] / n1[:, None] - self.S_mean
            g2 = (cs[-1] - cs[k - 1]) / n2[:, None] - self.S_mean
        d1 = crit.kkt_direction(node, delta1, g1)
        d2 = crit.kkt_direction(node, delta2, g2)
        if self.kind == "apx-risk":
            return crit.apx_risk_constrained(node, d1, d2, delta1, delta2, n1, n2, self.n).value
        Z1, p1 = crit.constrained_solutions(node, d1)
        Z2, p2 = crit.constrained_solutions(node, d2)
        self.counter.projected += int(p1.sum() + p2.sum())
        return (_masked_side_costs(self.spec, Z1, Ys, k, True)
                + _masked_side_costs(self.spec, Z2, Ys, k, False)) / self.n


def _has_candidate(X_node, m_min):
    n0 = X_node.shape[0]
    if n0 < 2 * m_min:
        return False
    xs = np.sort(X_node, axis=0)
    # a balanced cut exists when some feature changes value between positions m_min and n0 - m_min
    return bool(np.any(xs[n0 - m_min] > xs[m_min - 1]))


def scan_splits(scorer, X_node, config, rng):
    """Best candidate over sampled features as ``(CandidateSplit, score)``.

    Ties resolve to the smallest feature index, then the smallest threshold.
    Raises NoValidCandidateError when no finite candidate exists.
    """
    n0 = X_node.shape[0]
    m_min = min_child_size(n0, config)
    best, best_score = None, np.inf
    for j in _sample_features(X_node.shape[1], config, rng):
        order = np.argsort(X_node[:, j], kind="stable")
        xs = X_node[order, j]
        k, thr = _feature_thresholds(xs, m_min, config, rng)
        if k.size == 0:
            continue
        scores = np.asarray(scorer.score(order, k), dtype=float)
        scores = np.where(np.isfinite(scores), scores, np.inf)
        c = int(np.argmin(scores))
        if scores[c] < best_score:
            best_score = float(scores[c])
            best = CandidateSplit(int(j), float(thr[c]), int(k[c]), int(n0 - k[c]))
    if best is None:
        raise NoValidCandidateError("no candidate split with a finite score")
    return best, best_score


def fit_tree(spec, ds, tree_rows, config, rng, n_fit=None):
    """Grow one tree on ``tree_rows`` (a multiset of row indices)."""
    tree, _ = _grow(spec, np.asarray(ds.features), np.asarray(ds.outcomes), np.asarray(tree_rows), config, rng, n_fit)
    return tree


def _grow(spec, X, Y, rows, config, rng, n_fit=None):
    n_fit = rows.size if n_fit is None else n_fit
    counter = _Counter()
    feature, threshold, left, right, leaf_id, n_samples, value, score = ([] for _ in range(8))

    def new_node():
        for arr, v in ((feature, -1), (threshold, np.nan), (left, -1), (right, -1), (leaf_id, -1),
                       (n_samples, 0), (value, np.nan), (score, np.nan)):
            arr.append(v)
        return len(feature) - 1

    n_leaves = 0
    stack = [(rows, 0)]
    slots = [new_node()]
    # explicit stack in pre-order: pop a node, push right then left
    while stack:
        idx, depth = stack.pop()
        t = slots.pop()
        n_samples[t] = idx.size
        split = None
        forced = (config.max_depth is not None and depth >= config.max_depth) or idx.size < 2 * config.min_leaf
        if not forced:
            Xn = X[idx]
            forced = not _has_candidate(Xn, min_child_size(idx.size, config))
        if not forced:
            scorer = _NodeScorer(spec, config, Y[idx], n_fit, rng, counter)
            if scorer.prepare():
                value[t] = scorer.value
                try:
                    split, s = scan_splits(scorer, Xn, config, rng)
                except NoValidCandidateError:
                    split = None
        if split is None:
            leaf_id[t] = n_leaves
            n_leaves += 1
            continue
        go_left = X[idx, split.feature] <= split.threshold
        feature[t], threshold[t], score[t] = split.feature, split.threshold, s
        left[t] = new_node()
        right[t] = new_node()
        stack.append((idx[~go_left], depth + 1))
        slots.append(right[t])
        stack.append((idx[go_left], depth + 1))
        slots.append(left[t])
    tree = Tree(feature, threshold, left, right, leaf_id, n_samples, value, score, n_fit=int(n_fit))
    return tree, counter


def subsample(n, config, rng):
    mode = config.subsample_mode
    if mode == "bootstrap":
        rows = np.sort(rng.integers(0, n, size=n))
        return SubsamplePlan(mode, rows, rows)
    rate = config.subsample_rate
    if rate is None:
        rate = 0.632 if mode == "without-replacement" else 1.0
    if not 0 < rate <= 1:
        raise RateOutOfRangeError(f"subsample rate must lie in (0, 1], got {rate}")
    m = math.ceil(rate * n - 1e-9)
    draw = rng.choice(n, size=m, replace=False)
    if mode == "without-replacement":
        rows = np.sort(draw)
        return SubsamplePlan(mode, rows, rows)
    half = m // 2
    return SubsamplePlan(mode, np.sort(draw[:half]), np.sort(draw[half:]))


def _fit_one(spec, X, Y, config, j):
    rng = np.random.default_rng([config.seed, j])
    start = time.perf_counter()
    plan = subsample(X.shape[0], config, rng)
    tree, counter = _grow(spec, X, Y, plan.tree_rows, config, rng)
    log = {"tree": j, "depth": tree.depth(), "nodes": tree.node_count, "leaves": tree.n_leaves,
           "degenerate": counter.degenerate, "regularized": counter.regularized,
           "projected": counter.projected, "solves": counter.solves,
           "seconds": time.perf_counter() - start}
    return tree, plan, log


def fit_forest(spec, ds, config, n_jobs=1):
    """Fit ``config.n_trees`` trees; tree ``j`` draws from ``default_rng([seed, j])``."""
    X, Y = np.asarray(ds.features), np.asarray(ds.outcomes)
    if n_jobs in (None, 1):
        results = [_fit_one(spec, X, Y, config, j) for j in range(config.n_trees)]
    else:
        results = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_fit_one)(spec, X, Y, config, j) for j in range(config.n_trees))
    return Forest(
        trees=[r[0] for r in results],
        dec_sets=[r[1].dec_rows for r in results],
        tree_sets=[r[1].tree_rows for r in results],
        config=config,
        problem_id=spec.variant,
        problem=spec.to_dict(),
        fit_log=[r[2] for r in results],
        n_train=ds.n,
    )
