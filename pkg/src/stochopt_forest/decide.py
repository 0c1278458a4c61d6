"""Forest weights, weighted decisions and the k-nearest-neighbour baseline."""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .exceptions import DimensionMismatchError, KOutOfRangeError, NoNeighborsError


@dataclass
class DecisionWeights:
    w: np.ndarray
    x: np.ndarray


@dataclass
class Decision:
    z: np.ndarray
    value: float
    weights: np.ndarray
    feasible: bool
    status: str


def _leaf_weight_matrix(tree, X, dec_rows, n):
    """Rows are leaves; row ``l`` spreads unit mass over the decision rows in leaf ``l``."""
    leaves = tree.apply(X[dec_rows])
    counts = np.bincount(leaves, minlength=tree.n_leaves).astype(float)
    M = sp.csr_matrix((np.ones(dec_rows.size), (leaves, dec_rows)), shape=(tree.n_leaves, n))
    M.sum_duplicates()
    inv = np.divide(1.0, counts, out=np.zeros_like(counts), where=counts > 0)
    return sp.diags(inv) @ M, counts > 0


def forest_weight_matrix(forest, X_train, X_query):
    """Weights for many queries as a dense (m, n) array.

    Trees whose query leaf holds no decision rows are skipped and the average
    is taken over the trees that do contribute.
    """
    X_train = np.asarray(X_train, dtype=float)
    X_query = np.atleast_2d(np.asarray(X_query, dtype=float))
    if X_query.shape[1] != X_train.shape[1]:
        raise DimensionMismatchError("query and training feature counts differ")
    n = X_train.shape[0]
    key = (X_train.shape, hash(X_train.tobytes()))
    cache = forest._weight_cache.get(key)
    if cache is None:
        cache = [_leaf_weight_matrix(t, X_train, np.asarray(s), n) for t, s in zip(forest.trees, forest.dec_sets)]
        forest._weight_cache.clear()
        forest._weight_cache[key] = cache
    W = np.zeros((X_query.shape[0], n))
    used = np.zeros(X_query.shape[0])
    for tree, (M, nonempty) in zip(forest.trees, cache):
        q = tree.apply(X_query)
        W += M[q].toarray()
        used += nonempty[q]
    if np.any(used == 0):
        raise NoNeighborsError("no tree has decision rows in the query's leaf")
    return W / used[:, None]


def forest_weights(forest, ds, x):
    X = ds.features if hasattr(ds, "features") else np.asarray(ds)
    x = np.asarray(x, dtype=float)
    return DecisionWeights(forest_weight_matrix(forest, X, x[None])[0], x)


def decide_with_weights(spec, Y, w):
    res = spec.solve(w, Y)
    return Decision(res.z, res.value, w, res.ok and not res.relaxed, res.status)


def decide(forest, spec, ds, x):
    """Weighted decision at ``x``; stochastic constraints use the same weights.

    When they cannot be met the constraint-free solution comes back with
    ``feasible=False`` instead of raising.
    """
    w = forest_weights(forest, ds, x).w
    return decide_with_weights(spec, np.asarray(ds.outcomes), w)


def decide_many(forest, spec, ds, X_query):
    W = forest_weight_matrix(forest, ds.features, X_query)
    Y = np.asarray(ds.outcomes)
    return [decide_with_weights(spec, Y, w) for w in W]


def knn_weights(ds, x, k):
    X = ds.features if hasattr(ds, "features") else np.asarray(ds)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise KOutOfRangeError(f"k must lie in [1, {n}], got {k}")
    x = np.asarray(x, dtype=float)
    dist = ((X - x) ** 2).sum(axis=1)
    nearest = np.lexsort((np.arange(n), dist))[:k]
    w = np.zeros(n)
    w[nearest] = 1.0 / k
    return DecisionWeights(w, x)
