"""Mean decrease in impurity and split frequencies."""

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, NoSplitsError


@dataclass
class ImportanceReport:
    mdi: np.ndarray
    split_frequency: np.ndarray


def impurity_decrease(criterion_kind, value, score, p_t):
    """Impurity decrease of one split; ``value`` is the node objective, ``p_t = n_t / n``."""
    if criterion_kind == "apx-risk":
        return -score / p_t
    if criterion_kind in ("oracle", "apx-soln", "variance"):
        return value - score / p_t
    raise ConfigError(f"no impurity decrease defined for criterion {criterion_kind!r}")


def _p(forest):
    trees = forest.trees
    p = forest.n_features if hasattr(forest, "n_features") else None
    if p is None:
        used = [t.feature[t.internal] for t in trees]
        p = max((int(u.max()) + 1 for u in used if u.size), default=0)
    return p


def split_frequency(forest, n_features=None):
    p = n_features or _p(forest)
    counts = np.zeros(p)
    for t in forest.trees:
        np.add.at(counts, t.feature[t.internal], 1.0)
    total = counts.sum()
    if total == 0:
        raise NoSplitsError("the forest has no internal nodes")
    return counts / total


def mdi_importance(forest, ds=None, n_features=None):
    """Per-feature MDI normalized so the largest positive entry is one.

    Negative decreases are kept as they are.
    """
    p = n_features or (ds.p if ds is not None else _p(forest))
    kind = forest.config.criterion
    acc = np.zeros(p)
    for t in forest.trees:
        n = t.n_fit or t.n_samples[0]
        for node in t.internal:
            p_t = t.n_samples[node] / n
            acc[t.feature[node]] += p_t * impurity_decrease(kind, t.value[node], t.score[node], p_t)
    acc /= len(forest.trees)
    freq = split_frequency(forest, p)
    top = acc.max()
    if top > 0:
        acc = acc / top
    elif np.any(acc != 0):
        acc = acc / np.abs(acc).max()
    return ImportanceReport(acc, freq)
