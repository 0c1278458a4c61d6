"""Datasets, trees, forests, fit configuration and their serialization."""

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .exceptions import ConfigError, DimensionMismatchError, NonFiniteError

FOREST_SCHEMA_VERSION = 1


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    outcomes: np.ndarray
    feature_names: tuple = None
    outcome_names: tuple = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        Y = np.asarray(self.outcomes, dtype=float)
        if X.ndim != 2 or Y.ndim != 2:
            raise DimensionMismatchError("features and outcomes must be matrices")
        if X.shape[0] != Y.shape[0]:
            raise DimensionMismatchError(f"{X.shape[0]} feature rows but {Y.shape[0]} outcome rows")
        if X.shape[0] < 1:
            raise DimensionMismatchError("a dataset needs at least one row")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise NonFiniteError("dataset contains NaN or infinite entries")
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "outcomes", _frozen(Y))
        if self.feature_names is None:
            object.__setattr__(self, "feature_names", tuple(f"x_{j + 1}" for j in range(X.shape[1])))
        if self.outcome_names is None:
            object.__setattr__(self, "outcome_names", tuple(f"y_{l + 1}" for l in range(Y.shape[1])))

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def p(self):
        return self.features.shape[1]

    @property
    def d(self):
        return self.outcomes.shape[1]

    def subset(self, rows):
        return Dataset(self.features[rows], self.outcomes[rows], self.feature_names, self.outcome_names)


def make_dataset(rows, p, d):
    """Build a Dataset from rows of ``p`` feature values followed by ``d`` outcomes."""
    rows = [list(r) for r in rows]
    if any(len(r) != p + d for r in rows):
        raise DimensionMismatchError(f"every row needs {p + d} entries")
    try:
        arr = np.array(rows, dtype=float).reshape(len(rows), p + d)
    except ValueError as exc:
        raise NonFiniteError(str(exc)) from exc
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("rows contain NaN or infinite entries")
    return Dataset(arr[:, :p], arr[:, p:])


def read_csv(path):
    """Read a data CSV whose header names columns ``x_1..x_p, y_1..y_d``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        body = [r for r in reader if r]
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    ycols = [i for i, h in enumerate(header) if h.startswith("y")]
    if not xcols or not ycols or len(xcols) + len(ycols) != len(header):
        raise DimensionMismatchError("header must consist of x_* columns then y_* columns")
    try:
        arr = np.array([[float(v) for v in r] for r in body], dtype=float)
    except ValueError as exc:
        raise NonFiniteError(f"unparseable value: {exc}") from exc
    if arr.ndim != 2 or arr.shape[1] != len(header):
        raise DimensionMismatchError("ragged rows in data file")
    return Dataset(arr[:, xcols], arr[:, ycols], tuple(header[i] for i in xcols), tuple(header[i] for i in ycols))


def read_features_csv(path):
    """Read a query CSV holding only feature columns."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        body = [r for r in reader if r]
    arr = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("query file contains NaN or infinite entries")
    return arr


def write_csv(ds, path):
    header = ",".join(ds.feature_names + ds.outcome_names)
    np.savetxt(path, np.hstack([ds.features, ds.outcomes]), delimiter=",", header=header, comments="", fmt="%.17g")


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float

    def goes_left(self, x):
        return x[self.feature] <= self.threshold


class Tree:
    """Axis-aligned binary partition stored as flat node arrays.

    Node 0 is the root. Leaves have ``feature == -1`` and a ``leaf_id``
    assigned in depth-first pre-order. Per-node fit statistics (row count,
    node objective value and winning split score) feed the importance module.
    """

    def __init__(self, feature, threshold, left, right, leaf_id, n_samples=None, value=None, score=None,
                 n_fit=None):
        self.feature = _frozen(feature, np.int64)
        self.threshold = _frozen(threshold)
        self.left = _frozen(left, np.int64)
        self.right = _frozen(right, np.int64)
        self.leaf_id = _frozen(leaf_id, np.int64)
        m = self.feature.size
        self.n_samples = _frozen(np.zeros(m) if n_samples is None else n_samples, np.int64)
        self.value = _frozen(np.full(m, np.nan) if value is None else value)
        self.score = _frozen(np.full(m, np.nan) if score is None else score)
        self.n_fit = n_fit
        self._check()

    def _check(self):
        m = self.feature.size
        if m == 0:
            raise ValueError("a tree needs at least one node")
        leaves = self.feature < 0
        if not np.all((self.left[~leaves] > 0) & (self.left[~leaves] < m)):
            raise ValueError("internal node with invalid child")
        if not np.all((self.right[~leaves] > 0) & (self.right[~leaves] < m)):
            raise ValueError("internal node with invalid child")
        if sorted(self.leaf_id[leaves].tolist()) != list(range(int(leaves.sum()))):
            raise ValueError("leaf ids must be 0..L-1")

    @classmethod
    def leaf(cls, n_samples=0, value=np.nan):
        return cls([-1], [np.nan], [-1], [-1], [0], [n_samples], [value], [np.nan])

    @property
    def node_count(self):
        return self.feature.size

    @property
    def n_leaves(self):
        return int((self.feature < 0).sum())

    @property
    def internal(self):
        return np.flatnonzero(self.feature >= 0)

    def depth(self):
        depth = np.zeros(self.node_count, dtype=int)
        for t in range(self.node_count):
            if self.feature[t] >= 0:
                depth[self.left[t]] = depth[self.right[t]] = depth[t] + 1
        return int(depth.max())

    def apply(self, X):
        """Leaf ids for every row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            cur = node[active]
            go_left = X[active, self.feature[cur]] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
            active = active[self.feature[node[active]] >= 0]
        return self.leaf_id[node]

    def to_dict(self):
        nodes = []
        for t in range(self.node_count):
            stats = {"n_samples": int(self.n_samples[t]), "value": _num(self.value[t])}
            if self.feature[t] >= 0:
                nodes.append({"kind": "internal", "feature": int(self.feature[t]),
                              "threshold": float(self.threshold[t]), "left": int(self.left[t]),
                              "right": int(self.right[t]), "score": _num(self.score[t]), **stats})
            else:
                nodes.append({"kind": "leaf", "leaf_id": int(self.leaf_id[t]), **stats})
        return {"n_fit": self.n_fit, "nodes": nodes}

    @classmethod
    def from_dict(cls, data):
        nodes = data["nodes"]
        internal = [nd["kind"] == "internal" for nd in nodes]
        return cls(
            [nd["feature"] if k else -1 for nd, k in zip(nodes, internal)],
            [nd["threshold"] if k else np.nan for nd, k in zip(nodes, internal)],
            [nd["left"] if k else -1 for nd, k in zip(nodes, internal)],
            [nd["right"] if k else -1 for nd, k in zip(nodes, internal)],
            [-1 if k else nd["leaf_id"] for nd, k in zip(nodes, internal)],
            [nd.get("n_samples", 0) for nd in nodes],
            [_unnum(nd.get("value")) for nd in nodes],
            [_unnum(nd.get("score")) if k else np.nan for nd, k in zip(nodes, internal)],
            n_fit=data.get("n_fit"),
        )


def leaf_of(tree, x):
    """Leaf id of a single point; ties ``x_j == threshold`` go left."""
    x = np.asarray(x, dtype=float)
    t = 0
    while tree.feature[t] >= 0:
        t = tree.left[t] if x[tree.feature[t]] <= tree.threshold[t] else tree.right[t]
    return int(tree.leaf_id[t])


def _num(v):
    v = float(v)
    return v if math.isfinite(v) else None


def _unnum(v):
    return np.nan if v is None else float(v)


CRITERIA = ("oracle", "apx-risk", "apx-soln", "variance", "random")
SUBSAMPLE_MODES = ("bootstrap", "without-replacement", "honest")
THRESHOLD_MODES = ("all-midpoints", "random")


@dataclass(frozen=True)
class FitConfig:
    criterion: str = "apx-risk"
    constraint_aware: bool = True
    n_trees: int = 500
    min_leaf: int = 10
    balance_frac: float = 0.2
    max_depth: int = None
    mtry: int = None
    threshold_mode: str = "all-midpoints"
    n_thresholds: int = 10
    subsample_mode: str = "bootstrap"
    subsample_rate: float = None
    ridge: float = 1e-3
    bandwidth_rule: str = "silverman-floor"
    seed: int = 0

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ConfigError(f"unknown criterion {self.criterion!r}")
        if self.subsample_mode not in SUBSAMPLE_MODES:
            raise ConfigError(f"unknown subsample mode {self.subsample_mode!r}")
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ConfigError(f"unknown threshold mode {self.threshold_mode!r}")
        if self.n_trees < 1:
            raise ConfigError("n_trees must be at least 1")
        if self.min_leaf < 1:
            raise ConfigError("min_leaf must be at least 1")
        if not 0 <= self.balance_frac <= 0.5:
            raise ConfigError("balance_frac must lie in [0, 0.5]")
        if self.max_depth is not None and self.max_depth < 0:
            raise ConfigError("max_depth must be nonnegative")
        if self.mtry is not None and self.mtry < 1:
            raise ConfigError("mtry must be at least 1")
        if self.n_thresholds < 1:
            raise ConfigError("n_thresholds must be at least 1")
        if self.ridge < 0:
            raise ConfigError("ridge must be nonnegative")
        if self.bandwidth_rule != "silverman-floor":
            raise ConfigError(f"unknown bandwidth rule {self.bandwidth_rule!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class Forest:
    trees: list
    dec_sets: list
    tree_sets: list
    config: FitConfig
    problem_id: str
    problem: dict = None
    fit_log: list = field(default_factory=list)
    n_train: int = None
    _weight_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_trees(self):
        return len(self.trees)

    def to_dict(self):
        return {
            "version": FOREST_SCHEMA_VERSION,
            "problem_id": self.problem_id,
            "problem": self.problem,
            "config": self.config.to_dict(),
            "n_train": self.n_train,
            "trees": [t.to_dict() for t in self.trees],
            "dec_sets": [np.asarray(s).tolist() for s in self.dec_sets],
            "tree_sets": [np.asarray(s).tolist() for s in self.tree_sets],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data):
        if data.get("version") != FOREST_SCHEMA_VERSION:
            raise ConfigError(f"unsupported forest version {data.get('version')!r}")
        return cls(
            trees=[Tree.from_dict(t) for t in data["trees"]],
            dec_sets=[np.asarray(s, dtype=np.int64) for s in data["dec_sets"]],
            tree_sets=[np.asarray(s, dtype=np.int64) for s in data["tree_sets"]],
            config=FitConfig.from_dict(data["config"]),
            problem_id=data["problem_id"],
            problem=data.get("problem"),
            n_train=data.get("n_train"),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())
