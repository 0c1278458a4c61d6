"""scikit-learn style estimators wrapping the forest, kNN and SAA policies."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .core_model import Dataset, FitConfig
from .decide import decide_with_weights, forest_weight_matrix, knn_weights
from .exceptions import ConfigError
from .forest_builder import fit_forest
from .importance import mdi_importance, split_frequency
from .problems import Problem, problem_from_dict


def _resolve_problem(problem):
    if isinstance(problem, Problem):
        return problem
    if isinstance(problem, dict):
        return problem_from_dict(problem)
    raise ConfigError("problem must be a Problem instance or a problem dict")


class _PolicyMixin:
    """Decisions from per-query weight vectors over the training outcomes."""

    def _weights(self, X):
        raise NotImplementedError

    def decide(self, X):
        check_is_fitted(self, "Y_")
        X = check_array(X)
        W = self._weights(X)
        return [decide_with_weights(self.problem_, self.Y_, w) for w in W]

    def predict(self, X):
        return np.array([dec.z for dec in self.decide(X)])

    def decision_weights(self, X):
        check_is_fitted(self, "Y_")
        return self._weights(check_array(X))

    def score(self, X, Y):
        """Negative mean realized cost of the decisions, so larger is better."""
        X, Y = check_X_y(X, Y, multi_output=True)
        Z = self.predict(X)
        Y = np.atleast_2d(Y).reshape(len(X), -1)
        costs = [self.problem_.costs(z[None], y[None])[0, 0] for z, y in zip(Z, Y)]
        return -float(np.mean(costs))


class StochOptForest(_PolicyMixin, BaseEstimator):
    """Forest policy whose splits target the downstream decision cost.

    Parameters
    ----------
    problem : Problem or dict
        The optimization problem solved at every query point.
    criterion : {"apx-risk", "apx-soln", "oracle", "variance", "random"}
    constraint_aware : bool
        Use the constrained perturbation system when the problem has constraints.
    n_estimators, min_samples_leaf, balance, max_depth, max_features :
        Tree-growing controls; ``balance`` is the minimum fraction of the node
        sent to each child.
    max_thresholds : int or None
        When set, sample this many midpoints per feature instead of all.
    subsample : {"bootstrap", "without-replacement", "honest"}
    subsample_rate : float or None
    ridge : float
        Added to singular perturbation systems.
    n_jobs : int or None
        Worker threads for fitting; the result does not depend on it.
    random_state : int
    """

    def __init__(self, problem=None, criterion="apx-risk", constraint_aware=True, n_estimators=100,
                 min_samples_leaf=10, balance=0.2, max_depth=None, max_features=None, max_thresholds=None,
                 subsample="bootstrap", subsample_rate=None, ridge=1e-3, n_jobs=None, random_state=0):
        self.problem = problem
        self.criterion = criterion
        self.constraint_aware = constraint_aware
        self.n_estimators = n_estimators
        self.min_samples_leaf = min_samples_leaf
        self.balance = balance
        self.max_depth = max_depth
        self.max_features = max_features
        self.max_thresholds = max_thresholds
        self.subsample = subsample
        self.subsample_rate = subsample_rate
        self.ridge = ridge
        self.n_jobs = n_jobs
        self.random_state = random_state

    def _config(self):
        return FitConfig(
            criterion=self.criterion,
            constraint_aware=self.constraint_aware,
            n_trees=self.n_estimators,
            min_leaf=self.min_samples_leaf,
            balance_frac=self.balance,
            max_depth=self.max_depth,
            mtry=self.max_features,
            threshold_mode="all-midpoints" if self.max_thresholds is None else "random",
            n_thresholds=self.max_thresholds or 10,
            subsample_mode=self.subsample,
            subsample_rate=self.subsample_rate,
            ridge=self.ridge,
            seed=0 if self.random_state is None else int(self.random_state),
        )

    def fit(self, X, Y):
        X, Y = check_X_y(X, Y, multi_output=True, y_numeric=True)
        Y = Y.reshape(len(X), -1)
        self.problem_ = _resolve_problem(self.problem)
        if Y.shape[1] != self.problem_.d:
            raise ConfigError(f"problem expects {self.problem_.d} outcome columns, got {Y.shape[1]}")
        self.X_, self.Y_ = X, Y
        self.n_features_in_ = X.shape[1]
        self.forest_ = fit_forest(self.problem_, Dataset(X, Y), self._config(), n_jobs=self.n_jobs)
        return self

    def _weights(self, X):
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return forest_weight_matrix(self.forest_, self.X_, X)

    @property
    def feature_importances_(self):
        check_is_fitted(self, "forest_")
        return mdi_importance(self.forest_, n_features=self.n_features_in_).mdi

    @property
    def split_frequencies_(self):
        check_is_fitted(self, "forest_")
        return split_frequency(self.forest_, self.n_features_in_)


class KNNPolicy(_PolicyMixin, BaseEstimator):
    """Uniform weights on the ``n_neighbors`` nearest training points."""

    def __init__(self, problem=None, n_neighbors=10):
        self.problem = problem
        self.n_neighbors = n_neighbors

    def fit(self, X, Y):
        X, Y = check_X_y(X, Y, multi_output=True, y_numeric=True)
        self.problem_ = _resolve_problem(self.problem)
        self.X_, self.Y_ = X, Y.reshape(len(X), -1)
        self.n_features_in_ = X.shape[1]
        return self

    def _weights(self, X):
        return np.array([knn_weights(self.X_, x, self.n_neighbors).w for x in X])


class SAAPolicy(_PolicyMixin, BaseEstimator):
    """Ignores covariates: one sample-average decision for every query."""

    def __init__(self, problem=None):
        self.problem = problem

    def fit(self, X, Y):
        X, Y = check_X_y(X, Y, multi_output=True, y_numeric=True)
        self.problem_ = _resolve_problem(self.problem)
        self.X_, self.Y_ = X, Y.reshape(len(X), -1)
        self.n_features_in_ = X.shape[1]
        return self

    def _weights(self, X):
        n = self.Y_.shape[0]
        return np.full((X.shape[0], n), 1.0 / n)
