"""Synthetic scenarios with conditional samplers and conditional-optimal policies."""

import numpy as np
from scipy.stats import norm

from ..core_model import Dataset
from ..exceptions import ConfigError
from ..linalg_opt import qp_solve
from ..problems import CVaRPortfolio, CVaRShortestPath, Newsvendor, VariancePortfolio


def _windows(X):
    x2 = X[:, 1]
    return np.column_stack([(x2 >= -3) & (x2 <= -1), (x2 >= -1) & (x2 <= 1), (x2 >= 1) & (x2 <= 3)])


class Scenario:
    """A joint law of (X, Y) with X standard normal.

    Subclasses implement ``sample_y(X, rng)``, ``problem()`` and
    ``optimal_decisions(X, rng)``; ``risk(Z, x, Ydraws)`` scores decisions
    at one query point on its conditional draws.
    """

    id = None
    p = 10
    d = 1

    def sample_x(self, n, rng):
        return rng.standard_normal((n, self.p))

    def simulate(self, n, seed):
        rng = np.random.default_rng(seed)
        X = self.sample_x(n, rng)
        return Dataset(X, self.sample_y(X, rng))

    def conditional_draws(self, x, n, rng):
        return self.sample_y(np.repeat(np.asarray(x, float)[None], n, axis=0), rng)

    def risk(self, Z, x, Ydraws):
        """Mean cost of each decision row in ``Z`` on the draws."""
        return self.problem().costs(np.atleast_2d(Z), Ydraws).mean(axis=1)


class NewsvendorTrunc(Scenario):
    id = "newsvendor-trunc"
    d = 2
    alpha = (5.0, 0.05)
    beta = (100.0, 1.0)
    mu = 3.0

    def __init__(self, p=10):
        self.p = p

    def problem(self):
        return Newsvendor(self.alpha, self.beta)

    def sample_y(self, X, rng):
        sigma = np.exp(X[:, :2])
        Y = np.empty_like(sigma)
        todo = np.ones(sigma.shape, dtype=bool)
        while todo.any():
            draw = self.mu + sigma[todo] * rng.standard_normal(todo.sum())
            rows, cols = np.nonzero(todo)
            ok = draw >= 0
            Y[rows[ok], cols[ok]] = draw[ok]
            todo[rows[ok], cols[ok]] = False
        return Y

    def optimal_decisions(self, X, rng=None):
        """Closed-form conditional quantiles of the truncated normal."""
        sigma = np.exp(X[:, :2])
        tau = np.asarray(self.beta) / (np.asarray(self.alpha) + np.asarray(self.beta))
        lo = norm.cdf(-self.mu / sigma)
        return self.mu + sigma * norm.ppf(lo + tau * (1 - lo))


class _PortfolioScenario(Scenario):
    d = 3
    n_opt = 2000

    def optimal_decisions(self, X, rng):
        """Per-query solve on ``n_opt`` fresh conditional draws."""
        spec = self.problem()
        out = np.empty((X.shape[0], spec.dim))
        for i, x in enumerate(X):
            Yc = self.conditional_draws(x, self.n_opt, rng)
            out[i] = spec.solve(np.full(self.n_opt, 1.0 / self.n_opt), Yc).z
        return out


class CVaRLognormal(_PortfolioScenario):
    id = "cvar-lognormal"
    level = 0.2

    def __init__(self, p=10, level=0.2, n_opt=2000):
        self.p, self.level, self.n_opt = p, level, n_opt

    def problem(self):
        return CVaRPortfolio(self.d, level=self.level)

    def sample_y(self, X, rng):
        sig = 1.0 - 0.5 * _windows(X)
        noise = np.exp(sig * rng.standard_normal(sig.shape))
        x1 = X[:, 0]
        base = np.column_stack([1 + 0.2 * np.exp(x1), 1 - 0.2 * x1, 1 + 0.2 * np.abs(x1)])
        return base - noise

    def risk(self, Z, x, Ydraws):
        return _empirical_cvar(np.atleast_2d(Z)[:, : self.d] @ Ydraws.T, self.level)


def _empirical_cvar(R, level):
    """Row-wise ``min_t (1/a) E[(t - r)+] - t``, i.e. minus the mean of the worst ``a`` tail."""
    R = np.sort(np.atleast_2d(R), axis=1)
    n = R.shape[1]
    k = int(np.ceil(level * n - 1e-9))
    t = R[:, k - 1 : k]
    return (np.maximum(t - R, 0.0).mean(axis=1, keepdims=True) / level - t)[:, 0]


class _GaussianReturns(_PortfolioScenario):
    def means(self, X):
        x1 = X[:, 0]
        return np.column_stack([np.exp(x1), -x1, np.abs(x1)])

    def sds(self, X):
        return 5.0 - 4.0 * _windows(X)

    def sample_y(self, X, rng):
        return self.means(X) + self.sds(X) * rng.standard_normal((X.shape[0], self.d))


class CVaRGaussian(_GaussianReturns):
    id = "cvar-gaussian"

    def __init__(self, p=10, level=0.2, n_opt=2000):
        self.p, self.level, self.n_opt = p, level, n_opt

    def problem(self):
        return CVaRPortfolio(self.d, level=self.level)

    def risk(self, Z, x, Ydraws):
        return _empirical_cvar(np.atleast_2d(Z)[:, : self.d] @ Ydraws.T, self.level)


def _min_variance(cov, mean=None, floor=None, allow_short=False):
    d = cov.shape[0]
    A_ub, b_ub = (None, None) if allow_short else (-np.eye(d), np.zeros(d))
    if floor is not None:
        row, rhs = -mean[None, :], np.array([-floor])
        A_ub = row if A_ub is None else np.vstack([A_ub, row])
        b_ub = rhs if b_ub is None else np.concatenate([b_ub, rhs])
    res = qp_solve(2 * cov, np.zeros(d), np.ones((1, d)), np.ones(1), A_ub, b_ub)
    return res.x


class MinVarGaussian(_GaussianReturns):
    """Variance portfolio on the simplex; risk is the true conditional variance."""

    id = "minvar-gaussian"

    def __init__(self, p=10):
        self.p = p

    def problem(self):
        return VariancePortfolio(self.d)

    def optimal_decisions(self, X, rng=None):
        out = np.empty((X.shape[0], self.d + 1))
        for i, x in enumerate(X):
            mean, sd = self.means(x[None])[0], self.sds(x[None])[0]
            w = _min_variance(np.diag(sd ** 2))
            out[i] = np.append(w, mean @ w)
        return out

    def risk(self, Z, x, Ydraws):
        sd = self.sds(np.asarray(x)[None])[0]
        W = np.atleast_2d(Z)[:, : self.d]
        return (W ** 2 * sd ** 2).sum(axis=1)


class MeanVarReturn(MinVarGaussian):
    """Variance portfolio with short selling and a floor on the conditional mean return.

    The benchmark at ``x`` is the minimum true variance among portfolios whose
    true mean return equals the decision's realized mean return.
    """

    id = "meanvar-return"

    def __init__(self, p=10, return_floor=0.1):
        self.p, self.return_floor = p, return_floor

    def problem(self):
        return VariancePortfolio(self.d, allow_short=True, return_floor=self.return_floor)

    def realized_return(self, Z, x):
        return np.atleast_2d(Z)[:, : self.d] @ self.means(np.asarray(x)[None])[0]

    def matched_risk(self, Z, x):
        """Minimum variance at each decision's realized mean return."""
        x = np.asarray(x)
        mean, sd = self.means(x[None])[0], self.sds(x[None])[0]
        cov = np.diag(sd ** 2)
        out = []
        for r in self.realized_return(Z, x):
            A_eq = np.vstack([np.ones(self.d), mean])
            res = qp_solve(2 * cov, np.zeros(self.d), A_eq, np.array([1.0, r]))
            out.append(res.x @ cov @ res.x)
        return np.array(out)

    def optimal_decisions(self, X, rng=None):
        out = np.empty((X.shape[0], self.d + 1))
        for i, x in enumerate(X):
            mean, sd = self.means(x[None])[0], self.sds(x[None])[0]
            w = _min_variance(np.diag(sd ** 2), mean, self.return_floor, allow_short=True)
            out[i] = np.append(w, mean @ w)
        return out


class ShortestPathGrid(Scenario):
    """Unit flow across a small directed grid; edge times depend on the first covariates."""

    id = "shortest-path-grid"

    def __init__(self, rows=3, cols=3, p=5, level=0.2, n_opt=2000):
        self.rows, self.cols, self.p, self.level, self.n_opt = rows, cols, p, level, n_opt
        node = lambda r, c: r * cols + c
        edges = []
        for r in range(rows):
            for c in range(cols):
                if c + 1 < cols:
                    edges.append((node(r, c), node(r, c + 1)))
                if r + 1 < rows:
                    edges.append((node(r, c), node(r + 1, c)))
        self.edges = edges
        self.d = len(edges)
        coef = np.random.default_rng(12345).standard_normal((self.d, min(p, 3)))
        self.coef = 0.5 * coef

    def problem(self):
        return CVaRShortestPath(self.rows * self.cols, self.edges, 0, self.rows * self.cols - 1, self.level)

    def sample_y(self, X, rng):
        scale = np.exp(X[:, : self.coef.shape[1]] @ self.coef.T)
        return scale * rng.exponential(1.0, size=(X.shape[0], self.d))

    optimal_decisions = _PortfolioScenario.optimal_decisions

    def risk(self, Z, x, Ydraws):
        return _empirical_cvar(-(np.atleast_2d(Z)[:, : self.d] @ Ydraws.T), self.level)


SCENARIOS = {
    "newsvendor-trunc": NewsvendorTrunc,
    "cvar-lognormal": CVaRLognormal,
    "cvar-gaussian": CVaRGaussian,
    "minvar-gaussian": MinVarGaussian,
    "meanvar-return": MeanVarReturn,
    "shortest-path-grid": ShortestPathGrid,
}


def get_scenario(name, **kwargs):
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    return SCENARIOS[name](**kwargs)


def simulate(scenario, n, seed):
    if isinstance(scenario, str):
        scenario = get_scenario(scenario)
    if n < 1:
        raise ConfigError("n must be at least 1")
    return scenario.simulate(n, seed)
