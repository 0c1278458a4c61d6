"""Contextual stochastic optimization problem classes.

Each class bundles a cost, a weighted sample-average solver, per-sample
gradient contributions and a Hessian estimator. Decision vectors include
auxiliary variables (the last coordinate of the portfolio problems).
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import linalg_opt as la
from .exceptions import ConfigError, DimensionMismatchError, SingularAfterRidgeError

ACTIVE_TOL = 1e-8


def is_active(residual, rhs):
    return np.abs(residual) <= ACTIVE_TOL * (1.0 + np.abs(rhs))


# --------------------------------------------------------------------------
# constraints


@dataclass(frozen=True)
class ConstraintSet:
    A_eq: np.ndarray
    b_eq: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    stochastic: tuple = ()

    @classmethod
    def empty(cls, dim, stochastic=()):
        return cls(np.zeros((0, dim)), np.zeros(0), np.zeros((0, dim)), np.zeros(0), tuple(stochastic))

    @property
    def n_constraints(self):
        return self.A_eq.shape[0] + self.A_ub.shape[0] + len(self.stochastic)

    def feasible(self, z, tol=1e-8):
        ok = np.all(np.abs(self.A_eq @ z - self.b_eq) <= tol * (1 + np.abs(self.b_eq)))
        return bool(ok and np.all(self.A_ub @ z - self.b_ub <= tol * (1 + np.abs(self.b_ub))))


class MeanReturnFloor:
    """``G(z; y) = R - y'z[:d] <= 0``: the portfolio return must reach ``R`` on average."""

    kind = "mean-return-floor"
    sense = "le"

    def __init__(self, R, d, dim):
        self.R, self.d, self.dim = float(R), d, dim

    def values(self, z, Y):
        return self.R - Y @ z[: self.d]

    def gradients(self, z, Y):
        G = np.zeros((Y.shape[0], self.dim))
        G[:, : self.d] = -Y
        return G

    def hessian(self, z, Y):
        return np.zeros((self.dim, self.dim))

    def to_dict(self):
        return {"kind": self.kind, "R": self.R}


class ServiceLevel:
    """``G(z; y) = sum_l max(y_l - z_l, 0) - C <= 0``: bounded expected total shortfall."""

    kind = "service-level"
    sense = "le"

    def __init__(self, C, d, dim):
        self.C, self.d, self.dim = float(C), d, dim

    def values(self, z, Y):
        return np.maximum(Y - z[: self.d], 0.0).sum(axis=1) - self.C

    def gradients(self, z, Y):
        G = np.zeros((Y.shape[0], self.dim))
        G[:, : self.d] = -(Y > z[: self.d]).astype(float)
        return G

    def hessian(self, z, Y):
        H = np.zeros((self.dim, self.dim))
        for l in range(self.d):
            H[l, l] = la.kde_at(Y[:, l], z[l], la.bandwidth(Y[:, l]))
        return H

    def to_dict(self):
        return {"kind": self.kind, "C": self.C}


# --------------------------------------------------------------------------
# solve results and node artifacts


@dataclass
class SolveResult:
    z: np.ndarray
    value: float
    status: str
    eq_duals: np.ndarray = None
    ineq_duals: np.ndarray = None
    stoch_duals: np.ndarray = None
    relaxed: bool = False
    # per-row subgradient selection at kinks, read off the LP duals (NaN off the support)
    tail: np.ndarray = None

    @property
    def ok(self):
        return self.status == "optimal"


@dataclass
class NodeSolution:
    z0: np.ndarray
    value: float
    n0: int
    grad_f0: np.ndarray
    hessian: np.ndarray
    H_L: np.ndarray
    nu_eq: np.ndarray
    nu_ineq: np.ndarray
    lam: np.ndarray
    active_ineq: np.ndarray
    active_stoch: np.ndarray
    A_active: np.ndarray
    b_active: np.ndarray
    n_stoch_rows: int
    stoch_rows: np.ndarray
    kkt_factor: la.LUFactorization
    hess_factor: la.LUFactorization
    stoch_g0: np.ndarray
    stoch_grad0: np.ndarray
    stationarity_residual: float
    context: dict = field(default_factory=dict)

    @property
    def regularized(self):
        return self.kkt_factor.regularized

    @property
    def dim(self):
        return self.z0.size


@dataclass
class DegenerateNode:
    reason: str
    value: float = np.nan


# --------------------------------------------------------------------------
# problem classes


class Problem:
    """Common interface. Subclasses set ``variant``, ``dim``, ``d`` and ``constraints``."""

    variant = None

    def costs(self, Z, Y):
        """Cost matrix ``c(Z[k]; Y[i])`` of shape (k, n)."""
        raise NotImplementedError

    def cost(self, z, y):
        z = np.asarray(z, dtype=float)
        y = np.asarray(y, dtype=float)
        if z.shape != (self.dim,) or y.shape != (self.d,):
            raise DimensionMismatchError(f"expected z of size {self.dim} and y of size {self.d}")
        return float(self.costs(z[None], y[None])[0, 0])

    def objective(self, z, weights, Y):
        return float(self.costs(np.asarray(z, float)[None], Y)[0] @ weights)

    def solve(self, weights, Y, stochastic=True):
        raise NotImplementedError

    def node_context(self, z0, Y, solution=None):
        return {}

    def grad_contributions(self, z0, Y, ctx):
        raise NotImplementedError

    def hessian(self, z0, Y, ctx):
        raise NotImplementedError

    @property
    def has_constraints(self):
        return self.constraints.n_constraints > 0

    def stochastic_rows(self, weights, Y):
        """Weighted stochastic constraints as affine rows ``a z <= b`` (only affine kinds)."""
        rows, rhs = [], []
        for g in self.constraints.stochastic:
            if not isinstance(g, MeanReturnFloor):
                raise ConfigError(f"{g.kind} has no affine representation")
            a = np.zeros(self.dim)
            a[: g.d] = -(weights @ Y)
            rows.append(a)
            rhs.append(-g.R)
        return np.array(rows).reshape(-1, self.dim), np.array(rhs)

    def to_dict(self):
        raise NotImplementedError


def _support(weights):
    weights = np.asarray(weights, dtype=float)
    idx = np.flatnonzero(weights > 0)
    return idx, weights[idx]


def _tail_fractions(n, idx, w, duals):
    """Dual-implied fraction of each sample on the tail side of its kink."""
    shape = (n,) + duals.shape[1:]
    out = np.full(shape, np.nan)
    scale = w.reshape((-1,) + (1,) * (duals.ndim - 1))
    out[idx] = np.clip(duals / scale, 0.0, 1.0)
    return out


def _kink_weights(indicator, ctx):
    """Indicator of the kink side, replaced by the LP's selection where one exists."""
    tail = ctx.get("tail")
    if tail is None or tail.shape != indicator.shape:
        return indicator
    return np.where(np.isnan(tail), indicator, tail)


class SquaredError(Problem):
    variant = "squared-error"

    def __init__(self, d):
        self.d = self.dim = int(d)
        self.constraints = ConstraintSet.empty(self.dim)

    def costs(self, Z, Y):
        diff = Z[:, None, :] - Y[None, :, :]
        return 0.5 * (diff ** 2).sum(axis=2)

    def solve(self, weights, Y, stochastic=True):
        z = weights @ Y / weights.sum()
        return SolveResult(z, self.objective(z, weights, Y), "optimal", np.zeros(0), np.zeros(0), np.zeros(0))

    def grad_contributions(self, z0, Y, ctx):
        return z0[None, :] - Y

    def hessian(self, z0, Y, ctx):
        return np.eye(self.dim)

    def to_dict(self):
        return {"variant": self.variant, "d": self.d}


class Newsvendor(Problem):
    """Multi-item newsvendor with holding costs ``alpha`` and backorder costs ``beta``.

    ``capacity`` adds ``sum(z) <= C``; ``service_level`` adds the stochastic
    shortfall bound. Either one also adds ``z >= 0``.
    """

    variant = "newsvendor"

    def __init__(self, alpha, beta, capacity=None, service_level=None):
        self.alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        self.beta = np.atleast_1d(np.asarray(beta, dtype=float))
        if self.alpha.shape != self.beta.shape or np.any(self.alpha <= 0) or np.any(self.beta <= 0):
            raise ConfigError("alpha and beta must be positive vectors of equal length")
        if capacity is not None and capacity <= 0:
            raise ConfigError("capacity must be positive")
        self.d = self.dim = self.alpha.size
        self.capacity = capacity
        self.service_level = service_level
        stoch = () if service_level is None else (ServiceLevel(service_level, self.d, self.dim),)
        if capacity is None and service_level is None:
            self.constraints = ConstraintSet.empty(self.dim)
        else:
            A = -np.eye(self.d)
            b = np.zeros(self.d)
            if capacity is not None:
                A = np.vstack([np.ones((1, self.d)), A])
                b = np.concatenate([[capacity], b])
            self.constraints = ConstraintSet(np.zeros((0, self.dim)), np.zeros(0), A, b, stoch)

    @property
    def critical_ratio(self):
        return self.beta / (self.alpha + self.beta)

    def costs(self, Z, Y):
        diff = Z[:, None, :] - Y[None, :, :]
        return np.maximum(self.alpha * diff, -self.beta * diff).sum(axis=2)

    def solve(self, weights, Y, stochastic=True):
        weights = np.asarray(weights, dtype=float)
        if self.capacity is None and (self.service_level is None or not stochastic):
            z = la.weighted_quantiles(Y, weights, self.critical_ratio)
            if self.service_level is None:
                return SolveResult(z, self.objective(z, weights, Y), "optimal",
                                   np.zeros(0), np.zeros(self.constraints.A_ub.shape[0]), np.zeros(0))
            z = np.maximum(z, 0.0)
            return SolveResult(z, self.objective(z, weights, Y), "optimal", np.zeros(0),
                               np.zeros(self.d), np.zeros(1), relaxed=True)
        return self._solve_lp(weights, Y, stochastic and self.service_level is not None)

    def _solve_lp(self, weights, Y, with_service):
        idx, w = _support(weights)
        Ys = Y[idx]
        m, d = idx.size, self.d
        nu = m * d
        n_var = d + nu + (nu if with_service else 0)
        # u_il >= alpha_l (z_l - y_il), u_il >= beta_l (y_il - z_l)
        z_sel = sp.kron(sp.csr_matrix(np.ones((m, 1))), sp.eye(d))
        eye_u = sp.eye(nu)
        a_rep = np.tile(self.alpha, m)
        b_rep = np.tile(self.beta, m)
        blocks = [
            sp.hstack([sp.diags(a_rep) @ z_sel, -eye_u] + ([sp.csr_matrix((nu, nu))] if with_service else [])),
            sp.hstack([-sp.diags(b_rep) @ z_sel, -eye_u] + ([sp.csr_matrix((nu, nu))] if with_service else [])),
        ]
        yv = Ys.ravel()
        rhs = [a_rep * yv, -b_rep * yv]
        det = self.constraints
        det_rows = sp.hstack([sp.csr_matrix(det.A_ub), sp.csr_matrix((det.A_ub.shape[0], n_var - d))])
        lower = np.full(n_var, -np.inf)
        if with_service:
            # s_il >= y_il - z_l, s >= 0, sum_i w_i sum_l s_il <= C'
            blocks.append(sp.hstack([-z_sel, sp.csr_matrix((nu, nu)), -eye_u]))
            rhs.append(-yv)
            svc = np.concatenate([np.zeros(d + nu), np.repeat(w, d)])
            blocks.append(sp.csr_matrix(svc[None, :]))
            rhs.append(np.array([self.service_level]))
            lower[d + nu:] = 0.0
        A_ub = sp.vstack([det_rows] + blocks).tocsc()
        b_ub = np.concatenate([det.b_ub] + rhs)
        c = np.concatenate([np.zeros(d), np.repeat(w, d), np.zeros(n_var - d - nu)])
        res = la.lp_solve(c, A_ub=A_ub, b_ub=b_ub, lower_bounds=lower)
        k = det.A_ub.shape[0]
        if res.status != "optimal":
            relaxed = self._solve_lp(weights, Y, False) if with_service else None
            if relaxed is not None and relaxed.ok:
                relaxed.status, relaxed.relaxed = res.status, True
                return relaxed
            return SolveResult(np.full(d, np.nan), np.nan, res.status)
        z = res.x[:d]
        stoch = res.ineq_duals[-1:] if with_service else np.zeros(len(det.stochastic))
        over = res.ineq_duals[k:k + nu].reshape(m, d)
        return SolveResult(z, self.objective(z, weights, Y), "optimal", np.zeros(0), res.ineq_duals[:k], stoch,
                           tail=_tail_fractions(Y.shape[0], idx, w, over))

    def node_context(self, z0, Y, solution=None):
        if solution is None or solution.tail is None or solution.tail.shape != Y.shape:
            return {}
        return {"tail": solution.tail}

    def grad_contributions(self, z0, Y, ctx):
        below = _kink_weights((Y <= z0).astype(float), ctx)
        return (self.alpha + self.beta) * below - self.beta

    def hessian(self, z0, Y, ctx):
        dens = [la.kde_at(Y[:, l], z0[l], la.bandwidth(Y[:, l])) for l in range(self.d)]
        return np.diag((self.alpha + self.beta) * np.array(dens))

    def to_dict(self):
        return {"variant": self.variant, "alpha": self.alpha.tolist(), "beta": self.beta.tolist(),
                "capacity": self.capacity, "service_level": self.service_level}


def _simplex_constraints(d, allow_short, stochastic=()):
    dim = d + 1
    A_eq = np.zeros((1, dim))
    A_eq[0, :d] = 1.0
    if allow_short:
        A_ub, b_ub = np.zeros((0, dim)), np.zeros(0)
    else:
        A_ub = np.hstack([-np.eye(d), np.zeros((d, 1))])
        b_ub = np.zeros(d)
    return ConstraintSet(A_eq, np.ones(1), A_ub, b_ub, tuple(stochastic))


class VariancePortfolio(Problem):
    """Minimum-variance portfolio: ``c(z; y) = (y'z[:d] - z[d])**2`` on the budget simplex."""

    variant = "variance-portfolio"

    def __init__(self, d, allow_short=False, return_floor=None):
        self.d = int(d)
        self.dim = self.d + 1
        self.allow_short = bool(allow_short)
        self.return_floor = return_floor
        stoch = () if return_floor is None else (MeanReturnFloor(return_floor, self.d, self.dim),)
        self.constraints = _simplex_constraints(self.d, self.allow_short, stoch)

    def costs(self, Z, Y):
        r = Z[:, : self.d] @ Y.T
        return (r - Z[:, self.d:]) ** 2

    def solve(self, weights, Y, stochastic=True):
        weights = np.asarray(weights, dtype=float)
        m = weights @ Y
        S = (Y * weights[:, None]).T @ Y
        Q = 2.0 * np.block([[S, -m[:, None]], [-m[None, :], np.ones((1, 1))]])
        cs = self.constraints
        A_ub, b_ub = cs.A_ub, cs.b_ub
        use_stoch = stochastic and bool(cs.stochastic)
        if use_stoch:
            rows, rhs = self.stochastic_rows(weights, Y)
            A_ub, b_ub = np.vstack([A_ub, rows]), np.concatenate([b_ub, rhs])
        res = la.qp_solve(Q, np.zeros(self.dim), cs.A_eq, cs.b_eq, A_ub, b_ub)
        k = cs.A_ub.shape[0]
        if res.status != "optimal":
            if use_stoch:
                relaxed = self.solve(weights, Y, stochastic=False)
                relaxed.status, relaxed.relaxed = res.status, True
                relaxed.stoch_duals = np.zeros(len(cs.stochastic))
                return relaxed
            return SolveResult(np.full(self.dim, np.nan), np.nan, res.status)
        z = res.x
        stoch = res.ineq_duals[k:] if use_stoch else np.zeros(len(cs.stochastic))
        return SolveResult(z, self.objective(z, weights, Y), "optimal", res.eq_duals, res.ineq_duals[:k], stoch)

    def node_context(self, z0, Y, solution=None):
        return {"mean": Y.mean(axis=0)}

    def grad_contributions(self, z0, Y, ctx):
        x, t = z0[: self.d], z0[self.d]
        r = Y @ x
        G = np.empty((Y.shape[0], self.dim))
        G[:, : self.d] = 2.0 * Y * (r - t)[:, None]
        G[:, self.d] = 2.0 * (ctx["mean"] @ x - r)
        return G

    def hessian(self, z0, Y, ctx):
        m = Y.mean(axis=0)
        S = Y.T @ Y / Y.shape[0]
        return 2.0 * np.block([[S, -m[:, None]], [-m[None, :], np.ones((1, 1))]])

    def to_dict(self):
        return {"variant": self.variant, "d": self.d, "allow_short": self.allow_short,
                "return_floor": self.return_floor}


class _CVaRBase(Problem):
    """Rockafellar-Uryasev CVaR with merged auxiliary variable.

    Internally works with "returns" ``r = sign * y'z[:d]``; the cost is
    ``(1/a) max(t - r, 0) - t - rho * r`` with ``t = z[d]``.
    """

    sign = 1.0
    rho = 0.0

    def _returns(self, Y):
        return self.sign * Y

    def costs(self, Z, Y):
        r = Z[:, : self.d] @ self._returns(Y).T
        t = Z[:, self.d:]
        return np.maximum(t - r, 0.0) / self.level - t - self.rho * r

    def solve(self, weights, Y, stochastic=True):
        weights = np.asarray(weights, dtype=float)
        idx, w = _support(weights)
        R = self._returns(Y[idx])
        m, d = idx.size, self.d
        cs = self.constraints
        # variables: x (d), t, u (m);  u_i >= t - r_i'x
        c = np.concatenate([-self.rho * (w @ R), [-1.0], w / self.level])
        tail = sp.hstack([sp.csr_matrix(-R), sp.csr_matrix(np.ones((m, 1))), -sp.eye(m)])
        pad = lambda A: sp.hstack([sp.csr_matrix(A), sp.csr_matrix((A.shape[0], m))])
        A_ub_det = cs.A_ub
        b_ub_det = cs.b_ub
        use_stoch = stochastic and bool(cs.stochastic)
        if use_stoch:
            rows, rhs = self.stochastic_rows(weights, Y)
            A_ub_det, b_ub_det = np.vstack([A_ub_det, rows]), np.concatenate([b_ub_det, rhs])
        A_ub = sp.vstack([pad(A_ub_det), tail]).tocsc()
        b_ub = np.concatenate([b_ub_det, np.zeros(m)])
        lower = np.concatenate([np.full(d + 1, -np.inf), np.zeros(m)])
        res = la.lp_solve(c, pad(cs.A_eq).tocsc(), cs.b_eq, A_ub, b_ub, lower_bounds=lower)
        k = cs.A_ub.shape[0]
        if res.status != "optimal":
            if use_stoch:
                relaxed = self.solve(weights, Y, stochastic=False)
                relaxed.status, relaxed.relaxed = res.status, True
                return relaxed
            return SolveResult(np.full(self.dim, np.nan), np.nan, res.status)
        z = res.x[: d + 1]
        stoch = res.ineq_duals[k:A_ub_det.shape[0]] if use_stoch else np.zeros(len(cs.stochastic))
        pi = res.ineq_duals[A_ub_det.shape[0]:] * self.level
        return SolveResult(z, self.objective(z, weights, Y), "optimal", res.eq_duals, res.ineq_duals[:k], stoch,
                           tail=_tail_fractions(Y.shape[0], idx, w, pi))

    def node_context(self, z0, Y, solution=None):
        r = self._returns(Y) @ z0[: self.d]
        q = la.weighted_quantile(r, np.full(r.size, 1.0 / r.size), self.level)
        ctx = {"returns": r, "quantile": q}
        if solution is not None and solution.tail is not None and solution.tail.shape == r.shape:
            ctx["tail"] = solution.tail
        return ctx

    def grad_contributions(self, z0, Y, ctx):
        R = self._returns(Y)
        tail = _kink_weights((ctx["returns"] <= ctx["quantile"]).astype(float), ctx)
        G = np.empty((Y.shape[0], self.dim))
        G[:, : self.d] = -(tail[:, None] * R) / self.level - self.rho * R
        G[:, self.d] = (tail - self.level) / self.level
        return G

    def hessian(self, z0, Y, ctx):
        R = self._returns(Y)
        x = z0[: self.d]
        n = R.shape[0]
        m0 = R.mean(axis=0)
        S0 = np.cov(R, rowvar=False, ddof=1).reshape(self.d, self.d) if n > 1 else np.zeros((self.d, self.d))
        q = ctx["quantile"]
        Sx = S0 @ x
        s = x @ Sx
        if s > 1e-14 * max(np.abs(S0).max(), 1e-300):
            mc = m0 + Sx * (q - m0 @ x) / s
            Vc = S0 - np.outer(Sx, Sx) / s
        else:
            mc, Vc = m0, S0
        EYY = Vc + np.outer(mc, mc)
        r = ctx["returns"]
        mu = la.kde_at(r, q, la.bandwidth(r))
        return (mu / self.level) * np.block([[EYY, -mc[:, None]], [-mc[None, :], np.ones((1, 1))]])


class CVaRPortfolio(_CVaRBase):
    """CVaR at level ``alpha`` of portfolio returns, minus ``rho`` times the mean return."""

    variant = "cvar-portfolio"

    def __init__(self, d, level=0.2, mean_weight=0.0, allow_short=False, return_floor=None):
        if not 0 < level < 1:
            raise ConfigError("CVaR level must lie in (0, 1)")
        if mean_weight < 0:
            raise ConfigError("mean_weight must be nonnegative")
        self.d = int(d)
        self.dim = self.d + 1
        self.level = float(level)
        self.rho = float(mean_weight)
        self.allow_short = bool(allow_short)
        self.return_floor = return_floor
        stoch = () if return_floor is None else (MeanReturnFloor(return_floor, self.d, self.dim),)
        self.constraints = _simplex_constraints(self.d, self.allow_short, stoch)

    def to_dict(self):
        return {"variant": self.variant, "d": self.d, "level": self.level, "mean_weight": self.rho,
                "allow_short": self.allow_short, "return_floor": self.return_floor}


class CVaRShortestPath(_CVaRBase):
    """Unit flow from ``source`` to ``sink`` minimizing the CVaR of total travel time.

    ``y`` holds per-edge travel times; ``level`` is the upper-tail fraction.
    The auxiliary coordinate carries the negated value-at-risk.
    """

    variant = "cvar-shortest-path"
    sign = -1.0

    def __init__(self, node_count, edges, source, sink, level=0.2):
        if not 0 < level < 1:
            raise ConfigError("CVaR level must lie in (0, 1)")
        self.node_count = int(node_count)
        self.edges = [tuple(map(int, e)) for e in edges]
        self.source, self.sink = int(source), int(sink)
        self.level = float(level)
        self.d = len(self.edges)
        self.dim = self.d + 1
        if not self._connected():
            raise ConfigError("no path from source to sink")
        inc = np.zeros((self.node_count, self.dim))
        for k, (a, b) in enumerate(self.edges):
            inc[a, k] += 1.0
            inc[b, k] -= 1.0
        rhs = np.zeros(self.node_count)
        rhs[self.source], rhs[self.sink] = 1.0, -1.0
        keep = [v for v in range(self.node_count) if v != self.sink]
        A_ub = np.hstack([-np.eye(self.d), np.zeros((self.d, 1))])
        self.constraints = ConstraintSet(inc[keep], rhs[keep], A_ub, np.zeros(self.d))

    def _connected(self):
        seen, stack = {self.source}, [self.source]
        while stack:
            v = stack.pop()
            for a, b in self.edges:
                if a == v and b not in seen:
                    seen.add(b)
                    stack.append(b)
        return self.sink in seen

    def to_dict(self):
        return {"variant": self.variant, "node_count": self.node_count, "edges": [list(e) for e in self.edges],
                "source": self.source, "sink": self.sink, "level": self.level}


VARIANTS = {
    "squared-error": SquaredError,
    "newsvendor": Newsvendor,
    "variance-portfolio": VariancePortfolio,
    "cvar-portfolio": CVaRPortfolio,
    "cvar-shortest-path": CVaRShortestPath,
}


def problem_from_dict(data):
    data = dict(data)
    variant = data.pop("variant", None)
    if variant not in VARIANTS:
        raise ConfigError(f"unknown problem variant {variant!r}")
    try:
        return VARIANTS[variant](**data)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {variant}: {exc}") from exc


# --------------------------------------------------------------------------
# functional interface


def cost(spec, z, y):
    return spec.cost(z, y)


def solve_weighted(spec, weights, ds, stochastic=True):
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (ds.n,):
        raise DimensionMismatchError("one weight per dataset row is required")
    return spec.solve(weights, np.asarray(ds.outcomes), stochastic=stochastic)


def grad_contributions(spec, z0, ds, indices, node_ctx=None):
    Y = ds.outcomes[indices]
    ctx = spec.node_context(z0, Y) if node_ctx is None else node_ctx
    return spec.grad_contributions(z0, Y, ctx)


def hessian_estimate(spec, z0, ds, indices, bandwidth_rule="silverman-floor"):
    Y = ds.outcomes[indices]
    return spec.hessian(z0, Y, spec.node_context(z0, Y))


def stoch_contributions(spec, z0, ds, indices):
    """Per-sample values (n, m) and gradients (n, m, dim) of the stochastic constraints."""
    Y = ds.outcomes[indices]
    return _stoch_parts(spec, z0, Y)


def _stoch_parts(spec, z0, Y):
    cons = spec.constraints.stochastic
    vals = np.column_stack([g.values(z0, Y) for g in cons]) if cons else np.zeros((Y.shape[0], 0))
    grads = np.stack([g.gradients(z0, Y) for g in cons], axis=1) if cons else np.zeros((Y.shape[0], 0, spec.dim))
    return vals, grads


def node_solve(spec, ds, indices, config=None):
    """Solve the region problem and assemble the presolved perturbation system."""
    return node_solve_outcomes(spec, ds.outcomes[np.asarray(indices)], ridge=1e-3 if config is None else config.ridge)


def node_solve_outcomes(spec, Y, ridge=1e-3):
    n0 = Y.shape[0]
    if n0 < 1:
        return DegenerateNode("empty region")
    res = spec.solve(np.full(n0, 1.0 / n0), Y)
    if not res.ok or res.relaxed:
        return DegenerateNode(f"region solve {res.status}")
    z0 = res.z
    ctx = spec.node_context(z0, Y, res)
    G = spec.grad_contributions(z0, Y, ctx)
    grad_f0 = G.mean(axis=0)
    H = spec.hessian(z0, Y, ctx)

    cs = spec.constraints
    act_ineq = np.flatnonzero(is_active(cs.A_ub @ z0 - cs.b_ub, cs.b_ub))
    svals, sgrads = _stoch_parts(spec, z0, Y)
    g0, dg0 = svals.mean(axis=0), sgrads.mean(axis=0)
    stoch_eq = [k for k, g in enumerate(cs.stochastic) if g.sense == "eq"]
    stoch_act = [k for k, g in enumerate(cs.stochastic)
                 if g.sense == "eq" or is_active(g0[k], getattr(g, "R", getattr(g, "C", 0.0)))]
    stoch_le_act = [k for k in stoch_act if k not in stoch_eq]

    eq_cols = np.vstack([cs.A_eq, dg0[stoch_eq]]).T
    ineq_cols = np.vstack([cs.A_ub[act_ineq], dg0[stoch_le_act]]).T
    nu_e, nu_i, resid = la.nnls_multipliers(grad_f0, eq_cols, ineq_cols)
    lam = np.zeros(len(cs.stochastic))
    lam[stoch_eq] = nu_e[cs.A_eq.shape[0]:]
    lam[stoch_le_act] = nu_i[act_ineq.size:]

    H_L = H.copy()
    for k, g in enumerate(cs.stochastic):
        if lam[k] != 0:
            H_L = H_L + lam[k] * g.hessian(z0, Y)

    rows = np.vstack([dg0[stoch_act], cs.A_eq, cs.A_ub[act_ineq]])
    rhs = np.concatenate([np.zeros(len(stoch_act)), cs.b_eq, cs.b_ub[act_ineq]])
    keep = la.independent_rows(rows) if rows.shape[0] else []
    n_stoch_rows = sum(1 for i in keep if i < len(stoch_act))
    A_act = rows[keep]
    k = A_act.shape[0]
    kkt = np.block([[H_L, A_act.T], [A_act, np.zeros((k, k))]])
    try:
        kkt_factor = la.lu_factor(kkt, ridge)
        hess_factor = la.lu_factor(H, ridge) if k else kkt_factor
    except SingularAfterRidgeError:
        return DegenerateNode("singular perturbation system", res.value)
    return NodeSolution(
        z0=z0, value=res.value, n0=n0, grad_f0=grad_f0, hessian=H, H_L=H_L,
        nu_eq=nu_e[: cs.A_eq.shape[0]], nu_ineq=nu_i[: act_ineq.size], lam=lam,
        active_ineq=act_ineq, active_stoch=np.array(stoch_act, dtype=int),
        A_active=A_act, b_active=rhs[keep], n_stoch_rows=n_stoch_rows,
        stoch_rows=np.array([stoch_act[i] for i in keep if i < len(stoch_act)], dtype=int),
        kkt_factor=kkt_factor, hess_factor=hess_factor, stoch_g0=g0, stoch_grad0=dg0,
        stationarity_residual=resid, context=ctx,
    )
