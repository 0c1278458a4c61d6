"""Dense numeric kernels: LU presolve with ridge fallback, multiplier recovery,
weighted quantiles, box-kernel densities and small LP/QP solvers."""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import linprog, lsq_linear

from .exceptions import (
    AllZeroWeightsError,
    DimensionMismatchError,
    NonPositiveBandwidthError,
    NotPSDError,
    SingularAfterRidgeError,
)

PIVOT_TOL = 1e-12


@dataclass(frozen=True)
class LUFactorization:
    lu: np.ndarray
    piv: np.ndarray
    dim: int
    regularized: bool = False
    ridge: float = 0.0


def _singular(lu, scale):
    diag = np.abs(np.diag(lu))
    if not np.all(np.isfinite(diag)):
        return True
    return diag.size > 0 and diag.min() <= PIVOT_TOL * scale


def lu_factor(A, ridge=1e-3):
    """Factor a square matrix, retrying on ``A + ridge * I`` when a pivot is tiny.

    Raises SingularAfterRidgeError when the regularized matrix is still singular.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatchError(f"expected a square matrix, got shape {A.shape}")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    dim = A.shape[0]
    if dim == 0:
        return LUFactorization(np.zeros((0, 0)), np.zeros(0, dtype=np.int32), 0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
        if not _singular(lu, np.abs(A).sum(axis=1).max()):
            return LUFactorization(lu, piv, dim)
        if ridge == 0:
            raise SingularAfterRidgeError("matrix is singular and no ridge was allowed")
        B = A + ridge * np.eye(dim)
        lu, piv = scipy.linalg.lu_factor(B, check_finite=False)
        if _singular(lu, np.abs(B).sum(axis=1).max()):
            raise SingularAfterRidgeError("matrix is singular even after ridge regularization")
    return LUFactorization(lu, piv, dim, regularized=True, ridge=ridge)


def solve_with(f, b):
    """Solve with a presolved factorization. ``b`` may hold several right-hand sides as columns."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != f.dim:
        raise DimensionMismatchError(f"rhs has {b.shape[0]} rows, factorization has {f.dim}")
    if f.dim == 0:
        return b.copy()
    return scipy.linalg.lu_solve((f.lu, f.piv), b, check_finite=False)


def nnls_multipliers(grad_f, eq_grads=None, act_ineq_grads=None):
    """Least-squares multipliers for ``grad_f + G @ nu = 0`` with ``nu >= 0`` on inequalities.

    Constraint gradients are the columns of ``eq_grads`` and ``act_ineq_grads``.
    Returns ``(nu_eq, nu_ineq, residual_norm)``.
    """
    grad_f = np.asarray(grad_f, dtype=float)
    d = grad_f.size
    E = np.zeros((d, 0)) if eq_grads is None else np.asarray(eq_grads, dtype=float).reshape(d, -1)
    A = np.zeros((d, 0)) if act_ineq_grads is None else np.asarray(act_ineq_grads, dtype=float).reshape(d, -1)
    s, m = E.shape[1], A.shape[1]
    if s + m == 0:
        return np.zeros(0), np.zeros(0), float(np.linalg.norm(grad_f))
    G = np.hstack([E, A])
    if m == 0:
        nu = np.linalg.lstsq(G, -grad_f, rcond=None)[0]
    else:
        lower = np.concatenate([np.full(s, -np.inf), np.zeros(m)])
        res = lsq_linear(G, -grad_f, bounds=(lower, np.full(s + m, np.inf)), method="bvls", tol=1e-14)
        nu = res.x
        nu[s:] = np.maximum(nu[s:], 0.0)
    residual = float(np.linalg.norm(grad_f + G @ nu))
    return nu[:s], nu[s:], residual


def weighted_quantile(values, weights, level):
    """Type-1 weighted quantile: smallest value whose cumulative weight reaches ``level``."""
    values = np.asarray(values, dtype=float).ravel()
    weights = np.asarray(weights, dtype=float).ravel()
    if values.size != weights.size:
        raise DimensionMismatchError("values and weights differ in length")
    total = weights.sum()
    if values.size == 0 or not total > 0:
        raise AllZeroWeightsError("weighted quantile needs at least one positive weight")
    order = np.argsort(values, kind="stable")
    cw = np.cumsum(weights[order]) / total
    k = min(int(np.searchsorted(cw, level - 1e-12, side="left")), values.size - 1)
    return float(values[order[k]])


def weighted_quantiles(Y, weights, levels):
    """Columnwise ``weighted_quantile`` of an n x d matrix at per-column levels."""
    Y = np.asarray(Y, dtype=float)
    return np.array([weighted_quantile(Y[:, l], weights, lv) for l, lv in enumerate(levels)])


def kde_at(values, point, bandwidth):
    """Box-kernel density estimate at ``point``."""
    if not bandwidth > 0:
        raise NonPositiveBandwidthError(f"bandwidth must be positive, got {bandwidth}")
    values = np.asarray(values, dtype=float).ravel()
    inside = np.abs((values - point) / bandwidth) <= 0.5
    return float(inside.sum() / (values.size * bandwidth))


def bandwidth(values):
    """Silverman's rule floored at log(n)/n; a unit window when both vanish (n = 1)."""
    values = np.asarray(values, dtype=float).ravel()
    n = values.size
    sd = values.std(ddof=1) if n > 1 else 0.0
    b = max(1.06 * sd * n ** (-0.2), np.log(n) / n)
    return b if b > 0 else 1.0


BANDWIDTH_RULES = {"silverman-floor": bandwidth}


def independent_rows(M, tol=1e-10):
    """Indices of a maximal set of linearly independent rows, scanned greedily in order."""
    M = np.asarray(M, dtype=float)
    keep = []
    basis = np.zeros((0, M.shape[1]))
    for i, row in enumerate(M):
        norm = np.linalg.norm(row)
        if norm == 0:
            continue
        resid = row - basis.T @ (basis @ row) if basis.size else row
        if np.linalg.norm(resid) > tol * norm:
            keep.append(i)
            basis = np.vstack([basis, resid / np.linalg.norm(resid)])
    return keep


def project_affine(z, A, b):
    """Euclidean projection of ``z`` onto ``{x : A x = b}``."""
    A = np.asarray(A, dtype=float)
    if A.shape[0] == 0:
        return np.array(z, dtype=float)
    r = A @ z - b
    return z - np.linalg.lstsq(A, r, rcond=None)[0]


@dataclass
class LPResult:
    x: np.ndarray
    fun: float
    eq_duals: np.ndarray
    ineq_duals: np.ndarray
    status: str
    bound_duals: np.ndarray = field(default=None, repr=False)


QPResult = LPResult

_LP_STATUS = {0: "optimal", 2: "infeasible", 3: "unbounded"}


def _as_rows(A, b, n):
    if A is None:
        return np.zeros((0, n)), np.zeros(0)
    if hasattr(A, "tocsr"):
        return A, np.asarray(b, dtype=float).ravel()
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return A.reshape(-1, n), np.asarray(b, dtype=float).ravel()


def lp_solve(c, A_eq=None, b_eq=None, A_ub=None, b_ub=None, lower_bounds=None, upper_bounds=None):
    """Minimize ``c @ x`` subject to ``A_eq x = b_eq``, ``A_ub x <= b_ub`` and bounds.

    Variables are free unless bounds are given. Constraint matrices may be
    scipy sparse. Duals follow the Lagrangian ``c'x + nu'(A_eq x - b) + lam'(A_ub x - b)``
    so ``ineq_duals >= 0``. Infeasible and unbounded problems come back as a status.
    """
    c = np.asarray(c, dtype=float).ravel()
    n = c.size
    A_eq, b_eq = _as_rows(A_eq, b_eq, n)
    A_ub, b_ub = _as_rows(A_ub, b_ub, n)
    lb = np.full(n, -np.inf) if lower_bounds is None else np.broadcast_to(np.asarray(lower_bounds, float), (n,))
    ub = np.full(n, np.inf) if upper_bounds is None else np.broadcast_to(np.asarray(upper_bounds, float), (n,))
    res = linprog(
        c,
        A_ub=A_ub if A_ub.shape[0] else None,
        b_ub=b_ub if A_ub.shape[0] else None,
        A_eq=A_eq if A_eq.shape[0] else None,
        b_eq=b_eq if A_eq.shape[0] else None,
        bounds=np.column_stack([lb, ub]),
        method="highs",
    )
    status = _LP_STATUS.get(res.status, "error")
    if status != "optimal":
        return LPResult(np.full(n, np.nan), np.nan, np.zeros(A_eq.shape[0]), np.zeros(A_ub.shape[0]), status)
    eq = -np.asarray(res.eqlin.marginals) if A_eq.shape[0] else np.zeros(0)
    ineq = -np.asarray(res.ineqlin.marginals) if A_ub.shape[0] else np.zeros(0)
    return LPResult(res.x, float(res.fun), eq, ineq, status, bound_duals=np.asarray(res.lower.marginals))


def _eqp_direction(Q, g, M):
    """Minimize ``p'Qp/2 + g'p`` over ``M p = 0``.

    Returns ``(p, ray)``; ``ray`` is True when ``p`` is a descent direction of
    zero curvature, i.e. the step length is limited only by constraints.
    """
    n = Q.shape[0]
    Z = scipy.linalg.null_space(M) if M.shape[0] else np.eye(n)
    if Z.shape[1] == 0:
        return np.zeros(n), False
    gz = Z.T @ g
    lam, V = np.linalg.eigh(Z.T @ Q @ Z)
    coef = V.T @ gz
    scale = max(np.abs(lam).max(), 1.0)
    flat = lam <= 1e-10 * scale
    gtol = 1e-12 * (1.0 + np.linalg.norm(g))
    if np.any(np.abs(coef[flat]) > gtol):
        u = -V[:, flat] @ coef[flat]
        return Z @ u, True
    u = -V[:, ~flat] @ (coef[~flat] / lam[~flat])
    return Z @ u, False


def qp_solve(Q, c, A_eq=None, b_eq=None, A_ub=None, b_ub=None, x0=None, max_iter=1000):
    """Primal active-set method for ``min x'Qx/2 + c'x`` under linear constraints.

    A feasible start comes from the LP kernel when ``x0`` is not supplied.
    """
    Q = np.asarray(Q, dtype=float)
    Q = 0.5 * (Q + Q.T)
    c = np.asarray(c, dtype=float).ravel()
    n = c.size
    if Q.shape != (n, n):
        raise DimensionMismatchError("Q and c disagree in dimension")
    qnorm = np.abs(Q).max() if Q.size else 0.0
    if n and np.linalg.eigvalsh(Q).min() < -1e-8 * max(qnorm, 1e-300):
        raise NotPSDError("Q has a negative eigenvalue")
    E, e = _as_rows(A_eq, b_eq, n)
    A, b = _as_rows(A_ub, b_ub, n)
    if x0 is None:
        start = lp_solve(np.zeros(n), E, e, A, b)
        if start.status != "optimal":
            return QPResult(np.full(n, np.nan), np.nan, np.zeros(E.shape[0]), np.zeros(A.shape[0]), start.status)
        x = start.x
    else:
        x = np.array(x0, dtype=float)

    keep = independent_rows(E)
    E_w, e_w = E[keep], e[keep]
    tol = 1e-9 * (1.0 + np.abs(b))
    work = []
    for i in np.flatnonzero(np.abs(A @ x - b) <= tol):
        if len(independent_rows(np.vstack([E_w, A[work + [i]]]))) == E_w.shape[0] + len(work) + 1:
            work.append(int(i))

    status = "optimal"
    mu = np.zeros(E_w.shape[0])
    for _ in range(max_iter):
        g = Q @ x + c
        M = np.vstack([E_w, A[work]]) if work else E_w
        p, ray = _eqp_direction(Q, g, M)
        if not ray and np.linalg.norm(p) <= 1e-11 * (1.0 + np.linalg.norm(x)):
            mu = np.linalg.lstsq(M.T, -g, rcond=None)[0] if M.shape[0] else np.zeros(0)
            lam = mu[E_w.shape[0]:]
            if lam.size and lam.min() < -1e-10 * (1.0 + np.abs(g).max()):
                work.pop(int(np.argmin(lam)))
                continue
            break
        Ap = A @ p
        slack = b - A @ x
        step, block = (np.inf if ray else 1.0), None
        for i in np.flatnonzero(Ap > 1e-14 * (1.0 + np.abs(p).max())):
            if i in work:
                continue
            t = max(slack[i], 0.0) / Ap[i]
            if t < step:
                step, block = t, int(i)
        if not np.isfinite(step):
            status = "unbounded"
            break
        x = x + step * p
        if block is not None:
            work.append(block)
    else:
        status = "error"

    eq_duals = np.zeros(E.shape[0])
    ineq_duals = np.zeros(A.shape[0])
    if status == "optimal":
        eq_duals[keep] = mu[: len(keep)]
        ineq_duals[work] = mu[len(keep):]
    fun = float(0.5 * x @ Q @ x + c @ x)
    return QPResult(x, fun, eq_duals, ineq_duals, status)
