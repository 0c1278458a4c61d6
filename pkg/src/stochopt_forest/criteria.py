"""Splitting criteria.

The approximate criteria accept either single candidates (vectors of length
``dim``) or batches (``K x dim`` arrays) so a whole feature sweep is scored in
one call against the node's presolved factorizations.
"""

from dataclasses import dataclass

import numpy as np

from . import linalg_opt as la

PROJECTION_TOL = 1e-8


@dataclass
class SplitScore:
    value: object
    directions: tuple = None
    regularized: bool = False
    projected: object = False


def _rows(a):
    return np.atleast_2d(np.asarray(a, dtype=float))


def _squeeze(v, like):
    return float(v[0]) if np.ndim(like) == 1 else v


def oracle_criterion(spec, ds, idx1, idx2, n=None):
    """Re-optimize each side and sum the side costs, normalized by ``n``."""
    Y = ds.outcomes if hasattr(ds, "outcomes") else np.asarray(ds)
    return SplitScore(_oracle(spec, Y[np.asarray(idx1)], Y[np.asarray(idx2)], n)[0])


def _oracle(spec, Y1, Y2, n=None):
    n = Y1.shape[0] + Y2.shape[0] if n is None else n
    total, solves = 0.0, 0
    for Yj in (Y1, Y2):
        if Yj.shape[0] == 0:
            return np.inf, solves
        res = spec.solve(np.full(Yj.shape[0], 1.0 / Yj.shape[0]), Yj)
        solves += 1
        if not res.ok or res.relaxed:
            return np.inf, solves
        total += res.value * Yj.shape[0] / n
    return total, solves


def _quad_unconstrained(node, h):
    H = _rows(h)
    sol = la.solve_with(node.hess_factor, H.T).T
    return np.einsum("kd,kd->k", H, sol), sol


def apx_risk_unconstrained(node, h1, h2, n1, n2, n):
    """``-1/2 * sum_j (n_j/n) h_j' H0^{-1} h_j``."""
    q1, _ = _quad_unconstrained(node, h1)
    q2, _ = _quad_unconstrained(node, h2)
    value = -0.5 * (np.asarray(n1) / n * q1 + np.asarray(n2) / n * q2)
    return SplitScore(_squeeze(value, h1), regularized=node.hess_factor.regularized)


def extrapolated_solutions(node, h):
    """Newton-extrapolated solutions ``z0 - H0^{-1} h`` for each row of ``h``."""
    return node.z0 - la.solve_with(node.hess_factor, _rows(h).T).T


def apx_soln_unconstrained(node, h1, h2, spec, ds, idx1, idx2, n=None):
    """Cost of the extrapolated solutions on their own side, normalized by ``n``."""
    Y = ds.outcomes if hasattr(ds, "outcomes") else np.asarray(ds)
    Y1, Y2 = Y[np.asarray(idx1)], Y[np.asarray(idx2)]
    n = Y1.shape[0] + Y2.shape[0] if n is None else n
    z1 = extrapolated_solutions(node, h1)[0]
    z2 = extrapolated_solutions(node, h2)[0]
    value = (spec.costs(z1[None], Y1).sum() + spec.costs(z2[None], Y2).sum()) / n
    return SplitScore(float(value), directions=(z1 - node.z0, z2 - node.z0),
                      regularized=node.hess_factor.regularized)


def kkt_direction(node, delta_grad, delta_g_active=None):
    """First block of the perturbation KKT solution, one row per candidate.

    ``delta_grad`` is ``h_j - grad_f0`` plus the stochastic-gradient term;
    ``delta_g_active`` are the value differences of the active stochastic
    constraints kept in the system (``node.stoch_rows``).
    """
    D = _rows(delta_grad)
    K, dim = D.shape
    m = node.A_active.shape[0]
    rhs = np.zeros((dim + m, K))
    rhs[:dim] = -D.T
    if node.n_stoch_rows:
        rhs[dim:dim + node.n_stoch_rows] = -_rows(delta_g_active).reshape(K, -1).T
    d = la.solve_with(node.kkt_factor, rhs)[:dim].T
    return d[0] if np.ndim(delta_grad) == 1 else d


def apx_risk_constrained(node, d1, d2, delta1, delta2, n1, n2, n):
    """``1/2 sum_j p_j d_j' H_L d_j + sum_j p_j d_j' delta_j`` with ``p_j = n_j / n``."""
    D1, D2 = _rows(d1), _rows(d2)
    G1, G2 = _rows(delta1), _rows(delta2)
    p1, p2 = np.asarray(n1) / n, np.asarray(n2) / n
    quad1 = np.einsum("kd,kd->k", D1 @ node.H_L, D1)
    quad2 = np.einsum("kd,kd->k", D2 @ node.H_L, D2)
    lin1 = np.einsum("kd,kd->k", D1, G1)
    lin2 = np.einsum("kd,kd->k", D2, G2)
    value = 0.5 * (p1 * quad1 + p2 * quad2) + p1 * lin1 + p2 * lin2
    return SplitScore(_squeeze(value, d1), directions=(d1, d2), regularized=node.kkt_factor.regularized)


def constrained_solutions(node, d):
    """``z0 + d`` projected onto the affine hull of equalities and active inequalities when needed."""
    Z = node.z0 + _rows(d)
    A = node.A_active[node.n_stoch_rows:]
    b = node.b_active[node.n_stoch_rows:]
    projected = np.zeros(Z.shape[0], dtype=bool)
    if A.shape[0]:
        resid = np.abs(Z @ A.T - b).max(axis=1)
        projected = resid > PROJECTION_TOL
        for k in np.flatnonzero(projected):
            Z[k] = la.project_affine(Z[k], A, b)
    return Z, projected


def apx_soln_constrained(node, d_j, spec, ds, idx_j, n):
    """One side's contribution ``(1/n) sum_{i in R_j} c(z0 + d_j; Y_i)``."""
    Y = ds.outcomes if hasattr(ds, "outcomes") else np.asarray(ds)
    Z, projected = constrained_solutions(node, d_j)
    value = spec.costs(Z, Y[np.asarray(idx_j)]).sum() / n
    return SplitScore(float(value), directions=(Z[0] - node.z0,), regularized=node.kkt_factor.regularized,
                      projected=bool(projected[0]))


def variance_criterion(ds, idx1, idx2, n=None):
    """``sum_j n_j/(2n) * sum_l Var_j(Y_l)`` with biased variances."""
    Y = ds.outcomes if hasattr(ds, "outcomes") else np.asarray(ds)
    parts = [Y[np.asarray(idx)] for idx in (idx1, idx2)]
    n = sum(p.shape[0] for p in parts) if n is None else n
    value = sum(0.5 * ((p - p.mean(axis=0)) ** 2).sum() / n for p in parts)
    return SplitScore(float(value))


def random_criterion(rng, size=None):
    return SplitScore(rng.random(size))
