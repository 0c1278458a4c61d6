"""Relative risk and coefficient of prescriptiveness."""

import numpy as np

from ..exceptions import DegenerateDenominatorError
from .scenarios import get_scenario


def _predict(policy, X):
    return np.atleast_2d(policy.predict(X) if hasattr(policy, "predict") else policy(X))


class EvaluationSet:
    """Query points, conditional draws and conditional-optimal decisions for one seed.

    Every policy scored against the same set sees identical draws.
    """

    def __init__(self, scenario, n_query=200, n_cond=2000, seed=0):
        if isinstance(scenario, str):
            scenario = get_scenario(scenario)
        self.scenario = scenario
        self.X = scenario.sample_x(n_query, np.random.default_rng([seed, 101]))
        draw_rng = np.random.default_rng([seed, 102])
        self.draws = [scenario.conditional_draws(x, n_cond, draw_rng) for x in self.X]
        self.z_opt = scenario.optimal_decisions(self.X, np.random.default_rng([seed, 103]))
        self.opt_risk = np.array([scenario.risk(z, x, Y)[0] for z, x, Y in zip(self.z_opt, self.X, self.draws)])

    def risks(self, Z):
        Z = np.atleast_2d(Z)
        return np.array([self.scenario.risk(z, x, Y)[0] for z, x, Y in zip(Z, self.X, self.draws)])

    def benchmark_risks(self, Z):
        if hasattr(self.scenario, "matched_risk"):
            return np.array([self.scenario.matched_risk(z, x)[0] for z, x in zip(np.atleast_2d(Z), self.X)])
        return self.opt_risk

    def relative_risk(self, Z):
        return float(self.risks(Z).mean() / self.benchmark_risks(Z).mean())

    def score(self, policy):
        return self.relative_risk(_predict(policy, self.X))


def relative_risk(policy, scenario, n_query=200, n_cond=2000, seed=0):
    """Mean policy risk over mean conditional-optimal risk on common draws."""
    return EvaluationSet(scenario, n_query, n_cond, seed).score(policy)


def prescriptiveness(policy, train, test, spec):
    """``(SAA - policy) / (SAA - perfect information)`` realized test costs."""
    Ytr, Yte = np.asarray(train.outcomes), np.asarray(test.outcomes)
    z_saa = spec.solve(np.full(Ytr.shape[0], 1.0 / Ytr.shape[0]), Ytr).z
    saa = spec.costs(z_saa[None], Yte).mean()
    Z = _predict(policy, test.features)
    pol = np.mean([spec.costs(z[None], y[None])[0, 0] for z, y in zip(Z, Yte)])
    perfect = np.mean([spec.solve(np.ones(1), y[None]).value for y in Yte])
    denom = saa - perfect
    if abs(denom) <= 1e-12 * (1 + abs(saa)):
        raise DegenerateDenominatorError("SAA already attains the perfect-information cost")
    return float((saa - pol) / denom)
