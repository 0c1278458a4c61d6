"""Shared fixtures and oracles for the test-suite."""

import dataclasses

import numpy as np

from stochopt_forest.problems import Problem

# one line per acceptance check, echoed in the terminal summary
ACCEPTANCE_LINES = []


def report(label, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


class ScaledProblem(Problem):
    """``factor * c(z; y)`` over the wrapped problem's feasible set.

    Powers of two keep every derived quantity exact in floating point, so
    split choices can be compared bit for bit against the unscaled problem.
    Only meant for problems without stochastic constraints.
    """

    def __init__(self, base, factor=2.0):
        self.base, self.factor = base, float(factor)
        self.d, self.dim = base.d, base.dim
        self.constraints = base.constraints
        self.variant = base.variant

    def costs(self, Z, Y):
        return self.factor * self.base.costs(Z, Y)

    def solve(self, weights, Y, stochastic=True):
        res = self.base.solve(weights, Y, stochastic)
        scale = lambda a: None if a is None else self.factor * a
        return dataclasses.replace(res, value=self.factor * res.value, eq_duals=scale(res.eq_duals),
                                   ineq_duals=scale(res.ineq_duals))

    def node_context(self, z0, Y, solution=None):
        return self.base.node_context(z0, Y, solution)

    def grad_contributions(self, z0, Y, ctx):
        return self.factor * self.base.grad_contributions(z0, Y, ctx)

    def hessian(self, z0, Y, ctx):
        return self.factor * self.base.hessian(z0, Y, ctx)

    def to_dict(self):
        return self.base.to_dict()


def newsvendor_fixture(n, seed, p=10):
    from stochopt_forest.harness import get_scenario

    scen = get_scenario("newsvendor-trunc", p=p)
    return scen, scen.simulate(n, seed)
