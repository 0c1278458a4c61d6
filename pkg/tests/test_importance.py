import numpy as np
import pytest

from helpers import ScaledProblem
from stochopt_forest import importance as imp
from stochopt_forest import problems as pr
from stochopt_forest.core_model import Dataset, FitConfig, Forest, Tree
from stochopt_forest.exceptions import ConfigError, NoSplitsError
from stochopt_forest.forest_builder import fit_forest


def _forest(trees, criterion="apx-risk"):
    sets = [np.arange(4)] * len(trees)
    return Forest(trees, sets, sets, FitConfig(criterion=criterion, n_trees=len(trees)), "x", None)


def _split_tree(feature, value=1.0, score=-0.5):
    return Tree([feature, -1, -1], [0.0, np.nan, np.nan], [1, -1, -1], [2, -1, -1], [-1, 0, 1],
                n_samples=[4, 2, 2], value=[value, np.nan, np.nan], score=[score, np.nan, np.nan], n_fit=4)


def test_impurity_decrease_formulas():
    assert imp.impurity_decrease("apx-risk", 3.0, 0.0, 0.5) == 0.0
    assert imp.impurity_decrease("apx-risk", 3.0, -0.2, 0.5) == pytest.approx(0.4)
    assert imp.impurity_decrease("apx-soln", 3.0, 1.0, 0.5) == imp.impurity_decrease("oracle", 3.0, 1.0, 0.5) == 1.0
    with pytest.raises(ConfigError):
        imp.impurity_decrease("random", 1.0, 0.0, 1.0)


def test_squared_error_decrease_on_fixture():
    Y = np.array([0.0, 2.0, 10.0, 12.0])
    parent = 0.5 * np.mean((Y - Y.mean()) ** 2)
    children = 0.5 * (np.var(Y[:2]) * 2 + np.var(Y[2:]) * 2) / 4
    # brute-force parent value: 0.5 * mean squared distance to the best constant on a grid
    grid = np.linspace(0, 12, 12001)
    brute_parent = min(0.5 * np.mean((Y - c) ** 2) for c in grid)
    assert parent == pytest.approx(brute_parent, abs=1e-6)
    assert imp.impurity_decrease("apx-soln", parent, children, 1.0) == pytest.approx(parent - 0.5)


def test_single_split_importance():
    rep = imp.mdi_importance(_forest([_split_tree(3)]), n_features=5)
    np.testing.assert_array_equal(rep.mdi, [0, 0, 0, 1, 0])
    np.testing.assert_array_equal(rep.split_frequency, [0, 0, 0, 1, 0])


def test_no_splits_raises():
    with pytest.raises(NoSplitsError):
        imp.mdi_importance(_forest([Tree.leaf(4, 1.0)]), n_features=2)


def test_negative_decreases_kept():
    forest = _forest([_split_tree(0, value=1.0, score=2.0), _split_tree(1, value=1.0, score=0.5)], "apx-soln")
    rep = imp.mdi_importance(forest, n_features=2)
    assert rep.mdi[1] == 1.0 and rep.mdi[0] < 0


def _fitted(spec, criterion, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(150, 4))
    Y = np.column_stack([3 + np.exp(X[:, 0]) * rng.normal(size=150), 3 + rng.normal(size=150)])
    Y = np.abs(Y)
    ds = Dataset(X, Y)
    return fit_forest(spec, ds, FitConfig(criterion=criterion, n_trees=8, min_leaf=10, seed=4, ridge=0.0)), ds


def test_report_invariants_and_row_order():
    forest, ds = _fitted(pr.Newsvendor([1.0, 1.0], [3.0, 3.0]), "apx-risk")
    rep = imp.mdi_importance(forest, ds)
    assert rep.mdi.max() == 1.0 and np.sum(rep.mdi == 1.0) == 1
    assert rep.split_frequency.sum() == pytest.approx(1.0)
    perm = np.random.default_rng(0).permutation(ds.n)
    rep2 = imp.mdi_importance(forest, ds.subset(perm))
    np.testing.assert_array_equal(rep.mdi, rep2.mdi)


@pytest.mark.parametrize("criterion", ["apx-risk", "apx-soln", "oracle"])
def test_mdi_invariant_to_criterion_scaling(criterion):
    base = pr.Newsvendor([1.0, 1.0], [3.0, 3.0])
    f1, ds = _fitted(base, criterion)
    f2, _ = _fitted(ScaledProblem(base), criterion)
    np.testing.assert_array_equal(imp.mdi_importance(f1, ds).mdi, imp.mdi_importance(f2, ds).mdi)


def test_random_forest_split_frequency_uniform():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(200, 4))
    ds = Dataset(X, rng.normal(size=(200, 1)))
    forest = fit_forest(pr.SquaredError(1), ds, FitConfig(criterion="random", n_trees=100, min_leaf=5, seed=2))
    counts = np.zeros(4)
    for t in forest.trees:
        np.add.at(counts, t.feature[t.internal], 1)
    total = counts.sum()
    sd = np.sqrt(total * 0.25 * 0.75)
    assert np.all(np.abs(counts - total / 4) <= 3 * sd)
    np.testing.assert_allclose(imp.split_frequency(forest, 4), counts / total)
