import numpy as np
import pytest

from src.lattice.expectation import cond_expect, expect_from, expectation, martingale_projection, project
from src.lattice.paths import sample_joint_paths
from src.lattice.tree import BUDGET_ENV, BudgetError, LatticeError, build_joint_tree, build_tree


def test_branching_tree_numbering_and_probabilities():
    tree = build_tree(1, 3, 1.0)
    assert tree.level_sizes == [1, 2, 4, 8]
    assert np.array_equal(tree.children(1), np.array([[0, 1], [2, 3]]))
    assert np.isclose(tree.probabilities(3).sum(), 1.0)
    assert tree.parent(3, 5) == 2


def test_recombining_lattice_is_binomial():
    tree = build_tree(1, 4, 1.0, recombine=True)
    assert tree.level_sizes == [1, 2, 3, 4, 5]
    assert np.allclose(tree.probabilities(4), np.array([1, 4, 6, 4, 1]) / 16.0)
    assert np.allclose(tree.values(4)[:, 0], np.sqrt(0.25) * np.array([-4, -2, 0, 2, 4]))


@pytest.mark.parametrize("recombine", [False, True])
def test_w_is_a_martingale(recombine):
    tree = build_tree(1, 5, 2.0, recombine=recombine)
    for k in range(tree.steps):
        assert np.allclose(cond_expect(tree, k, tree.values(k + 1)[:, 0]), tree.values(k)[:, 0])
    assert np.isclose(expectation(tree, 5, tree.values(5)[:, 0] ** 2), 2.0)


def test_projection_recovers_unit_integrand():
    tree = build_tree(2, 3, 1.0)
    for k in range(tree.steps):
        proj = martingale_projection(tree, k, tree.values(k + 1)[:, 0])
        assert np.allclose(proj.v[:, 0], 1.0)
        assert np.allclose(proj.v[:, 1], 0.0)
        assert np.allclose(proj.residual, 0.0)


def test_projection_residual_of_cross_increment():
    tree = build_tree(2, 2, 1.0)
    inc = tree.increments
    grouped = np.tile(inc[:, 0] * inc[:, 1] / tree.dt, (tree.level_size(1), 1))
    proj = project(tree, grouped)
    assert np.allclose(proj.mean, 0.0)
    assert np.allclose(proj.v, 0.0)
    assert np.allclose(proj.residual, np.sqrt(tree.dt))


def test_expect_from_later_level_matches_stepwise():
    tree = build_tree(1, 4, 1.0)
    values = np.random.default_rng(0).standard_normal(tree.level_size(4))
    stepwise = cond_expect(tree, 1, cond_expect(tree, 2, cond_expect(tree, 3, values)))
    assert np.allclose(expect_from(tree, 1, values, 4), stepwise)
    with pytest.raises(LatticeError):
        expect_from(tree, 3, values[:2], 1)


def test_budget_guard_and_env_override(monkeypatch):
    with pytest.raises(BudgetError):
        build_tree(2, 30, 1.0)
    monkeypatch.setenv(BUDGET_ENV, "8")
    with pytest.raises(BudgetError):
        build_tree(1, 4, 1.0)
    assert build_tree(1, 4, 1.0, recombine=True).level_size(4) == 5


def test_recombination_needs_scalar_noise():
    with pytest.raises(LatticeError):
        build_tree(2, 3, 1.0, recombine=True)
    with pytest.raises(LatticeError):
        build_joint_tree(2, 1, 3, 1.0, recombine=True)


def test_joint_tree_depth_guard():
    assert build_joint_tree(1, 1, 3, 1.0).branching == 4
    with pytest.raises(BudgetError):
        build_joint_tree(1, 1, 7, 1.0)
    lattice = build_joint_tree(1, 1, 20, 1.0, recombine=True)
    assert lattice.level_size(20) == 21**2


def test_context_history_lookup():
    tree = build_tree(1, 3, 1.0)
    ctx = tree.context(3, 6)
    path = tree.ancestors(3, 6)
    assert ctx.w_at(1, 1) == pytest.approx(tree.values(1)[path[1], 0])
    lattice = build_tree(1, 3, 1.0, recombine=True)
    with pytest.raises(LatticeError):
        lattice.context(3, 1).w_at(1, 1)


@pytest.mark.parametrize("recombine", [False, True])
def test_located_nodes_carry_path_values(recombine):
    joint = build_joint_tree(1, 1, 4, 1.0, recombine=recombine)
    paths = sample_joint_paths(1, 1, 4, 1.0, count=12, seed=5)
    nodes = joint.locate(paths.signs())
    for k in range(5):
        expected = np.concatenate([paths.W[:, k], paths.B[:, k]], axis=1)
        assert np.allclose(joint.values(k)[nodes[:, k]], expected)


def test_path_sampling_is_seeded():
    first = sample_joint_paths(1, 2, 6, 1.0, count=4, seed=11)
    second = sample_joint_paths(1, 2, 6, 1.0, count=4, seed=11)
    assert np.array_equal(first.dW, second.dW)
    assert np.array_equal(first.dB, second.dB)
    assert first.signs().shape == (4, 6, 3)


def test_deep_recombining_lattice_probabilities():
    tree = build_tree(1, 1100, 1.0, recombine=True)
    weights = tree.probabilities(1100)
    assert np.all(np.isfinite(weights))
    assert np.isclose(weights.sum(), 1.0)
    assert weights[550] == pytest.approx(np.max(weights))


def test_scalar_projection_is_exact_on_arbitrary_data():
    tree = build_tree(1, 4, 1.0)
    rng = np.random.default_rng(3)
    for k in range(tree.steps):
        values = rng.standard_normal((tree.level_size(k + 1), 6))
        proj = martingale_projection(tree, k, values)
        assert np.all(proj.residual <= 1e-14)
        rebuilt = proj.mean[:, None, :] + np.einsum("nrp,br->nbp", proj.v, tree.increments)
        assert np.allclose(rebuilt, values[tree.children(k)], atol=1e-14)


@pytest.mark.parametrize("recombine", [False, True])
def test_conditional_expectation_is_linear_and_monotone(recombine):
    tree = build_tree(1, 3, 1.0, recombine=recombine)
    rng = np.random.default_rng(8)
    size = tree.level_size(3)
    F = rng.standard_normal((size, 5))
    G = F + rng.uniform(0.0, 1.0, size=(size, 5))
    combined = cond_expect(tree, 2, 2.5 * F - 0.5 * G)
    assert np.allclose(combined, 2.5 * cond_expect(tree, 2, F) - 0.5 * cond_expect(tree, 2, G))
    assert np.all(cond_expect(tree, 2, F) <= cond_expect(tree, 2, G))


def test_sampled_increments_have_small_mean():
    count, steps, horizon = 10_000, 4, 1.0
    paths = sample_joint_paths(1, 1, steps, horizon, count=count, seed=2)
    bound = 3.0 / np.sqrt(count) * np.sqrt(horizon / steps)
    assert np.all(np.abs(paths.dW.mean(axis=0)) <= bound)


def test_w_and_b_streams_are_uncorrelated():
    paths = sample_joint_paths(1, 2, 5, 1.0, count=10_000, seed=4)
    dW = paths.dW[:, :, 0].reshape(-1)
    for i in range(2):
        dB = paths.dB[:, :, i].reshape(-1)
        assert abs(np.corrcoef(dW, dB)[0, 1]) <= 4.0 / np.sqrt(dW.size)
    assert abs(np.corrcoef(paths.dB[:, :, 0].reshape(-1), paths.dB[:, :, 1].reshape(-1))[0, 1]) <= 4.0 / np.sqrt(dW.size)
