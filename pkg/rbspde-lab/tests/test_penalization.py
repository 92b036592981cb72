import numpy as np
import pytest

from src.grid.spatial import build_grid
from src.lattice.tree import build_tree
from src.penalization.checks import minimality_check, regular_obstacle_bound_check, with_regular_obstacle
from src.penalization.measure import DiscreteMeasure, complementarity_residual
from src.penalization.oracle import psor_obstacle
from src.penalization.solver import (
    HISTORY_COLUMNS,
    LIMIT,
    MonotonicityError,
    PenaltyTolerances,
    run_penalization,
    solve_penalized,
)
from src.problem.builder import compile_field
from src.problem.spec import ProblemError
from src.utils.mathutils import rel_l2


SCHEDULE = (1, 4, 16, 64, 256, 1024)


@pytest.fixture
def setting():
    return build_tree(1, 8, 0.5, recombine=True), build_grid([[-1.0, 1.0]], [31])


def test_penalized_solutions_increase_with_n(obstacle_spec, setting):
    tree, grid = setting
    run = run_penalization(obstacle_spec, tree, grid, SCHEDULE)
    assert list(run.history.columns) == list(HISTORY_COLUMNS)
    assert run.history["n"].tolist() == list(SCHEDULE)
    violation = run.history["violation"].to_numpy()
    assert np.all(np.diff(violation) <= 1e-12)
    comp = run.history["complementarity"].to_numpy()
    assert comp[-1] < comp[-3]
    assert run.mass_bounded
    assert run.cauchy_decreasing


def test_penalty_mass_matches_complementarity(obstacle_spec, setting):
    tree, grid = setting
    run = run_penalization(obstacle_spec, tree, grid, (4, 16))
    last = run.history.iloc[-1]
    assert last["complementarity"] == pytest.approx(last["penalty_mass"], rel=1e-9, abs=1e-15)


KINK_SCHEDULE = tuple(2**j for j in range(13))


@pytest.fixture
def kink_problem(make_spec):
    spec = make_spec(domain=((-1.0, 1.0),), G="0", xi="max(0, 0.5 - abs(x)) - 0.1", name="heat-obstacle")
    return spec, build_tree(1, 64, 0.5, recombine=True), build_grid([[-1.0, 1.0]], [65])


def test_penalized_limit_matches_projected_sor(kink_problem):
    spec, tree, grid = kink_problem
    run = run_penalization(spec, tree, grid, KINK_SCHEDULE + (LIMIT,))
    reference = psor_obstacle(spec, tree, grid)
    computed = np.stack([np.asarray(u)[0] for u in run.final.u])
    last = np.stack([np.asarray(u)[0] for u in run.last_penalized.u])
    assert rel_l2(computed, reference) <= 1e-3
    assert run.complementarity <= 1e-3
    assert rel_l2(computed, reference) < rel_l2(last, reference)
    assert np.all(computed >= last - 1e-10)
    assert all(run.checks().values())
    assert run.history["n"].iloc[-1] == LIMIT
    assert np.isnan(run.history["penalty_mass"].iloc[-1])


def test_penalized_iterates_stay_below_projected_sor(obstacle_spec, setting):
    tree, grid = setting
    run = run_penalization(obstacle_spec, tree, grid, (1, 16, 256, 4096))
    reference = psor_obstacle(obstacle_spec, tree, grid)
    assert rel_l2(np.asarray(run.final.u[0][0]), reference[0]) <= 1e-2
    for k in range(tree.steps + 1):
        assert np.max(np.asarray(run.final.u[k][0]) - reference[k]) <= 1e-8
        assert np.min(reference[k] - np.asarray(run.obstacle[k][0])) >= -1e-12


def test_limit_level_must_close_the_schedule(obstacle_spec, setting):
    tree, grid = setting
    with pytest.raises(ValueError):
        run_penalization(obstacle_spec, tree, grid, (1, LIMIT, 4))


def test_psor_needs_deterministic_obstacle_problem(make_spec, setting):
    tree, grid = setting
    stochastic = make_spec(domain=((-1.0, 1.0),), G="0", xi="W1 - 1")
    with pytest.raises(ProblemError):
        psor_obstacle(stochastic, tree, grid)
    with pytest.raises(ProblemError):
        psor_obstacle(make_spec(domain=((-1.0, 1.0),)), tree, grid)


def test_schedule_is_validated(obstacle_spec, setting):
    tree, grid = setting
    for schedule in ((), (0.5, 2), (4, 2), (1, 1)):
        with pytest.raises(ValueError):
            run_penalization(obstacle_spec, tree, grid, schedule)


def test_monotonicity_error_carries_levels(obstacle_spec, setting):
    tree, grid = setting
    with pytest.raises(MonotonicityError) as info:
        run_penalization(obstacle_spec, tree, grid, (1, 2), PenaltyTolerances(mono=-1.0))
    assert (info.value.n_low, info.value.n_high) == (1, 2)


def test_penalization_needs_an_obstacle(make_spec, setting):
    tree, grid = setting
    spec = make_spec(domain=((-1.0, 1.0),))
    with pytest.raises(ProblemError):
        run_penalization(spec, tree, grid, SCHEDULE)
    with pytest.raises(ProblemError):
        solve_penalized(spec, 4, tree, grid)


def test_regular_obstacle_density_bound(make_spec):
    tree = build_tree(1, 16, 0.5, recombine=True)
    grid = build_grid([[-1.0, 1.0]], [33])
    base = make_spec(domain=((-1.0, 1.0),), G="0")
    f_plus = compile_field(1, 1, 1)
    f_minus = compile_field("2 * ind(x, -0.4, 0.4)", 1, 1)
    spec = with_regular_obstacle(base, tree, grid, f_plus, f_minus)
    run = run_penalization(spec, tree, grid, (1, 4, 16, 64, 256))
    report = regular_obstacle_bound_check(run)
    assert report.passed
    assert report.min_beta >= 0.0
    assert run.measure.total_mass() > 0.0


def test_bound_check_needs_upward_drift(obstacle_spec, setting):
    tree, grid = setting
    run = run_penalization(obstacle_spec, tree, grid, (1, 4))
    with pytest.raises(ProblemError):
        regular_obstacle_bound_check(run)


def test_minimality_against_dominating_trials(obstacle_spec, setting):
    tree, grid = setting
    run = run_penalization(obstacle_spec, tree, grid, SCHEDULE)
    reference = psor_obstacle(obstacle_spec, tree, grid)
    shifted = [level + 0.1 for level in reference]
    below = [np.full(grid.size, -1.0) for _ in reference]
    report = minimality_check(run, [list(reference), shifted, below])
    assert report.passed
    assert (report.accepted, report.rejected) == (2, 1)


def test_minimality_fails_without_trials(obstacle_spec, setting):
    tree, grid = setting
    run = run_penalization(obstacle_spec, tree, grid, (1, 4))
    assert not minimality_check(run, []).passed
    with pytest.raises(ValueError):
        minimality_check(run, [[np.zeros(grid.size)]])


def test_measure_rejects_negative_density(setting):
    tree, grid = setting
    density = [np.zeros((tree.level_size(k), grid.size)) for k in range(tree.steps)]
    density[3][0, 5] = -1e-3
    with pytest.raises(ValueError):
        DiscreteMeasure(grid, tree, density)


def test_complementarity_vanishes_on_contact(setting):
    tree, grid = setting
    density = [np.ones((tree.level_size(k), grid.size)) for k in range(tree.steps)]
    measure = DiscreteMeasure(grid, tree, density)
    xi = [np.zeros((tree.level_size(k), grid.size)) for k in range(tree.steps + 1)]
    residual, min_gap = complementarity_residual(xi, xi, measure)
    assert residual == 0.0 and min_gap == 0.0
    assert measure.total_mass() == pytest.approx(0.5 * grid.cell_volume * grid.size, rel=1e-12)
    frame = measure.to_frame()
    assert list(frame.columns) == ["level", "node", "point", "weight"]
    assert frame["weight"].sum() == pytest.approx(measure.total_mass())


def test_zero_data_below_obstacle_gives_zero_triple(make_spec):
    tree, grid = build_tree(1, 8, 0.5, recombine=True), build_grid([[0.0, 1.0]], [33])
    run = run_penalization(make_spec(xi="-1"), tree, grid, SCHEDULE)
    assert max(np.max(np.abs(u)) for u in run.final.u) <= 1e-12
    assert max(np.max(np.abs(v)) for v in run.final.v) <= 1e-12
    assert run.measure.total_mass() == 0.0


def test_mass_ratio_is_zero_while_the_obstacle_never_binds(make_spec):
    tree, grid = build_tree(1, 8, 0.5, recombine=True), build_grid([[0.0, 1.0]], [33])
    run = run_penalization(make_spec(xi="-1"), tree, grid, SCHEDULE)
    ratios = run.history["mass_ratio"].to_numpy()
    assert not np.any(np.isnan(ratios))
    assert np.all(ratios == 0.0)
    assert run.mass_bounded


def test_mass_ratio_is_relative_to_first_nonzero_mass(obstacle_spec, setting):
    tree, grid = setting
    run = run_penalization(obstacle_spec, tree, grid, SCHEDULE)
    mass = run.history["penalty_mass"].to_numpy()
    first = mass[np.flatnonzero(mass > 0.0)[0]]
    np.testing.assert_allclose(run.history["mass_ratio"].to_numpy(), mass / first, rtol=1e-12)
