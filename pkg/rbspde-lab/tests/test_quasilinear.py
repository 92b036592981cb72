import numpy as np
import pytest

from src.grid.spatial import build_grid
from src.lattice.tree import build_tree
from src.problem.spec import StructuralConstants
from src.quasilinear.checks import apriori_stability, comparison_test, substitution_residual, uniqueness_probe
from src.quasilinear.continuation import (
    ContinuationError,
    ContinuationSettings,
    solve_rbspde,
    theta_independent,
)


SCHEDULE = (1, 16, 256)
MARGIN = StructuralConstants(lam=1.4, Lam=2.5, kappa=0.4, beta=0.02, rho=2.0, L=1.0)


@pytest.fixture
def quasilinear(make_spec):
    def build(G="(1 + 0.5 * W1) * sin(pi * x)", xi="0.3 * sin(pi * x) - 0.05", f="0.5 * sin(u) + 0.2 * tanh(z1) + sin(pi * x)"):
        return make_spec(
            horizon=0.25,
            constants=MARGIN,
            a="1 + 0.25 * sin(pi * x)",
            sigma=0.2,
            f=f,
            g="0.1 * sin(y1) + 0.1 * z1",
            G=G,
            xi=xi,
        )

    return build


@pytest.fixture
def setting():
    return build_tree(1, 4, 0.25, recombine=True), build_grid([[0.0, 1.0]], [15])


def test_theta_independent_problem_jumps_to_one(obstacle_spec):
    tree, grid = build_tree(1, 4, 0.5, recombine=True), build_grid([[-1.0, 1.0]], [15])
    assert theta_independent(obstacle_spec, tree, grid)
    result = solve_rbspde(obstacle_spec, tree, grid, SCHEDULE)
    assert result.trace.breakpoints == [0.0, 1.0]
    assert result.trace.rows == []
    assert result.solution is result.run0.final
    assert result.penalty == SCHEDULE[-1]


def test_quasilinear_problem_is_not_theta_independent(quasilinear, setting):
    tree, grid = setting
    assert not theta_independent(quasilinear(), tree, grid)


def test_continuation_contracts_within_margin(quasilinear, setting):
    tree, grid = setting
    spec = quasilinear()
    result = solve_rbspde(spec, tree, grid, SCHEDULE)
    assert result.trace.breakpoints[-1] == 1.0
    ratios = result.trace.accepted_ratios()
    assert ratios and all(ratio < 1.0 for ratio in ratios.values())
    assert all(count >= 1 for count in result.trace.picard_counts().values())
    assert list(result.trace.to_frame().columns) == ["theta0", "theta", "iteration", "residual", "ratio"]
    assert result.measure is not None and result.measure.total_mass() >= 0.0
    assert substitution_residual(result, spec, tree, grid) <= 1e-6


def test_continuation_underflow_raises(quasilinear, setting):
    tree, grid = setting
    spec = quasilinear(xi=None)
    strict = ContinuationSettings(theta_step=0.5, theta_min=0.25, picard_tol=0.0, ratio_limit=0.0)
    with pytest.raises(ContinuationError) as info:
        solve_rbspde(spec, tree, grid, SCHEDULE, strict)
    assert info.value.theta == 0.0
    assert "parabolicity margin" in str(info.value)


def test_resume_from_accepted_checkpoint(quasilinear, setting):
    tree, grid = setting
    spec = quasilinear()
    full = solve_rbspde(spec, tree, grid, SCHEDULE)
    resumed = solve_rbspde(spec, tree, grid, SCHEDULE, resume=(1.0, full.solution))
    assert resumed.trace.breakpoints == [1.0]
    assert resumed.solution is full.solution


@pytest.mark.parametrize(
    "shift",
    [
        {"xi": "0.3 * sin(pi * x)"},
        {"G": "(1 + 0.5 * W1) * sin(pi * x) + 0.1"},
        {"f": "0.5 * sin(u) + 0.2 * tanh(z1) + sin(pi * x) + 0.5"},
    ],
    ids=["obstacle", "terminal", "drift"],
)
def test_comparison_of_ordered_data(quasilinear, shift):
    tree, grid = build_tree(1, 3, 0.25, recombine=True), build_grid([[0.0, 1.0]], [9])
    lo = quasilinear()
    hi = quasilinear(**shift)
    report = comparison_test(lo, hi, tree, grid, SCHEDULE)
    assert not report.skipped
    assert report.passed
    assert report.max_violation <= 1e-8


def test_comparison_skipped_when_data_are_not_ordered(quasilinear):
    tree, grid = build_tree(1, 3, 0.25, recombine=True), build_grid([[0.0, 1.0]], [9])
    lo = quasilinear()
    hi = quasilinear(G="(1 + 0.5 * W1) * sin(pi * x) - 0.1")
    report = comparison_test(lo, hi, tree, grid, SCHEDULE)
    assert report.skipped and not report.passed
    assert "G_lo exceeds G_hi" in report.reason


def test_uniqueness_under_two_step_schedules(quasilinear, setting):
    tree, grid = setting
    spec = quasilinear()
    result = solve_rbspde(spec, tree, grid, SCHEDULE)
    report = uniqueness_probe(spec, tree, grid, result, SCHEDULE, distance_tol=1e-6)
    assert report.passed
    assert np.isfinite(report.distance)


def test_apriori_ratio_holds_across_a_grid_refinement(make_spec, setting):
    tree, grid = setting
    spec = make_spec(
        horizon=0.25,
        constants=MARGIN,
        a="1 + 0.25 * sin(pi * x)",
        sigma=0.2,
        f="0.5 * sin(u) + 0.2 * tanh(z1) + sin(pi * x)",
        g="0.1 * sin(y1) + 0.1 * z1",
        G="(1 + 0.5 * W1) * sin(pi * x)",
        xi="0.3 * sin(pi * x) - 0.05",
        xi_dom="0.5 * sin(pi * x)",
    )
    report = apriori_stability(spec, tree, grid, SCHEDULE, tolerance=0.2)
    assert report.dominating > 0.0
    assert report.coarse > 0.0
    assert report.passed, (report.coarse, report.fine)


def test_linear_driver_needs_few_picard_iterations(make_spec):
    spec = make_spec(
        domain=((-1.0, 1.0),),
        f="0.02 * u",
        G="pos(0.3 * cos(pi * x / 2) - 0.1)",
        xi="0.3 * cos(pi * x / 2) - 0.1",
    )
    tree, grid = build_tree(1, 8, 0.5, recombine=True), build_grid([[-1.0, 1.0]], [31])
    assert not theta_independent(spec, tree, grid)
    result = solve_rbspde(spec, tree, grid, SCHEDULE)
    counts = result.trace.picard_counts()
    assert counts
    assert max(counts.values()) <= 5
    assert result.trace.halvings == []
    assert substitution_residual(result, spec, tree, grid) <= 1e-6
