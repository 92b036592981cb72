import numpy as np
import pytest

from src.bspde.checks import dominating_norm
from src.bspde.solver import solve_linear_bspde
from src.grid.spatial import build_grid
from src.lattice.tree import build_tree
from src.problem.assumptions import validate_assumptions
from src.problem.builder import compile_field, shifted_problem, spec_from_config, spec_hash
from src.problem.expressions import ExpressionError, compile_expression, variable_names
from src.problem.spec import ProblemError, StructuralConstants, tabulate_process


def test_expression_names_are_checked_with_location():
    with pytest.raises(ExpressionError) as info:
        compile_expression("sin(x) + foo", variable_names(1, 1, state=False))
    assert info.value.column == 10
    with pytest.raises(ExpressionError):
        compile_expression("u + 1", variable_names(1, 1, state=False))
    with pytest.raises(ExpressionError):
        compile_expression("__import__('os')", variable_names(1, 1, state=True))
    with pytest.raises(ExpressionError):
        compile_expression("max(x)", variable_names(1, 1, state=False))


def test_bare_function_names_are_rejected():
    names = variable_names(1, 1, state=False)
    with pytest.raises(ExpressionError) as info:
        compile_expression("sin + 1", names)
    assert (info.value.line, info.value.column) == (1, 1)
    with pytest.raises(ExpressionError) as info:
        compile_expression("x * exp", names)
    assert info.value.column == 5
    with pytest.raises(ExpressionError):
        compile_expression("Wat", names)
    assert compile_expression("sin(x) + max(x, 0)", names).uses_space


def test_expression_flags():
    names = variable_names(2, 1, state=True)
    assert compile_expression("W1 * x2", names).stochastic
    assert compile_expression("Wat(1, 0)", names).stochastic
    assert compile_expression("sin(u) + y1", names).uses_state
    assert compile_expression("3.5", names).constant


def test_spec_evaluates_coefficients(make_spec):
    spec = make_spec(a="1 + x", sigma=0.5, G="sin(pi * x)", f="u + z1")
    tree = build_tree(1, 2, 0.5)
    x = np.array([[0.25], [0.5]])
    ctx = tree.context(0, 0)
    assert np.allclose(spec.evaluate("a", 0.0, x, ctx)[:, 0, 0], [1.25, 1.5])
    assert np.allclose(spec.evaluate("sigma", 0.0, x, ctx), 0.5)
    assert np.allclose(spec.evaluate("G", 0.5, x, tree.context(2, 0)), np.sin(np.pi * x[:, 0]))
    state = (np.array([1.0, 2.0]), np.zeros((2, 1)), np.array([[0.5], [0.5]]))
    assert np.allclose(spec.evaluate("f", 0.0, x, ctx, state), [1.5, 2.5])
    assert spec.deterministic
    assert not spec.state_free


def test_scalar_a_is_identity_multiple(make_spec):
    spec = make_spec(domain=((0.0, 1.0), (0.0, 1.0)), a=2)
    ctx = build_tree(1, 1, 0.5).context(0, 0)
    a = spec.evaluate("a", 0.0, np.array([[0.5, 0.5]]), ctx)
    assert np.allclose(a[0], 2.0 * np.eye(2))


def test_out_of_domain_and_non_finite_raise(make_spec):
    spec = make_spec(f="log(x - 0.5)")
    ctx = build_tree(1, 1, 0.5).context(0, 0)
    with pytest.raises(ProblemError):
        spec.evaluate("G", 0.5, np.array([[1.5]]), ctx)
    with pytest.raises(ProblemError) as info:
        spec.evaluate("f", 0.0, np.array([[0.25]]), ctx)
    assert info.value.witness["x"] == [0.25]


def test_stochastic_terminal_reads_node(make_spec):
    spec = make_spec(G="W1")
    tree = build_tree(1, 2, 0.5)
    assert not spec.deterministic
    values = [spec.evaluate("G", 0.5, np.array([[0.5]]), tree.context(2, i))[0] for i in range(4)]
    assert np.allclose(values, tree.values(2)[:, 0])


def test_tabulated_process_reads_levels():
    tree = build_tree(1, 2, 1.0, recombine=True)
    fields = [np.full((tree.level_size(k), 3), float(k)) for k in range(3)]
    field = tabulate_process(tree, fields, 3)
    assert np.allclose(field(tree.time(1), np.zeros((3, 1)), tree.context(1, 1)), 1.0)


def test_compile_field_for_exact_solutions():
    field = compile_field("exp(-t) * sin(pi * x)", 1, 1)
    ctx = build_tree(1, 1, 1.0).context(1, 0)
    x = np.array([[0.5]])
    assert np.isclose(field(1.0, x, ctx)[0], np.exp(-1.0))


def test_heat_problem_passes_assumptions(make_spec):
    report = validate_assumptions(make_spec(G="sin(pi * x)", f="sin(u)"), sample_budget=64)
    assert report.passed, report.failures()


def test_margin_violation_names_the_inequality(make_spec):
    bad = StructuralConstants(lam=1.0, Lam=2.0, kappa=0.9, beta=0.2, rho=2.0, L=1.0)
    report = validate_assumptions(make_spec(G="sin(pi * x)", constants=bad), sample_budget=32)
    assert not report.passed
    check = report.check("parabolicity_margin")
    assert not check.passed
    assert "lambda - kappa" in check.reason
    assert "parabolicity_margin" in set(report.to_frame()["check"])


def test_lipschitz_violation_is_reported(make_spec):
    report = validate_assumptions(make_spec(f="3 * u"), sample_budget=32)
    assert not report.check("lipschitz_f_u").passed


def test_dominating_field_norm_comes_from_its_backward_solve(make_spec):
    spec = make_spec(G="sin(pi * x)", xi="0.3 * sin(pi * x) - 0.05", xi_dom="0.5 * sin(pi * x)")
    tree = build_tree(1, 4, 0.5, recombine=True)
    grid = build_grid([[0.0, 1.0]], [15])
    report = validate_assumptions(spec, sample_budget=32, tree=tree, grid=grid)
    assert report.check("obstacle_dominated").passed
    terminal_only = solve_linear_bspde(make_spec(G="0.5 * sin(pi * x)"), tree, grid)
    expected = terminal_only.hnorm() + terminal_only.vnorm()
    assert report.data_norms["xi_dom"] == pytest.approx(expected, rel=1e-10)
    assert dominating_norm(spec, tree, grid) == pytest.approx(expected, rel=1e-10)
    assert dominating_norm(make_spec(G="sin(pi * x)"), tree, grid) == 0.0


def test_shifted_problem_and_hash():
    problem = {
        "dim": 1, "noise_dim": 1, "horizon": 0.5, "domain": [[0.0, 1.0]],
        "constants": {"lambda": 1.0, "Lambda": 2.0}, "G": "sin(pi * x)", "xi": "0",
    }
    shifted = shifted_problem(problem, {"G": 0.1, "xi": 0})
    assert shifted["G"] == "(sin(pi * x)) + (0.1)"
    assert shifted["xi"] == "0"
    assert spec_hash(problem) == spec_hash(dict(problem))
    assert spec_hash(problem) != spec_hash(shifted)
    assert spec_from_config(shifted).has_obstacle


def test_shifting_a_missing_coefficient_starts_from_zero():
    problem = {
        "dim": 1, "noise_dim": 1, "horizon": 0.5, "domain": [[0.0, 1.0]],
        "constants": {"lambda": 1.0, "Lambda": 2.0},
    }
    shifted = shifted_problem(problem, {"G": 0.1, "f": "sin(pi * x)"})
    assert shifted["G"] == "(0) + (0.1)"
    assert shifted["f"] == "(0) + (sin(pi * x))"
    assert "G" not in problem
    spec = spec_from_config(shifted)
    assert not spec.has_obstacle
    with pytest.raises(ProblemError):
        shifted_problem(problem, {"xi": 0.05})
