import json

import numpy as np
import pytest

from epsrelax.core.control_data import Box, ControlData
from epsrelax.core.errors import LineSearchFailure, NumericalError
from epsrelax.dynamics.system import PiecewiseSmoothSystem, RegularizedField
from epsrelax.optimization.master import check_schedule, master_algorithm
from epsrelax.optimization.projected_gradient import (
    SolverOptions,
    optimality_value,
    project,
    solve_fixed_epsilon,
)
from epsrelax.optimization.report import TerminationReason
from epsrelax.sensitivity.cost import CostFunctional

TARGET_ONE = CostFunctional.quadratic(np.array([1.0]))


def integrator_data(x0=0.0, u=0.0, intervals=10, box=10.0):
    return ControlData.constant([x0], u, intervals, u_box=None if box is None else Box.interval(-box, box, 1))


def wrong_sign_cost():
    return CostFunctional(terminal=lambda x: float(x[0]), terminal_grad=lambda x: -np.ones(1), name="wrong-sign")


def test_project_examples():
    xi = ControlData(
        x0=[3.0, -4.0],
        u_grid=np.array([[2.0], [-3.0], [0.5]]),
        u_box=Box.interval(-1.0, 1.0, 1),
        x0_box=Box(np.array([-1.0, -np.inf]), np.array([1.0, 0.0])),
    )
    p = project(xi)
    np.testing.assert_array_equal(p.u_grid[:, 0], [1.0, -1.0, 0.5])
    np.testing.assert_array_equal(p.x0, [1.0, -4.0])
    assert p.is_feasible()


def test_project_is_idempotent(rng):
    for _ in range(200):
        lo = rng.uniform(-2.0, 0.0)
        hi = lo + rng.uniform(0.0, 2.0)
        xi = ControlData(x0=rng.normal(size=2), u_grid=rng.normal(scale=3.0, size=(5, 2)),
                         u_box=Box.interval(lo, hi, 2), x0_box=Box.interval(lo, hi, 2))
        once = project(xi)
        twice = project(once)
        np.testing.assert_array_equal(once.flat(), twice.flat())
        assert once.is_feasible()


def test_theta_on_the_integrator(integrator, phi):
    field = RegularizedField(integrator, phi, 0.01)
    # x(T) = 0, grad_u = 2 (x(T) - 1) h = -0.2 on each of 10 intervals
    boxed = optimality_value(field, integrator_data(), TARGET_ONE, 1.0, 11)
    assert boxed.theta == pytest.approx(-20.0)
    np.testing.assert_allclose(boxed.direction.du[:, 0], 10.0)
    np.testing.assert_array_equal(boxed.direction.dx0, [0.0])

    unbounded = optimality_value(field, integrator_data(box=None), TARGET_ONE, 1.0, 11)
    assert unbounded.theta == pytest.approx(-2.0)

    at_optimum = optimality_value(field, integrator_data(u=1.0), TARGET_ONE, 1.0, 11)
    assert at_optimum.theta == pytest.approx(0.0, abs=1e-14)


def test_theta_is_never_positive(crossing, phi, rng):
    field = RegularizedField(crossing, phi, 0.05)
    for _ in range(50):
        xi = ControlData(x0=[rng.uniform(-1.0, -0.2)], u_grid=rng.uniform(-0.25, 0.25, (10, 1)),
                         u_box=Box.interval(-0.25, 0.25, 1), free_x0=bool(rng.integers(2)))
        cost = CostFunctional.quadratic(rng.normal(size=1))
        assert optimality_value(field, xi, cost, 1.0, 11).theta <= 0.0


def test_theta_scales_with_the_cost(crossing, phi, crossing_xi):
    field = RegularizedField(crossing, phi, 0.05)
    cost = CostFunctional.quadratic(np.array([0.7]))
    base = optimality_value(field, crossing_xi, cost, 1.0, 11).theta
    scaled = optimality_value(field, crossing_xi, cost.scaled(3.0), 1.0, 11).theta
    assert scaled == pytest.approx(3.0 * base, rel=1e-12)


def test_solve_reaches_the_target(integrator, phi):
    field = RegularizedField(integrator, phi, 0.01)
    report = solve_fixed_epsilon(field, integrator_data(), TARGET_ONE, 1.0, 11, SolverOptions(theta_tol=1e-8))
    assert report.final_cost <= 1e-6
    assert report.reason == TerminationReason.THETA_TOL
    np.testing.assert_allclose(report.xi.u_grid, 1.0, atol=1e-6)
    assert len(report.stages) == 1


def test_no_iterations_at_the_optimum(integrator, phi):
    field = RegularizedField(integrator, phi, 0.01)
    report = solve_fixed_epsilon(field, integrator_data(u=1.0), TARGET_ONE, 1.0, 11)
    assert report.iterations == 0
    assert report.reason == TerminationReason.THETA_TOL
    assert report.cost_history == [pytest.approx(0.0, abs=1e-28)]


@pytest.mark.parametrize("rule", ["unit", "bb"])
def test_costs_decrease_and_iterates_stay_feasible(crossing, phi, rng, rule):
    field = RegularizedField(crossing, phi, 0.05)
    xi = ControlData(x0=[-0.5], u_grid=rng.uniform(-0.25, 0.25, (20, 1)), u_box=Box.interval(-0.25, 0.25, 1))
    cost = CostFunctional.quadratic(np.array([0.2]))
    report = solve_fixed_epsilon(field, xi, cost, 1.0, 21, SolverOptions(step_rule=rule, max_iter=50))
    assert np.all(np.diff(report.cost_history) <= 0.0)
    assert report.xi.is_feasible()
    assert len(report.theta_history) == report.iterations + 1


def test_infeasible_start_is_projected(integrator, phi):
    field = RegularizedField(integrator, phi, 0.01)
    xi = ControlData.constant([0.0], 20.0, 10, u_box=Box.interval(-10.0, 10.0, 1))
    report = solve_fixed_epsilon(field, xi, TARGET_ONE, 1.0, 11, SolverOptions(max_iter=0))
    assert report.reason == TerminationReason.MAX_ITER
    np.testing.assert_array_equal(report.xi.u_grid, 10.0)


def test_wrong_gradient_fails_the_line_search(integrator, phi):
    field = RegularizedField(integrator, phi, 0.01)
    report = solve_fixed_epsilon(
        field, integrator_data(box=None), wrong_sign_cost(), 1.0, 11, SolverOptions(max_backtracks=10)
    )
    assert report.reason == TerminationReason.LINE_SEARCH_FAIL
    assert report.iterations == 0
    assert report.theta < 0.0


def test_master_matches_a_single_solve_on_a_smooth_system(integrator, phi):
    xi = integrator_data(x0=-0.5)
    single = solve_fixed_epsilon(RegularizedField(integrator, phi, 0.025), xi, TARGET_ONE, 1.0, 11,
                                 SolverOptions(theta_tol=0.025))
    master = master_algorithm(integrator, xi, TARGET_ONE, 1.0, 11, [0.1, 0.05, 0.025], phi=phi)
    np.testing.assert_allclose(master.xi.flat(), single.xi.flat(), rtol=0, atol=1e-15)
    assert master.final_cost == pytest.approx(single.final_cost, abs=1e-15)
    assert [s.epsilon for s in master.stages] == [0.1, 0.05, 0.025]
    assert master.audit is not None and master.audit.ok


def test_master_on_the_crossing_toy(crossing, phi, crossing_xi):
    cost = CostFunctional.linear(np.ones(1))
    report = master_algorithm(crossing, crossing_xi, cost, 1.0, 11, [0.1, 0.05, 0.025], phi=phi)
    assert report.theta >= -0.025
    assert report.epsilon == 0.025
    assert [s.tolerance for s in report.stages] == [0.1, 0.05, 0.025]
    assert not any(s.skipped for s in report.stages)
    np.testing.assert_allclose(report.xi.u_grid, -0.25)
    assert report.audit.ok
    assert report.audit.arrival_times[0] == pytest.approx(2.0 / 3.0, abs=1e-6)


def test_master_skips_stages_after_a_failed_line_search(integrator, phi):
    report = master_algorithm(
        integrator, integrator_data(x0=-0.5, box=None), wrong_sign_cost(), 1.0, 11, [0.1, 0.05, 0.025],
        phi=phi, opts=SolverOptions(max_backtracks=10),
    )
    assert report.reason == TerminationReason.LINE_SEARCH_FAIL
    assert [s.skipped for s in report.stages] == [False, True, True]
    assert "skipped" in report.summary()


def test_master_reraises_when_no_stage_completes(phi):
    broken = PiecewiseSmoothSystem.from_fields(
        1, 1, lambda x, u: np.array([np.nan]), lambda x, u: np.array([np.nan]), lambda x: float(x[0]), name="nan"
    )
    with pytest.raises(NumericalError):
        master_algorithm(broken, integrator_data(x0=-0.5), TARGET_ONE, 1.0, 11, [0.1, 0.01], phi=phi)


@pytest.mark.parametrize("schedule", [[], [0.1, 0.1], [0.1, 0.2], [0.1, -0.01], [0.0]])
def test_schedule_must_decrease(schedule, integrator):
    with pytest.raises(ValueError):
        check_schedule(schedule)
    with pytest.raises(ValueError):
        master_algorithm(integrator, integrator_data(), TARGET_ONE, 1.0, 11, schedule)


def test_solver_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(step_rule="newton")
    with pytest.raises(ValueError):
        SolverOptions(armijo_beta=1.0)
    opts = SolverOptions.from_dict({"max_iter": 5, "scheme": "rk4", "unknown": 1})
    assert opts.max_iter == 5
    assert opts.as_dict()["scheme"] == "rk4"


def test_report_serializes(integrator, phi):
    report = master_algorithm(integrator, integrator_data(x0=-0.5), TARGET_ONE, 1.0, 11, [0.1, 0.01], phi=phi)
    data = json.loads(report.to_json())
    assert data["schema_version"] == 1
    assert data["termination_reason"] == "theta_tol"
    assert len(data["stages"]) == 2
    assert data["audit"]["ok"] is True
    assert len(data["u"]) == 10
    assert report.summary().startswith("Termination: theta_tol")


def test_failed_line_search_raises_on_request(integrator, phi):
    field = RegularizedField(integrator, phi, 0.01)
    report = solve_fixed_epsilon(
        field, integrator_data(box=None), wrong_sign_cost(), 1.0, 11, SolverOptions(max_backtracks=10)
    )
    with pytest.raises(LineSearchFailure):
        report.raise_for_status()


def test_scaled_cost_takes_the_same_first_step(crossing, phi, rng):
    field = RegularizedField(crossing, phi, 0.05)
    xi = ControlData(x0=[-0.5], u_grid=rng.uniform(-0.2, 0.2, (20, 1)), u_box=Box.interval(-0.25, 0.25, 1))
    cost = CostFunctional.quadratic(np.array([0.3]))
    c = 8.0
    base = solve_fixed_epsilon(field, xi, cost, 1.0, 21, SolverOptions(max_iter=1))
    scaled = solve_fixed_epsilon(field, xi, cost.scaled(c), 1.0, 21, SolverOptions(max_iter=1, initial_step=1.0 / c))
    assert base.iterations == scaled.iterations == 1
    np.testing.assert_allclose(scaled.xi.u_grid, base.xi.u_grid, rtol=1e-10, atol=1e-12)
    assert scaled.theta_history[0] == pytest.approx(c * base.theta_history[0], rel=1e-12)


def test_finite_difference_jacobians_are_flagged(phi):
    fd_integrator = PiecewiseSmoothSystem.from_fields(
        1, 1, lambda x, u: np.array([u[0]]), lambda x, u: np.array([u[0]]), lambda x: float(x[0]), name="fd"
    )
    report = master_algorithm(fd_integrator, integrator_data(x0=-0.5), TARGET_ONE, 1.0, 11, [0.1], phi=phi)
    assert report.finite_difference_jacobians
    assert report.to_dict()["finite_difference_jacobians"] is True
    assert "finite differences" in report.summary()
    assert report.final_cost <= 1e-6


def test_every_iterate_stays_in_the_boxes(crossing, phi, rng):
    # The solver is deterministic: a run capped at k iterations ends on the k-th iterate of
    # any longer run, so random caps sample every iterate.
    for case in range(200):
        field = RegularizedField(crossing, phi, rng.uniform(0.02, 0.2))
        lo = rng.uniform(-0.5, 0.0)
        box = Box.interval(lo, lo + rng.uniform(0.05, 0.5), 1)
        xi = ControlData(x0=np.array([rng.uniform(-0.8, -0.2)]), u_grid=rng.uniform(-1.0, 1.0, (10, 1)), u_box=box)
        cost = CostFunctional.quadratic(np.array([rng.uniform(-1.0, 2.0)]))
        cap = int(rng.integers(0, 6))
        opts = SolverOptions(max_iter=cap, step_rule=("unit", "bb")[case % 2])
        report = solve_fixed_epsilon(field, xi, cost, 1.0, 11, opts)
        assert report.iterations <= cap
        assert report.xi.is_feasible()
        np.testing.assert_array_equal(report.xi.x0, xi.x0)
