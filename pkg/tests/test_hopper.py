import numpy as np
import pytest

from epsrelax.core.errors import TaskInfeasibleGrid
from epsrelax.dynamics.system import RegularizedField
from epsrelax.dynamics.trajectory import ModeLabel, Trajectory
from epsrelax.models.hopper import (
    FLIGHT,
    GROUND,
    HopperParams,
    HopperTask,
    Phase,
    contact_phases,
    flight_phases_before,
    hopper_cost,
    hopper_solver_options,
    optimize_hopping,
)
from epsrelax.sensitivity.adjoint import evaluate_cost

STANDING = np.array([0.65, 0.0, 0.75, 0.0])


def test_ground_field_balances_at_rest(hopper):
    f = hopper.f1(STANDING, np.zeros(1))
    np.testing.assert_allclose(f, [0.0, 0.0, 0.0, 0.0], atol=1e-12)


def test_flight_field_is_ballistic(hopper):
    x = np.array([1.0, 0.3, 0.75, -0.2])
    np.testing.assert_allclose(hopper.f2(x, np.array([2.5])), [0.3, -9.81, -0.2, 2.5])


def test_guard_is_body_above_leg(hopper):
    assert hopper.g(STANDING) == pytest.approx(-0.1)
    np.testing.assert_array_equal(hopper.grad_g(STANDING), [1.0, 0.0, -1.0, 0.0])


def test_hopper_jacobians(hopper, rng):
    check = hopper.check_jacobians(rng, samples=30, center=STANDING, scale=0.5)
    assert check.ok, check.max_relative_error


def test_params_validation():
    with pytest.raises(ValueError):
        HopperParams(m=0.0)
    with pytest.raises(ValueError):
        HopperParams(D0=-1.0)
    assert HopperParams.from_dict({"K0": "50", "colour": "red"}).K0 == 50.0


def test_task_validation():
    with pytest.raises(ValueError):
        HopperTask(t_apex=2.0)
    with pytest.raises(ValueError):
        HopperTask(x0=(0.8, 0.0, 0.75, 0.0))
    with pytest.raises(ValueError):
        HopperTask(x0=(0.65, 0.0, 0.75))
    with pytest.raises(ValueError):
        HopperTask(leg_max=0.7)
    with pytest.raises(ValueError):
        HopperTask(stroke_weight=-1.0)
    assert HopperTask(leg_max=None).leg_max is None
    task = HopperTask.from_dict({"preset": "low_effort", "u_box": [-5, 5], "t_f": 1.8})
    assert task.effort_weight == 1e-4
    assert task.leg_max == 0.9
    assert task.u_box == (-5, 5)
    xi = task.control_data(0.0)
    assert xi.u_grid.shape == (180, 1)
    assert xi.u_box.hi[0] == 5.0


def test_cost_of_standing_still(hopper, phi, hopper_task):
    field = RegularizedField(hopper, phi, 0.01)
    cost = hopper_cost(hopper_task, hopper_task.N)
    # Apex deficit (0.65 - 1.0)^2; the settle term and the effort vanish.
    value = evaluate_cost(field, hopper_task.control_data(0.0), cost, hopper_task.t_f, hopper_task.N)
    assert value == pytest.approx(0.1225, abs=1e-10)


def test_cost_terms_vanish_at_the_targets(hopper_task):
    cost = hopper_cost(hopper_task)
    (apex,) = cost.stages
    assert apex.time == hopper_task.t_apex
    assert apex.value(np.array([1.0, 0.0, 0.9, 0.0])) == 0.0
    assert cost.terminal(STANDING) == 0.0
    np.testing.assert_array_equal(cost.terminal_grad(STANDING), np.zeros(4))


def test_cost_gradients_match_differences(rng, hopper_task):
    cost = hopper_cost(hopper_task)
    assert cost.check_gradient(rng, 4) <= 1e-6
    (apex,) = cost.stages
    x = rng.standard_normal(4)
    e = 1e-6 * np.eye(4)
    fd = [(apex.value(x + e[i]) - apex.value(x - e[i])) / 2e-6 for i in range(4)]
    np.testing.assert_allclose(apex.grad(x), fd, rtol=1e-6, atol=1e-8)


def test_stroke_penalty_prices_only_the_overshoot():
    running = hopper_cost(HopperTask(effort_weight=0.0)).running
    u = np.zeros(1)
    assert running.value(STANDING, u) == 0.0
    assert running.value(np.array([0.65, 0.0, 0.9, 0.0]), u) == 0.0
    long_leg = np.array([0.65, 0.0, 0.95, 0.0])
    assert running.value(long_leg, u) == pytest.approx(1e3 * 0.05 ** 2)
    np.testing.assert_allclose(running.grad_x(long_leg, u), [0.0, 0.0, 2e3 * 0.05, 0.0])
    np.testing.assert_array_equal(running.grad_u(long_leg, np.array([4.0])), [0.0])


def test_effort_term_adds_the_integral_of_u_squared(hopper, phi):
    field = RegularizedField(hopper, phi, 0.01)
    with_effort = HopperTask(effort_weight=1.0, leg_max=None)
    without = HopperTask(effort_weight=0.0, leg_max=None)
    assert hopper_cost(without).running is None
    xi = with_effort.control_data(1.0)
    a = evaluate_cost(field, xi, hopper_cost(with_effort), 1.8, 181)
    b = evaluate_cost(field, xi, hopper_cost(without), 1.8, 181)
    assert a - b == pytest.approx(1.8, rel=1e-12)


def test_apex_off_the_grid(hopper_task):
    with pytest.raises(TaskInfeasibleGrid):
        hopper_cost(hopper_task, N=200)
    with pytest.raises(TaskInfeasibleGrid):
        optimize_hopping(hopper_task, N=200, epsilon=0.01)


def _labelled(modes):
    n = len(modes)
    return Trajectory(
        times=np.arange(float(n)),
        states=np.zeros((n, 4)),
        inputs=np.zeros((n - 1, 1)),
        guard_values=np.zeros(n),
        modes=tuple(modes),
    )


def test_contact_phases_from_labels():
    D1, D2, X = ModeLabel.D1, ModeLabel.D2, ModeLabel.CROSSING
    phases = contact_phases(_labelled([D1, D1, X, D2, D2, X, D1, D1, X, D2, X, D1]))
    assert phases == [
        Phase(GROUND, 0.0, 2.0),
        Phase(FLIGHT, 2.0, 5.0),
        Phase(GROUND, 5.0, 8.0),
        Phase(FLIGHT, 8.0, 10.0),
        Phase(GROUND, 10.0, 11.0),
    ]
    assert flight_phases_before(phases, 9.0) == 2
    assert flight_phases_before(phases, 8.0) == 1
    assert contact_phases(_labelled([D1, D1])) == [Phase(GROUND, 0.0, 1.0)]


def test_standing_task_stays_on_the_ground(hopper_task):
    result = optimize_hopping(HopperTask(effort_weight=1.0, z_apex=0.65), epsilon=0.01,
                              opts=hopper_solver_options(max_iter=5))
    assert result.report.final_cost <= 1e-10
    assert result.report.iterations == 0
    assert [p.kind for p in result.phases] == [GROUND]
    assert result.flights_before_apex == 0


@pytest.mark.slow
def test_optimized_hopping_reaches_the_apex():
    task = HopperTask.low_effort()
    result = optimize_hopping(task)
    z = result.smoothed.states[:, 0]
    zdot = result.smoothed.states[:, 1]
    k_apex = int(round(task.t_apex / task.t_f * (task.N - 1)))

    assert abs(z[k_apex] - task.z_apex) <= 0.05
    assert abs(zdot[k_apex]) <= 0.1
    assert abs(z[-1] - task.x0[0]) <= 0.05
    assert result.report.xi.is_feasible()
    assert np.all(np.diff(result.report.cost_history[: result.report.stages[0].iterations + 1]) <= 0.0)
    # The stroke limit rules out reaching the apex on a long leg: the apex is a flight.
    assert np.max(result.smoothed.states[:, 2]) <= task.leg_max + 0.01
    apex_phase = next(p for p in result.phases if p.start <= task.t_apex <= p.end)
    assert apex_phase.kind == FLIGHT
    assert result.flights_before_apex >= 1
    assert len(result.phases) >= 3
    assert result.phases[0].kind == GROUND and result.phases[-1].kind == GROUND
    assert result.report.audit is not None and result.report.audit.ok
