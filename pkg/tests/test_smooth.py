import numpy as np
import pytest

from epsrelax.core.control_data import ControlData, ControlVariation
from epsrelax.core.errors import NumericalError
from epsrelax.dynamics.filippov import integrate_filippov
from epsrelax.dynamics.smooth import (
    Scheme,
    flow_endpoint,
    gridpoints_for_epsilon,
    integrate_smooth,
    resample_control,
    rollout,
    step,
    step_jacobians,
)
from epsrelax.dynamics.system import PiecewiseSmoothSystem, RegularizedField
from epsrelax.dynamics.trajectory import ModeLabel


@pytest.mark.parametrize("scheme", [Scheme.EULER, Scheme.RK4])
def test_fields_agree_means_relaxation_is_exact(integrator, phi, scheme):
    xi = ControlData.constant([-0.5], 1.0, 10)
    smooth = integrate_smooth(RegularizedField(integrator, phi, 0.05), xi, 1.0, 11, scheme)
    ref = integrate_filippov(integrator, xi, 1.0, 0.1)
    np.testing.assert_allclose(smooth.final_state, ref.final_state, atol=1e-12)
    np.testing.assert_allclose(smooth.states[:, 0], np.linspace(-0.5, 0.5, 11), atol=1e-12)


def test_smoothed_sliding_approaches_surface(sliding, phi):
    eps = 0.01
    N = gridpoints_for_epsilon(2.0, eps)
    xi = resample_control(ControlData.constant([-1.0], 0.0, 1), N - 1)
    assert xi.intervals == N - 1
    traj = integrate_smooth(RegularizedField(sliding, phi, eps), xi, 2.0, N, Scheme.RK4)
    assert traj.inputs.shape == (N - 1, 1)
    assert abs(traj.final_state[0]) < eps
    assert ModeLabel.BAND in traj.modes
    assert traj.modes[0] == ModeLabel.D1
    assert traj.epsilon == eps


def test_rk4_step_jacobians_match_differences(hopper, phi, rng):
    field = RegularizedField(hopper, phi, 0.01)
    h = 0.002
    for _ in range(200):
        L = rng.uniform(0.6, 0.9)
        x = np.array([L + rng.uniform(-0.02, 0.02), rng.normal(), L, rng.normal()])
        u = rng.uniform(-10, 10, 1)
        Mx, Mu = step_jacobians(field, x, u, h, Scheme.RK4)
        d = 1e-7
        for i in range(4):
            e = np.zeros(4)
            e[i] = d
            fd = (step(field, x + e, u, h, Scheme.RK4) - step(field, x - e, u, h, Scheme.RK4)) / (2 * d)
            np.testing.assert_allclose(Mx[:, i], fd, rtol=1e-5, atol=1e-6)
        fd_u = (step(field, x, u + d, h, Scheme.RK4) - step(field, x, u - d, h, Scheme.RK4)) / (2 * d)
        np.testing.assert_allclose(Mu[:, 0], fd_u, rtol=1e-5, atol=1e-8)


def test_euler_step_jacobians(crossing, phi):
    field = RegularizedField(crossing, phi, 0.1)
    x, u = np.array([0.03]), np.array([0.2])
    Mx, Mu = step_jacobians(field, x, u, 0.01, "euler")
    expected = 1.0 + 0.01 * phi.deriv(0.3) / 0.1
    np.testing.assert_allclose(Mx, [[expected]])
    np.testing.assert_allclose(Mu, [[0.01]])


def test_hopper_stands_still(hopper, phi, hopper_task):
    xi = hopper_task.control_data(0.0)
    for eps in (0.01, 1e-3):
        traj = integrate_smooth(RegularizedField(hopper, phi, eps), xi, hopper_task.t_f, hopper_task.N)
        assert np.max(np.abs(traj.states[:, 0] - 0.65)) <= 1e-2
        np.testing.assert_allclose(traj.final_state, hopper_task.x0, atol=1e-12)


def test_grid_mismatch_is_rejected(sliding, phi):
    xi = ControlData.constant([-1.0], 0.0, 5)
    with pytest.raises(ValueError):
        rollout(RegularizedField(sliding, phi, 0.1), xi, 1.0, 11)


def test_non_finite_state_raises(phi):
    blowup = PiecewiseSmoothSystem.from_fields(
        1, 1, lambda x, u: x ** 2, lambda x, u: x ** 2, lambda x: float(x[0]) - 1e9, name="blowup"
    )
    xi = ControlData.constant([10.0], 0.0, 50)
    with pytest.raises(NumericalError):
        flow_endpoint(RegularizedField(blowup, phi, 0.1), xi, 5.0, 51)


@pytest.mark.parametrize(
    "T, eps, base, expected",
    [(2.0, 0.1, 1, 201), (1.0, 0.01, 10, 1001), (1.0, 10 ** -1.5, 10, 321), (2.0, 0.1, 20, 201)],
)
def test_gridpoints_for_epsilon(T, eps, base, expected):
    N = gridpoints_for_epsilon(T, eps, base)
    assert N == expected
    assert T / (N - 1) <= eps / 10 + 1e-15
    assert (N - 1) % base == 0


def test_resample_refines_zero_order_hold():
    xi = ControlData(x0=[0.0], u_grid=np.array([[1.0], [2.0], [3.0]]))
    fine = resample_control(xi, 9)
    np.testing.assert_array_equal(fine.u_grid[:, 0], [1, 1, 1, 2, 2, 2, 3, 3, 3])
    assert resample_control(xi, 3) is xi


def test_resampled_input_drives_the_same_flow(crossing, phi):
    xi = ControlData(x0=[-0.5], u_grid=np.array([[0.1], [-0.2]]))
    explicit = xi.with_values(u_grid=np.repeat(xi.u_grid, 100, axis=0))
    field = RegularizedField(crossing, phi, 0.05)
    np.testing.assert_array_equal(
        flow_endpoint(field, resample_control(xi, 200), 1.0, 201, Scheme.RK4),
        flow_endpoint(field, explicit, 1.0, 201, Scheme.RK4),
    )


def test_integrate_smooth_is_bitwise_deterministic(hopper, phi, rng):
    for case in range(200):
        eps = rng.uniform(0.005, 0.05)
        scheme = (Scheme.EULER, Scheme.RK4)[case % 2]
        xi = ControlData(
            x0=np.array([0.65 + rng.uniform(-0.05, 0.05), rng.normal(), 0.75, rng.normal()]),
            u_grid=rng.uniform(-10.0, 10.0, (20, 1)),
        )
        first = integrate_smooth(RegularizedField(hopper, phi, eps), xi, 0.4, 21, scheme)
        second = integrate_smooth(RegularizedField(hopper, phi, eps), xi, 0.4, 21, scheme)
        np.testing.assert_array_equal(first.states, second.states)
        np.testing.assert_array_equal(first.guard_values, second.guard_values)
        assert first.modes == second.modes


def test_smoothed_flow_is_lipschitz_in_the_data(crossing, phi, rng):
    T, N = 1.0, 21
    h = T / (N - 1)
    for _ in range(200):
        eps = rng.uniform(0.1, 0.3)
        field = RegularizedField(crossing, phi, eps)
        xi = ControlData(x0=np.array([rng.uniform(-0.8, -0.2)]), u_grid=rng.uniform(-0.25, 0.25, (N - 1, 1)))
        # Nonnegative directions: each Euler step is monotone in x and u, so the endpoint moves
        # by at least dx0 + h * sum(du) and at most exp(T * max(phi') / eps) times that.
        dxi = ControlVariation(rng.uniform(0.0, 1.0, 1), rng.uniform(0.0, 1.0, (N - 1, 1)))
        size = float(dxi.dx0[0] + h * dxi.du.sum())
        base = flow_endpoint(field, xi, T, N)
        quotients = [
            abs(float(flow_endpoint(field, xi.perturbed(dxi, lam), T, N)[0] - base[0])) / lam
            for lam in (1e-6, 1e-7)
        ]
        assert quotients[1] >= size * (1.0 - 1e-6)
        assert quotients[1] <= np.exp(T * (15.0 / 16.0) / eps) * size * (1.0 + 1e-6)
        assert quotients[0] == pytest.approx(quotients[1], rel=1e-2)
