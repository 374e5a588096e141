from __future__ import annotations

import logging
from enum import Enum

import numpy as np

from epsrelax.core.control_data import ControlData
from epsrelax.core.errors import NumericalError
from epsrelax.dynamics.system import (
    RegularizedField,
    eval_regularized,
    eval_regularized_jac_u,
    eval_regularized_jac_x,
)
from epsrelax.dynamics.trajectory import ModeLabel, Trajectory

logger = logging.getLogger(__name__)


class Scheme(str, Enum):
    EULER = "euler"
    RK4 = "rk4"


def _check_grid(xi: ControlData, N: int) -> None:
    if N < 2:
        raise ValueError(f"N must be at least 2 gridpoints (got {N})")
    if xi.intervals != N - 1:
        raise ValueError(f"Input grid has {xi.intervals} intervals but N={N} gridpoints need {N - 1}")


def step(field: RegularizedField, x: np.ndarray, u: np.ndarray, h: float, scheme: Scheme) -> np.ndarray:
    scheme = Scheme(scheme)
    if scheme == Scheme.EULER:
        return x + h * eval_regularized(field, x, u)
    k1 = eval_regularized(field, x, u)
    k2 = eval_regularized(field, x + 0.5 * h * k1, u)
    k3 = eval_regularized(field, x + 0.5 * h * k2, u)
    k4 = eval_regularized(field, x + h * k3, u)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step_jacobians(
        field: RegularizedField, x: np.ndarray, u: np.ndarray, h: float, scheme: Scheme
) -> tuple[np.ndarray, np.ndarray]:
    """
    Exact Jacobians (d x_next/d x, d x_next/d u) of one discrete step. For Euler these are
    I + h A and h B.
    """
    scheme = Scheme(scheme)
    n = x.size
    eye = np.eye(n)
    if scheme == Scheme.EULER:
        return eye + h * eval_regularized_jac_x(field, x, u), h * eval_regularized_jac_u(field, x, u)

    k1 = eval_regularized(field, x, u)
    y2 = x + 0.5 * h * k1
    k2 = eval_regularized(field, y2, u)
    y3 = x + 0.5 * h * k2
    k3 = eval_regularized(field, y3, u)
    y4 = x + h * k3

    A1, B1 = eval_regularized_jac_x(field, x, u), eval_regularized_jac_u(field, x, u)
    A2, B2 = eval_regularized_jac_x(field, y2, u), eval_regularized_jac_u(field, y2, u)
    A3, B3 = eval_regularized_jac_x(field, y3, u), eval_regularized_jac_u(field, y3, u)
    A4, B4 = eval_regularized_jac_x(field, y4, u), eval_regularized_jac_u(field, y4, u)

    dk1x, dk1u = A1, B1
    dk2x = A2 @ (eye + 0.5 * h * dk1x)
    dk2u = A2 @ (0.5 * h * dk1u) + B2
    dk3x = A3 @ (eye + 0.5 * h * dk2x)
    dk3u = A3 @ (0.5 * h * dk2u) + B3
    dk4x = A4 @ (eye + h * dk3x)
    dk4u = A4 @ (h * dk3u) + B4

    Mx = eye + (h / 6.0) * (dk1x + 2.0 * dk2x + 2.0 * dk3x + dk4x)
    Mu = (h / 6.0) * (dk1u + 2.0 * dk2u + 2.0 * dk3u + dk4u)
    return Mx, Mu


def rollout(field: RegularizedField, xi: ControlData, T: float, N: int, scheme: Scheme | str = Scheme.EULER) -> np.ndarray:
    """States x_0..x_{N-1} of the discrete regularized flow, shape (N, n)."""
    scheme = Scheme(scheme)
    _check_grid(xi, N)
    h = T / (N - 1)
    states = np.empty((N, xi.state_dim))
    x = np.array(xi.x0, dtype=float)
    states[0] = x
    for k in range(N - 1):
        x = step(field, x, xi.u_grid[k], h, scheme)
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"Non-finite state at step {k + 1} (t={(k + 1) * h:.6g}) with eps={field.epsilon}")
        states[k + 1] = x
    return states


def band_label(gx: float, epsilon: float) -> ModeLabel:
    if gx <= -epsilon:
        return ModeLabel.D1
    if gx >= epsilon:
        return ModeLabel.D2
    return ModeLabel.BAND


def integrate_smooth(
        field: RegularizedField, xi: ControlData, T: float, N: int, scheme: Scheme | str = Scheme.EULER
) -> Trajectory:
    states = rollout(field, xi, T, N, scheme)
    guard = np.array([float(field.system.g(x)) for x in states])
    return Trajectory(
        times=np.linspace(0.0, T, N),
        states=states,
        inputs=np.array(xi.u_grid),
        guard_values=guard,
        modes=tuple(band_label(gx, field.epsilon) for gx in guard),
        epsilon=field.epsilon,
    )


def flow_endpoint(
        field: RegularizedField, xi: ControlData, T: float, N: int, scheme: Scheme | str = Scheme.EULER
) -> np.ndarray:
    return rollout(field, xi, T, N, scheme)[-1]


def gridpoints_for_epsilon(T: float, epsilon: float, base_intervals: int = 1, ratio: float = 10.0) -> int:
    """
    Smallest N whose step T/(N-1) is at most epsilon/ratio and whose interval count is a
    multiple of base_intervals (so the input grid is refined, not re-timed).
    """
    need = max(1, int(np.ceil(T * ratio / epsilon - 1e-9)))
    blocks = -(-need // int(base_intervals))
    return blocks * int(base_intervals) + 1


def resample_control(xi: ControlData, intervals: int) -> ControlData:
    """
    Zero-order-hold resampling onto `intervals` equal intervals; each new interval takes the
    input active at its midpoint. Exact when the new grid refines the old one.
    """
    K = xi.intervals
    if intervals == K:
        return xi
    mids = (np.arange(intervals) + 0.5) / intervals
    idx = np.minimum((mids * K).astype(int), K - 1)
    return xi.with_values(u_grid=xi.u_grid[idx])
