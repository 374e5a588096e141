from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from epsrelax.core.errors import ConfigError
from epsrelax.dynamics.system import PiecewiseSmoothSystem


def _const(value: float, n: int = 1) -> Callable:
    v = np.full(n, float(value))
    return lambda x, u: v.copy()


def _zeros(rows: int, cols: int) -> Callable:
    return lambda *args: np.zeros((rows, cols))


def sliding1d(params: Optional[dict] = None) -> PiecewiseSmoothSystem:
    """x' = +1 below the surface x = 0 and -1 above it: every solution ends sliding at 0."""
    return PiecewiseSmoothSystem(
        state_dim=1,
        input_dim=1,
        f1=_const(1.0),
        f2=_const(-1.0),
        g=lambda x: float(x[0]),
        jac_f1_x=_zeros(1, 1),
        jac_f2_x=_zeros(1, 1),
        jac_f1_u=_zeros(1, 1),
        jac_f2_u=_zeros(1, 1),
        grad_g=lambda x: np.ones(1),
        name="sliding1d",
    )


def crossing1d(params: Optional[dict] = None) -> PiecewiseSmoothSystem:
    """x' = 1 + u below 0, 2 + u above: a transversal crossing that speeds up."""
    p = params or {}
    a = float(p.get("speed_below", 1.0))
    b = float(p.get("speed_above", 2.0))
    return PiecewiseSmoothSystem(
        state_dim=1,
        input_dim=1,
        f1=lambda x, u: np.array([a + u[0]]),
        f2=lambda x, u: np.array([b + u[0]]),
        g=lambda x: float(x[0]),
        jac_f1_x=_zeros(1, 1),
        jac_f2_x=_zeros(1, 1),
        jac_f1_u=lambda x, u: np.ones((1, 1)),
        jac_f2_u=lambda x, u: np.ones((1, 1)),
        grad_g=lambda x: np.ones(1),
        name="crossing1d",
    )


def grazing2d(params: Optional[dict] = None) -> PiecewiseSmoothSystem:
    """
    x1' = x2 and x2' = -1 below the surface x1 = 0 (x2' = +1 above). From (-d^2/2, d) the
    first coordinate is -(t - d)^2 / 2 and touches the surface tangentially at t = d.
    """
    return PiecewiseSmoothSystem(
        state_dim=2,
        input_dim=1,
        f1=lambda x, u: np.array([x[1], -1.0]),
        f2=lambda x, u: np.array([x[1], 1.0]),
        g=lambda x: float(x[0]),
        jac_f1_x=lambda x, u: np.array([[0.0, 1.0], [0.0, 0.0]]),
        jac_f2_x=lambda x, u: np.array([[0.0, 1.0], [0.0, 0.0]]),
        jac_f1_u=_zeros(2, 1),
        jac_f2_u=_zeros(2, 1),
        grad_g=lambda x: np.array([1.0, 0.0]),
        name="grazing2d",
    )


def grazing_initial_state(delta: float) -> np.ndarray:
    return np.array([-0.5 * delta * delta, delta])


def smooth1d(params: Optional[dict] = None) -> PiecewiseSmoothSystem:
    """The integrator x' = u on both sides: the relaxation changes nothing."""
    return PiecewiseSmoothSystem(
        state_dim=1,
        input_dim=1,
        f1=lambda x, u: np.array([u[0]]),
        f2=lambda x, u: np.array([u[0]]),
        g=lambda x: float(x[0]),
        jac_f1_x=_zeros(1, 1),
        jac_f2_x=_zeros(1, 1),
        jac_f1_u=lambda x, u: np.ones((1, 1)),
        jac_f2_u=lambda x, u: np.ones((1, 1)),
        grad_g=lambda x: np.ones(1),
        name="smooth1d",
    )


def linear_system(A: np.ndarray, B: np.ndarray, guard_normal: Optional[np.ndarray] = None,
                  offset: float = 0.0, name: str = "linear") -> PiecewiseSmoothSystem:
    """x' = A x + B u on both sides of the plane c.x = offset."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n, m = B.shape
    if A.shape != (n, n):
        raise ValueError(f"A must be {n}x{n} to match B {B.shape}; got {A.shape}")
    c = np.eye(n)[0] if guard_normal is None else np.asarray(guard_normal, dtype=float)

    def f(x, u):
        return A @ x + B @ u

    return PiecewiseSmoothSystem(
        state_dim=n,
        input_dim=m,
        f1=f,
        f2=f,
        g=lambda x: float(c @ x) - offset,
        jac_f1_x=lambda x, u: A.copy(),
        jac_f2_x=lambda x, u: A.copy(),
        jac_f1_u=lambda x, u: B.copy(),
        jac_f2_u=lambda x, u: B.copy(),
        grad_g=lambda x: c.copy(),
        name=name,
    )


def _hopper(params: Optional[dict] = None) -> PiecewiseSmoothSystem:
    from epsrelax.models.hopper import HopperParams, hopper_system

    return hopper_system(HopperParams.from_dict(params or {}))


SYSTEMS: dict[str, Callable[[Optional[dict]], PiecewiseSmoothSystem]] = {
    "sliding1d": sliding1d,
    "crossing1d": crossing1d,
    "grazing2d": grazing2d,
    "smooth1d": smooth1d,
    "hopper": _hopper,
}


def build_system(name: str, params: Optional[dict] = None) -> PiecewiseSmoothSystem:
    try:
        builder = SYSTEMS[name]
    except KeyError:
        raise ConfigError(f"Unknown system {name!r}. Builtin systems: {', '.join(sorted(SYSTEMS))}") from None
    return builder(params)
