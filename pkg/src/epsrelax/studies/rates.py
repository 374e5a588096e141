from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd

from epsrelax.core.control_data import ControlData, ControlVariation
from epsrelax.core.errors import AuditFailed, InsufficientDecay
from epsrelax.dynamics.filippov import DEFAULT_GUARD_TOL, audit_differentiability, integrate_filippov
from epsrelax.dynamics.smooth import Scheme, gridpoints_for_epsilon, integrate_smooth, resample_control
from epsrelax.dynamics.system import PiecewiseSmoothSystem, RegularizedField, TransitionFunction, make_quintic_transition
from epsrelax.sensitivity.adjoint import adjoint_gradient
from epsrelax.sensitivity.cost import CostFunctional
from epsrelax.sensitivity.probe import (
    DEFAULT_RATIO_CAP,
    BoundednessTable,
    derivative_boundedness_probe,
    refine_variation,
    unit_input_direction,
)

logger = logging.getLogger(__name__)

DEFAULT_EPSILONS = tuple(float(10.0 ** -p) for p in (1.0, 1.5, 2.0, 2.5, 3.0))
BOUNDEDNESS_EPSILONS = (1e-1, 1e-2, 1e-3, 1e-4)
DEFAULT_SLOPE_WINDOW = (0.8, 1.2)
# Errors at or below this level are round-off, not regularization error.
DEFAULT_NOISE_FLOOR = 1e-10
METRICS = ("sup", "endpoint")


@dataclass(frozen=True)
class RateStudy:
    kind: str
    epsilons: tuple[float, ...]
    errors: tuple[float, ...]
    fitted_slope: float
    fitted_intercept: float
    r_squared: float
    slope_window: tuple[float, float] = DEFAULT_SLOPE_WINDOW
    gridpoints: tuple[int, ...] = ()
    values: tuple[float, ...] = ()
    reference: Optional[float] = None
    metric: Optional[str] = None
    finite_difference_jacobians: bool = False

    def __post_init__(self):
        if len(self.errors) != len(self.epsilons):
            raise ValueError(f"{len(self.errors)} errors for {len(self.epsilons)} epsilons")

    @property
    def passed(self) -> bool:
        lo, hi = self.slope_window
        return bool(np.isfinite(self.fitted_slope) and lo <= self.fitted_slope <= hi)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"epsilon": list(self.epsilons), "error": list(self.errors)})

    def verdict_dict(self) -> dict:
        return {
            "study": self.kind,
            "slope": self.fitted_slope,
            "intercept": self.fitted_intercept,
            "r_squared": self.r_squared,
            "pass": self.passed,
            "slope_window": list(self.slope_window),
            "metric": self.metric,
            "reference": self.reference,
            "values": list(self.values),
            "gridpoints": list(self.gridpoints),
            "finite_difference_jacobians": self.finite_difference_jacobians,
        }

    def to_json(self) -> str:
        return json.dumps(self.verdict_dict(), indent=2)


def fit_log_log(epsilons: Sequence[float], errors: Sequence[float]) -> tuple[float, float, float]:
    """
    Least-squares line through (log eps, log err), zero errors excluded.
    Returns (slope, intercept, r_squared); NaNs when fewer than two points remain.
    """
    eps = np.asarray(epsilons, dtype=float)
    err = np.asarray(errors, dtype=float)
    keep = err > 0.0
    if np.count_nonzero(keep) < 2:
        return float("nan"), float("nan"), float("nan")
    lx = np.log(eps[keep])
    ly = np.log(err[keep])
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0.0 else 1.0
    return float(slope), float(intercept), r2


def _per_epsilon(fn: Callable[[float], tuple], epsilons: Sequence[float], workers: int) -> list[tuple]:
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, epsilons))
    return [fn(e) for e in epsilons]


def _check_epsilons(epsilons: Sequence[float]) -> list[float]:
    eps = [float(e) for e in epsilons]
    if len(eps) < 2 or any(e <= 0.0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError(f"A rate study needs at least two decreasing positive epsilons: {eps}")
    return eps


def _audit(sys, xi, T, guard_tol, window_gamma, grid_ratio):
    step_h = T / (xi.intervals * grid_ratio)
    traj = integrate_filippov(sys, xi, T, step_h, guard_tol)
    gamma = window_gamma if window_gamma is not None else 0.05 * T
    return audit_differentiability(traj, sys, gamma, guard_tol)


def trajectory_rate_study(
        sys: PiecewiseSmoothSystem,
        xi: ControlData,
        T: float,
        epsilons: Sequence[float] = DEFAULT_EPSILONS,
        slope_window: tuple[float, float] = DEFAULT_SLOPE_WINDOW,
        phi: Optional[TransitionFunction] = None,
        metric: str = "sup",
        scheme: Scheme | str = Scheme.RK4,
        grid_ratio: float = 10.0,
        guard_tol: float = DEFAULT_GUARD_TOL,
        window_gamma: Optional[float] = None,
        noise_floor: float = DEFAULT_NOISE_FLOOR,
        workers: int = 1,
) -> RateStudy:
    """
    Distance between the smoothed and the Filippov trajectory for each epsilon, on a grid
    with h <= eps / grid_ratio. "sup" takes the max over the smoothed grid, "endpoint" the
    distance at T.
    """
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS} (got {metric!r})")
    eps_list = _check_epsilons(epsilons)
    phi = phi or make_quintic_transition()

    report = _audit(sys, xi, T, guard_tol, window_gamma, grid_ratio)
    if not report.assumption3_ok:
        raise AuditFailed(
            f"Filippov reference is not transversal at its arrivals "
            f"(margins {list(report.transversality_margins)}); a trajectory rate is undefined"
        )

    def one(eps: float) -> tuple[float, int]:
        N = gridpoints_for_epsilon(T, eps, xi.intervals, grid_ratio)
        xi_eps = resample_control(xi, N - 1)
        smooth = integrate_smooth(RegularizedField(sys, phi, eps), xi_eps, T, N, scheme)
        ref = integrate_filippov(sys, xi_eps, T, T / (N - 1), guard_tol)
        if metric == "endpoint":
            err = float(np.linalg.norm(smooth.final_state - ref.final_state))
        else:
            diff = smooth.states - ref.state_at(smooth.times).reshape(smooth.states.shape)
            err = float(np.max(np.linalg.norm(diff, axis=1)))
        logger.debug("trajectory study eps=%g N=%d err=%.6g", eps, N, err)
        return err, N

    rows = _per_epsilon(one, eps_list, workers)
    errors = [r[0] for r in rows]
    if max(errors) <= noise_floor:
        raise InsufficientDecay(
            f"All trajectory errors are at round-off level (max {max(errors):.3e} <= {noise_floor:.1e}); "
            f"regularization has no measurable effect on this system"
        )
    slope, intercept, r2 = fit_log_log(eps_list, errors)
    study = RateStudy(
        kind="trajectory",
        epsilons=tuple(eps_list),
        errors=tuple(errors),
        fitted_slope=slope,
        fitted_intercept=intercept,
        r_squared=r2,
        slope_window=tuple(slope_window),
        gridpoints=tuple(r[1] for r in rows),
        metric=metric,
        finite_difference_jacobians=sys.finite_difference_jacobians,
    )
    logger.info("Trajectory rate study: slope %.4f (r2 %.4f) -> %s", slope, r2, "pass" if study.passed else "fail")
    return study


def derivative_rate_study(
        sys: PiecewiseSmoothSystem,
        xi: ControlData,
        direction: Optional[ControlVariation],
        cost: CostFunctional,
        T: float,
        epsilons: Sequence[float] = DEFAULT_EPSILONS,
        slope_window: tuple[float, float] = DEFAULT_SLOPE_WINDOW,
        phi: Optional[TransitionFunction] = None,
        scheme: Scheme | str = Scheme.EULER,
        grid_ratio: float = 10.0,
        guard_tol: float = DEFAULT_GUARD_TOL,
        window_gamma: Optional[float] = None,
        reference_divisor: float = 4.0,
        noise_floor: float = DEFAULT_NOISE_FLOOR,
        workers: int = 1,
) -> RateStudy:
    """
    |DL^eps - DL^ref| against eps, with DL^ref computed at min(eps) / reference_divisor.
    The data must pass the Filippov differentiability audit first.
    """
    eps_list = _check_epsilons(epsilons)
    phi = phi or make_quintic_transition()
    direction = direction or unit_input_direction(xi)
    direction.check_compatible(xi)

    report = _audit(sys, xi, T, guard_tol, window_gamma, grid_ratio)
    if not report.ok:
        raise AuditFailed(f"Differentiability audit failed: {report.as_dict()}")

    def one(eps: float) -> tuple[float, int]:
        N = gridpoints_for_epsilon(T, eps, xi.intervals, grid_ratio)
        field = RegularizedField(sys, phi, eps)
        bundle = adjoint_gradient(field, resample_control(xi, N - 1), cost, T, N, scheme)
        value = bundle.dot(refine_variation(direction, xi, N - 1))
        logger.debug("derivative study eps=%g N=%d DL=%.12g", eps, N, value)
        return value, N

    eps_ref = eps_list[-1] / reference_divisor
    rows = _per_epsilon(one, eps_list + [eps_ref], workers)
    reference = rows[-1][0]
    values = [r[0] for r in rows[:-1]]
    errors = [abs(v - reference) for v in values]
    floor = noise_floor * max(1.0, abs(reference))
    if max(errors) <= floor:
        raise InsufficientDecay(
            f"Directional derivatives agree to round-off across all epsilons (max difference "
            f"{max(errors):.3e} <= {floor:.1e}); nothing to rate-fit"
        )
    slope, intercept, r2 = fit_log_log(eps_list, errors)
    study = RateStudy(
        kind="derivative",
        epsilons=tuple(eps_list),
        errors=tuple(errors),
        fitted_slope=slope,
        fitted_intercept=intercept,
        r_squared=r2,
        slope_window=tuple(slope_window),
        gridpoints=tuple(r[1] for r in rows[:-1]),
        values=tuple(values),
        reference=reference,
        finite_difference_jacobians=sys.finite_difference_jacobians,
    )
    logger.info("Derivative rate study: slope %.4f (r2 %.4f) -> %s", slope, r2, "pass" if study.passed else "fail")
    return study


def gradient_boundedness_study(
        sys: PiecewiseSmoothSystem,
        xi: ControlData,
        cost: CostFunctional,
        T: float,
        epsilons: Sequence[float] = BOUNDEDNESS_EPSILONS,
        ratio_cap: float = DEFAULT_RATIO_CAP,
        phi: Optional[TransitionFunction] = None,
        direction: Optional[ControlVariation] = None,
        scheme: Scheme | str = Scheme.EULER,
        grid_ratio: float = 10.0,
        workers: int = 1,
) -> BoundednessTable:
    return derivative_boundedness_probe(
        sys,
        _check_epsilons(epsilons),
        xi,
        cost,
        T,
        phi=phi,
        direction=direction,
        scheme=scheme,
        grid_ratio=grid_ratio,
        ratio_cap=ratio_cap,
        workers=workers,
    )
