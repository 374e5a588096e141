from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from epsrelax.core.control_data import ControlData, ControlVariation
from epsrelax.core.errors import NumericalError
from epsrelax.dynamics.smooth import Scheme
from epsrelax.dynamics.system import RegularizedField
from epsrelax.optimization.report import OptimizationReport, StageRecord, TerminationReason
from epsrelax.sensitivity.adjoint import SensitivityBundle, adjoint_gradient, evaluate_cost
from epsrelax.sensitivity.cost import CostFunctional

logger = logging.getLogger(__name__)

STEP_RULES = ("unit", "bb")
BB_STEP_RANGE = (1e-10, 1e10)


@dataclass(frozen=True)
class SolverOptions:
    theta_tol: float = 1e-6
    max_iter: int = 200
    step_rule: str = "unit"
    armijo_sigma: float = 1e-4
    armijo_beta: float = 0.5
    initial_step: float = 1.0
    max_backtracks: int = 60
    scheme: Scheme = Scheme.EULER

    def __post_init__(self):
        if self.theta_tol < 0.0:
            raise ValueError(f"theta_tol must be non-negative (got {self.theta_tol})")
        if self.max_iter < 0:
            raise ValueError(f"max_iter must be non-negative (got {self.max_iter})")
        if self.step_rule not in STEP_RULES:
            raise ValueError(f"step_rule must be one of {STEP_RULES} (got {self.step_rule!r})")
        if not 0.0 < self.armijo_sigma < 1.0 or not 0.0 < self.armijo_beta < 1.0:
            raise ValueError("armijo_sigma and armijo_beta must lie in (0, 1)")
        if self.initial_step <= 0.0 or self.max_backtracks < 1:
            raise ValueError("initial_step must be positive and max_backtracks at least 1")
        object.__setattr__(self, "scheme", Scheme(self.scheme))

    @classmethod
    def from_dict(cls, d: dict) -> "SolverOptions":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def as_dict(self) -> dict:
        out = asdict(self)
        out["scheme"] = self.scheme.value
        return out


@dataclass(frozen=True)
class OptimalityValue:
    theta: float
    direction: ControlVariation


def project(xi: ControlData) -> ControlData:
    x0 = xi.x0 if xi.x0_box is None else xi.x0_box.clamp(xi.x0)
    u = xi.u_grid if xi.u_box is None else xi.u_box.clamp(xi.u_grid)
    return xi.with_values(x0=x0, u_grid=u)


def optimality_value(
        field: RegularizedField,
        xi: ControlData,
        cost: CostFunctional,
        T: float,
        N: int,
        scheme: Scheme | str = Scheme.EULER,
        bundle: Optional[SensitivityBundle] = None,
) -> OptimalityValue:
    """
    theta = inf { <grad, d> : xi + d feasible }, solved coordinatewise on the shifted box.
    Unbounded coordinates are limited to |d_i| <= 1.
    """
    if bundle is None:
        bundle = adjoint_gradient(field, xi, cost, T, N, scheme)
    g = bundle.flat()
    v = xi.flat()
    lo, hi = xi.bounds_flat()
    down = np.where(np.isfinite(lo), lo - v, -1.0)
    up = np.where(np.isfinite(hi), hi - v, 1.0)

    a = g * down
    b = g * up
    take_down = a <= b
    best = np.where(take_down, a, b)
    shift = np.where(take_down, down, up)
    # Coordinates with no descent keep d_i = 0.
    idle = best >= 0.0
    best[idle] = 0.0
    shift[idle] = 0.0
    return OptimalityValue(theta=float(np.sum(best)), direction=ControlVariation.from_flat(shift, xi))


def _metric_weights(xi: ControlData, h: float) -> np.ndarray:
    """Diagonal of the R^n x L2 inner product on flat coordinates."""
    return np.concatenate([np.ones(xi.state_dim), np.full(xi.u_grid.size, h)])


def solve_fixed_epsilon(
        field: RegularizedField,
        xi_init: ControlData,
        cost: CostFunctional,
        T: float,
        N: int,
        opts: Optional[SolverOptions] = None,
) -> OptimizationReport:
    """
    Projected gradient with Armijo backtracking. Steps follow the L2 representer of the
    gradient, so step sizes do not depend on N. Stops when |theta| <= theta_tol, after
    max_iter iterations, or when the line search fails.
    """
    opts = opts or SolverOptions()
    h = T / (N - 1)
    w = _metric_weights(xi_init, h)

    xi = project(xi_init)
    if not np.array_equal(xi.flat(), xi_init.flat()):
        logger.warning("Initial data was infeasible and has been projected onto the boxes")
    lo, hi = xi.bounds_flat()

    bundle = adjoint_gradient(field, xi, cost, T, N, opts.scheme)
    theta = optimality_value(field, xi, cost, T, N, opts.scheme, bundle).theta
    costs, norms, thetas = [bundle.value], [bundle.l2_norm(h)], [theta]
    logger.info("Solve at eps=%g: start cost=%.10g theta=%.4g", field.epsilon, bundle.value, theta)

    prev: Optional[tuple[np.ndarray, np.ndarray]] = None
    iterations = 0
    while True:
        if abs(theta) <= opts.theta_tol:
            reason = TerminationReason.THETA_TOL
            break
        if iterations >= opts.max_iter:
            reason = TerminationReason.MAX_ITER
            break

        v = xi.flat()
        g = bundle.flat()
        rep = g / w
        step = opts.initial_step
        if opts.step_rule == "bb" and prev is not None:
            s_vec = v - prev[0]
            y_vec = rep - prev[1]
            sy = float(np.sum(w * s_vec * y_vec))
            if sy > 0.0:
                step = float(np.clip(np.sum(w * s_vec * s_vec) / sy, *BB_STEP_RANGE))

        accepted = None
        for j in range(opts.max_backtracks):
            cand = np.clip(v - step * rep, lo, hi)
            decrease = float(g @ (cand - v))
            if decrease < 0.0:
                try:
                    c_new = evaluate_cost(field, xi.from_flat(cand), cost, T, N, opts.scheme)
                except NumericalError as exc:
                    logger.debug("Trial step %.3g rejected: %s", step, exc)
                    c_new = np.inf
                if c_new <= bundle.value + opts.armijo_sigma * decrease:
                    accepted = cand
                    break
            logger.debug("Backtrack %d: step %.3g rejected", j + 1, step)
            step *= opts.armijo_beta

        if accepted is None:
            reason = TerminationReason.LINE_SEARCH_FAIL
            logger.warning(
                "Line search failed after %d backtracks at iteration %d (eps=%g, theta=%.4g)",
                opts.max_backtracks, iterations, field.epsilon, theta,
            )
            break

        prev = (v, rep)
        xi = xi.from_flat(accepted)
        bundle = adjoint_gradient(field, xi, cost, T, N, opts.scheme)
        theta = optimality_value(field, xi, cost, T, N, opts.scheme, bundle).theta
        iterations += 1
        costs.append(bundle.value)
        norms.append(bundle.l2_norm(h))
        thetas.append(theta)
        logger.debug("it %d: step=%.3g cost=%.10g theta=%.4g", iterations, step, bundle.value, theta)

    logger.info(
        "Solve at eps=%g: %s after %d iterations, cost=%.10g theta=%.4g",
        field.epsilon, reason.value, iterations, costs[-1], theta,
    )
    return OptimizationReport(
        xi=xi,
        cost_history=costs,
        grad_norm_history=norms,
        theta_history=thetas,
        epsilon_history=[field.epsilon] * len(costs),
        iterations=iterations,
        reason=reason,
        finite_difference_jacobians=field.system.finite_difference_jacobians,
        stages=[
            StageRecord(
                epsilon=field.epsilon,
                tolerance=opts.theta_tol,
                iterations=iterations,
                theta=theta,
                cost=costs[-1],
                reason=reason,
            )
        ],
    )
