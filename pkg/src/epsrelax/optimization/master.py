from __future__ import annotations

import logging
from dataclasses import replace
from typing import Callable, Optional, Sequence

from epsrelax.core.control_data import ControlData
from epsrelax.core.errors import EpsRelaxError
from epsrelax.dynamics.filippov import DEFAULT_GUARD_TOL, audit_differentiability, integrate_filippov
from epsrelax.dynamics.system import PiecewiseSmoothSystem, RegularizedField, TransitionFunction, make_quintic_transition
from epsrelax.optimization.projected_gradient import SolverOptions, project, solve_fixed_epsilon
from epsrelax.optimization.report import OptimizationReport, StageRecord, TerminationReason
from epsrelax.sensitivity.cost import CostFunctional

logger = logging.getLogger(__name__)


def linear_tolerance(epsilon: float) -> float:
    return epsilon


def check_schedule(schedule: Sequence[float]) -> list[float]:
    eps = [float(e) for e in schedule]
    if not eps:
        raise ValueError("Epsilon schedule is empty")
    if any(e <= 0.0 for e in eps):
        raise ValueError(f"Epsilon schedule must be positive: {eps}")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError(f"Epsilon schedule must be strictly decreasing: {eps}")
    return eps


def master_algorithm(
        system: PiecewiseSmoothSystem,
        xi_init: ControlData,
        cost: CostFunctional,
        T: float,
        N: int,
        schedule: Sequence[float],
        sigma_rule: Callable[[float], float] = linear_tolerance,
        phi: Optional[TransitionFunction] = None,
        opts: Optional[SolverOptions] = None,
        audit_step_h: Optional[float] = None,
        guard_tol: float = DEFAULT_GUARD_TOL,
) -> OptimizationReport:
    """
    Solve the relaxed problem for a decreasing epsilon schedule, each stage warm-started
    from the last and stopped at |theta| <= sigma_rule(epsilon). The optimized input is
    then replayed under Filippov dynamics and audited.
    """
    eps_list = check_schedule(schedule)
    phi = phi or make_quintic_transition()
    opts = opts or SolverOptions()

    xi = project(xi_init)
    costs: list[float] = []
    norms: list[float] = []
    thetas: list[float] = []
    eps_hist: list[float] = []
    stages: list[StageRecord] = []
    iterations = 0
    reason: Optional[TerminationReason] = None
    failure: Optional[EpsRelaxError] = None

    for eps in eps_list:
        tol = float(sigma_rule(eps))
        if failure is not None or reason == TerminationReason.LINE_SEARCH_FAIL:
            stages.append(StageRecord(epsilon=eps, tolerance=tol, skipped=True))
            logger.info("Stage eps=%g skipped after an earlier failure", eps)
            continue

        logger.info("Stage eps=%g (tolerance %g)", eps, tol)
        field = RegularizedField(system, phi, eps)
        try:
            stage = solve_fixed_epsilon(field, xi, cost, T, N, replace(opts, theta_tol=tol))
        except EpsRelaxError as exc:
            failure = exc
            stages.append(StageRecord(epsilon=eps, tolerance=tol, error=f"{type(exc).__name__}: {exc}"))
            logger.warning("Stage eps=%g failed: %s", eps, exc)
            continue

        xi = stage.xi
        costs.extend(stage.cost_history)
        norms.extend(stage.grad_norm_history)
        thetas.extend(stage.theta_history)
        eps_hist.extend(stage.epsilon_history)
        iterations += stage.iterations
        reason = stage.reason
        stages.extend(stage.stages)

    if reason is None:
        # No stage produced a result.
        raise failure

    report = OptimizationReport(
        xi=xi,
        cost_history=costs,
        grad_norm_history=norms,
        theta_history=thetas,
        epsilon_history=eps_hist,
        iterations=iterations,
        reason=reason,
        stages=stages,
        finite_difference_jacobians=system.finite_difference_jacobians,
    )

    step_h = audit_step_h or T / (N - 1)
    try:
        replay = integrate_filippov(system, xi, T, step_h, guard_tol)
        report.audit = audit_differentiability(replay, system, window_gamma=2.0 * T / (N - 1), guard_tol=guard_tol)
        if not report.audit.ok:
            logger.warning("Filippov audit of the optimized data failed: %s", report.audit.as_dict())
    except EpsRelaxError as exc:
        report.audit_error = f"{type(exc).__name__}: {exc}"
        logger.warning("Filippov replay of the optimized data failed: %s", exc)
    return report
