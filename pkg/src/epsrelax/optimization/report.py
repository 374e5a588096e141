from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from epsrelax.core.control_data import ControlData
from epsrelax.core.errors import LineSearchFailure
from epsrelax.dynamics.filippov import DifferentiabilityReport


class TerminationReason(str, Enum):
    THETA_TOL = "theta_tol"
    MAX_ITER = "max_iter"
    LINE_SEARCH_FAIL = "line_search_fail"


@dataclass(frozen=True)
class StageRecord:
    """One epsilon stage of the master algorithm (or the single stage of a fixed-epsilon solve)."""

    epsilon: float
    tolerance: float
    iterations: int = 0
    theta: Optional[float] = None
    cost: Optional[float] = None
    reason: Optional[TerminationReason] = None
    skipped: bool = False
    error: Optional[str] = None

    def as_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "tolerance": self.tolerance,
            "iterations": self.iterations,
            "theta": self.theta,
            "cost": self.cost,
            "reason": self.reason.value if self.reason is not None else None,
            "skipped": self.skipped,
            "error": self.error,
        }


@dataclass
class OptimizationReport:
    xi: ControlData
    cost_history: list[float]
    grad_norm_history: list[float]
    theta_history: list[float]
    epsilon_history: list[float]
    iterations: int
    reason: TerminationReason
    stages: list[StageRecord] = field(default_factory=list)
    audit: Optional[DifferentiabilityReport] = None
    audit_error: Optional[str] = None
    config: Optional[dict] = None
    finite_difference_jacobians: bool = False

    @property
    def final_cost(self) -> float:
        return self.cost_history[-1]

    @property
    def theta(self) -> float:
        return self.theta_history[-1]

    @property
    def epsilon(self) -> float:
        return self.epsilon_history[-1]

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "termination_reason": self.reason.value,
            "iterations": self.iterations,
            "final_cost": self.final_cost,
            "theta": self.theta,
            "epsilon": self.epsilon,
            "cost_history": list(self.cost_history),
            "grad_norm_history": list(self.grad_norm_history),
            "theta_history": list(self.theta_history),
            "epsilon_history": list(self.epsilon_history),
            "stages": [s.as_dict() for s in self.stages],
            "x0": self.xi.x0.tolist(),
            "u": self.xi.u_grid.tolist(),
            "audit": self.audit.as_dict() if self.audit is not None else None,
            "audit_error": self.audit_error,
            "finite_difference_jacobians": self.finite_difference_jacobians,
            "config": self.config,
        }

    def raise_for_status(self) -> None:
        """Raise LineSearchFailure if the run stopped on a failed line search."""
        if self.reason == TerminationReason.LINE_SEARCH_FAIL:
            raise LineSearchFailure(
                f"Line search failed at eps={self.epsilon:g} after {self.iterations} iterations "
                f"(cost {self.final_cost:.10g}, theta {self.theta:.4g})"
            )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def summary(self) -> str:
        lines = [
            f"Termination: {self.reason.value} after {self.iterations} iterations",
            f"Final cost:  {self.final_cost:.10g}",
            f"Theta:       {self.theta:.6g} (eps={self.epsilon:g})",
        ]
        for s in self.stages:
            if s.skipped:
                lines.append(f"  stage eps={s.epsilon:g}: skipped")
            elif s.error:
                lines.append(f"  stage eps={s.epsilon:g}: failed ({s.error})")
            else:
                lines.append(
                    f"  stage eps={s.epsilon:g}: {s.reason.value}, {s.iterations} it, "
                    f"theta={s.theta:.4g} (tol {s.tolerance:g}), cost={s.cost:.8g}"
                )
        if self.finite_difference_jacobians:
            lines.append("Jacobians: finite differences (gradients are approximate)")
        if self.audit is not None:
            verdict = "passed" if self.audit.ok else "FAILED"
            lines.append(f"Filippov audit {verdict}: {len(self.audit.arrival_times)} arrivals")
            lines.extend(f"  note: {n}" for n in self.audit.notes)
        elif self.audit_error:
            lines.append(f"Filippov audit not available: {self.audit_error}")
        return "\n".join(lines)
