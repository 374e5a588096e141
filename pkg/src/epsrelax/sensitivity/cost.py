from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from epsrelax.core.errors import TaskInfeasibleGrid

StateFn = Callable[[np.ndarray], float]
StateGrad = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class RunningCost:
    """Integrand r(x, u) with its partial gradients."""

    value: Callable[[np.ndarray, np.ndarray], float]
    grad_x: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad_u: Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class StageTerm:
    """A term evaluated on the state at an interior gridpoint (e.g. an apex snapshot)."""

    time: float
    value: StateFn
    grad: StateGrad


@dataclass(frozen=True)
class CostFunctional:
    """
    L(xi) = terminal(x(T)) + sum of stage terms + integral of the running cost.
    The running cost is reduced to terminal form by state augmentation before differentiation.
    """

    terminal: StateFn
    terminal_grad: StateGrad
    running: Optional[RunningCost] = None
    stages: tuple[StageTerm, ...] = ()
    name: str = ""

    @classmethod
    def linear(cls, weights: np.ndarray, name: str = "linear") -> "CostFunctional":
        w = np.asarray(weights, dtype=float)
        return cls(terminal=lambda x: float(w @ x), terminal_grad=lambda x: w.copy(), name=name)

    @classmethod
    def quadratic(cls, target: np.ndarray, weights: Optional[np.ndarray] = None, name: str = "quadratic") -> "CostFunctional":
        c = np.asarray(target, dtype=float)
        w = np.ones_like(c) if weights is None else np.asarray(weights, dtype=float)
        return cls(
            terminal=lambda x: float(np.sum(w * (x - c) ** 2)),
            terminal_grad=lambda x: 2.0 * w * (x - c),
            name=name,
        )

    @classmethod
    def constant(cls, value: float = 0.0) -> "CostFunctional":
        return cls(terminal=lambda x: float(value), terminal_grad=lambda x: np.zeros(np.size(x)), name="constant")

    def scaled(self, c: float) -> "CostFunctional":
        running = None
        if self.running is not None:
            r = self.running
            running = RunningCost(
                value=lambda x, u: c * r.value(x, u),
                grad_x=lambda x, u: c * np.asarray(r.grad_x(x, u)),
                grad_u=lambda x, u: c * np.asarray(r.grad_u(x, u)),
            )
        return CostFunctional(
            terminal=lambda x: c * self.terminal(x),
            terminal_grad=lambda x: c * np.asarray(self.terminal_grad(x)),
            running=running,
            stages=tuple(
                StageTerm(s.time, (lambda x, s=s: c * s.value(x)), (lambda x, s=s: c * np.asarray(s.grad(x))))
                for s in self.stages
            ),
            name=f"{c:g}*{self.name}",
        )

    def check_gradient(self, rng: np.random.Generator, dim: int, samples: int = 20, step: float = 1e-6) -> float:
        """Max relative error of terminal_grad against central differences."""
        worst = 0.0
        for _ in range(samples):
            x = rng.standard_normal(dim)
            g = np.asarray(self.terminal_grad(x), dtype=float)
            for i in range(dim):
                e = np.zeros(dim)
                e[i] = step * max(1.0, abs(x[i]))
                fd = (self.terminal(x + e) - self.terminal(x - e)) / (2.0 * e[i])
                worst = max(worst, abs(fd - g[i]) / max(1.0, abs(fd)))
        return worst


def stage_index(time: float, T: float, N: int, tol: float = 1e-9) -> int:
    """Grid index of `time` on the N-point grid over [0, T]; the time must be a gridpoint."""
    pos = time / T * (N - 1)
    k = int(round(pos))
    if abs(pos - k) > tol * max(1.0, abs(pos)) or not 0 <= k <= N - 1:
        raise TaskInfeasibleGrid(
            f"t={time:g} is not a gridpoint of the {N}-point grid over [0, {T:g}] "
            f"(lands at index {pos:.6f}); choose N with t/T*(N-1) integral"
        )
    return k
