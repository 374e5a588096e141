from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from epsrelax.core.control_data import ControlData, ControlVariation
from epsrelax.dynamics.smooth import Scheme, rollout, step_jacobians
from epsrelax.dynamics.system import RegularizedField, augment_with_running_cost
from epsrelax.sensitivity.cost import CostFunctional, stage_index

logger = logging.getLogger(__name__)

DEFAULT_FD_STEP = 1e-5


@dataclass(frozen=True)
class SensitivityBundle:
    value: float
    grad_x0: np.ndarray
    grad_u: np.ndarray
    adjoint_path: Optional[np.ndarray] = None
    directional: Optional[float] = None

    def flat(self) -> np.ndarray:
        return np.concatenate([self.grad_x0, self.grad_u.ravel()])

    def dot(self, variation: ControlVariation) -> float:
        return float(self.grad_x0 @ variation.dx0 + np.sum(self.grad_u * variation.du))

    def l2_norm(self, h: float) -> float:
        """Norm of the gradient as an element of R^n x L2([0,T]); independent of the grid size."""
        return float(np.sqrt(self.grad_x0 @ self.grad_x0 + np.sum(self.grad_u ** 2) / h))


@dataclass(frozen=True)
class _DiscreteProblem:
    field: RegularizedField
    xi: ControlData
    state_dim: int
    terminal: Callable[[np.ndarray], float]
    terminal_grad: Callable[[np.ndarray], np.ndarray]
    stages: dict[int, list]


def _prepare(field: RegularizedField, xi: ControlData, cost: CostFunctional, T: float, N: int) -> _DiscreteProblem:
    n = xi.state_dim
    stages: dict[int, list] = {}
    for term in cost.stages:
        stages.setdefault(stage_index(term.time, T, N), []).append(term)

    if cost.running is None:
        return _DiscreteProblem(field, xi, n, cost.terminal, cost.terminal_grad, stages)

    r = cost.running
    aug = augment_with_running_cost(field.system, r.value, r.grad_x, r.grad_u)
    return _DiscreteProblem(
        field=RegularizedField(aug, field.phi, field.epsilon),
        xi=replace(xi, x0=np.append(xi.x0, 0.0), x0_box=None),
        state_dim=n,
        terminal=lambda z: cost.terminal(z[:n]) + float(z[n]),
        terminal_grad=lambda z: np.append(np.asarray(cost.terminal_grad(z[:n]), dtype=float), 1.0),
        stages=stages,
    )


def _stage_value(prob: _DiscreteProblem, k: int, z: np.ndarray) -> float:
    return sum(term.value(z[: prob.state_dim]) for term in prob.stages.get(k, ()))


def _stage_grad(prob: _DiscreteProblem, k: int, z: np.ndarray) -> Optional[np.ndarray]:
    terms = prob.stages.get(k)
    if not terms:
        return None
    g = np.zeros(z.size)
    for term in terms:
        g[: prob.state_dim] += np.asarray(term.grad(z[: prob.state_dim]), dtype=float)
    return g


def _value(prob: _DiscreteProblem, states: np.ndarray) -> float:
    total = float(prob.terminal(states[-1]))
    for k in prob.stages:
        total += _stage_value(prob, k, states[k])
    return total


def evaluate_cost(
        field: RegularizedField, xi: ControlData, cost: CostFunctional, T: float, N: int,
        scheme: Scheme | str = Scheme.EULER,
) -> float:
    prob = _prepare(field, xi, cost, T, N)
    return _value(prob, rollout(prob.field, prob.xi, T, N, scheme))


def forward_sensitivity(
        field: RegularizedField, xi: ControlData, dxi: ControlVariation, T: float, N: int,
        scheme: Scheme | str = Scheme.EULER,
) -> np.ndarray:
    """
    D phi_T(xi; dxi): the differential of the discrete flow, propagated as
    dx_{k+1} = Mx_k dx_k + Mu_k du_k along the nominal trajectory.
    """
    dxi.check_compatible(xi)
    states = rollout(field, xi, T, N, scheme)
    h = T / (N - 1)
    dx = np.array(dxi.dx0, dtype=float)
    for k in range(N - 1):
        Mx, Mu = step_jacobians(field, states[k], xi.u_grid[k], h, scheme)
        dx = Mx @ dx + Mu @ dxi.du[k]
    return dx


def adjoint_gradient(
        field: RegularizedField, xi: ControlData, cost: CostFunctional, T: float, N: int,
        scheme: Scheme | str = Scheme.EULER,
) -> SensitivityBundle:
    """
    Gradient of the discrete cost by the backward recursion p_k = Mx_k^T p_{k+1} (+ stage terms),
    p_N = grad l(x_N); grad_x0 = p_0 and grad_u_k = Mu_k^T p_{k+1}.
    """
    prob = _prepare(field, xi, cost, T, N)
    states = rollout(prob.field, prob.xi, T, N, scheme)
    h = T / (N - 1)

    p = np.asarray(prob.terminal_grad(states[-1]), dtype=float).copy()
    last = _stage_grad(prob, N - 1, states[-1])
    if last is not None:
        p += last

    path = np.empty((N, states.shape[1]))
    path[-1] = p
    grad_u = np.empty_like(prob.xi.u_grid)
    for k in range(N - 2, -1, -1):
        Mx, Mu = step_jacobians(prob.field, states[k], prob.xi.u_grid[k], h, scheme)
        grad_u[k] = Mu.T @ p
        p = Mx.T @ p
        extra = _stage_grad(prob, k, states[k])
        if extra is not None:
            p = p + extra
        path[k] = p

    n = prob.state_dim
    return SensitivityBundle(
        value=_value(prob, states),
        grad_x0=path[0, :n].copy(),
        grad_u=grad_u,
        adjoint_path=path[:, :n].copy(),
    )


def directional_derivative(
        field: RegularizedField, xi: ControlData, dxi: ControlVariation, cost: CostFunctional, T: float, N: int,
        scheme: Scheme | str = Scheme.EULER,
) -> float:
    dxi.check_compatible(xi)
    return adjoint_gradient(field, xi, cost, T, N, scheme).dot(dxi)


def finite_difference_gradient(
        field: RegularizedField, xi: ControlData, cost: CostFunctional, T: float, N: int,
        lam: float = DEFAULT_FD_STEP,
        scheme: Scheme | str = Scheme.EULER,
        indices: Optional[Sequence[int]] = None,
) -> SensitivityBundle:
    """
    Central differences over the flat coordinates (x0, u-grid) with step lam * max(1, |coordinate|).
    Coordinates not listed in `indices` are returned as NaN.
    """
    if lam <= 0.0:
        raise ValueError(f"Finite-difference step must be positive (got {lam})")
    v = xi.flat()
    grad = np.full(v.size, np.nan)
    coords = range(v.size) if indices is None else indices
    for i in coords:
        step = lam * max(1.0, abs(v[i]))
        vp = v.copy()
        vm = v.copy()
        vp[i] += step
        vm[i] -= step
        fp = evaluate_cost(field, xi.from_flat(vp), cost, T, N, scheme)
        fm = evaluate_cost(field, xi.from_flat(vm), cost, T, N, scheme)
        grad[i] = (fp - fm) / (2.0 * step)
    n = xi.state_dim
    return SensitivityBundle(
        value=evaluate_cost(field, xi, cost, T, N, scheme),
        grad_x0=grad[:n],
        grad_u=grad[n:].reshape(xi.u_grid.shape),
    )
