"""
Actuated spring-mass hopper. State (z, z', L, L'): body height and velocity, leg length
and rate; the input is the leg acceleration. The foot is on the ground while z < L.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from epsrelax.core.control_data import Box, ControlData
from epsrelax.dynamics.filippov import DEFAULT_GUARD_TOL, integrate_filippov
from epsrelax.dynamics.smooth import integrate_smooth
from epsrelax.dynamics.system import PiecewiseSmoothSystem, RegularizedField, make_quintic_transition
from epsrelax.dynamics.trajectory import ModeLabel, Trajectory
from epsrelax.optimization.master import master_algorithm
from epsrelax.optimization.projected_gradient import SolverOptions, solve_fixed_epsilon
from epsrelax.optimization.report import OptimizationReport
from epsrelax.sensitivity.cost import CostFunctional, RunningCost, StageTerm, stage_index

logger = logging.getLogger(__name__)

FLIGHT = "flight"
GROUND = "ground"


@dataclass(frozen=True)
class HopperParams:
    m: float = 1.0
    K0: float = 98.1
    D0: float = 2.0
    gravity: float = 9.81

    def __post_init__(self):
        if self.m <= 0.0 or self.K0 <= 0.0:
            raise ValueError(f"Hopper mass and stiffness must be positive (m={self.m}, K0={self.K0})")
        if self.D0 < 0.0:
            raise ValueError(f"Hopper damping must be non-negative (D0={self.D0})")

    @classmethod
    def from_dict(cls, d: dict) -> "HopperParams":
        known = {k: float(v) for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass(frozen=True)
class HopperTask:
    z_apex: float = 1.0
    t_apex: float = 1.0
    t_f: float = 1.8
    x0: tuple[float, ...] = (0.65, 0.0, 0.75, 0.0)
    u_box: tuple[float, float] = (-10.0, 10.0)
    effort_weight: float = 1.0
    leg_max: Optional[float] = 0.9
    stroke_weight: float = 1e3
    N: int = 181
    epsilon: float = 0.01
    schedule: tuple[float, ...] = (0.04, 0.02, 0.01)

    def __post_init__(self):
        if not 0.0 < self.t_apex < self.t_f:
            raise ValueError(f"Need 0 < t_apex < t_f (got t_apex={self.t_apex}, t_f={self.t_f})")
        if len(self.x0) != 4:
            raise ValueError(f"Hopper x0 has four entries (z, z', L, L'); got {list(self.x0)}")
        if not self.x0[0] - self.x0[2] < 0.0:
            raise ValueError(f"Hopper must start in ground contact: z - L = {self.x0[0] - self.x0[2]:g} >= 0")
        if self.effort_weight < 0.0:
            raise ValueError(f"effort_weight must be non-negative (got {self.effort_weight})")
        if self.leg_max is not None and not self.x0[2] <= self.leg_max:
            raise ValueError(f"Initial leg length {self.x0[2]:g} exceeds the stroke limit leg_max={self.leg_max:g}")
        if self.stroke_weight < 0.0:
            raise ValueError(f"stroke_weight must be non-negative (got {self.stroke_weight})")
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        object.__setattr__(self, "schedule", tuple(float(v) for v in self.schedule))

    @classmethod
    def low_effort(cls, **overrides) -> "HopperTask":
        """Effort priced low enough that reaching the apex pays for the hops."""
        return cls(**{"effort_weight": 1e-4, **overrides})

    @classmethod
    def from_dict(cls, d: dict) -> "HopperTask":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        for key in ("x0", "u_box", "schedule"):
            if key in known:
                known[key] = tuple(known[key])
        if d.get("preset") == "low_effort":
            return cls.low_effort(**known)
        return cls(**known)

    def control_data(self, u: float | np.ndarray = 0.0, N: Optional[int] = None) -> ControlData:
        n_grid = N or self.N
        grid = np.broadcast_to(np.asarray(u, dtype=float).reshape(-1, 1), (n_grid - 1, 1))
        return ControlData(
            x0=np.array(self.x0),
            u_grid=np.array(grid),
            u_box=Box.interval(self.u_box[0], self.u_box[1], 1),
        )


def hopper_system(params: Optional[HopperParams] = None) -> PiecewiseSmoothSystem:
    """f1 = ground contact (g < 0), f2 = flight (g > 0), g = z - L."""
    p = params or HopperParams()

    def ground(x, u):
        force = p.K0 * (x[2] - x[0]) + p.D0 * (x[3] - x[1])
        return np.array([x[1], force / p.m - p.gravity, x[3], u[0]])

    def flight(x, u):
        return np.array([x[1], -p.gravity, x[3], u[0]])

    jac_ground = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [-p.K0 / p.m, -p.D0 / p.m, p.K0 / p.m, p.D0 / p.m],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, 0.0, 0.0],
    ])
    jac_flight = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, 0.0, 0.0],
    ])
    jac_u = np.array([[0.0], [0.0], [0.0], [1.0]])
    grad = np.array([1.0, 0.0, -1.0, 0.0])

    return PiecewiseSmoothSystem(
        state_dim=4,
        input_dim=1,
        f1=ground,
        f2=flight,
        g=lambda x: float(x[0] - x[2]),
        jac_f1_x=lambda x, u: jac_ground.copy(),
        jac_f2_x=lambda x, u: jac_flight.copy(),
        jac_f1_u=lambda x, u: jac_u.copy(),
        jac_f2_u=lambda x, u: jac_u.copy(),
        grad_g=lambda x: grad.copy(),
        name="hopper",
    )


def hopper_cost(task: Optional[HopperTask] = None, N: Optional[int] = None) -> CostFunctional:
    """
    (z(t_apex) - z_apex)^2 + z'(t_apex)^2 + (z(t_f) - z0)^2 + z'(t_f)^2
    + int (w * u^2 + w_s * max(L - leg_max, 0)^2).
    With N given, t_apex must fall on the N-point grid over [0, t_f].
    """
    task = task or HopperTask()
    if N is not None:
        stage_index(task.t_apex, task.t_f, N)
    z0 = task.x0[0]
    w = task.effort_weight

    def apex(x):
        return (x[0] - task.z_apex) ** 2 + x[1] ** 2

    def apex_grad(x):
        return np.array([2.0 * (x[0] - task.z_apex), 2.0 * x[1], 0.0, 0.0])

    def settle(x):
        return float((x[0] - z0) ** 2 + x[1] ** 2)

    def settle_grad(x):
        return np.array([2.0 * (x[0] - z0), 2.0 * x[1], 0.0, 0.0])

    # The leg stroke ends at leg_max; longer legs are priced by a quadratic penalty.
    L_max = task.leg_max
    ws = task.stroke_weight if L_max is not None else 0.0

    def overshoot(x):
        return max(float(x[2]) - L_max, 0.0) if ws > 0.0 else 0.0

    def running_value(x, u):
        return w * float(u @ u) + ws * overshoot(x) ** 2

    def running_grad_x(x, u):
        return np.array([0.0, 0.0, 2.0 * ws * overshoot(x), 0.0])

    running = None
    if w > 0.0 or ws > 0.0:
        running = RunningCost(
            value=running_value,
            grad_x=running_grad_x,
            grad_u=lambda x, u: 2.0 * w * np.asarray(u, dtype=float),
        )
    return CostFunctional(
        terminal=settle,
        terminal_grad=settle_grad,
        running=running,
        stages=(StageTerm(task.t_apex, lambda x: float(apex(x)), apex_grad),),
        name="hopper",
    )


@dataclass(frozen=True)
class Phase:
    kind: str
    start: float
    end: float

    def as_dict(self) -> dict:
        return {"kind": self.kind, "start": self.start, "end": self.end}


_PHASE_OF = {ModeLabel.D1: GROUND, ModeLabel.SLIDING: GROUND, ModeLabel.D2: FLIGHT}


def contact_phases(traj: Trajectory) -> list[Phase]:
    """
    Ground and flight intervals from the mode labels. Surface and band samples are
    transition points shared by the phases on either side.
    """
    phases: list[Phase] = []
    current: Optional[str] = None
    start = float(traj.times[0])
    for t, mode in zip(traj.times, traj.modes):
        t = float(t)
        kind = _PHASE_OF.get(mode)
        if kind is None:
            if current is not None:
                phases.append(Phase(current, start, t))
                current = None
            start = t
        elif current is None:
            current = kind
        elif kind != current:
            phases.append(Phase(current, start, t))
            current, start = kind, t
    if current is not None:
        phases.append(Phase(current, start, float(traj.times[-1])))
    return phases


def flight_phases_before(phases: Sequence[Phase], t: float) -> int:
    return sum(1 for p in phases if p.kind == FLIGHT and p.start < t)


@dataclass
class HoppingResult:
    report: OptimizationReport
    smoothed: Trajectory
    replay: Trajectory
    phases: list[Phase] = field(default_factory=list)
    apex_time: float = 1.0

    @property
    def flights_before_apex(self) -> int:
        return flight_phases_before(self.phases, self.apex_time)


def hopper_solver_options(**overrides) -> SolverOptions:
    base = {"theta_tol": 1e-6, "max_iter": 400, "step_rule": "bb"}
    return SolverOptions(**{**base, **overrides})


def optimize_hopping(
        task: Optional[HopperTask] = None,
        params: Optional[HopperParams] = None,
        epsilon: Optional[float] = None,
        N: Optional[int] = None,
        schedule: Optional[Sequence[float]] = None,
        opts: Optional[SolverOptions] = None,
        u_init: float | np.ndarray = 0.0,
        replay_substeps: int = 10,
        guard_tol: float = DEFAULT_GUARD_TOL,
) -> HoppingResult:
    """
    Contact-implicit hopping: no contact sequence is given, the optimizer finds one.
    With a schedule the master algorithm runs; with only epsilon a single fixed-epsilon
    solve. The optimized input is replayed under Filippov dynamics.
    """
    task = task or HopperTask()
    params = params or HopperParams()
    N = N or task.N
    if schedule is None and epsilon is None:
        schedule = task.schedule
    sys = hopper_system(params)
    cost = hopper_cost(task, N)
    xi = task.control_data(u_init, N)
    opts = opts or hopper_solver_options()
    phi = make_quintic_transition()
    T = task.t_f

    if schedule is not None:
        report = master_algorithm(
            sys, xi, cost, T, N, schedule, phi=phi, opts=opts,
            audit_step_h=T / (N - 1) / replay_substeps, guard_tol=guard_tol,
        )
        eps_final = float(list(schedule)[-1])
    else:
        eps_final = float(epsilon)
        report = solve_fixed_epsilon(RegularizedField(sys, phi, eps_final), xi, cost, T, N, opts)

    smoothed = integrate_smooth(RegularizedField(sys, phi, eps_final), report.xi, T, N, opts.scheme)
    replay = integrate_filippov(sys, report.xi, T, T / (N - 1) / replay_substeps, guard_tol)
    phases = contact_phases(replay)
    result = HoppingResult(report, smoothed, replay, phases, apex_time=task.t_apex)
    logger.info(
        "Hopping: cost %.6g, %d phases, %d flights before t=%g",
        report.final_cost, len(phases), result.flights_before_apex, task.t_apex,
    )
    return result
