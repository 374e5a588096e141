from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from epsrelax.core.control_data import ControlData
from epsrelax.core.errors import DegenerateSliding, NumericalError, TransversalityViolation, ZenoSuspected
from epsrelax.dynamics.system import PiecewiseSmoothSystem
from epsrelax.dynamics.trajectory import EventKind, ModeLabel, SwitchEvent, Trajectory

logger = logging.getLogger(__name__)

DEFAULT_GUARD_TOL = 1e-10
BISECTION_CAP = 80
EVENT_CAP = 1000
PROJECTION_CAP = 20
SLIDING_DENOM_FLOOR = 1e-12


def lie_derivatives(sys: PiecewiseSmoothSystem, x: np.ndarray, u: np.ndarray) -> tuple[float, float]:
    grad = np.asarray(sys.grad_g(x), dtype=float)
    return (
        float(grad @ np.asarray(sys.f1(x, u), dtype=float)),
        float(grad @ np.asarray(sys.f2(x, u), dtype=float)),
    )


def classify(sys: PiecewiseSmoothSystem, x: np.ndarray, u: np.ndarray, guard_tol: float = DEFAULT_GUARD_TOL) -> ModeLabel:
    gx = float(sys.g(x))
    if gx < -guard_tol:
        return ModeLabel.D1
    if gx > guard_tol:
        return ModeLabel.D2
    l1, l2 = lie_derivatives(sys, x, u)
    if l1 * l2 > 0.0:
        return ModeLabel.CROSSING
    if l1 > 0.0 and l2 < 0.0:
        return ModeLabel.SLIDING
    raise TransversalityViolation(
        f"Neither field is transversal at the surface: L_f1 g = {l1:.3e}, L_f2 g = {l2:.3e} "
        f"at x={np.asarray(x).tolist()}"
    )


def sliding_field(sys: PiecewiseSmoothSystem, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """The convex combination (1 - alpha) f1 + alpha f2 tangent to the surface."""
    grad = np.asarray(sys.grad_g(x), dtype=float)
    f1 = np.asarray(sys.f1(x, u), dtype=float)
    f2 = np.asarray(sys.f2(x, u), dtype=float)
    denom = float(grad @ (f1 - f2))
    if abs(denom) < SLIDING_DENOM_FLOOR:
        raise DegenerateSliding(f"grad g . (f1 - f2) = {denom:.3e} at x={np.asarray(x).tolist()}")
    alpha = float(grad @ f1) / denom
    return (1.0 - alpha) * f1 + alpha * f2


def project_to_surface(sys: PiecewiseSmoothSystem, x: np.ndarray, guard_tol: float) -> np.ndarray:
    """Newton steps along grad g onto g = 0."""
    y = np.array(x, dtype=float)
    for _ in range(PROJECTION_CAP):
        gx = float(sys.g(y))
        if abs(gx) <= guard_tol:
            break
        grad = np.asarray(sys.grad_g(y), dtype=float)
        nrm2 = float(grad @ grad)
        if nrm2 == 0.0:
            raise DegenerateSliding(f"Cannot project onto the surface: grad g = 0 at x={y.tolist()}")
        y = y - (gx / nrm2) * grad
    return y


def _rk4(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float,
         post: Callable[[np.ndarray], np.ndarray] | None = None) -> np.ndarray:
    p = post if post is not None else (lambda y: y)
    k1 = fn(x)
    k2 = fn(p(x + 0.5 * h * k1))
    k3 = fn(p(x + 0.5 * h * k2))
    k4 = fn(p(x + h * k3))
    return p(x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))


@dataclass
class _Recorder:
    times: list[float] = field(default_factory=list)
    states: list[np.ndarray] = field(default_factory=list)
    inputs: list[np.ndarray] = field(default_factory=list)
    modes: list[ModeLabel] = field(default_factory=list)
    events: list[SwitchEvent] = field(default_factory=list)

    def sample(self, t: float, x: np.ndarray, mode: ModeLabel, u_prev: np.ndarray | None) -> None:
        if self.times and t <= self.times[-1]:
            # Zero-length step: the event coincides with the previous sample; relabel it.
            self.states[-1] = x
            self.modes[-1] = mode
            return
        if self.times:
            self.inputs.append(u_prev)
        self.times.append(t)
        self.states.append(x)
        self.modes.append(mode)


def integrate_filippov(
        sys: PiecewiseSmoothSystem,
        xi: ControlData,
        T: float,
        step_h: float,
        guard_tol: float = DEFAULT_GUARD_TOL,
        event_cap: int = EVENT_CAP,
) -> Trajectory:
    """
    Fixed-step RK4 inside D1/D2, bisection localization of guard events, and sliding
    motion under the sliding field with every RK4 stage projected back onto g = 0.
    Every input-grid time is a sample; event times are added as extra samples.
    """
    if not np.all(np.isfinite(xi.x0)):
        raise NumericalError(f"Initial state is not finite: {xi.x0.tolist()}")
    if T <= 0.0 or step_h <= 0.0:
        raise ValueError(f"T and step_h must be positive (got T={T}, step_h={step_h})")

    K = xi.intervals
    grid = np.linspace(0.0, T, K + 1)
    snap = 1e-12 * max(1.0, T)

    def input_index(t: float) -> int:
        k = int(np.searchsorted(grid, t + snap, side="right")) - 1
        return min(max(k, 0), K - 1)

    rec = _Recorder()
    t = 0.0
    x = np.array(xi.x0, dtype=float)
    u = xi.u_grid[input_index(t)]

    label = classify(sys, x, u, guard_tol)
    mode = label
    if label == ModeLabel.CROSSING:
        l1, _ = lie_derivatives(sys, x, u)
        mode = ModeLabel.D2 if l1 > 0.0 else ModeLabel.D1
    rec.sample(t, x, label, None)

    # After a crossing the state sits inside the guard band; band_start marks that.
    band_start = label != mode

    while t < T - snap:
        k = input_index(t)
        u = xi.u_grid[k]
        t_next = min(t + step_h, grid[k + 1], T)
        if grid[k + 1] - t_next < snap:
            t_next = grid[k + 1]
        h = t_next - t

        if mode == ModeLabel.SLIDING:
            t, x, mode = _sliding_step(sys, x, u, t, h, guard_tol, rec)
            if len(rec.events) > event_cap:
                raise ZenoSuspected(f"More than {event_cap} guard events before t={t:.6g}")
            if not np.all(np.isfinite(x)):
                raise NumericalError(f"Non-finite state while sliding at t={t:.6g}")
            band_start = True
            continue

        side = 1.0 if mode == ModeLabel.D2 else -1.0
        f_active = sys.f2 if mode == ModeLabel.D2 else sys.f1

        def flow(x_start: np.ndarray, tau: float) -> np.ndarray:
            return _rk4(lambda y: np.asarray(f_active(y, u), dtype=float), x_start, tau)

        def reached(y: np.ndarray) -> bool:
            s = side * float(sys.g(y))
            return s < -guard_tol if band_start else s <= guard_tol

        x_new = flow(x, h)
        if not np.all(np.isfinite(x_new)):
            raise NumericalError(f"Non-finite state at t={t_next:.6g} in mode {mode.value}")

        if not reached(x_new):
            t, x = t_next, x_new
            band_start = band_start and abs(float(sys.g(x))) <= guard_tol
            rec.sample(t, x, mode, u)
            continue

        tau, x_ev = _bisect_event(flow, reached, x, h)
        if abs(float(sys.g(x_ev))) > guard_tol:
            x_ev = project_to_surface(sys, x_ev, guard_tol)
        t_ev = t + tau
        if t_ev >= T - snap:
            t_ev = T

        label = classify(sys, x_ev, u, guard_tol)
        if label == ModeLabel.CROSSING:
            l1, _ = lie_derivatives(sys, x_ev, u)
            new_mode = ModeLabel.D2 if l1 > 0.0 else ModeLabel.D1
            kind = EventKind.CROSSING
        else:
            new_mode = ModeLabel.SLIDING
            kind = EventKind.ARRIVAL
            x_ev = project_to_surface(sys, x_ev, guard_tol)
        rec.events.append(SwitchEvent(t_ev, kind, mode, new_mode))
        logger.debug("%s at t=%.12g: %s -> %s", kind.value, t_ev, mode.value, new_mode.value)
        if len(rec.events) > event_cap:
            raise ZenoSuspected(f"More than {event_cap} guard events before t={t_ev:.6g}")

        rec.sample(t_ev, x_ev, label, u)
        t, x, mode = t_ev, x_ev, new_mode
        band_start = True

    if T - rec.times[-1] > snap:
        rec.sample(T, x, rec.modes[-1], xi.u_grid[-1])
    else:
        rec.times[-1] = T

    states = np.vstack(rec.states)
    return Trajectory(
        times=np.array(rec.times),
        states=states,
        inputs=np.vstack(rec.inputs) if rec.inputs else np.zeros((0, xi.input_dim)),
        guard_values=np.array([float(sys.g(s)) for s in states]),
        modes=tuple(rec.modes),
        events=tuple(rec.events),
    )


def _bisect_event(flow, reached, x: np.ndarray, h: float) -> tuple[float, np.ndarray]:
    lo, hi = 0.0, h
    x_hi = flow(x, hi)
    for _ in range(BISECTION_CAP):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        x_mid = flow(x, mid)
        if reached(x_mid):
            hi, x_hi = mid, x_mid
        else:
            lo = mid
    return hi, x_hi


def _sliding_step(sys, x, u, t, h, guard_tol, rec: _Recorder):
    def on_surface(y):
        return project_to_surface(sys, y, guard_tol)

    def exiting(y) -> bool:
        l1, l2 = lie_derivatives(sys, y, u)
        return l1 <= 0.0 or l2 >= 0.0

    def flow(x_start, tau):
        return _rk4(lambda y: sliding_field(sys, y, u), x_start, tau, post=on_surface)

    x_new = flow(x, h)
    if not exiting(x_new):
        rec.sample(t + h, x_new, ModeLabel.SLIDING, u)
        return t + h, x_new, ModeLabel.SLIDING

    tau, x_ex = _bisect_event(flow, exiting, x, h)
    l1, l2 = lie_derivatives(sys, x_ex, u)
    new_mode = ModeLabel.D1 if l1 <= 0.0 else ModeLabel.D2
    t_ex = t + tau
    rec.events.append(SwitchEvent(t_ex, EventKind.EXIT, ModeLabel.SLIDING, new_mode))
    logger.debug("sliding exit at t=%.12g into %s", t_ex, new_mode.value)
    rec.sample(t_ex, x_ex, ModeLabel.SLIDING, u)
    return t_ex, x_ex, new_mode


@dataclass(frozen=True)
class DifferentiabilityReport:
    arrival_times: tuple[float, ...]
    assumption2_ok: bool
    assumption3_ok: bool
    assumption4_ok: bool
    transversality_margins: tuple[float, ...]
    notes: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return self.assumption2_ok and self.assumption3_ok and self.assumption4_ok

    def as_dict(self) -> dict:
        return {
            "arrival_times": list(self.arrival_times),
            "assumption2_ok": self.assumption2_ok,
            "assumption3_ok": self.assumption3_ok,
            "assumption4_ok": self.assumption4_ok,
            "transversality_margins": list(self.transversality_margins),
            "notes": list(self.notes),
            "ok": self.ok,
        }


def audit_differentiability(
        traj: Trajectory,
        sys: PiecewiseSmoothSystem,
        window_gamma: float,
        guard_tol: float = DEFAULT_GUARD_TOL,
        transversality_tol: float = 1e-3,
        arrival_cap: int = EVENT_CAP,
) -> DifferentiabilityReport:
    """
    Checks that the data avoids the non-differentiable cases: start off the surface and
    no arrival at T, finitely many arrivals, and arrivals that stay transversal for the
    approach-side field over (t - window_gamma, t + window_gamma) clipped to [0, T].
    """
    notes: list[str] = []
    arrivals = [e for e in traj.events if e.kind in (EventKind.ARRIVAL, EventKind.CROSSING)]
    arrival_times = tuple(e.time for e in arrivals)
    T = traj.horizon
    snap = 1e-12 * max(1.0, T)

    x0 = traj.states[0]
    starts_on_surface = abs(float(sys.g(x0))) <= guard_tol
    ends_on_arrival = any(abs(t - T) <= snap for t in arrival_times)
    assumption2 = not starts_on_surface and not ends_on_arrival
    if starts_on_surface:
        notes.append("initial state lies on the switching surface")
    if ends_on_arrival:
        notes.append("an arrival coincides with the horizon end")
    if any(e.kind == EventKind.EXIT and abs(e.time - T) <= snap for e in traj.events):
        notes.append("sliding exit at the horizon end; not re-classified")
        logger.warning("Sliding exit coincides with the horizon end")

    margins: list[float] = []
    for ev in arrivals:
        # Lie derivative of the approach-side field over the whole window around the arrival.
        use_f1 = ev.from_mode == ModeLabel.D1
        mask = (traj.times >= ev.time - window_gamma) & (traj.times <= ev.time + window_gamma)
        idx = np.nonzero(mask)[0]
        values = []
        for i in idx:
            k = min(int(i), traj.inputs.shape[0] - 1)
            l1, l2 = lie_derivatives(sys, traj.states[i], traj.inputs[k])
            values.append(l1 if use_f1 else -l2)
        margins.append(float(min(values)) if values else 0.0)
    assumption3 = all(m > transversality_tol for m in margins)
    assumption4 = len(arrivals) <= arrival_cap

    return DifferentiabilityReport(
        arrival_times=arrival_times,
        assumption2_ok=assumption2,
        assumption3_ok=assumption3,
        assumption4_ok=assumption4,
        transversality_margins=tuple(margins),
        notes=tuple(notes),
    )
