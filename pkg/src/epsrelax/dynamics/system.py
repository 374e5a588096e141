from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from epsrelax.core.errors import GuardRegularityError, NumericalError

logger = logging.getLogger(__name__)

VectorField = Callable[[np.ndarray, np.ndarray], np.ndarray]
FieldJacobian = Callable[[np.ndarray, np.ndarray], np.ndarray]
ScalarFn = Callable[[float], float]

# Below this gradient norm the guard is treated as singular.
GUARD_GRAD_FLOOR = 1e-12


@dataclass(frozen=True)
class PiecewiseSmoothSystem:
    """
    Bimodal system x' = f1(x,u) where g(x) < 0 (D1) and x' = f2(x,u) where g(x) > 0 (D2).
    The dynamics are undefined on the switching surface g(x) = 0.
    """

    state_dim: int
    input_dim: int
    f1: VectorField
    f2: VectorField
    g: Callable[[np.ndarray], float]
    jac_f1_x: FieldJacobian
    jac_f2_x: FieldJacobian
    jac_f1_u: FieldJacobian
    jac_f2_u: FieldJacobian
    grad_g: Callable[[np.ndarray], np.ndarray]
    name: str = ""
    finite_difference_jacobians: bool = False

    def __post_init__(self):
        if int(self.state_dim) < 1 or int(self.input_dim) < 1:
            raise ValueError(
                f"state_dim and input_dim must be positive (got {self.state_dim}, {self.input_dim})"
            )

    @classmethod
    def from_fields(
            cls,
            state_dim: int,
            input_dim: int,
            f1: VectorField,
            f2: VectorField,
            g: Callable[[np.ndarray], float],
            name: str = "",
            step: float = 1e-6,
    ) -> "PiecewiseSmoothSystem":
        """
        Fallback constructor with central-difference Jacobians. Flagged in reports:
        rate studies lose accuracy without exact Jacobians.
        """
        logger.warning("System %r uses finite-difference Jacobians", name or "<unnamed>")
        return cls(
            state_dim=state_dim,
            input_dim=input_dim,
            f1=f1,
            f2=f2,
            g=g,
            jac_f1_x=lambda x, u: _fd_jacobian(lambda y: f1(y, u), x, step),
            jac_f2_x=lambda x, u: _fd_jacobian(lambda y: f2(y, u), x, step),
            jac_f1_u=lambda x, u: _fd_jacobian(lambda v: f1(x, v), u, step),
            jac_f2_u=lambda x, u: _fd_jacobian(lambda v: f2(x, v), u, step),
            grad_g=lambda x: _fd_jacobian(lambda y: np.atleast_1d(g(y)), x, step)[0],
            name=name,
            finite_difference_jacobians=True,
        )

    def check_jacobians(
            self,
            rng: np.random.Generator,
            samples: int = 20,
            scale: float = 1.0,
            center: Optional[np.ndarray] = None,
            rtol: float = 1e-6,
    ) -> "JacobianCheck":
        """
        Compare the supplied Jacobians with central differences at random points.
        Relative error is measured against max(1, |entry|).
        """
        c = np.zeros(self.state_dim) if center is None else np.asarray(center, dtype=float)
        worst = 0.0
        for _ in range(samples):
            x = c + scale * rng.standard_normal(self.state_dim)
            u = scale * rng.standard_normal(self.input_dim)
            pairs = [
                (self.jac_f1_x(x, u), _fd_jacobian(lambda y: self.f1(y, u), x)),
                (self.jac_f2_x(x, u), _fd_jacobian(lambda y: self.f2(y, u), x)),
                (self.jac_f1_u(x, u), _fd_jacobian(lambda v: self.f1(x, v), u)),
                (self.jac_f2_u(x, u), _fd_jacobian(lambda v: self.f2(x, v), u)),
                (np.atleast_2d(self.grad_g(x)), _fd_jacobian(lambda y: np.atleast_1d(self.g(y)), x)),
            ]
            for analytic, numeric in pairs:
                err = np.max(np.abs(np.asarray(analytic) - numeric) / np.maximum(1.0, np.abs(numeric)))
                worst = max(worst, float(err))
        return JacobianCheck(max_relative_error=worst, ok=worst <= rtol, samples=samples)


@dataclass(frozen=True)
class JacobianCheck:
    max_relative_error: float
    ok: bool
    samples: int


def _fd_jacobian(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        cols.append((np.atleast_1d(fn(xp)) - np.atleast_1d(fn(xm))) / (2.0 * h))
    return np.column_stack(cols)


@dataclass(frozen=True)
class TransitionFunction:
    """Ramp phi with phi = 0 below -1, phi = 1 above 1, strictly increasing in between."""

    eval: ScalarFn
    deriv: ScalarFn
    deriv2: ScalarFn
    name: str = ""


def make_quintic_transition() -> TransitionFunction:
    """
    Odd-symmetric quintic smoothstep phi(a) = 1/2 + 15/16 a - 5/8 a^3 + 3/16 a^5 on [-1, 1].
    phi' = 15/16 (1 - a^2)^2 and phi'' = -15/4 a (1 - a^2) both vanish at a = +-1.
    """

    def phi(a: float) -> float:
        if a <= -1.0:
            return 0.0
        if a >= 1.0:
            return 1.0
        a2 = a * a
        return 0.5 + a * (15.0 / 16.0 + a2 * (-5.0 / 8.0 + a2 * (3.0 / 16.0)))

    def dphi(a: float) -> float:
        if a <= -1.0 or a >= 1.0:
            return 0.0
        w = 1.0 - a * a
        return 15.0 / 16.0 * w * w

    def d2phi(a: float) -> float:
        if a <= -1.0 or a >= 1.0:
            return 0.0
        return -15.0 / 4.0 * a * (1.0 - a * a)

    return TransitionFunction(eval=phi, deriv=dphi, deriv2=d2phi, name="quintic")


def make_septic_transition() -> TransitionFunction:
    """C3 smoothstep: phi' = 35/32 (1 - a^2)^3."""

    def phi(a: float) -> float:
        if a <= -1.0:
            return 0.0
        if a >= 1.0:
            return 1.0
        a2 = a * a
        return 0.5 + 35.0 / 32.0 * a * (1.0 - a2 + a2 * a2 * (3.0 / 5.0) - a2 * a2 * a2 / 7.0)

    def dphi(a: float) -> float:
        if a <= -1.0 or a >= 1.0:
            return 0.0
        w = 1.0 - a * a
        return 35.0 / 32.0 * w * w * w

    def d2phi(a: float) -> float:
        if a <= -1.0 or a >= 1.0:
            return 0.0
        w = 1.0 - a * a
        return -105.0 / 16.0 * a * w * w

    return TransitionFunction(eval=phi, deriv=dphi, deriv2=d2phi, name="septic")


@dataclass(frozen=True)
class TransitionCheck:
    ok: bool
    failures: tuple[str, ...] = field(default_factory=tuple)


def check_transition_function(phi: TransitionFunction, samples: int = 2001, fd_tol: float = 1e-6) -> TransitionCheck:
    """Contract check on a dense sample of [-2, 2]."""
    failures: list[str] = []
    grid = np.linspace(-2.0, 2.0, samples)
    values = np.array([phi.eval(a) for a in grid])

    if np.any(values[grid <= -1.0] != 0.0):
        failures.append("eval is not 0 on a <= -1")
    if np.any(values[grid >= 1.0] != 1.0):
        failures.append("eval is not 1 on a >= 1")
    inner = values[(grid > -1.0) & (grid < 1.0)]
    if np.any(np.diff(inner) <= 0.0):
        failures.append("eval is not strictly increasing on (-1, 1)")
    if any(phi.deriv(a) < 0.0 for a in grid):
        failures.append("deriv is negative somewhere")
    for edge in (-1.0, 1.0):
        if phi.deriv(edge) != 0.0:
            failures.append(f"deriv({edge}) != 0")
        if phi.deriv2(edge) != 0.0:
            failures.append(f"deriv2({edge}) != 0")

    h = 1e-6
    for a in grid[(grid > -1.0 + 2 * h) & (grid < 1.0 - 2 * h)]:
        fd = (phi.eval(a + h) - phi.eval(a - h)) / (2.0 * h)
        if abs(fd - phi.deriv(a)) > fd_tol * max(1.0, abs(fd)):
            failures.append(f"deriv disagrees with finite differences at a={a:.6g}")
            break
    return TransitionCheck(ok=not failures, failures=tuple(failures))


@dataclass(frozen=True)
class RegularizedField:
    """f_eps(x,u) = (1 - phi(g/eps)) f1 + phi(g/eps) f2, smooth across the band |g| < eps."""

    system: PiecewiseSmoothSystem
    phi: TransitionFunction
    epsilon: float

    def __post_init__(self):
        eps = float(self.epsilon)
        if not np.isfinite(eps) or eps <= 0.0:
            raise ValueError(f"epsilon must be a positive finite number (got {self.epsilon!r})")
        object.__setattr__(self, "epsilon", eps)

    def _guard(self, x: np.ndarray) -> tuple[float, float]:
        gx = float(self.system.g(x))
        return gx, gx / self.epsilon

    def _check_guard_regular(self, x: np.ndarray, gx: float) -> np.ndarray | None:
        if abs(gx) >= self.epsilon:
            return None
        grad = np.asarray(self.system.grad_g(x), dtype=float)
        if not np.linalg.norm(grad) > GUARD_GRAD_FLOOR:
            raise GuardRegularityError(
                f"Guard gradient vanishes inside the regularization band at x={x.tolist()} (g={gx:.3e})"
            )
        return grad


def _finite_or_raise(value: np.ndarray, what: str, x: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise NumericalError(f"Non-finite {what} at x={np.asarray(x).tolist()}")
    return value


def eval_regularized(field: RegularizedField, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    gx, a = field._guard(x)
    field._check_guard_regular(x, gx)
    s = field.phi.eval(a)
    # Exact saturation: outside the band the active field is returned untouched.
    if s == 0.0:
        out = np.array(field.system.f1(x, u), dtype=float)
    elif s == 1.0:
        out = np.array(field.system.f2(x, u), dtype=float)
    else:
        out = (1.0 - s) * np.asarray(field.system.f1(x, u), dtype=float) + s * np.asarray(
            field.system.f2(x, u), dtype=float
        )
    return _finite_or_raise(out, "regularized field", x)


def eval_regularized_jac_x(field: RegularizedField, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    sys = field.system
    gx, a = field._guard(x)
    grad = field._check_guard_regular(x, gx)
    s = field.phi.eval(a)
    if s == 0.0:
        out = np.array(sys.jac_f1_x(x, u), dtype=float)
    elif s == 1.0:
        out = np.array(sys.jac_f2_x(x, u), dtype=float)
    else:
        ds = field.phi.deriv(a)
        out = (1.0 - s) * np.asarray(sys.jac_f1_x(x, u), dtype=float) + s * np.asarray(
            sys.jac_f2_x(x, u), dtype=float
        )
        if ds != 0.0:
            jump = np.asarray(sys.f2(x, u), dtype=float) - np.asarray(sys.f1(x, u), dtype=float)
            out = out + (ds / field.epsilon) * np.outer(jump, grad)
    return _finite_or_raise(out.reshape(sys.state_dim, sys.state_dim), "state Jacobian", x)


def eval_regularized_jac_u(field: RegularizedField, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    sys = field.system
    gx, a = field._guard(x)
    field._check_guard_regular(x, gx)
    s = field.phi.eval(a)
    if s == 0.0:
        out = np.array(sys.jac_f1_u(x, u), dtype=float)
    elif s == 1.0:
        out = np.array(sys.jac_f2_u(x, u), dtype=float)
    else:
        out = (1.0 - s) * np.asarray(sys.jac_f1_u(x, u), dtype=float) + s * np.asarray(
            sys.jac_f2_u(x, u), dtype=float
        )
    return _finite_or_raise(out.reshape(sys.state_dim, sys.input_dim), "input Jacobian", x)


def augment_with_running_cost(
        system: PiecewiseSmoothSystem,
        running: Callable[[np.ndarray, np.ndarray], float],
        running_grad_x: Callable[[np.ndarray, np.ndarray], np.ndarray],
        running_grad_u: Callable[[np.ndarray, np.ndarray], np.ndarray],
) -> PiecewiseSmoothSystem:
    """
    Append an accumulator w' = r(x, u) to both fields. The guard and the mode
    structure only see the first state_dim coordinates.
    """
    n = system.state_dim
    m = system.input_dim

    def lift(f: VectorField) -> VectorField:
        return lambda z, u: np.append(np.asarray(f(z[:n], u), dtype=float), running(z[:n], u))

    def lift_jx(jx: FieldJacobian) -> FieldJacobian:
        def jac(z, u):
            out = np.zeros((n + 1, n + 1))
            out[:n, :n] = jx(z[:n], u)
            out[n, :n] = running_grad_x(z[:n], u)
            return out

        return jac

    def lift_ju(ju: FieldJacobian) -> FieldJacobian:
        def jac(z, u):
            out = np.zeros((n + 1, m))
            out[:n, :] = ju(z[:n], u)
            out[n, :] = running_grad_u(z[:n], u)
            return out

        return jac

    return PiecewiseSmoothSystem(
        state_dim=n + 1,
        input_dim=m,
        f1=lift(system.f1),
        f2=lift(system.f2),
        g=lambda z: system.g(z[:n]),
        jac_f1_x=lift_jx(system.jac_f1_x),
        jac_f2_x=lift_jx(system.jac_f2_x),
        jac_f1_u=lift_ju(system.jac_f1_u),
        jac_f2_u=lift_ju(system.jac_f2_u),
        grad_g=lambda z: np.append(np.asarray(system.grad_g(z[:n]), dtype=float), 0.0),
        name=f"{system.name}+running" if system.name else "running",
        finite_difference_jacobians=system.finite_difference_jacobians,
    )
