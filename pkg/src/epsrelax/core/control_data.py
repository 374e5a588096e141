from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Box:
    """
    Componentwise bounds lo <= v <= hi. Infinite bounds mark unconstrained coordinates.
    """

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = _frozen(np.atleast_1d(self.lo))
        hi = _frozen(np.atleast_1d(self.hi))
        if lo.shape != hi.shape:
            raise ValueError(f"Box bounds differ in shape: lo{lo.shape} vs hi{hi.shape}")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValueError("Box bounds must not be NaN.")
        bad = np.nonzero(lo > hi)[0]
        if bad.size:
            raise ValueError(
                f"Box is ill-ordered at coordinates {bad.tolist()}: "
                f"lo={lo[bad].tolist()} > hi={hi[bad].tolist()}"
            )
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def interval(cls, lo: float, hi: float, dim: int) -> "Box":
        return cls(np.full(dim, float(lo)), np.full(dim, float(hi)))

    @classmethod
    def unbounded(cls, dim: int) -> "Box":
        return cls(np.full(dim, -np.inf), np.full(dim, np.inf))

    @property
    def dim(self) -> int:
        return int(self.lo.size)

    def clamp(self, v: np.ndarray) -> np.ndarray:
        return np.clip(v, self.lo, self.hi)

    def contains(self, v: np.ndarray, tol: float = 0.0) -> bool:
        v = np.asarray(v, dtype=float)
        return bool(np.all(v >= self.lo - tol) and np.all(v <= self.hi + tol))


@dataclass(frozen=True)
class ControlData:
    """
    Decision variable xi = (x0, u-grid). Inputs are zero-order hold: u_grid[k] acts on
    the k-th of the equal intervals that split [0, T].

    x0 is held fixed by the optimizer unless free_x0 is set; a free x0 without a box is
    unconstrained.
    """

    x0: np.ndarray
    u_grid: np.ndarray
    u_box: Optional[Box] = None
    x0_box: Optional[Box] = None
    free_x0: bool = False

    def __post_init__(self):
        x0 = _frozen(np.atleast_1d(self.x0))
        u = np.asarray(self.u_grid, dtype=float)
        if u.ndim == 1:
            u = u.reshape(-1, 1)
        if u.ndim != 2 or u.shape[0] < 1:
            raise ValueError(f"u_grid must have shape (intervals, input_dim); got {u.shape}")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "u_grid", _frozen(u))
        if self.u_box is not None and self.u_box.dim != u.shape[1]:
            raise ValueError(f"u_box has dim {self.u_box.dim}, inputs have dim {u.shape[1]}")
        if self.x0_box is not None and self.x0_box.dim != x0.size:
            raise ValueError(f"x0_box has dim {self.x0_box.dim}, state has dim {x0.size}")

    @classmethod
    def constant(
            cls,
            x0: Sequence[float],
            u: float | Sequence[float],
            intervals: int,
            u_box: Optional[Box] = None,
            x0_box: Optional[Box] = None,
            free_x0: bool = False,
    ) -> "ControlData":
        u_row = np.atleast_1d(np.asarray(u, dtype=float))
        return cls(
            x0=np.asarray(x0, dtype=float),
            u_grid=np.tile(u_row, (int(intervals), 1)),
            u_box=u_box,
            x0_box=x0_box,
            free_x0=free_x0,
        )

    @property
    def state_dim(self) -> int:
        return int(self.x0.size)

    @property
    def input_dim(self) -> int:
        return int(self.u_grid.shape[1])

    @property
    def intervals(self) -> int:
        return int(self.u_grid.shape[0])

    @property
    def size(self) -> int:
        return self.state_dim + self.u_grid.size

    def with_values(self, x0: Optional[np.ndarray] = None, u_grid: Optional[np.ndarray] = None) -> "ControlData":
        return replace(
            self,
            x0=self.x0 if x0 is None else x0,
            u_grid=self.u_grid if u_grid is None else u_grid,
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([self.x0, self.u_grid.ravel()])

    def from_flat(self, v: np.ndarray) -> "ControlData":
        v = np.asarray(v, dtype=float)
        n = self.state_dim
        return self.with_values(x0=v[:n], u_grid=v[n:].reshape(self.u_grid.shape))

    def perturbed(self, variation: "ControlVariation", scale: float) -> "ControlData":
        return self.with_values(
            x0=self.x0 + scale * variation.dx0,
            u_grid=self.u_grid + scale * variation.du,
        )

    def is_feasible(self, tol: float = 0.0) -> bool:
        if self.u_box is not None and not all(self.u_box.contains(row, tol) for row in self.u_grid):
            return False
        if self.x0_box is not None and not self.x0_box.contains(self.x0, tol):
            return False
        return True

    def bounds_flat(self) -> tuple[np.ndarray, np.ndarray]:
        """
        Flat (lo, hi) over (x0, u-grid). A frozen x0 gets lo = hi = x0.
        """
        n = self.state_dim
        if not self.free_x0:
            lo_x, hi_x = self.x0.copy(), self.x0.copy()
        elif self.x0_box is None:
            lo_x, hi_x = np.full(n, -np.inf), np.full(n, np.inf)
        else:
            lo_x, hi_x = self.x0_box.lo.copy(), self.x0_box.hi.copy()

        if self.u_box is None:
            lo_u = np.full(self.u_grid.size, -np.inf)
            hi_u = np.full(self.u_grid.size, np.inf)
        else:
            lo_u = np.tile(self.u_box.lo, self.intervals)
            hi_u = np.tile(self.u_box.hi, self.intervals)
        return np.concatenate([lo_x, lo_u]), np.concatenate([hi_x, hi_u])


@dataclass(frozen=True)
class ControlVariation:
    """Direction delta-xi = (dx0, du) in the space of ControlData."""

    dx0: np.ndarray
    du: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dx0", _frozen(np.atleast_1d(self.dx0)))
        du = np.asarray(self.du, dtype=float)
        if du.ndim == 1:
            du = du.reshape(-1, 1)
        object.__setattr__(self, "du", _frozen(du))

    @classmethod
    def zeros_like(cls, xi: ControlData) -> "ControlVariation":
        return cls(np.zeros(xi.state_dim), np.zeros_like(xi.u_grid))

    @classmethod
    def random(cls, rng: np.random.Generator, xi: ControlData, include_x0: bool = True) -> "ControlVariation":
        dx0 = rng.standard_normal(xi.state_dim) if include_x0 else np.zeros(xi.state_dim)
        return cls(dx0, rng.standard_normal(xi.u_grid.shape))

    @classmethod
    def from_flat(cls, v: np.ndarray, xi: ControlData) -> "ControlVariation":
        n = xi.state_dim
        return cls(v[:n], np.asarray(v[n:]).reshape(xi.u_grid.shape))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.dx0, self.du.ravel()])

    def combine(self, a: float, other: "ControlVariation", b: float) -> "ControlVariation":
        return ControlVariation(a * self.dx0 + b * other.dx0, a * self.du + b * other.du)

    def check_compatible(self, xi: ControlData) -> None:
        if self.dx0.shape != xi.x0.shape or self.du.shape != xi.u_grid.shape:
            raise ValueError(
                f"Variation shapes dx0{self.dx0.shape}/du{self.du.shape} do not match "
                f"control data x0{xi.x0.shape}/u{xi.u_grid.shape}"
            )
