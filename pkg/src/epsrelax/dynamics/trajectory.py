from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np


class ModeLabel(str, Enum):
    D1 = "D1"
    D2 = "D2"
    SLIDING = "SlidingOnSigma"
    CROSSING = "CrossingSigma"
    # Smoothed trajectories only: inside the band |g| < eps.
    BAND = "SigmaEps"


class EventKind(str, Enum):
    ARRIVAL = "arrival"
    EXIT = "exit"
    CROSSING = "crossing"


@dataclass(frozen=True)
class SwitchEvent:
    time: float
    kind: EventKind
    from_mode: ModeLabel
    to_mode: ModeLabel

    def as_dict(self) -> dict:
        return {
            "time": float(self.time),
            "kind": self.kind.value,
            "from_mode": self.from_mode.value,
            "to_mode": self.to_mode.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SwitchEvent":
        return cls(
            time=float(d["time"]),
            kind=EventKind(d["kind"]),
            from_mode=ModeLabel(d["from_mode"]),
            to_mode=ModeLabel(d["to_mode"]),
        )


@dataclass(frozen=True)
class Trajectory:
    """
    Sampled solution. inputs[i] is the (held) input on [times[i], times[i+1]).
    """

    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    guard_values: np.ndarray
    modes: tuple[ModeLabel, ...]
    events: tuple[SwitchEvent, ...] = field(default_factory=tuple)
    epsilon: Optional[float] = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        x = np.asarray(self.states, dtype=float)
        u = np.asarray(self.inputs, dtype=float)
        if x.ndim != 2 or x.shape[0] != t.size:
            raise ValueError(f"states must have one row per time: {x.shape} vs {t.size} times")
        if u.ndim != 2 or u.shape[0] != max(t.size - 1, 0):
            raise ValueError(f"inputs must have one row per interval: {u.shape} vs {t.size - 1} intervals")
        if len(self.modes) != t.size or np.asarray(self.guard_values).size != t.size:
            raise ValueError("guard_values and modes must have one entry per time")
        if t.size > 1 and np.any(np.diff(t) <= 0.0):
            raise ValueError("times must be strictly increasing")
        for name, arr in (("times", t), ("states", x), ("inputs", u)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        gv = np.asarray(self.guard_values, dtype=float).copy()
        gv.setflags(write=False)
        object.__setattr__(self, "guard_values", gv)
        object.__setattr__(self, "modes", tuple(ModeLabel(m) for m in self.modes))
        object.__setattr__(self, "events", tuple(self.events))

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def state_dim(self) -> int:
        return int(self.states.shape[1])

    @property
    def input_dim(self) -> int:
        return int(self.inputs.shape[1])

    def state_at(self, t: float | np.ndarray) -> np.ndarray:
        """Linear interpolation between samples (exact at sample times)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.column_stack([np.interp(t, self.times, self.states[:, j]) for j in range(self.state_dim)])
        return out[0] if out.shape[0] == 1 else out

    def arrival_times(self) -> list[float]:
        return [e.time for e in self.events if e.kind in (EventKind.ARRIVAL, EventKind.CROSSING)]
