from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from epsrelax.core.control_data import ControlData
from epsrelax.dynamics.trajectory import ModeLabel, SwitchEvent, Trajectory

CSV_OPTIONS = {"index": False, "lineterminator": "\n"}


def sidecar_path(path: Path, kind: str) -> Path:
    """t.csv -> t.events.json"""
    path = Path(path)
    return path.with_name(f"{path.stem}.{kind}.json")


def write_json(obj, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, ensure_ascii=False)
        f.write("\n")
    return path


def read_json(path: Path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def trajectory_frame(traj: Trajectory) -> pd.DataFrame:
    """
    One row per sample: t, x_1..x_n, u_1..u_m, g, mode. The input on a row is the one
    held from that sample on; the last row repeats the final input.
    """
    n, m = traj.state_dim, traj.input_dim
    inputs = traj.inputs if traj.inputs.shape[0] else np.zeros((1, m))
    u_rows = np.vstack([inputs, inputs[-1:]])[: traj.times.size]
    cols = {"t": traj.times}
    cols.update({f"x_{i + 1}": traj.states[:, i] for i in range(n)})
    cols.update({f"u_{j + 1}": u_rows[:, j] for j in range(m)})
    cols["g"] = traj.guard_values
    cols["mode"] = [mode.value for mode in traj.modes]
    return pd.DataFrame(cols)


def write_trajectory_csv(traj: Trajectory, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trajectory_frame(traj).to_csv(path, **CSV_OPTIONS)
    return path


def read_trajectory_csv(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def trajectory_from_frame(df: pd.DataFrame, events: Sequence[SwitchEvent] = ()) -> Trajectory:
    missing = [c for c in ("t", "g", "mode") if c not in df.columns]
    if missing:
        raise ValueError(f"Trajectory CSV lacks required columns: {missing}")
    x_cols = [c for c in df.columns if c.startswith("x_")]
    u_cols = [c for c in df.columns if c.startswith("u_")]
    return Trajectory(
        times=df["t"].to_numpy(dtype=float),
        states=df[x_cols].to_numpy(dtype=float),
        inputs=df[u_cols].to_numpy(dtype=float)[:-1],
        guard_values=df["g"].to_numpy(dtype=float),
        modes=tuple(ModeLabel(m) for m in df["mode"]),
        events=tuple(events),
    )


def write_events_json(traj: Trajectory, path: Path) -> Path:
    return write_json(
        {"schema_version": 1, "events": [e.as_dict() for e in traj.events], "epsilon": traj.epsilon},
        path,
    )


def read_events_json(path: Path) -> list[SwitchEvent]:
    return [SwitchEvent.from_dict(d) for d in read_json(path)["events"]]


def write_phases_json(phases: Iterable, path: Path) -> Path:
    items = [p.as_dict() for p in phases]
    return write_json({"schema_version": 1, "count": len(items), "phases": items}, path)


def input_frame(xi: ControlData, T: float) -> pd.DataFrame:
    """Optimized input grid: interval start time and the held value."""
    t = np.linspace(0.0, T, xi.intervals + 1)[:-1]
    cols = {"t": t}
    cols.update({f"u_{j + 1}": xi.u_grid[:, j] for j in range(xi.input_dim)})
    return pd.DataFrame(cols)


def write_input_csv(xi: ControlData, T: float, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    input_frame(xi, T).to_csv(path, **CSV_OPTIONS)
    return path


def write_table_csv(frame: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, **CSV_OPTIONS)
    return path
