from __future__ import annotations

import copy
import json
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from epsrelax.core.control_data import Box, ControlData, ControlVariation
from epsrelax.core.errors import ConfigError
from epsrelax.dynamics.smooth import Scheme
from epsrelax.dynamics.system import (
    PiecewiseSmoothSystem,
    TransitionFunction,
    make_quintic_transition,
    make_septic_transition,
)
from epsrelax.models.hopper import HopperTask, hopper_cost
from epsrelax.models.library import build_system
from epsrelax.optimization.master import check_schedule
from epsrelax.optimization.projected_gradient import SolverOptions
from epsrelax.persistence.runtime_paths import resolve_config_path
from epsrelax.sensitivity.cost import CostFunctional

SCHEMA_VERSION = 1

TRANSITIONS = {"quintic": make_quintic_transition, "septic": make_septic_transition}


class RunConfig:
    def __init__(self, config_path: str | Path):
        self.config_path = resolve_config_path(config_path)

        self.defaults = {
            "schema_version": SCHEMA_VERSION,
            "system": "sliding1d",
            "params": {},
            "task": {},
            "horizon": {"T": 1.0, "N": 101},
            "epsilon": 0.01,
            "schedule": None,
            "transition": "quintic",
            "scheme": "euler",
            "boxes": {"u": None, "x0": None},
            "free_x0": False,
            "initial": {"x0": None, "u": 0.0},
            "cost": {"type": "linear", "weights": None, "target": None},
            "direction": {"dx0": None, "du": 1.0},
            "solver": SolverOptions().as_dict(),
            "simulation": {"step_h": None, "guard_tol": 1e-10, "event_cap": 1000},
            "study": {
                "epsilons": None,
                "slope_window": [0.8, 1.2],
                "metric": "sup",
                "ratio_cap": 10.0,
                "workers": 1,
                "reference_divisor": 4.0,
                "noise_floor": 1e-10,
                "grid_ratio": 10.0,
            },
        }

    def load(self) -> dict:
        try:
            with open(self.config_path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"Config {self.config_path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"Config {self.config_path} must hold a JSON object")

        # ensure missing keys are restored, nested sections one level deep
        for k, v in self.defaults.items():
            if isinstance(v, dict) and isinstance(data.get(k), dict) and k not in ("params", "task"):
                for kk, vv in v.items():
                    data[k].setdefault(kk, copy.deepcopy(vv))
            else:
                data.setdefault(k, copy.deepcopy(v))

        if data["schema_version"] != SCHEMA_VERSION:
            raise ConfigError(f"Unsupported schema_version {data['schema_version']!r} (expected {SCHEMA_VERSION})")
        return data

    def save(self, cfg: dict, path: Optional[Path] = None) -> Path:
        target = Path(path) if path is not None else self.config_path
        target.parent.mkdir(parents=True, exist_ok=True)
        with open(target, "w", encoding="utf-8") as f:
            json.dump(cfg, f, indent=2, ensure_ascii=False)
        return target


@dataclass(frozen=True)
class Problem:
    system: PiecewiseSmoothSystem
    xi: ControlData
    T: float
    N: int
    scheme: Scheme
    phi: TransitionFunction
    task: Optional[HopperTask] = None


def _box(spec, dim: int, what: str) -> Optional[Box]:
    if spec is None:
        return None
    try:
        lo, hi = spec
    except (TypeError, ValueError):
        raise ConfigError(f"boxes.{what} must be [lo, hi] (got {spec!r})") from None
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (dim,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (dim,))
    try:
        return Box(lo, hi)
    except ValueError as exc:
        raise ConfigError(f"boxes.{what}: {exc}") from exc


def _input_grid(u, intervals: int, input_dim: int) -> np.ndarray:
    arr = np.asarray(u, dtype=float)
    if arr.ndim == 2:
        if arr.shape != (intervals, input_dim):
            raise ConfigError(f"initial.u grid has shape {arr.shape}; expected ({intervals}, {input_dim})")
        return arr
    return np.tile(np.broadcast_to(arr, (input_dim,)), (intervals, 1))


@contextmanager
def config_section(section: str):
    """Reports validation errors raised while building from `section` as ConfigError."""
    try:
        yield
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def build_problem(cfg: dict) -> Problem:
    with config_section("problem"):
        return _assemble_problem(cfg)


def _assemble_problem(cfg: dict) -> Problem:
    system = build_system(cfg["system"], cfg["params"])
    task = HopperTask.from_dict(cfg["task"]) if cfg["system"] == "hopper" else None

    T = float(cfg["horizon"]["T"])
    N = int(cfg["horizon"]["N"])
    if not T > 0.0 or N < 2:
        raise ConfigError(f"horizon needs T > 0 and N >= 2 (got T={T}, N={N})")

    x0_spec = cfg["initial"]["x0"]
    if x0_spec is None:
        if task is None:
            raise ConfigError(f"initial.x0 is required for system {cfg['system']!r}")
        x0_spec = task.x0
    x0 = np.asarray(x0_spec, dtype=float).ravel()
    if x0.size != system.state_dim:
        raise ConfigError(f"initial.x0 has {x0.size} entries; {system.name} has state dimension {system.state_dim}")

    u_box_spec = cfg["boxes"]["u"]
    if u_box_spec is None and task is not None:
        u_box_spec = list(task.u_box)
    xi = ControlData(
        x0=x0,
        u_grid=_input_grid(cfg["initial"]["u"], N - 1, system.input_dim),
        u_box=_box(u_box_spec, system.input_dim, "u"),
        x0_box=_box(cfg["boxes"]["x0"], system.state_dim, "x0"),
        free_x0=bool(cfg["free_x0"]),
    )
    if not xi.is_feasible():
        raise ConfigError("Initial data lies outside the configured boxes")

    try:
        phi = TRANSITIONS[cfg["transition"]]()
        scheme = Scheme(cfg["scheme"])
    except (KeyError, ValueError):
        raise ConfigError(
            f"Unknown transition {cfg['transition']!r} or scheme {cfg['scheme']!r}; "
            f"transitions: {sorted(TRANSITIONS)}, schemes: {[s.value for s in Scheme]}"
        ) from None
    return Problem(system=system, xi=xi, T=T, N=N, scheme=scheme, phi=phi, task=task)


def build_cost(cfg: dict, problem: Problem) -> CostFunctional:
    with config_section("cost"):
        return _assemble_cost(cfg, problem)


def _assemble_cost(cfg: dict, problem: Problem) -> CostFunctional:
    if problem.task is not None:
        if abs(problem.T - problem.task.t_f) > 1e-12:
            raise ConfigError(f"Hopper horizon T={problem.T} must equal task t_f={problem.task.t_f}")
        return hopper_cost(problem.task, problem.N)

    spec = cfg["cost"]
    n = problem.system.state_dim
    weights = None if spec.get("weights") is None else np.broadcast_to(np.asarray(spec["weights"], dtype=float), (n,))
    if spec.get("type") == "linear":
        return CostFunctional.linear(np.ones(n) if weights is None else weights)
    if spec.get("type") == "quadratic":
        target = np.zeros(n) if spec.get("target") is None else np.broadcast_to(np.asarray(spec["target"], dtype=float), (n,))
        return CostFunctional.quadratic(target, weights)
    raise ConfigError(f"cost.type must be 'linear' or 'quadratic' (got {spec.get('type')!r})")


def build_direction(cfg: dict, xi: ControlData) -> ControlVariation:
    spec = cfg["direction"]
    with config_section("direction"):
        dx0 = np.zeros(xi.state_dim) if spec.get("dx0") is None else np.broadcast_to(
            np.asarray(spec["dx0"], dtype=float), (xi.state_dim,)
        )
        du = _input_grid(0.0 if spec.get("du") is None else spec["du"], xi.intervals, xi.input_dim)
        return ControlVariation(dx0, du)


def solver_options(cfg: dict) -> SolverOptions:
    with config_section("solver"):
        return SolverOptions.from_dict({**cfg["solver"], "scheme": cfg["scheme"]})


def parse_epsilon_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"Cannot parse epsilon list {text!r}; expected comma-separated numbers") from None
    if not values:
        raise ConfigError("Epsilon list is empty")
    return values


def check_epsilons(values: Sequence[float], what: str) -> list[float]:
    """Positive, strictly decreasing epsilons, or a ConfigError naming `what`."""
    with config_section(what):
        return check_schedule(values)
