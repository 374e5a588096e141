from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from epsrelax.core.control_data import ControlData, ControlVariation
from epsrelax.dynamics.smooth import Scheme, gridpoints_for_epsilon, resample_control
from epsrelax.dynamics.system import PiecewiseSmoothSystem, RegularizedField, TransitionFunction, make_quintic_transition
from epsrelax.sensitivity.adjoint import adjoint_gradient
from epsrelax.sensitivity.cost import CostFunctional

logger = logging.getLogger(__name__)

DEFAULT_RATIO_CAP = 10.0


@dataclass(frozen=True)
class BoundednessTable:
    epsilons: tuple[float, ...]
    grad_norms: tuple[float, ...]
    dl_values: tuple[float, ...]
    gridpoints: tuple[int, ...]
    ratio_cap: float = DEFAULT_RATIO_CAP
    finite_difference_jacobians: bool = False

    @property
    def ratio(self) -> float:
        hi = max(self.grad_norms)
        lo = min(self.grad_norms)
        if hi == 0.0:
            return 1.0
        return hi / lo if lo > 0.0 else float("inf")

    @property
    def bounded(self) -> bool:
        return self.ratio <= self.ratio_cap

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"epsilon": list(self.epsilons), "grad_norm": list(self.grad_norms), "dl_value": list(self.dl_values)}
        )

    def verdict_dict(self) -> dict:
        return {
            "study": "boundedness",
            "ratio": self.ratio,
            "ratio_cap": self.ratio_cap,
            "pass": self.bounded,
            "gridpoints": list(self.gridpoints),
            "finite_difference_jacobians": self.finite_difference_jacobians,
        }


def unit_input_direction(xi: ControlData) -> ControlVariation:
    """Raise every input interval by one unit; x0 untouched."""
    return ControlVariation(np.zeros(xi.state_dim), np.ones_like(xi.u_grid))


def refine_variation(dxi: ControlVariation, xi: ControlData, intervals: int) -> ControlVariation:
    """The same input perturbation held over a finer grid (values per interval, not per unit time)."""
    as_data = xi.with_values(x0=dxi.dx0, u_grid=dxi.du)
    return ControlVariation(dxi.dx0, resample_control(as_data, intervals).u_grid)


def derivative_boundedness_probe(
        system: PiecewiseSmoothSystem,
        epsilons: Sequence[float],
        xi: ControlData,
        cost: CostFunctional,
        T: float,
        N: Optional[int] = None,
        phi: Optional[TransitionFunction] = None,
        direction: Optional[ControlVariation] = None,
        scheme: Scheme | str = Scheme.EULER,
        grid_ratio: float = 10.0,
        ratio_cap: float = DEFAULT_RATIO_CAP,
        workers: int = 1,
) -> BoundednessTable:
    """
    Gradient norm and DL along `direction` for each epsilon. Without a fixed N each epsilon
    gets its own grid with h <= epsilon / grid_ratio; norms are L2 norms so grids compare.
    """
    phi = phi or make_quintic_transition()
    direction = direction or unit_input_direction(xi)
    direction.check_compatible(xi)

    def one(eps: float) -> tuple[float, float, int]:
        n_eps = N if N is not None else gridpoints_for_epsilon(T, eps, xi.intervals, grid_ratio)
        xi_eps = resample_control(xi, n_eps - 1)
        dxi_eps = refine_variation(direction, xi, n_eps - 1)
        field = RegularizedField(system, phi, eps)
        bundle = adjoint_gradient(field, xi_eps, cost, T, n_eps, scheme)
        norm = bundle.l2_norm(T / (n_eps - 1))
        logger.debug("boundedness eps=%g N=%d |grad|=%.6g", eps, n_eps, norm)
        return norm, bundle.dot(dxi_eps), n_eps

    eps_list = [float(e) for e in epsilons]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, eps_list))
    else:
        rows = [one(e) for e in eps_list]

    table = BoundednessTable(
        epsilons=tuple(eps_list),
        grad_norms=tuple(r[0] for r in rows),
        dl_values=tuple(r[1] for r in rows),
        gridpoints=tuple(r[2] for r in rows),
        ratio_cap=ratio_cap,
        finite_difference_jacobians=system.finite_difference_jacobians,
    )
    logger.info("Boundedness probe: max/min gradient norm ratio %.4g (cap %g)", table.ratio, ratio_cap)
    return table
