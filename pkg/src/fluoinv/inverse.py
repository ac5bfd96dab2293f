"""Fixed-point recovery of the absorption source from terminal data.

The map iterated here divides the terminal-time equation residual of the
emission field by the terminal excitation field:

    F(q) = (dt u_m(T; q) + r) / u_e(T; q),

where r is ``-Delta g + p g`` computed from clean terminal data, or
``f + p Sf`` assembled from a scattered-data fit when only noisy point
samples are available.  On data produced by the same discrete forward
solver the true source is an exact fixed point, and the iteration from the
natural initial guess increases monotonically toward it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .forward import (
    ProblemData,
    solve_emission,
    solve_excitation,
    terminal_data,
    terminal_time_derivative,
)
from .grid import GridFunction
from .metrics import l2_norm

__all__ = [
    "InverseConfig",
    "IterationTrace",
    "PositivityError",
    "DomainReport",
    "StabilityConstants",
    "fixed_point_map",
    "noisy_fixed_point_map",
    "initial_guess",
    "noisy_initial_guess",
    "fixed_point_solve",
    "noisy_fixed_point_solve",
    "check_domain",
    "stability_constants",
]


class PositivityError(RuntimeError):
    """A sign hypothesis failed: nonpositive terminal excitation values
    (dividing by them would be meaningless) or an unclamped iterate leaving
    the admissible set.  Signals bad data, not a numerical failure.
    """


@dataclass
class InverseConfig:
    """Stopping rule and projection behavior of the fixed-point iteration."""

    tol: float = 1e-10          # L2 increment threshold
    max_iter: int = 200
    clamp: bool | None = None   # None: off for clean data, on for noisy data
    store_iterates: bool = False

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError(f"tolerance must be positive, got {self.tol}")


@dataclass
class IterationTrace:
    """Per-step diagnostics of a fixed-point run."""

    increments: list[float] = field(default_factory=list)   # ||q_{j+1} - q_j||_L2
    step_minima: list[float] = field(default_factory=list)  # min_x (q_{j+1} - q_j)
    misfits: list[float] = field(default_factory=list)      # ||u_m(T; q_j) - g_ref||_L2
    iterates: list[GridFunction] = field(default_factory=list)
    converged: bool = False
    clamped: bool = False

    @property
    def iterations(self) -> int:
        return len(self.increments)


def _terminal_fields(data: ProblemData, q: GridFunction):
    """One forward pass: terminal excitation, emission, and its derivative."""
    u_e = solve_excitation(data, q)
    u_m = solve_emission(data, q, u_e)
    return terminal_data(u_e), terminal_time_derivative(u_m), terminal_data(u_m)


def _guarded_divide(numer: np.ndarray, ue_T: np.ndarray, grid) -> GridFunction:
    if ue_T.min() <= 0.0:
        raise PositivityError(
            f"terminal excitation field has nonpositive values (min {ue_T.min():g}); "
            "the fixed-point map is undefined for this data"
        )
    return GridFunction(grid, numer / ue_T)


def _clean_numerator(data: ProblemData, g: GridFunction) -> np.ndarray:
    # -Delta_h g + p g, with the same Robin-consistent boundary rows as the solver
    ops = data.grid.operators(data.beta)
    return ops.pointwise_laplacian(g.values) + data.p.values * g.values


def fixed_point_map(data: ProblemData, q: GridFunction, g: GridFunction) -> GridFunction:
    """Apply the fixed-point map at q for clean terminal data g."""
    if g.grid is not data.grid:
        raise ValueError("terminal data must live on the problem grid")
    ue_T, dtum_T, _ = _terminal_fields(data, q)
    numer = dtum_T.values + _clean_numerator(data, g)
    return _guarded_divide(numer, ue_T.values, data.grid)


def noisy_fixed_point_map(data: ProblemData, q: GridFunction,
                          f_rec: GridFunction, sf_rec: GridFunction) -> GridFunction:
    """Apply the fixed-point map with the fitted forcing in place of -Delta g."""
    ue_T, dtum_T, _ = _terminal_fields(data, q)
    numer = dtum_T.values + f_rec.values + data.p.values * sf_rec.values
    return _guarded_divide(numer, ue_T.values, data.grid)


def initial_guess(data: ProblemData, g: GridFunction) -> GridFunction:
    """Starting iterate from one excitation solve at zero source."""
    ue0_T = terminal_data(solve_excitation(data, data.grid.zeros()))
    return _guarded_divide(_clean_numerator(data, g), ue0_T.values, data.grid)


def noisy_initial_guess(data: ProblemData, f_rec: GridFunction,
                        sf_rec: GridFunction) -> GridFunction:
    """Starting iterate built from the fitted forcing and its smoothing."""
    ue0_T = terminal_data(solve_excitation(data, data.grid.zeros()))
    numer = f_rec.values + data.p.values * sf_rec.values
    return _guarded_divide(numer, ue0_T.values, data.grid)


def _iterate(data: ProblemData, q0: GridFunction, numer_data: np.ndarray,
             g_ref: GridFunction, cfg: InverseConfig, clamp_default: bool):
    clamp = clamp_default if cfg.clamp is None else cfg.clamp
    trace = IterationTrace(clamped=clamp)
    q = q0
    if clamp:
        q = GridFunction(data.grid, np.clip(q.values, 0.0, data.M))
    if cfg.store_iterates:
        trace.iterates.append(q)
    for _ in range(cfg.max_iter):
        if not clamp and q.values.min() < 0.0:
            raise PositivityError(
                f"iterate left the admissible set (min q = {q.values.min():g}); "
                "the data violate the sign hypotheses -- enable clamping to proceed"
            )
        ue_T, dtum_T, um_T = _terminal_fields(data, q)
        trace.misfits.append(l2_norm(um_T - g_ref))
        q_next = _guarded_divide(dtum_T.values + numer_data, ue_T.values, data.grid)
        if clamp:
            q_next = GridFunction(data.grid, np.clip(q_next.values, 0.0, data.M))
        step = q_next - q
        trace.increments.append(l2_norm(step))
        trace.step_minima.append(step.min())
        if cfg.store_iterates:
            trace.iterates.append(q_next)
        q = q_next
        if trace.increments[-1] < cfg.tol:
            trace.converged = True
            break
    return q, trace


def fixed_point_solve(data: ProblemData, g: GridFunction,
                      cfg: InverseConfig | None = None):
    """Iterate the clean-data map from the natural initial guess.

    Per-step misfits in the trace compare the terminal emission field of the
    current iterate against g.  Clamping is off by default so the raw map
    (and its monotonicity) is observable.
    """
    cfg = cfg or InverseConfig()
    numer_data = _clean_numerator(data, g)
    q0 = initial_guess(data, g)
    return _iterate(data, q0, numer_data, g, cfg, clamp_default=False)


def noisy_fixed_point_solve(data: ProblemData, f_rec: GridFunction,
                            sf_rec: GridFunction,
                            cfg: InverseConfig | None = None):
    """Iterate the map assembled from fitted data.

    Noise can push iterates outside the admissible interval, so they are
    clamped to [0, M] by default; traced misfits compare against the fitted
    smooth field standing in for the unavailable clean data.
    """
    cfg = cfg or InverseConfig()
    numer_data = f_rec.values + data.p.values * sf_rec.values
    q0 = noisy_initial_guess(data, f_rec, sf_rec)
    return _iterate(data, q0, numer_data, sf_rec, cfg, clamp_default=True)


@dataclass
class DomainReport:
    """Nodewise admissibility of a candidate source."""

    ok: bool
    upper_violations: np.ndarray   # node indices with q > M
    lower_violations: np.ndarray   # node indices with q < lower envelope
    max_upper_excess: float
    max_lower_deficit: float


def check_domain(data: ProblemData, q: GridFunction, g: GridFunction,
                 slack: float = 1e-10) -> tuple[bool, DomainReport]:
    """Check M >= q >= (initial guess from g) nodewise, with slack."""
    lower = initial_guess(data, g).values
    qv = q.values
    upper_bad = np.flatnonzero(qv > data.M + slack)
    lower_bad = np.flatnonzero(qv < lower - slack)
    report = DomainReport(
        ok=(upper_bad.size == 0 and lower_bad.size == 0),
        upper_violations=upper_bad,
        lower_violations=lower_bad,
        max_upper_excess=float(max((qv - data.M).max(), 0.0)),
        max_lower_deficit=float(max((lower - qv).max(), 0.0)),
    )
    return report.ok, report


@dataclass
class StabilityConstants:
    """Discrete surrogates for the constants of the Lipschitz stability bound.

    ``hypothesis_ratio`` is sqrt(T) * M_b * (M + 1) / (m_Q * sqrt(C_p));
    the bound's constant C is only defined when the ratio is below one.
    """

    m_Q: float
    M_b: float
    C_p: float
    hypothesis_ratio: float
    C: float | None

    @property
    def hypothesis_holds(self) -> bool:
        return self.hypothesis_ratio < 1.0


def stability_constants(data: ProblemData) -> StabilityConstants:
    """Compute m_Q (one excitation solve at q = M), M_b, C_p, and the ratio."""
    v_M = solve_excitation(data, data.grid.function(np.full(data.grid.node_count, data.M)))
    m_Q = float(terminal_data(v_M).min())
    C_p = float(data.p.values.min())
    if m_Q <= 0 or C_p <= 0:
        return StabilityConstants(m_Q, data.M_b, C_p, np.inf, None)
    ratio = float(np.sqrt(data.T) * data.M_b * (data.M + 1.0) / (m_Q * np.sqrt(C_p)))
    C = float(np.sqrt(C_p) / (m_Q * np.sqrt(C_p) - np.sqrt(data.T) * data.M_b * (data.M + 1.0))) \
        if ratio < 1.0 else None
    return StabilityConstants(m_Q, data.M_b, C_p, ratio, C)
