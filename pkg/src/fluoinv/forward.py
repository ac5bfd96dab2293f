"""Time-dependent solvers for the coupled excitation/emission system.

The excitation field is driven through an inhomogeneous Robin condition and
absorbed by ``p + q``; the emission field has homogeneous Robin data and is
sourced by ``q * u_e``.  Both are advanced with backward Euler, which keeps
every step an M-matrix solve and therefore preserves nonnegativity of the
discrete fields exactly -- the property tests rely on that, not on accuracy.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import (
    ConvergenceError,
    Grid,
    GridFunction,
    cg_solve,
    default_tolerance,
)

__all__ = [
    "ProblemData",
    "SpaceTimeField",
    "AssumptionWarning",
    "solve_excitation",
    "solve_emission",
    "terminal_data",
    "terminal_time_derivative",
    "elliptic_solve",
]


class AssumptionWarning(UserWarning):
    """A hypothesis of the underlying theory is violated by the given data.

    These are warnings, not errors: exploring violated hypotheses is a
    supported use of the solvers.
    """


@dataclass
class SpaceTimeField:
    """All time levels of a scalar field: levels[k] holds the values at t_k."""

    grid: Grid
    times: np.ndarray
    levels: np.ndarray  # shape (n_levels, node_count)

    def __post_init__(self):
        if self.levels.shape != (len(self.times), self.grid.node_count):
            raise ValueError("levels shape inconsistent with times/grid")

    @property
    def tau(self) -> float:
        return float(self.times[1] - self.times[0])

    def slice(self, k: int) -> GridFunction:
        return GridFunction(self.grid, self.levels[k])

    def time_differences(self) -> np.ndarray:
        """Backward differences (levels[k] - levels[k-1]) / tau, k = 1..N."""
        return np.diff(self.levels, axis=0) / self.tau


class ProblemData:
    """Coefficients and run parameters for one forward model.

    Parameters
    ----------
    grid : Grid
    p : GridFunction
        Background absorption, strictly positive.
    b : callable(coords, t) -> array
        Boundary data evaluated at the boundary-node coordinates (an array
        of shape (n_boundary, dim)) and scalar time t.
    beta : float
        Robin parameter.
    T, tau : float
        Final time and time step; T/tau must be an integer.
    M : float
        Upper bound of the admissible source set [0, M].

    The maximum ``M_b`` of b and its first/second finite-difference time
    derivatives over boundary nodes and time levels is computed on
    construction, together with warnings for violated sign hypotheses.
    """

    def __init__(self, grid: Grid, p: GridFunction, b, beta: float, T: float,
                 tau: float, M: float, check_assumptions: bool = True):
        if beta <= 0:
            raise ValueError(f"beta must be positive, got {beta}")
        if M <= 0:
            raise ValueError(f"admissible bound M must be positive, got {M}")
        steps = T / tau
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError(f"T/tau = {steps} is not an integer number of steps")
        if p.grid is not grid:
            raise ValueError("p must live on the problem grid")
        self.grid = grid
        self.p = p
        self.b = b
        self.beta = float(beta)
        self.T = float(T)
        self.tau = float(tau)
        self.M = float(M)
        self.n_steps = int(round(steps))
        self.times = np.arange(self.n_steps + 1) * self.tau

        bcoords = grid.coords[grid.boundary_indices]
        self.boundary_values = np.array(
            [np.broadcast_to(np.asarray(b(bcoords, t), dtype=float),
                             (len(grid.boundary_indices),)).copy()
             for t in self.times]
        )
        bv = self.boundary_values
        dtb = np.diff(bv, axis=0) / self.tau
        d2tb = (bv[2:] - 2.0 * bv[1:-1] + bv[:-2]) / self.tau**2 if len(bv) > 2 \
            else np.zeros((0, bv.shape[1]))
        self.M_b = float(max(bv.max(), dtb.max() if dtb.size else 0.0,
                             d2tb.max() if d2tb.size else 0.0, 0.0))
        self._emission_lu = None
        if check_assumptions:
            self._warn_on_violations(bv, dtb, d2tb)

    def _warn_on_violations(self, bv, dtb, d2tb):
        def warn(msg):
            warnings.warn(msg, AssumptionWarning, stacklevel=3)

        if self.p.values.min() <= 0:
            warn(f"background absorption must be positive; min p = {self.p.values.min():g}")
        if bv.min() < 0:
            warn(f"boundary data takes negative values (min {bv.min():g})")
        if dtb.size and dtb.min() < -1e-12 * max(1.0, self.M_b):
            warn(f"boundary data decreases in time (min rate {dtb.min():g})")
        if d2tb.size and d2tb.min() < -1e-9 * max(1.0, self.M_b):
            warn(f"boundary data is concave in time (min curvature {d2tb.min():g})")
        if not (bv > 0).any():
            warn("boundary data vanishes identically")
        if bv[-1].min() <= 0:
            warn(f"terminal boundary data is not strictly positive (min {bv[-1].min():g})")

    def boundary_field(self, k: int) -> np.ndarray:
        """Boundary values at time level k scattered to all nodes."""
        v = np.zeros(self.grid.node_count)
        v[self.grid.boundary_indices] = self.boundary_values[k]
        return v

    def emission_lu(self):
        """Cached factorization of the (q-independent) emission step matrix."""
        if self._emission_lu is None:
            self._emission_lu = _step_factorization(self, self.p.values)
        return self._emission_lu


def _step_factorization(data: ProblemData, absorption: np.ndarray):
    ops = data.grid.operators(data.beta)
    A = (
        sp.diags(ops.weights / data.tau)
        + ops.laplacian.matrix
        + sp.diags(ops.weights * absorption)
    ).tocsc()
    return spla.splu(A)


def _march(data: ProblemData, lu, load=None, source=None) -> SpaceTimeField:
    """Backward-Euler loop: fully implicit loads/sources at the new level."""
    ops = data.grid.operators(data.beta)
    w = ops.weights
    n = data.grid.node_count
    levels = np.zeros((data.n_steps + 1, n))
    u = levels[0]
    for k in range(1, data.n_steps + 1):
        rhs = w * u / data.tau
        if load is not None:
            rhs = rhs + ops.load_weights * load(k)
        if source is not None:
            rhs = rhs + w * source(k)
        u = lu.solve(rhs)
        levels[k] = u
    return SpaceTimeField(data.grid, data.times.copy(), levels)


def solve_excitation(data: ProblemData, q: GridFunction) -> SpaceTimeField:
    """Excitation field driven by the Robin data, absorbed by p + q.

    Rejects sources with negative entries: the admissible set is [0, M].
    """
    if q.grid is not data.grid:
        raise ValueError("source q must live on the problem grid")
    if q.values.min() < 0:
        raise ValueError(f"source must be nonnegative; min q = {q.values.min():g}")
    lu = _step_factorization(data, data.p.values + q.values)
    return _march(data, lu, load=lambda k: data.boundary_field(k))


def solve_emission(data: ProblemData, q: GridFunction, u_e: SpaceTimeField) -> SpaceTimeField:
    """Emission field with homogeneous Robin data and source q * u_e."""
    if q.grid is not data.grid or u_e.grid is not data.grid:
        raise ValueError("emission inputs must live on the problem grid")
    if len(u_e.times) != data.n_steps + 1:
        raise ValueError("excitation field has a different time grid")
    lu = data.emission_lu()
    return _march(data, lu, source=lambda k: q.values * u_e.levels[k])


def terminal_data(u: SpaceTimeField) -> GridFunction:
    """The final time slice."""
    return u.slice(len(u.times) - 1)


def terminal_time_derivative(u: SpaceTimeField) -> GridFunction:
    """Backward difference at the final time.

    With backward Euler this equals the discrete equation residual at the
    final level exactly, so it is the canonical terminal derivative: the
    fixed-point map built from it has the manufactured source as an exact
    fixed point on data generated by the same discrete solver.
    """
    if len(u.times) < 2:
        raise ValueError("need at least two time levels for a time derivative")
    return GridFunction(u.grid, (u.levels[-1] - u.levels[-2]) / u.tau)


def elliptic_solve(grid: Grid, beta: float, f: GridFunction,
                   tol: float | None = None) -> GridFunction:
    """Smoothing operator: solve the Robin Poisson problem with source f.

    Conjugate gradients on the assembled Laplacian; raises ConvergenceError
    if the tolerance is not reached.
    """
    if f.grid is not grid:
        raise ValueError("f must live on the given grid")
    ops = grid.operators(beta)
    rhs = GridFunction(grid, ops.weights * f.values)
    u, report = cg_solve(ops.laplacian, rhs, tol=tol if tol is not None else default_tolerance())
    if not report.converged:
        raise ConvergenceError(
            f"elliptic solve stalled at residual {report.residual:.3e}", report
        )
    return u
