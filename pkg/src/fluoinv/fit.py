"""Regularized scattered-data fit of the forcing behind noisy point samples.

Given noisy samples ``y_i`` of a smooth field g at sensor locations, the
fit recovers a nodal forcing f minimizing

    (1/n) * sum_i (Sf(x_i) - y_i)^2 + lam * |f|_{H^s}^2,   s in {0, 1},

where S is the Robin Poisson solve from :mod:`fluoinv.forward`.  The
minimizer solves SPD normal equations

    (lam * R_s + (1/n) (ES)' (ES)) f = (1/n) (ES)' y

with R_s the lumped-mass (s=0) or mass+stiffness (s=1) Gram matrix and E
the multilinear point-evaluation map.  They are solved by an outer CG whose
matrix-vector product costs two elliptic solves; the elliptic solves reuse
a cached factorization of the assembled Laplacian, and the n measurement
couplings are folded into a precomputed sparse E'E so each product is
independent of n.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .grid import (
    ConvergenceError,
    Grid,
    GridFunction,
    SolveReport,
    _pcg,
    default_tolerance,
)

__all__ = [
    "MeasurementSet",
    "FitConfig",
    "FitResult",
    "LambdaTrace",
    "PointEvaluation",
    "point_evaluation",
    "empirical_norm",
    "solve_data_fit",
    "optimal_lambda_prior",
    "self_consistent_lambda",
]


@dataclass
class MeasurementSet:
    """Sensor locations, noisy readings, and their nominal noise level."""

    points: np.ndarray      # (n, dim), strictly inside the open domain
    values: np.ndarray      # (n,)
    sigma: float            # nominal noise standard deviation
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.values = np.asarray(self.values, dtype=float)
        if self.points.shape[0] < 1:
            raise ValueError("need at least one measurement point")
        if self.values.shape != (self.points.shape[0],):
            raise ValueError("values/points length mismatch")
        if (self.points <= 0.0).any() or (self.points >= 1.0).any():
            raise ValueError("measurement points must lie strictly inside the domain")

    @property
    def n(self) -> int:
        return self.points.shape[0]


class PointEvaluation:
    """Sparse linear map from nodal fields to values at scattered points.

    Uses linear (1D) / bilinear (2D) interpolation on the cell containing
    each point; the transpose is exposed as the scatter (adjoint) map used
    by the normal equations.
    """

    def __init__(self, grid: Grid, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != grid.dim:
            raise ValueError(f"points have dim {points.shape[1]}, grid has {grid.dim}")
        if (points < 0.0).any() or (points > 1.0).any():
            raise ValueError("evaluation point outside the closed domain")
        self.grid = grid
        self.points = points
        m = grid.cells_per_side
        h = grid.h
        npts = points.shape[0]
        cell = np.minimum((points / h).astype(int), m - 1)
        local = points / h - cell
        if grid.dim == 1:
            rows = np.repeat(np.arange(npts), 2)
            cols = np.column_stack([cell[:, 0], cell[:, 0] + 1]).ravel()
            t = local[:, 0]
            w = np.column_stack([1 - t, t]).ravel()
        else:
            n = m + 1
            base = cell[:, 1] * n + cell[:, 0]
            rows = np.repeat(np.arange(npts), 4)
            cols = np.column_stack([base, base + 1, base + n, base + n + 1]).ravel()
            tx, ty = local[:, 0], local[:, 1]
            w = np.column_stack(
                [(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty]
            ).ravel()
        self.matrix = sp.csr_matrix((w, (rows, cols)), shape=(npts, grid.node_count))

    def apply(self, u) -> np.ndarray:
        values = u.values if isinstance(u, GridFunction) else np.asarray(u)
        return self.matrix @ values

    def adjoint(self, vec) -> GridFunction:
        return GridFunction(self.grid, self.matrix.T @ np.asarray(vec, dtype=float))


def point_evaluation(grid: Grid, points) -> PointEvaluation:
    """Build the interpolation map for the given sensor locations."""
    return PointEvaluation(grid, points)


def empirical_norm(values) -> float:
    """Root mean square over the sensors: ||v||_n = sqrt(sum v_i^2 / n)."""
    values = np.asarray(values, dtype=float)
    if values.size < 1:
        raise ValueError("empirical norm needs at least one value")
    return float(np.sqrt(np.mean(values**2)))


@dataclass
class FitConfig:
    """Penalty order, regularization weight, and solver knobs."""

    s: int
    lam: float
    inner_tol: float | None = None     # elliptic-solve tolerance (consistency checks)
    outer_tol: float | None = None     # normal-equation CG tolerance
    max_iter: int = 20000

    def __post_init__(self):
        if self.s not in (0, 1):
            raise ValueError(f"penalty order s must be 0 or 1, got {self.s}")
        if self.lam <= 0:
            raise ValueError(f"regularization weight must be positive, got {self.lam}")
        if self.inner_tol is None:
            self.inner_tol = default_tolerance()
        if self.outer_tol is None:
            self.outer_tol = default_tolerance()


@dataclass
class FitResult:
    """Minimizer of the penalized empirical functional."""

    f: GridFunction
    sf: GridFunction
    misfit_n: float        # ||Sf - y||_n at the sensors
    penalty_norm: float    # |f|_{H^s}
    report: SolveReport


class _FitWorkspace:
    """Per-(grid, beta, points) precomputations shared across fits."""

    def __init__(self, grid: Grid, beta: float, points):
        self.grid = grid
        self.beta = beta
        self.ops = grid.operators(beta)
        self.ev = PointEvaluation(grid, points)
        self.n = self.ev.points.shape[0]
        self.ete = (self.ev.matrix.T @ self.ev.matrix).tocsr()
        self.lu = self.ops.lu_laplacian()

    def smooth(self, f_values: np.ndarray) -> np.ndarray:
        """Apply the Poisson solve S through the cached factorization."""
        return self.lu.solve(self.ops.weights * f_values)

    def gram_apply(self, s: int, v: np.ndarray) -> np.ndarray:
        if s == 0:
            return self.ops.mass_diag * v
        return self.ops.mass_diag * v + self.ops.stiffness_natural.matrix @ v

    def gram_solve(self, s: int, v: np.ndarray) -> np.ndarray:
        if s == 0:
            return v / self.ops.mass_diag
        return self.ops.lu_h1().solve(v)

    def penalty_norm(self, s: int, f_values: np.ndarray) -> float:
        return float(np.sqrt(max(f_values @ self.gram_apply(s, f_values), 0.0)))


def solve_data_fit(grid: Grid, beta: float, meas: MeasurementSet,
                   cfg: FitConfig, workspace: _FitWorkspace | None = None) -> FitResult:
    """Solve the penalized least-squares problem for the nodal forcing.

    Raises ConvergenceError if the outer CG does not reach its tolerance.
    """
    ws = workspace if workspace is not None else _FitWorkspace(grid, beta, meas.points)
    n = meas.n
    w = ws.ops.weights
    lam = cfg.lam
    s = cfg.s

    def matvec(f):
        u = ws.smooth(f)                      # S f
        t = ws.ete @ u                        # E'(E S f)
        return lam * ws.gram_apply(s, f) + (w * ws.lu.solve(t)) / n

    rhs = (w * ws.lu.solve(ws.ev.matrix.T @ meas.values)) / n
    x, report = _pcg(
        matvec,
        rhs,
        tol=cfg.outer_tol,
        max_iter=cfg.max_iter,
        precond=lambda r: ws.gram_solve(s, r),
    )
    if not report.converged:
        raise ConvergenceError(
            f"normal-equation CG stalled at residual {report.residual:.3e} "
            f"after {report.iterations} iterations",
            report,
        )
    f = GridFunction(grid, x)
    sf = GridFunction(grid, ws.smooth(x))
    misfit = empirical_norm(ws.ev.apply(sf) - meas.values)
    return FitResult(f, sf, misfit, ws.penalty_norm(s, x), report)


def _lambda_exponent(s: int) -> float:
    # the balance rule fixes lam through lam^(1/2 + 1/(4+2s)) = sigma / (sqrt(n) |f*|)
    return 0.5 + 1.0 / (4 + 2 * s)


def optimal_lambda_prior(norm_f_star: float, sigma: float, n: int, s: int) -> float:
    """Regularization weight from the a-priori balance rule.

    Requires the true-forcing norm and the noise level; the self-consistent
    loop below replaces both with estimates when they are unknown.
    """
    if norm_f_star <= 0:
        raise ValueError("norm of the true forcing must be positive")
    if n < 1:
        raise ValueError("need at least one measurement")
    if sigma <= 0:
        raise ValueError("noise level must be positive: the noiseless problem needs no weight")
    return float((sigma / np.sqrt(n) / norm_f_star) ** (1.0 / _lambda_exponent(s)))


@dataclass
class LambdaTrace:
    """Sequence of regularization weights produced by the self-consistent loop."""

    lams: list[float]
    converged: bool

    @property
    def outer_iterations(self) -> int:
        return len(self.lams) - 1


def self_consistent_lambda(grid: Grid, beta: float, meas: MeasurementSet, s: int,
                           stop_tol: float = 1e-10, max_outer: int = 50,
                           outer_tol: float | None = None,
                           workspace: _FitWorkspace | None = None,
                           ) -> tuple[float, FitResult, LambdaTrace]:
    """Alternate fitting and re-estimating the regularization weight.

    Starting from ``lam_0`` fixed by the sample count alone, each pass fits
    at the current weight, then re-derives it from the empirical misfit (a
    noise-level estimate) and the penalty norm of the fit (a forcing-norm
    estimate).  Stops when the weight moves less than ``stop_tol`` in
    absolute value; the final fit is recomputed at the accepted weight.
    Non-convergence within ``max_outer`` passes is flagged on the trace and
    the last iterate is returned.
    """
    expo = _lambda_exponent(s)
    ws = workspace if workspace is not None else _FitWorkspace(grid, beta, meas.points)
    lam = float(meas.n ** (-0.5 / expo))
    lams = [lam]
    converged = False
    result = None
    for _ in range(max_outer):
        result = solve_data_fit(grid, beta, meas, FitConfig(s=s, lam=lam, outer_tol=outer_tol),
                                workspace=ws)
        if result.penalty_norm == 0.0:
            raise ValueError("degenerate fit: zero penalty norm, weight update undefined")
        lam_next = float(
            (result.misfit_n / np.sqrt(meas.n) / result.penalty_norm) ** (1.0 / expo)
        )
        lams.append(lam_next)
        done = abs(lam_next - lam) < stop_tol
        lam = lam_next
        if done:
            converged = True
            break
    # recompute once at the accepted weight so the returned fit matches it
    result = solve_data_fit(grid, beta, meas, FitConfig(s=s, lam=lam, outer_tol=outer_tol),
                            workspace=ws)
    return lam, result, LambdaTrace(lams, converged)
