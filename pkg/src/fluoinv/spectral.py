"""Eigenvalue diagnostics: Weyl growth and the empirical smoothing pencil.

Two spectra back the statistical rate analysis.  The Dirichlet Laplacian's
eigenvalues grow like k^(2/d); and for n sensors the pencil pairing the
H^s Gram matrix against the empirical inner product of smoothed fields has
exactly n finite eigenvalues growing at least like k^(2(2+s)/d).  Both are
computed densely -- these are diagnostics at modest scale, not production
solves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .grid import Grid

__all__ = ["SpectrumReport", "laplacian_spectrum", "empirical_smoothing_spectrum"]

DENSE_NODE_CAP = 4096       # interior nodes for the dense symmetric eigensolver
PENCIL_POINT_CAP = 400      # sensors for the dense reduced pencil
FIT_SKIP = 9                # indices excluded before the asymptotic regime


@dataclass
class SpectrumReport:
    """Sorted eigenvalues with a fitted log-log growth exponent."""

    eigenvalues: np.ndarray
    growth_exponent: float
    fit_range: tuple[int, int]    # 1-based index range used for the fit
    r_squared: float


def _fit_exponent(eigenvalues: np.ndarray, k_lo: int, k_hi: int):
    if k_hi - k_lo < 1:
        return float("nan"), float("nan")  # a growth fit needs several modes
    k = np.arange(k_lo, k_hi + 1)
    vals = eigenvalues[k_lo - 1 : k_hi]
    x, y = np.log(k), np.log(vals)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if ss == 0.0 else 1.0 - float((resid**2).sum()) / ss
    return float(slope), float(r2)


def _dirichlet_matrix(grid: Grid) -> np.ndarray:
    m = grid.cells_per_side
    k = m - 1
    T = sp.diags([np.full(k - 1, -1.0), np.full(k, 2.0), np.full(k - 1, -1.0)],
                 [-1, 0, 1])
    if grid.dim == 1:
        A = T
    else:
        I = sp.identity(k)
        A = sp.kron(I, T) + sp.kron(T, I)
    return (A / grid.h**2).toarray()


def laplacian_spectrum(grid: Grid, k_max: int) -> SpectrumReport:
    """Smallest k_max eigenvalues of the Dirichlet negative Laplacian.

    Dense symmetric eigensolver on the interior nodes; grids beyond the
    documented cap are rejected rather than silently crawling.
    """
    interior = (grid.cells_per_side - 1) ** grid.dim
    if k_max > interior:
        raise ValueError(f"k_max = {k_max} exceeds the {interior} interior nodes")
    if interior > DENSE_NODE_CAP:
        raise ValueError(
            f"{interior} interior nodes exceed the dense-solver cap {DENSE_NODE_CAP}"
        )
    vals = sla.eigh(_dirichlet_matrix(grid), eigvals_only=True,
                    subset_by_index=[0, k_max - 1])
    k_lo = min(FIT_SKIP + 1, max(k_max - 9, 1))
    slope, r2 = _fit_exponent(vals, k_lo, k_max)
    return SpectrumReport(vals, slope, (k_lo, k_max), r2)


def empirical_smoothing_spectrum(grid: Grid, beta: float, points, s: int) -> SpectrumReport:
    """The n finite eigenvalues of the H^s-vs-empirical smoothing pencil.

    Reduced to an n x n problem: with Z holding the H^s representers of the
    sensor evaluations of smoothed fields, B = Z' R_s^{-1} Z / n has
    eigenvalues eta_k whose reciprocals are the pencil eigenvalues, sorted
    ascending.  Each column costs one elliptic and one Gram solve.
    """
    if s not in (0, 1):
        raise ValueError(f"penalty order s must be 0 or 1, got {s}")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = points.shape[0]
    if n > PENCIL_POINT_CAP:
        raise ValueError(f"{n} sensors exceed the dense-pencil cap {PENCIL_POINT_CAP}")
    from .fit import point_evaluation

    ops = grid.operators(beta)
    ev = point_evaluation(grid, points)
    lu = ops.lu_laplacian()
    Et = np.asarray(ev.matrix.T.todense())
    Z = ops.weights[:, None] * lu.solve(Et)      # (ES)' applied to unit vectors
    V = Z / ops.mass_diag[:, None] if s == 0 else ops.lu_h1().solve(Z)
    B = (Z.T @ V) / n
    eta = sla.eigh(B, eigvals_only=True)         # ascending
    scale = eta[-1]
    if scale <= 0 or eta[0] <= 1e-13 * scale:
        raise ValueError(
            "empirical pencil is numerically rank deficient (coincident sensors?)"
        )
    rho = np.sort(1.0 / eta)
    k_lo = min(FIT_SKIP + 1, max(n - 9, 1))
    slope, r2 = _fit_exponent(rho, k_lo, n)
    return SpectrumReport(rho, slope, (k_lo, n), r2)
