"""Uniform grids on the unit interval/square and their discrete operators.

Everything downstream is built on three sparse objects assembled here: a
negative Laplacian with the Robin condition ``beta * du/dn + u = b``
eliminated through boundary control volumes, a diagonal (lumped) mass
matrix, and a natural-boundary stiffness matrix used by the H1 inner
product.  The Laplacian is kept in a symmetrized scaling in which interior
rows reproduce the classic 3-point / 5-point stencils divided by h^2 while
the matrix stays a symmetric M-matrix; dividing rows by the control-volume
fractions recovers the pointwise (ghost-node) form exactly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "Grid",
    "GridFunction",
    "SparseOperator",
    "SolveReport",
    "ConvergenceError",
    "assemble_laplacian",
    "assemble_mass",
    "assemble_stiffness",
    "boundary_load_weights",
    "cg_solve",
    "default_tolerance",
]

DEFAULT_CG_TOL = 1e-10


def default_tolerance() -> float:
    """Solver tolerance, overridable through the SOLVER_TOL env variable."""
    val = os.environ.get("SOLVER_TOL")
    return float(val) if val else DEFAULT_CG_TOL


class ConvergenceError(RuntimeError):
    """An iterative solve failed to reach its tolerance."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


def _tri_flux(m: int) -> sp.spmatrix:
    # dimensionless 1D flux stencil: rows [1,-1], [-1,2,-1], ..., [-1,1]
    n = m + 1
    main = np.full(n, 2.0)
    main[0] = main[-1] = 1.0
    off = np.full(n - 1, -1.0)
    return sp.diags([off, main, off], [-1, 0, 1])


class Grid:
    """Uniform rectilinear grid on (0,1)^dim with nodes at every cell corner.

    Parameters
    ----------
    dim : int
        Spatial dimension, 1 or 2.
    cells_per_side : int
        Number of cells along each axis; must be >= 4.  The spacing is
        exactly ``1 / cells_per_side`` and there are ``cells_per_side + 1``
        nodes per axis (boundary nodes included).
    """

    def __init__(self, dim: int, cells_per_side: int):
        if dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {dim}")
        if cells_per_side < 4:
            raise ValueError(f"cells_per_side must be >= 4, got {cells_per_side}")
        self.dim = dim
        self.cells_per_side = int(cells_per_side)
        self.h = 1.0 / self.cells_per_side

        m = self.cells_per_side
        n = m + 1
        if dim == 1:
            self.shape = (n,)
            self.coords = (np.arange(n) * self.h)[:, None]
        else:
            self.shape = (n, n)
            idx = np.arange(n * n)
            i = idx % n
            j = idx // n
            self.coords = np.column_stack([i * self.h, j * self.h])
        self.node_count = self.coords.shape[0]

        on_face_lo = self.coords <= 0.0 + 1e-15
        on_face_hi = self.coords >= 1.0 - 1e-15
        self.boundary_mask = (on_face_lo | on_face_hi).any(axis=1)
        self.boundary_indices = np.flatnonzero(self.boundary_mask)
        self.interior_indices = np.flatnonzero(~self.boundary_mask)

        # outward normals; corners get the normalized sum of face normals
        normals = np.zeros((self.node_count, dim))
        normals[on_face_lo] -= 1.0
        normals[on_face_hi] += 1.0
        nb = normals[self.boundary_indices]
        self.boundary_normals = nb / np.linalg.norm(nb, axis=1, keepdims=True)

        # control-volume fraction per node: 1 interior, 1/2 face, 1/4 corner
        w1 = np.ones(n)
        w1[0] = w1[-1] = 0.5
        self.cv_fractions = w1 if dim == 1 else np.kron(w1, w1)

        self._op_cache: dict[float, "_GridOperators"] = {}

    # x (and y) coordinate views, handy for building coefficient fields
    @property
    def x(self) -> np.ndarray:
        return self.coords[:, 0]

    @property
    def y(self) -> np.ndarray:
        if self.dim < 2:
            raise AttributeError("1D grid has no y coordinate")
        return self.coords[:, 1]

    def function(self, values) -> "GridFunction":
        """Wrap nodal values (array or callable of coords) as a GridFunction."""
        if callable(values):
            values = values(*(self.coords[:, d] for d in range(self.dim)))
        return GridFunction(self, values)

    def zeros(self) -> "GridFunction":
        return GridFunction(self, np.zeros(self.node_count))

    def operators(self, beta: float) -> "_GridOperators":
        """Cached assembled operators for a given Robin parameter."""
        key = float(beta)
        ops = self._op_cache.get(key)
        if ops is None:
            ops = _GridOperators(self, key)
            self._op_cache[key] = ops
        return ops

    def __repr__(self):
        return f"Grid(dim={self.dim}, cells_per_side={self.cells_per_side})"


class GridFunction:
    """Nodal values of a scalar field on a Grid.

    Arithmetic is only defined between functions living on the same grid;
    instances are treated as immutable after construction.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.node_count,):
            raise ValueError(
                f"expected {grid.node_count} nodal values, got shape {values.shape}"
            )
        self.grid = grid
        self.values = values

    def _check(self, other: "GridFunction"):
        if other.grid is not self.grid:
            raise ValueError("grid mismatch between operands")

    def __add__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return GridFunction(self.grid, self.values + other.values)
        return GridFunction(self.grid, self.values + other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return GridFunction(self.grid, self.values - other.values)
        return GridFunction(self.grid, self.values - other)

    def __rsub__(self, other):
        return GridFunction(self.grid, other - self.values)

    def __mul__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return GridFunction(self.grid, self.values * other.values)
        return GridFunction(self.grid, self.values * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return GridFunction(self.grid, self.values / other.values)
        return GridFunction(self.grid, self.values / other)

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())

    def copy(self) -> "GridFunction":
        return GridFunction(self.grid, self.values.copy())

    def __repr__(self):
        return f"GridFunction({self.grid!r}, n={len(self.values)})"


@dataclass
class SparseOperator:
    """Square sparse matrix over grid nodes in compressed-row layout."""

    matrix: sp.csr_matrix
    symmetric: bool = False

    def __post_init__(self):
        self.matrix = sp.csr_matrix(self.matrix)
        nr, nc = self.matrix.shape
        if nr != nc:
            raise ValueError(f"operator must be square, got {self.matrix.shape}")
        if self.symmetric:
            d = self.matrix - self.matrix.T
            scale = max(abs(self.matrix.data).max(), 1.0)
            if d.nnz and abs(d.data).max() > 1e-14 * scale:
                raise ValueError("symmetric flag set on a non-symmetric matrix")

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, v):
        if isinstance(v, GridFunction):
            return GridFunction(v.grid, self.matrix @ v.values)
        return self.matrix @ v

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()


@dataclass
class SolveReport:
    """Outcome of an iterative linear solve."""

    iterations: int
    residual: float
    converged: bool
    residual_history: list = field(default_factory=list, repr=False)


class _GridOperators:
    """Assembled matrices and factorizations shared across a grid's users.

    LU factorizations are built lazily; they back the repeated terminal-time
    solves where re-running CG per step would dominate the runtime.
    """

    def __init__(self, grid: Grid, beta: float):
        if beta <= 0:
            raise ValueError(f"Robin parameter beta must be positive, got {beta}")
        self.grid = grid
        self.beta = beta
        m = grid.cells_per_side
        h = grid.h
        T = _tri_flux(m)
        if grid.dim == 1:
            a_nat = (T / h).tocsr()
        else:
            n = m + 1
            w = np.ones(n)
            w[0] = w[-1] = 0.5
            Wd = sp.diags(w)
            a_nat = (sp.kron(Wd, T) + sp.kron(T, Wd)).tocsr()

        robin = np.zeros(grid.node_count)
        robin[grid.boundary_mask] = h ** (grid.dim - 1) / beta
        scale = h ** grid.dim
        self.laplacian = SparseOperator(
            ((a_nat + sp.diags(robin)) / scale).tocsr(), symmetric=True
        )
        self.stiffness_natural = SparseOperator(a_nat, symmetric=True)
        self.mass_diag = grid.cv_fractions * scale
        self.mass = SparseOperator(sp.diags(self.mass_diag).tocsr(), symmetric=True)
        # control-volume weights: W = mass / h^dim; W^-1 L is the pointwise operator
        self.weights = grid.cv_fractions
        self.load_weights = np.zeros(grid.node_count)
        self.load_weights[grid.boundary_mask] = 1.0 / (beta * h)

        self._lu_laplacian = None
        self._lu_h1 = None

    def lu_laplacian(self):
        if self._lu_laplacian is None:
            self._lu_laplacian = spla.splu(self.laplacian.matrix.tocsc())
        return self._lu_laplacian

    def lu_h1(self):
        if self._lu_h1 is None:
            gram = self.mass.matrix + self.stiffness_natural.matrix
            self._lu_h1 = spla.splu(gram.tocsc())
        return self._lu_h1

    def pointwise_laplacian(self, values: np.ndarray) -> np.ndarray:
        """Apply the negative Laplacian nodewise: -Delta_h u = W^-1 (L u).

        Valid for fields satisfying the homogeneous Robin condition; the
        boundary rows use the same elimination as the assembled operator.
        """
        return (self.laplacian.matrix @ values) / self.weights


def assemble_laplacian(grid: Grid, beta: float) -> SparseOperator:
    """Discrete negative Laplacian with the Robin condition eliminated.

    The returned matrix is symmetric, has nonpositive off-diagonal entries,
    and is weakly diagonally dominant with strict dominance on boundary
    rows (the Robin contribution ``1/(beta*h)`` on the diagonal).  Interior
    rows equal the standard 3-point (1D) or 5-point (2D) stencil divided by
    h^2.  Applying it to a constant c reproduces exactly the load vector
    built from boundary data b = c.
    """
    return grid.operators(beta).laplacian


def assemble_mass(grid: Grid) -> SparseOperator:
    """Diagonal lumped mass matrix; entries sum to the unit measure of the domain."""
    return grid.operators(1.0).mass


def assemble_stiffness(grid: Grid) -> SparseOperator:
    """Integrated stiffness with natural (no-flux) boundary treatment.

    ``u^T A u`` approximates the squared gradient seminorm; constants lie
    in its kernel.  Used by the H1 inner product and its Riesz map.
    """
    return grid.operators(1.0).stiffness_natural


def boundary_load_weights(grid: Grid, beta: float) -> np.ndarray:
    """Per-node weights turning boundary data b into the Robin load vector.

    The load enters the assembled system as ``weights * b`` with weight
    ``1/(beta*h)`` on every boundary node and zero inside.
    """
    return grid.operators(beta).load_weights


def _pcg(matvec, b, *, tol, max_iter, precond=None, smooth=False):
    """Preconditioned CG core.

    With ``smooth=True`` a one-parameter minimal-residual smoothing is
    applied to the iterates so the reported 2-norm residual history is
    non-increasing; the smoothed iterate is returned.
    """
    n = b.shape[0]
    bnorm = float(np.linalg.norm(b))
    history: list[float] = []
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True, history)

    x = np.zeros(n)
    r = b.copy()
    z = precond(r) if precond is not None else r
    p = z.copy()
    rz = float(r @ z)

    xs = x.copy()
    rs = r.copy()
    best = float(np.linalg.norm(rs))
    history.append(best / bnorm)

    it = 0
    while it < max_iter:
        if best <= tol * bnorm:
            break
        Ap = matvec(p)
        denom = float(p @ Ap)
        if denom <= 0.0:
            break  # loss of positive definiteness; report and bail out
        alpha = rz / denom
        x = x + alpha * p
        r = r - alpha * Ap
        it += 1
        if smooth:
            # minimal-residual smoothing: pick eta in [0,1] minimizing |r_s|
            d = r - rs
            dd = float(d @ d)
            eta = 0.0 if dd == 0.0 else min(1.0, max(0.0, -float(rs @ d) / dd))
            xs = xs + eta * (x - xs)
            rs = rs + eta * d
            best = float(np.linalg.norm(rs))
        else:
            xs, rs = x, r
            best = float(np.linalg.norm(r))
        history.append(best / bnorm)
        z = precond(r) if precond is not None else r
        rz_new = float(r @ z)
        if rz <= 0.0:
            break
        p = z + (rz_new / rz) * p
        rz = rz_new

    rel = best / bnorm
    return xs, SolveReport(it, rel, rel <= tol, history)


def cg_solve(
    A: SparseOperator,
    rhs: GridFunction,
    tol: float | None = None,
    max_iter: int | None = None,
) -> tuple[GridFunction, SolveReport]:
    """Jacobi-preconditioned conjugate gradients for SPD grid operators.

    Returns the solution together with a report; non-convergence within
    ``max_iter`` is flagged in the report rather than raised, so callers
    decide whether it is fatal.  Deterministic for fixed inputs.
    """
    if tol is None:
        tol = default_tolerance()
    if tol <= 0:
        raise ValueError(f"tolerance must be positive, got {tol}")
    n = A.shape[0]
    if rhs.values.shape[0] != n:
        raise ValueError("dimension mismatch between operator and right-hand side")
    if max_iter is None:
        max_iter = 10 * n
    diag = A.diagonal()
    if (diag <= 0).any():
        raise ValueError("operator diagonal must be positive for the Jacobi preconditioner")
    inv_diag = 1.0 / diag
    x, report = _pcg(
        lambda v: A.matrix @ v,
        rhs.values,
        tol=tol,
        max_iter=max_iter,
        precond=lambda r: inv_diag * r,
        smooth=True,
    )
    return GridFunction(rhs.grid, x), report
