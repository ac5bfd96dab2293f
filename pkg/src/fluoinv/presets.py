"""Built-in problem configurations for the CLI and the test batteries."""

from __future__ import annotations

import numpy as np

from .forward import ProblemData
from .grid import Grid, GridFunction

__all__ = [
    "trig_forcing",
    "smooth_source",
    "discontinuous_source",
    "zero_source",
    "example2_absorption",
    "example2_boundary",
    "example2_problem",
    "stability_problem",
    "PRESETS",
]


def trig_forcing(grid: Grid) -> GridFunction:
    """Separable sine forcing used by the scattered-data fit benchmark."""
    if grid.dim == 1:
        return grid.function(lambda x: np.sin(2 * np.pi * x))
    return grid.function(lambda x, y: np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y))


def smooth_source(grid: Grid) -> GridFunction:
    """Smooth benchmark source 2 + cos(2 pi x) cos(2 pi y)."""
    return grid.function(lambda x, y: 2.0 + np.cos(2 * np.pi * x) * np.cos(2 * np.pi * y))


def discontinuous_source(grid: Grid) -> GridFunction:
    """Two disks and an annulus of unit strength on a zero background."""
    x, y = grid.x, grid.y
    r1 = np.hypot(x - 0.3, y - 0.8)
    r2 = np.hypot(x - 0.7, y - 0.8)
    r3 = np.hypot(x - 0.4, y - 0.5)
    vals = ((r1 <= 0.1) | (r2 <= 0.1) | ((r3 >= 0.2) & (r3 <= 0.3))).astype(float)
    return GridFunction(grid, vals)


def zero_source(grid: Grid) -> GridFunction:
    return grid.zeros()


def example2_absorption(grid: Grid) -> GridFunction:
    return grid.function(lambda x, y: x + y + 10.0)


def example2_boundary(coords: np.ndarray, t: float) -> np.ndarray:
    s = coords.sum(axis=1)
    return s**2 * t + 5.0


def example2_problem(grid: Grid, beta: float = 1.0, T: float = 1.0,
                     tau: float = 0.01, M: float = 5.0,
                     flip_boundary: bool = False,
                     check_assumptions: bool = True) -> ProblemData:
    """The coupled-diffusion benchmark: p = x + y + 10, b = (x+y)^2 t + 5.

    ``flip_boundary`` negates the boundary data, a deliberate hypothesis
    violation used as a negative control by the verification battery.
    """
    b = example2_boundary
    if flip_boundary:
        b = lambda coords, t: -example2_boundary(coords, t)  # noqa: E731
    return ProblemData(grid, example2_absorption(grid), b, beta=beta, T=T, tau=tau,
                       M=M, check_assumptions=check_assumptions)


def stability_problem(grid: Grid) -> ProblemData:
    """Configuration on which the Lipschitz stability hypothesis holds.

    Large constant absorption alone does not make the hypothesis ratio
    drop below one on the unit square: the terminal excitation floor decays
    like exp(-sqrt(p) / 2), which beats the sqrt(p) gain.  The ratio only
    dips below one with near-Dirichlet coupling (small beta), a short
    horizon, constant unit boundary data, and a small admissible bound;
    these values give a ratio of about 0.9 at 32 cells per side.
    """
    p = grid.function(np.full(grid.node_count, 100.0))
    b = lambda coords, t: np.ones(len(coords))  # noqa: E731
    return ProblemData(grid, p, b, beta=1e-3, T=0.04, tau=0.002, M=0.01)


# Flat default configurations merged under the CLI's config file and flags.
PRESETS: dict[str, dict] = {
    "example1": {
        "grid": 100, "beta": 1.0, "truth": "example1",
        "n": 10000, "sigma": 0.002, "s": 0, "noise": "gaussian",
        "lambda": {"mode": "prior"},
    },
    "example2-smooth": {
        "grid": 100, "beta": 1.0, "T": 1.0, "tau": 0.01, "M": 5.0,
        "source": "example2-smooth", "truth": "example2-smooth",
        "n": 500, "relative_sigma": 0.01, "s": 1, "noise": "gaussian",
        "lambda": {"mode": "self-consistent"},
    },
    "example2-discontinuous": {
        "grid": 100, "beta": 1.0, "T": 1.0, "tau": 0.01, "M": 5.0,
        "source": "example2-discontinuous", "truth": "example2-discontinuous",
        "n": 500, "relative_sigma": 0.01, "s": 0, "noise": "gaussian",
        "lambda": {"mode": "self-consistent"},
    },
    "zero-source": {
        "grid": 50, "beta": 1.0, "T": 1.0, "tau": 0.01, "M": 5.0,
        "source": "zero",
    },
    # verification battery scale; tau keeps the first implicit step's
    # boundary layer below the derivative bound being checked
    "verify-default": {
        "grid": 32, "beta": 1.0, "T": 1.0, "tau": 0.25, "M": 5.0,
        "source": "example2-smooth",
    },
    "verify-violated": {
        "grid": 32, "beta": 1.0, "T": 1.0, "tau": 0.25, "M": 5.0,
        "source": "example2-smooth", "flip_boundary": True,
    },
}


def build_source(name: str, grid: Grid) -> GridFunction:
    builders = {
        "example2-smooth": smooth_source,
        "example2-discontinuous": discontinuous_source,
        "zero": zero_source,
    }
    if name not in builders:
        raise KeyError(f"unknown source {name!r}; choose from {sorted(builders)}")
    return builders[name](grid)
