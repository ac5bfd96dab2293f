"""Discrete norms and the relative-error bundle of the experiments.

The L2 and H1 norms use the lumped mass and natural-boundary stiffness
Gram matrices; the dual H1 norm is realized through the Riesz map of the
full H1 inner product, i.e. one solve with ``mass + stiffness``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid, GridFunction

__all__ = ["l2_norm", "h1_norm", "dual_h1_norm", "ErrorBundle", "error_bundle"]


def l2_norm(u: GridFunction) -> float:
    """sqrt(u' M u) with the lumped mass matrix."""
    ops = u.grid.operators(1.0)
    return float(np.sqrt(u.values @ (ops.mass_diag * u.values)))


def h1_norm(u: GridFunction) -> float:
    """Full H1 norm sqrt(u' (M + A) u), natural boundary stiffness A."""
    ops = u.grid.operators(1.0)
    v = u.values
    return float(np.sqrt(v @ (ops.mass_diag * v) + v @ (ops.stiffness_natural.matrix @ v)))


def dual_h1_norm(v: GridFunction) -> float:
    """Norm of v as a functional on H1 via the Riesz solve (M + A) w = M v.

    Returns sqrt(v' M w).  Constants are reproduced exactly (w = v), and
    the value never exceeds the L2 norm.
    """
    ops = v.grid.operators(1.0)
    w = ops.lu_h1().solve(ops.mass_diag * v.values)
    val = float(v.values @ (ops.mass_diag * w))
    return float(np.sqrt(max(val, 0.0)))


@dataclass
class ErrorBundle:
    """Relative errors of a reconstruction run; absent entries are None.

    err1: empirical-norm error of the smoothed field at the sensors
    err2: dual-H1 error of the recovered forcing
    err3: L2 error of the recovered forcing
    err4: dual-H1 error of the recovered source
    err5: L2 error of the recovered source
    """

    err1: float | None = None
    err2: float | None = None
    err3: float | None = None
    err4: float | None = None
    err5: float | None = None

    def present(self) -> dict[str, float]:
        return {k: v for k, v in self.__dict__.items() if v is not None}


def _rel(num: float, den: float, label: str) -> float:
    if den == 0.0:
        raise ValueError(f"zero denominator for {label}")
    return num / den


def error_bundle(
    *,
    meas=None,
    sf=None,
    sf_true=None,
    f=None,
    f_true=None,
    q=None,
    q_true=None,
) -> ErrorBundle:
    """Compute whichever relative errors the provided fields permit.

    ``meas`` (a MeasurementSet) enables the empirical-norm error err1 of
    sf against sf_true at the sensor locations; the remaining errors are
    grid-norm ratios of reconstruction minus truth over truth.
    """
    from .fit import empirical_norm, point_evaluation  # local import, avoids a cycle

    out = ErrorBundle()
    if meas is not None and sf is not None and sf_true is not None:
        ev = point_evaluation(sf.grid, meas.points)
        d = ev.apply(sf) - ev.apply(sf_true)
        out.err1 = _rel(empirical_norm(d), empirical_norm(ev.apply(sf_true)), "err1")
    if f is not None and f_true is not None:
        diff = f - f_true
        out.err2 = _rel(dual_h1_norm(diff), dual_h1_norm(f_true), "err2")
        out.err3 = _rel(l2_norm(diff), l2_norm(f_true), "err3")
    if q is not None and q_true is not None:
        diff = q - q_true
        out.err4 = _rel(dual_h1_norm(diff), dual_h1_norm(q_true), "err4")
        out.err5 = _rel(l2_norm(diff), l2_norm(q_true), "err5")
    return out
