"""Cubic B-spline bases with an exact integrated squared second-derivative
penalty."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

DEGREE = 3
# 2-point Gauss-Legendre integrates the (piecewise quadratic) product of two
# second derivatives of cubic B-splines exactly
_GL_NODES = np.array([-1.0, 1.0]) / np.sqrt(3.0)
_GL_WEIGHTS = np.array([1.0, 1.0])


class SplineError(ValueError):
    pass


@dataclass
class SplineBasis:
    breaks: np.ndarray     # distinct knot locations, first/last are the boundary
    knots: np.ndarray      # full knot vector with repeated boundary knots
    penalty: np.ndarray    # integral of B_i''(x) B_j''(x) over the boundary span

    @property
    def dim(self) -> int:
        return len(self.knots) - DEGREE - 1

    @property
    def lower(self) -> float:
        return float(self.breaks[0])

    @property
    def upper(self) -> float:
        return float(self.breaks[-1])

    def _spline(self, nu: int = 0) -> BSpline:
        spl = BSpline(self.knots, np.eye(self.dim), DEGREE, extrapolate=False)
        return spl if nu == 0 else spl.derivative(nu)

    def evaluate(self, x, nu: int = 0) -> np.ndarray:
        """Basis matrix at ``x``; continued linearly beyond the boundary knots."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        lo, hi = self.lower, self.upper
        inside = np.clip(x, lo, hi)
        out = np.nan_to_num(self._spline(nu)(inside))
        # scipy leaves the right endpoint of the last interval undefined
        at_hi = inside >= hi
        if at_hi.any():
            out[at_hi] = _right_limit(self, nu)
        if nu <= 1:
            slope_lo = self._spline(1)(np.array([lo]))[0]
            slope_hi = _right_limit(self, 1)
            below, above = x < lo, x > hi
            if nu == 0:
                out[below] += (x[below] - lo)[:, None] * slope_lo
                out[above] += (x[above] - hi)[:, None] * slope_hi
            else:
                out[below] = slope_lo
                out[above] = slope_hi
        else:
            out[(x < lo) | (x > hi)] = 0.0
        return out


def _right_limit(basis: SplineBasis, nu: int) -> np.ndarray:
    spl = BSpline(basis.knots, np.eye(basis.dim), DEGREE, extrapolate=True)
    if nu:
        spl = spl.derivative(nu)
    return spl(np.array([basis.upper]))[0]


def _second_derivative_penalty(knots: np.ndarray, breaks: np.ndarray) -> np.ndarray:
    dim = len(knots) - DEGREE - 1
    d2 = BSpline(knots, np.eye(dim), DEGREE, extrapolate=True).derivative(2)
    pen = np.zeros((dim, dim))
    for a, b in zip(breaks[:-1], breaks[1:]):
        half = (b - a) / 2.0
        pts = (a + b) / 2.0 + half * _GL_NODES
        vals = d2(pts)
        pen += half * (vals.T * _GL_WEIGHTS) @ vals
    return (pen + pen.T) / 2.0


def cubic_spline_basis(x, n_knots: int = 10) -> SplineBasis:
    """Cubic B-spline basis with knots at quantiles of ``x``.

    ``n_knots`` quantile knots (boundary knots included) are placed at
    evenly spaced probabilities; duplicates collapse, so the basis can be
    smaller than ``n_knots + 2`` for heavily tied data.
    """
    x = np.asarray(x, dtype=float)
    if np.unique(x).size < 4:
        raise SplineError("a cubic spline basis needs at least 4 distinct values")
    if n_knots < 2:
        raise SplineError("need at least the two boundary knots")
    breaks = np.unique(np.quantile(x, np.linspace(0.0, 1.0, n_knots)))
    knots = np.concatenate([[breaks[0]] * DEGREE, breaks, [breaks[-1]] * DEGREE])
    return SplineBasis(breaks, knots, _second_derivative_penalty(knots, breaks))
