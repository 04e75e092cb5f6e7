"""Quadrature on the reference triangle and the unit interval.

The triangle rules are collapsed (Duffy) tensor products of Gauss-Legendre
and Gauss-Jacobi(1, 0) rules: every weight is positive and any exactness
degree is available, which the DG assembly needs for the degree doubling
check.
"""
from dataclasses import dataclass
from functools import lru_cache
from math import ceil

import numpy as np
from scipy.special import roots_jacobi


@dataclass(frozen=True)
class QuadratureRule:
    """Points and weights on the reference triangle and on [0, 1].

    The reference triangle is ``{(x, y): x, y >= 0, x + y <= 1}`` with area
    1/2; the triangle weights sum to 1/2 and the edge weights to 1.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int
    edge_points: np.ndarray
    edge_weights: np.ndarray
    edge_degree: int


@lru_cache(maxsize=None)
def _gauss_interval(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def triangle_rule(degree):
    """Positive rule on the reference triangle exact for total ``degree``."""
    n = max(1, ceil((degree + 1) / 2))
    u, wu = _gauss_interval(n)
    t, wt = roots_jacobi(n, 1.0, 0.0)
    v = 0.5 * (t + 1.0)
    wv = 0.25 * wt
    uu, vv = np.meshgrid(u, v, indexing="ij")
    pts = np.column_stack([(uu * (1.0 - vv)).ravel(), vv.ravel()])
    wts = np.outer(wu, wv).ravel()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


def gauss_rule(npoints):
    """Gauss-Legendre rule on [0, 1] with ``npoints`` points."""
    return _gauss_interval(max(1, int(npoints)))


# edge integrands carry the square-root arclength factor times the large
# penalty beta/h, so the edge rule gets a margin over its nominal exactness
EDGE_EXTRA_POINTS = 2


def dg_rule(k, l, boost=0):
    """Rule used for the DG forms with geometry degree k, function degree l.

    Triangle exactness 2l + 2(k-1) + 2, edge rule with
    ``ceil((2l+2k+1)/2) + EDGE_EXTRA_POINTS`` points; ``boost`` raises the
    triangle degree by ``2*boost`` and the edge point count by ``boost``.
    """
    tdeg = 2 * l + 2 * (k - 1) + 2 + 2 * boost
    npts = ceil((2 * l + 2 * k + 1) / 2) + EDGE_EXTRA_POINTS + boost
    pts, wts = triangle_rule(tdeg)
    ept, ewt = gauss_rule(npts)
    return QuadratureRule(pts, wts, tdeg, ept, ewt, 2 * npts - 1)


def doubled(rule):
    """Rule with twice the triangle degree and twice the edge points."""
    pts, wts = triangle_rule(2 * rule.degree)
    npts = 2 * len(rule.edge_points)
    ept, ewt = gauss_rule(npts)
    return QuadratureRule(pts, wts, 2 * rule.degree, ept, ewt, 2 * npts - 1)
