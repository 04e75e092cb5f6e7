"""Bivariate polynomial helpers shared by the geometry and DG modules.

Monomials are ordered graded-lexicographically::

    1, s1, s2, s1^2, s1*s2, s2^2, s1^3, s1^2*s2, ...

so coefficient vectors are portable between implementations.
"""
from functools import lru_cache

import numpy as np


def dim_p(k):
    """Dimension of the space of bivariate polynomials of degree <= k."""
    return (k + 1) * (k + 2) // 2


@lru_cache(maxsize=None)
def monomial_exponents(k):
    exps = [(a, d - a) for d in range(k + 1) for a in range(d, -1, -1)]
    out = np.array(exps, dtype=int)
    out.setflags(write=False)
    return out


def _falling(n, r):
    out = 1
    for i in range(r):
        out *= n - i
    return out


def monomials(s, k, dx=0, dy=0):
    """Evaluate the (dx, dy) partial derivative of every monomial.

    Parameters
    ----------
    s : array_like, shape (..., 2)
    k : int
        Maximal total degree.

    Returns
    -------
    ndarray, shape (..., dim_p(k))
    """
    s = np.asarray(s, dtype=float)
    x = s[..., 0]
    y = s[..., 1]
    px = [np.ones_like(x)]
    py = [np.ones_like(y)]
    for _ in range(k):
        px.append(px[-1] * x)
        py.append(py[-1] * y)
    cols = []
    for a, b in monomial_exponents(k):
        if a < dx or b < dy:
            cols.append(np.zeros_like(x))
            continue
        c = _falling(a, dx) * _falling(b, dy)
        cols.append(c * px[a - dx] * py[b - dy])
    return np.stack(cols, axis=-1)


@lru_cache(maxsize=None)
def lattice_nodes(k):
    """Principal lattice of degree ``k`` on the reference triangle.

    Ordered row by row in the second coordinate; vertex (0,0) is node 0,
    (1,0) is node ``k`` and (0,1) is the last node.
    """
    pts = [(i / k, j / k) for j in range(k + 1) for i in range(k + 1 - j)]
    out = np.array(pts)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def lagrange_coefficients(k):
    """Monomial coefficients of the degree-k Lagrange basis on the lattice.

    Column ``i`` holds the coefficients of the basis function that is one at
    ``lattice_nodes(k)[i]``.
    """
    nodes = lattice_nodes(k)
    vander = monomials(nodes, k)
    coef = np.linalg.inv(vander)
    coef.setflags(write=False)
    return coef


def lagrange_basis(r, k):
    """Values and reference gradients of the degree-k Lagrange basis.

    Returns ``(vals, grads)`` with shapes (..., n) and (..., n, 2).
    """
    coef = lagrange_coefficients(k)
    vals = monomials(r, k) @ coef
    gx = monomials(r, k, 1, 0) @ coef
    gy = monomials(r, k, 0, 1) @ coef
    return vals, np.stack([gx, gy], axis=-1)


def lagrange_hessian(r, k):
    """Second reference derivatives (xx, xy, yy) of the Lagrange basis."""
    coef = lagrange_coefficients(k)
    return np.stack([monomials(r, k, 2, 0) @ coef,
                     monomials(r, k, 1, 1) @ coef,
                     monomials(r, k, 0, 2) @ coef], axis=-1)
