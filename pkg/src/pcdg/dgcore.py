"""Broken polynomial spaces and the interior penalty DG assembly.

All integrals are evaluated on the reference triangle. For a patch with
reference Jacobian ``J`` (3x2) and metric ``g = J^T J`` the forms read

* volume: ``grad(u)^T g^-1 grad(v) sqrt|g| + u v sqrt|g|``
* penalty: ``beta/h * [u][v] {l}`` on every interior edge
* consistency: ``-{q(u)}[v l] - {q(v)}[u l]``

where ``l = |J d|`` is the arclength factor of the reference edge direction
``d`` and ``q`` the conormal derivative ``grad(u) . e_n`` with the reference
conormal ``e_n = g^-1 nu / sqrt(nu^T g^-1 nu)``. On each interior edge the
'+' side is the incident triangle with the smaller index; ``q-`` is taken
with respect to the '+' conormal, i.e. ``q- = -grad(u-) . e_n-``.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import NonConformingEdge, SingularMetric
from .geometry import (REF_EDGE_NORMALS, REF_EDGE_VECTORS, REF_VERTICES)
from .polynomials import dim_p, lattice_nodes, monomials
from .quadrature import dg_rule, triangle_rule

AT_PATCH_POINT = "AtPatchPoint"
AT_EXACT_CLOSEST_POINT = "AtExactClosestPoint"


def default_beta(l):
    """Default penalty ``10 (l+1)^2``."""
    return 10.0 * (l + 1) ** 2


@lru_cache(maxsize=None)
def _modal_factor(l):
    pts, wts = triangle_rule(2 * l)
    v = monomials(pts - 1.0 / 3.0, l)
    gram = (v * wts[:, None]).T @ v
    chol = np.linalg.cholesky(gram)
    out = np.linalg.inv(chol).T
    out.setflags(write=False)
    return out


def modal_basis(r, l):
    """Orthonormal basis on the reference triangle and its gradients.

    ``int phi_i phi_j dr = delta_ij`` over the reference triangle. Returns
    values (..., n) and gradients (..., n, 2).
    """
    c = _modal_factor(l)
    s = np.asarray(r, dtype=float) - 1.0 / 3.0
    vals = monomials(s, l) @ c
    gx = monomials(s, l, 1, 0) @ c
    gy = monomials(s, l, 0, 1) @ c
    return vals, np.stack([gx, gy], axis=-1)


@lru_cache(maxsize=None)
def lagrange_to_modal(l):
    """Matrix mapping values at ``lattice_nodes(l)`` to modal coefficients."""
    vals, _ = modal_basis(lattice_nodes(l), l)
    out = np.linalg.inv(vals)
    out.setflags(write=False)
    return out


def _metric(jac):
    g = np.einsum("...ia,...ib->...ab", jac, jac)
    det = g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] ** 2
    ginv = np.empty_like(g)
    ginv[..., 0, 0] = g[..., 1, 1]
    ginv[..., 1, 1] = g[..., 0, 0]
    ginv[..., 0, 1] = ginv[..., 1, 0] = -g[..., 0, 1]
    return g, ginv, det


class DGSpace:
    """Fully discontinuous degree-l polynomials on every patch.

    Parameters
    ----------
    patches : patch collection
        Anything with ``mesh`` and ``evaluate(r, tri)``, e.g.
        :class:`~pcdg.geometry.LagrangePatches`.
    l : int
        Polynomial degree of the functions.
    k : int, optional
        Geometric degree used to pick the quadrature; defaults to
        ``patches.k`` when present, else 1.
    quad_boost : int
        Extra quadrature exactness, see :func:`~pcdg.quadrature.dg_rule`.
    """

    def __init__(self, patches, l, k=None, quad_boost=0, rule=None):
        if l < 1:
            raise ValueError("function degree must be at least 1")
        self.patches = patches
        self.mesh = patches.mesh
        self.l = int(l)
        self.k = int(getattr(patches, "k", 1) if k is None else k)
        self.rule = dg_rule(self.k, self.l, quad_boost) if rule is None else rule
        self.dofs_per_cell = dim_p(self.l)
        self.offsets = np.arange(self.mesh.n_triangles) * self.dofs_per_cell

    @property
    def patch_maps(self):
        return self.patches

    @property
    def n_dofs(self):
        return self.mesh.n_triangles * self.dofs_per_cell

    @property
    def h(self):
        return self.mesh.h

    def with_rule(self, rule):
        return DGSpace(self.patches, self.l, self.k, rule=rule)

    def cell_dofs(self, tri=None):
        tri = np.arange(self.mesh.n_triangles) if tri is None else np.asarray(tri)
        return self.offsets[tri][:, None] + np.arange(self.dofs_per_cell)

    # -- geometry at quadrature points ------------------------------------
    def volume_data(self):
        """Surface points, inverse metric and area weights at volume points."""
        r = self.rule.points
        pts, jac = self.patches.evaluate(r)
        _, ginv, det = _metric(jac)
        _check_metric(det)
        return pts, ginv / det[..., None, None], np.sqrt(det)

    def evaluate(self, coeffs, r, tri=None):
        """Values and reference gradients of a DG function at points ``r``."""
        c = np.asarray(coeffs, dtype=float)[self.cell_dofs(tri)]
        vals, grads = modal_basis(r, self.l)
        if vals.ndim == 2:
            return np.einsum("qi,ti->tq", vals, c), np.einsum("qia,ti->tqa", grads, c)
        return np.einsum("tqi,ti->tq", vals, c), np.einsum("tqia,ti->tqa", grads, c)


def _check_metric(det, tri=None):
    bad = ~(det > 0)
    if np.any(bad):
        j = int(np.argwhere(bad)[0][0])
        raise SingularMetric("metric tensor is not positive definite",
                             triangle=j if tri is None else int(tri[j]))


@dataclass
class AssembledSystem:
    """Assembled DG operators; ``A`` and ``M`` are CSR matrices."""

    A: sp.csr_matrix = None
    M: sp.csr_matrix = None
    b: np.ndarray = None
    beta: float = None
    h: float = None


def _block_matrix(blocks, dofs, n):
    nb = dofs.shape[1]
    rows = np.repeat(dofs, nb, axis=1).ravel()
    cols = np.tile(dofs, (1, nb)).ravel()
    return sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _volume_blocks(space):
    w = space.rule.weights
    _, ginv_w, sq = space.volume_data()
    vals, grads = modal_basis(space.rule.points, space.l)
    ws = w[None] * sq
    stiff = np.einsum("qia,tqab,qjb->tij", grads, ginv_w * ws[..., None, None], grads,
                      optimize=True)
    mass = np.einsum("qi,tq,qj->tij", vals, ws, vals, optimize=True)
    return stiff, mass


def assemble_mass(space):
    """Block-diagonal mass matrix with the patch area element."""
    _, mass = _volume_blocks(space)
    return _block_matrix(mass, space.cell_dofs(), space.n_dofs)


def _side_data(space, side, edges, t):
    mesh = space.mesh
    tri = mesh.edge_triangles[edges, side]
    loc = mesh.edge_local[edges, side]
    tside = np.where(mesh._edge_dir[edges, side][:, None] > 0, t[None], 1.0 - t[None])
    r = REF_VERTICES[loc][:, None] + tside[..., None] * REF_EDGE_VECTORS[loc][:, None]
    flat = space.patches.flat_points(r, tri)
    _, jac = space.patches.evaluate(r, tri)
    g, ginv, det = _metric(jac)
    _check_metric(det, tri)
    d = REF_EDGE_VECTORS[loc][:, None]
    ell = np.linalg.norm(np.einsum("esia,esa->esi", jac, np.broadcast_to(d, r.shape)), axis=2)
    nu = np.broadcast_to(REF_EDGE_NORMALS[loc][:, None], r.shape)
    w = np.einsum("esab,esb->esa", ginv, nu) / det[..., None]
    en = w / np.sqrt(np.einsum("esa,esa->es", w, nu))[..., None]
    vals, grads = modal_basis(r, space.l)
    q = np.einsum("esia,esa->esi", grads, en)
    return tri, vals, q, ell, flat


def edge_penalty_h(space, edges, mode="global"):
    """Mesh size in ``beta/h``: global maximum diameter or per edge."""
    if mode == "global":
        return np.full(len(edges), space.h)
    if mode == "local":
        diam = space.mesh.diameters()
        tri = space.mesh.edge_triangles[edges]
        return np.maximum(diam[tri[:, 0]], diam[tri[:, 1]])
    raise ValueError(f"unknown penalty h mode {mode!r}")


def bilinear_terms(space, beta=None, h_mode="global", jump_weight="product"):
    """The four groups of the DG form as separate sparse matrices.

    Returns a dict with keys ``stiffness``, ``mass``, ``penalty`` and
    ``consistency``. ``jump_weight="product"`` uses the jump of the product
    ``[v l]`` in the consistency terms; ``"average"`` uses ``[v]{l}``.
    """
    beta = default_beta(space.l) if beta is None else float(beta)
    if not beta >= 0:
        raise ValueError("penalty beta must be nonnegative")
    n = space.n_dofs
    stiff, mass = _volume_blocks(space)
    cells = space.cell_dofs()
    out = {"stiffness": _block_matrix(stiff, cells, n),
           "mass": _block_matrix(mass, cells, n)}
    edges = space.mesh.interior_edges()
    if not len(edges):
        out["penalty"] = sp.csr_matrix((n, n))
        out["consistency"] = sp.csr_matrix((n, n))
        return out
    t, w = space.rule.edge_points, space.rule.edge_weights
    ta, va, qa, la, xa = _side_data(space, 0, edges, t)
    tb, vb, qb, lb, xb = _side_data(space, 1, edges, t)
    scale = np.abs(space.mesh.edge_lengths()).max()
    if np.any(np.abs(xa - xb) > 1e-10 * max(scale, 1.0)):
        j = int(np.argwhere(np.abs(xa - xb) > 1e-10 * max(scale, 1.0))[0][0])
        raise NonConformingEdge(f"edge {int(edges[j])}: incident triangles disagree "
                                "on the edge points")
    hval = edge_penalty_h(space, edges, h_mode)
    lavg = 0.5 * (la + lb)
    jump = np.concatenate([va, -vb], axis=2)
    if jump_weight == "product":
        jump_l = np.concatenate([va * la[..., None], -vb * lb[..., None]], axis=2)
    elif jump_weight == "average":
        jump_l = jump * lavg[..., None]
    else:
        raise ValueError(f"unknown jump weight {jump_weight!r}")
    avg = 0.5 * np.concatenate([qa, -qb], axis=2)
    pw = (beta / hval)[:, None] * w[None] * lavg
    pen = np.einsum("es,esi,esj->eij", pw, jump, jump, optimize=True)
    nmat = -np.einsum("s,esi,esj->eij", w, jump_l, avg, optimize=True)
    dofs = np.concatenate([space.cell_dofs(ta), space.cell_dofs(tb)], axis=1)
    out["penalty"] = _block_matrix(pen, dofs, n)
    cons = _block_matrix(nmat, dofs, n)
    out["consistency"] = (cons + cons.T).tocsr()
    return out


def assemble_bilinear(space, beta=None, h_mode="global", jump_weight="product"):
    """Assemble the symmetric interior penalty matrix for ``-Delta + I``.

    Returns an :class:`AssembledSystem` with ``A``, ``M`` (the mass part),
    ``beta`` and ``h`` filled in.
    """
    beta = default_beta(space.l) if beta is None else float(beta)
    terms = bilinear_terms(space, beta, h_mode, jump_weight)
    a = terms["stiffness"] + terms["mass"] + terms["penalty"] + terms["consistency"]
    return AssembledSystem(A=a.tocsr(), M=terms["mass"], beta=beta, h=space.h)


def _field_points(space, pts, mode, surface):
    if mode == AT_PATCH_POINT:
        return pts
    if mode == AT_EXACT_CLOSEST_POINT:
        if surface is None:
            raise ValueError("AtExactClosestPoint needs an exact surface")
        return surface.closest_point(pts)
    raise ValueError(f"unknown evaluation mode {mode!r}")


def assemble_rhs(space, f, eval_mode=AT_PATCH_POINT, surface=None):
    """Load vector ``b_i = int f phi_i`` over the patches.

    ``f`` maps an (..., 3) array of points to values. In ``AtPatchPoint``
    mode it is evaluated on the reconstructed patch, in
    ``AtExactClosestPoint`` mode at the closest point on ``surface``.
    """
    pts, _, sq = space.volume_data()
    x = _field_points(space, pts, eval_mode, surface)
    fx = np.asarray(f(x), dtype=float)
    vals, _ = modal_basis(space.rule.points, space.l)
    b = np.einsum("tq,qi->ti", fx * sq * space.rule.weights[None], vals)
    return b.ravel()


def interpolate(space, u, eval_mode=AT_PATCH_POINT, surface=None):
    """Lagrange interpolation at the degree-l lattice nodes of every patch."""
    nodes = lattice_nodes(space.l)
    pts, _ = space.patches.evaluate(nodes)
    x = _field_points(space, pts, eval_mode, surface)
    vals = np.asarray(u(x), dtype=float)
    return (vals @ lagrange_to_modal(space.l).T).ravel()


def assemble_system(space, f=None, beta=None, eval_mode=AT_PATCH_POINT, surface=None,
                    h_mode="global", jump_weight="product"):
    """Assemble ``A``, ``M`` and, when ``f`` is given, ``b``."""
    sysm = assemble_bilinear(space, beta, h_mode, jump_weight)
    if f is not None:
        sysm.b = assemble_rhs(space, f, eval_mode, surface)
    return sysm
