"""Per-triangle geometric kernel.

Each triangle of the reference mesh gets a local orthonormal frame centred
at its barycenter. Cloud points near the barycenter are fitted by a
degree-k polynomial graph over the triangle plane; the Lagrange nodes of the
triangle are pushed onto that graph along the graph normal (Newton
iteration) and interpolated to obtain the patch map.

Everything is vectorised over triangles. The single-triangle functions
(``build_local_frame``, ``fit_patch_polynomial``, ``newton_project``,
``build_patch_map``, ``metric_at``, ``edge_geometry``) are thin wrappers
around the batched kernels.

Two kinds of patch collections implement the same interface
(``evaluate(r, tri)`` returning surface points and reference Jacobians):
``LagrangePatches`` (reconstructed, degree k) and ``ExactPatches`` (the
closest-point map of an analytic surface over the same triangles).
"""
from dataclasses import dataclass

import numpy as np

from .errors import (DegenerateTriangle, InsufficientPoints, NewtonDiverged,
                     RankDeficientFit, SingularMetric)
from .meshgen import farthest_point_subset
from .polynomials import (dim_p, lagrange_basis, lattice_nodes, monomial_exponents,
                          monomials)

# reference triangle: vertices, local edge vectors and outward normals
REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
REF_EDGE_VECTORS = np.array([[1.0, 0.0], [-1.0, 1.0], [0.0, -1.0]])
REF_EDGE_NORMALS = np.array([[0.0, -1.0], [1.0, 1.0], [-1.0, 0.0]]) / np.array(
    [[1.0], [np.sqrt(2.0)], [1.0]])

DEFAULT_NEWTON_TOL = 1e-14
DEFAULT_MAX_ITER = 50
DEFAULT_COND_BOUND = 1e10


def reselect_bound(k):
    """Conditioning above which a nearest-neighbour set is re-selected.

    Well-spread samples of a disc give scaled normal-equation conditions of
    about ``5 * 8**(k-1)``; this allows a factor of ten.
    """
    return 50.0 * 8.0 ** (k - 1)


def edge_points(edge, t):
    """Reference coordinates of the points at parameters ``t`` on a local edge."""
    t = np.asarray(t, dtype=float)
    return REF_VERTICES[edge] + t[..., None] * REF_EDGE_VECTORS[edge]


# ---------------------------------------------------------------------------
# frames

@dataclass(frozen=True)
class LocalFrame:
    """Orthonormal frame with origin at a triangle's barycenter.

    ``tangent1`` follows the first triangle edge, ``normal`` is the
    right-handed unit normal of the triangle's vertex order.
    """

    origin: np.ndarray
    tangent1: np.ndarray
    tangent2: np.ndarray
    normal: np.ndarray

    @property
    def axes(self):
        return np.stack([self.tangent1, self.tangent2, self.normal])

    def to_local(self, x):
        return (np.asarray(x, dtype=float) - self.origin) @ self.axes.T

    def to_global(self, y):
        return self.origin + np.asarray(y, dtype=float) @ self.axes


def _frames(corners, first=0):
    corners = np.asarray(corners, dtype=float)
    e1 = corners[:, 1] - corners[:, 0]
    e2 = corners[:, 2] - corners[:, 0]
    cr = np.cross(e1, e2)
    area2 = np.linalg.norm(cr, axis=1)
    diam = np.max(np.linalg.norm(corners[:, [1, 2, 0]] - corners, axis=2), axis=1)
    bad = 0.5 * area2 <= 1e-14 * diam**2
    if np.any(bad):
        j = int(np.flatnonzero(bad)[0])
        raise DegenerateTriangle("triangle area below threshold", triangle=first + j)
    n = cr / area2[:, None]
    t1 = e1 / np.linalg.norm(e1, axis=1, keepdims=True)
    t2 = np.cross(n, t1)
    origin = corners.mean(axis=1)
    axes = np.stack([t1, t2, n], axis=1)
    return origin, axes


def build_local_frame(triangle):
    """Local frame of a single triangle given as three 3-vectors."""
    origin, axes = _frames(np.asarray(triangle, dtype=float)[None])
    return LocalFrame(origin[0], axes[0, 0], axes[0, 1], axes[0, 2])


def parametric_triangle(triangle, frame):
    """The triangle's vertices in frame coordinates (in-plane part only)."""
    return frame.to_local(triangle)[:, :2]


# ---------------------------------------------------------------------------
# polynomial fitting

@dataclass(frozen=True)
class FittedPolynomial:
    """Degree-k polynomial graph over a frame plane.

    Coefficients follow the graded lexicographic monomial order of
    :mod:`pcdg.polynomials` in unscaled frame coordinates.
    """

    degree: int
    coefficients: np.ndarray
    condition_estimate: float = 1.0

    def value(self, s):
        return monomials(s, self.degree) @ self.coefficients

    def gradient(self, s):
        return np.stack([monomials(s, self.degree, 1, 0) @ self.coefficients,
                         monomials(s, self.degree, 0, 1) @ self.coefficients], axis=-1)

    def hessian(self, s):
        k, c = self.degree, self.coefficients
        return np.stack([monomials(s, k, 2, 0) @ c, monomials(s, k, 1, 1) @ c,
                         monomials(s, k, 0, 2) @ c], axis=-1)


def _lstsq_fit(local, k):
    """Batched least-squares graph fit; returns coefficients and conditions."""
    s = local[..., :2]
    v = local[..., 2]
    rho = np.linalg.norm(s, axis=2).max(axis=1)
    rho = np.where(rho > 0, rho, 1.0)
    vander = monomials(s / rho[:, None, None], k)
    sv = np.linalg.svd(vander, compute_uv=False)
    with np.errstate(divide="ignore"):
        cond = np.where(sv[:, -1] > 0, (sv[:, 0] / sv[:, -1]) ** 2, np.inf)
    q, r = np.linalg.qr(vander)
    rhs = np.einsum("tmc,tm->tc", q, v)
    ok = np.isfinite(cond)
    coef = np.zeros(rhs.shape)
    if np.any(ok):
        coef[ok] = np.linalg.solve(r[ok], rhs[ok][..., None])[..., 0]
    powers = monomial_exponents(k).sum(axis=1)
    coef = coef / rho[:, None] ** powers[None, :]
    return coef, cond


def fit_polynomials(cloud, origins, axes, k, m, cond_bound=DEFAULT_COND_BOUND,
                    first=0):
    """Fit one polynomial graph per frame; returns (coefficients, conditions)."""
    nc = dim_p(k)
    if m < nc:
        raise ValueError(f"m={m} is below the {nc} coefficients of degree {k}")
    if len(cloud) < m:
        raise InsufficientPoints(f"cloud has {len(cloud)} points, {m} required")
    origins = np.asarray(origins, dtype=float)

    def local_coords(idx):
        pts = cloud.points[idx] - origins_sel[:, None, :]
        return np.einsum("tmd,tad->tma", pts, axes_sel)

    _, idx = cloud.spatial_index.query(origins, k=m)
    idx = idx.reshape(len(origins), m)
    origins_sel, axes_sel = origins, axes
    coef, cond = _lstsq_fit(local_coords(idx), k)
    pool = 2
    redo = cond > reselect_bound(k)
    while np.any(redo) and pool <= 64 and pool * m <= len(cloud):
        rows = np.flatnonzero(redo)
        _, cand = cloud.spatial_index.query(origins[rows], k=pool * m)
        cand = cand.reshape(len(rows), pool * m)
        sel = farthest_point_subset(cloud.points[cand], m)
        idx2 = np.take_along_axis(cand, sel, axis=1)
        origins_sel, axes_sel = origins[rows], axes[rows]
        c2, k2 = _lstsq_fit(local_coords(idx2), k)
        better = k2 < cond[rows]
        coef[rows[better]] = c2[better]
        cond[rows[better]] = k2[better]
        redo = cond > reselect_bound(k)
        pool *= 2
    bad = ~(cond <= cond_bound)
    if np.any(bad):
        j = int(np.flatnonzero(bad)[0])
        raise RankDeficientFit(
            f"fit conditioning {cond[j]:.3g} exceeds bound {cond_bound:.3g}",
            triangle=first + j)
    return coef, cond


def fit_patch_polynomial(cloud, frame, k, m=None, cond_bound=DEFAULT_COND_BOUND):
    """Least-squares degree-k graph through cloud points near the frame origin.

    ``m`` defaults to ``(k+1)(k+2)``, twice the coefficient count.
    """
    m = 2 * dim_p(k) if m is None else int(m)
    coef, cond = fit_polynomials(cloud, frame.origin[None], frame.axes[None], k, m,
                                 cond_bound)
    return FittedPolynomial(k, coef[0], float(cond[0]))


# ---------------------------------------------------------------------------
# Newton projection onto the graph

def _graph_derivs(coef, k, s):
    out = []
    for dx, dy in ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)):
        out.append(np.einsum("nc,nc->n", monomials(s, k, dx, dy), coef))
    return out


def newton_batch(coef, k, x, tol=DEFAULT_NEWTON_TOL, max_iter=DEFAULT_MAX_ITER,
                 owner=None):
    """Vectorised Newton solve of the graph-normal projection equations.

    For each row, find ``(p1, p2)`` with ``p * dp/ds_i + p_i - x_i = 0``
    starting from ``x``. Returns ``(psi, residual, iterations)`` with
    ``psi`` of shape (N, 3) in frame coordinates.
    """
    coef = np.asarray(coef, dtype=float)
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    psi = x.copy()
    iters = np.zeros(len(x), dtype=int)
    active = np.arange(len(x))
    res = np.full(len(x), np.inf)
    for it in range(max_iter + 1):
        if not len(active):
            break
        s = psi[active]
        p, p1, p2, p11, p12, p22 = _graph_derivs(coef[active], k, s)
        m1 = p * p1 + s[:, 0] - x[active, 0]
        m2 = p * p2 + s[:, 1] - x[active, 1]
        r = np.hypot(m1, m2)
        res[active] = r
        done = r <= tol
        active = active[~done]
        if it == max_iter or not len(active):
            break
        keep = ~done
        p, p1, p2, p11, p12, p22 = (a[keep] for a in (p, p1, p2, p11, p12, p22))
        m1, m2 = m1[keep], m2[keep]
        a11 = p1 * p1 + p * p11 + 1.0
        a12 = p1 * p2 + p * p12
        a22 = p2 * p2 + p * p22 + 1.0
        det = a11 * a22 - a12 * a12
        sing = np.abs(det) < 1e-14
        if np.any(sing):
            j = active[np.flatnonzero(sing)[0]]
            raise NewtonDiverged("singular Newton matrix",
                                 triangle=None if owner is None else int(owner[j]))
        psi[active, 0] -= (a22 * m1 - a12 * m2) / det
        psi[active, 1] -= (a11 * m2 - a12 * m1) / det
        iters[active] += 1
    if len(active):
        j = active[0]
        raise NewtonDiverged(f"residual {res[j]:.3g} above tolerance {tol:.3g} "
                             f"after {max_iter} iterations",
                             triangle=None if owner is None else int(owner[j]))
    p3 = np.einsum("nc,nc->n", monomials(psi, k), coef)
    return np.column_stack([psi, p3]), res, iters


def newton_project(poly, x, tol=DEFAULT_NEWTON_TOL, max_iter=DEFAULT_MAX_ITER):
    """Project the in-plane point ``x`` onto the graph of ``poly``.

    Returns ``(psi, residual, iterations)`` with ``psi`` a 3-vector in frame
    coordinates and ``psi[2] == poly(psi[:2])``.
    """
    psi, res, it = newton_batch(poly.coefficients[None], poly.degree,
                                np.asarray(x, dtype=float)[None], tol, max_iter)
    psi = psi[0]
    psi[2] = poly.value(psi[:2])
    return psi, float(res[0]), int(it[0])


# ---------------------------------------------------------------------------
# patch collections

class _Patches:
    """Shared helpers; subclasses provide ``evaluate``."""

    def __init__(self, mesh):
        self.mesh = mesh
        corners = mesh.corners()
        self.origins, self.axes = _frames(corners)
        local = np.einsum("tvd,tad->tva", corners - self.origins[:, None], self.axes)
        self.param_vertices = local[..., :2]
        # 2x2 map from reference to frame (parametric) coordinates
        pv = self.param_vertices
        self.param_jacobian = np.stack([pv[:, 1] - pv[:, 0], pv[:, 2] - pv[:, 0]], axis=2)

    @property
    def n_triangles(self):
        return self.mesh.n_triangles

    def frame(self, j):
        return LocalFrame(self.origins[j], *self.axes[j])

    def flat_points(self, r, tri=None):
        """Points of the flat reference mesh at reference coordinates ``r``."""
        tri = np.arange(self.n_triangles) if tri is None else np.asarray(tri)
        c = self.mesh.corners()[tri]
        r = np.asarray(r, dtype=float)
        if r.ndim == 2:
            r = np.broadcast_to(r, (len(tri),) + r.shape)
        return (c[:, None, 0] + r[..., :1] * (c[:, None, 1] - c[:, None, 0])
                + r[..., 1:] * (c[:, None, 2] - c[:, None, 0]))

    def metric(self, r, tri=None):
        """Reference metric ``J^T J``, its inverse and ``sqrt(det)``."""
        pts, jac = self.evaluate(r, tri)
        g = np.einsum("...ia,...ib->...ab", jac, jac)
        det = g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] ** 2
        if np.any(~(det > 0)):
            bad = np.argwhere(~(det > 0))[0]
            t = int(bad[0] if tri is None else np.asarray(tri)[bad[0]])
            raise SingularMetric("metric tensor is not positive definite", triangle=t)
        ginv = np.empty_like(g)
        ginv[..., 0, 0] = g[..., 1, 1] / det
        ginv[..., 1, 1] = g[..., 0, 0] / det
        ginv[..., 0, 1] = ginv[..., 1, 0] = -g[..., 0, 1] / det
        return pts, jac, g, ginv, np.sqrt(det)


class LagrangePatches(_Patches):
    """Reconstructed degree-k patch maps, one per triangle.

    Attributes
    ----------
    nodes : (T, n, 3) global coordinates of the reconstructed Lagrange nodes.
    local_nodes : (T, n, 3) the same nodes in each triangle's frame.
    coefficients : (T, dim_p(k)) fitted graph coefficients.
    conditions : (T,) scaled normal-equation condition numbers of the fits.
    """

    def __init__(self, mesh, k, local_nodes, coefficients=None, conditions=None,
                 residuals=None, iterations=None):
        super().__init__(mesh)
        self.k = int(k)
        self.local_nodes = np.asarray(local_nodes, dtype=float)
        self.nodes = self.origins[:, None] + np.einsum("tna,tad->tnd",
                                                       self.local_nodes, self.axes)
        self.coefficients = coefficients
        self.conditions = conditions
        self.newton_residuals = residuals
        self.newton_iterations = iterations

    def evaluate(self, r, tri=None):
        nodes = self.nodes if tri is None else self.nodes[np.asarray(tri)]
        vals, grads = lagrange_basis(r, self.k)
        if vals.ndim == 2:
            pts = np.einsum("qi,tid->tqd", vals, nodes)
            jac = np.einsum("qia,tid->tqda", grads, nodes)
        else:
            pts = np.einsum("tqi,tid->tqd", vals, nodes)
            jac = np.einsum("tqia,tid->tqda", grads, nodes)
        return pts, jac

    def __getitem__(self, j):
        poly = None
        if self.coefficients is not None:
            cond = 1.0 if self.conditions is None else float(self.conditions[j])
            poly = FittedPolynomial(self.k, self.coefficients[j], cond)
        return PatchMap(self.k, self.nodes[j], self.frame(j), self.param_vertices[j], poly)


class ExactPatches(_Patches):
    """Closest-point map of an analytic surface over each mesh triangle."""

    def __init__(self, mesh, surface):
        super().__init__(mesh)
        self.surface = surface

    def evaluate(self, r, tri=None):
        tri_idx = np.arange(self.n_triangles) if tri is None else np.asarray(tri)
        x = self.flat_points(r, tri_idx)
        c = self.mesh.corners()[tri_idx]
        b = np.stack([c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]], axis=2)
        pts = self.surface.closest_point(x)
        dpi = self.surface.closest_point_jacobian(x)
        return pts, np.einsum("tqij,tja->tqia", dpi, b)


class FlatPatches(_Patches):
    """Affine maps of the mesh triangles themselves (no curvature)."""

    def evaluate(self, r, tri=None):
        tri_idx = np.arange(self.n_triangles) if tri is None else np.asarray(tri)
        pts = self.flat_points(r, tri_idx)
        c = self.mesh.corners()[tri_idx]
        b = np.stack([c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]], axis=2)
        return pts, np.broadcast_to(b[:, None], pts.shape + (2,))


def reconstruct_patches(mesh, cloud, k, m=None, newton_tol=DEFAULT_NEWTON_TOL,
                        max_iter=DEFAULT_MAX_ITER, cond_bound=DEFAULT_COND_BOUND):
    """Run the patch reconstruction for every triangle of ``mesh``.

    Fits a degree-k graph to ``m`` cloud points near each barycenter (default
    ``(k+1)(k+2)``), projects the degree-k principal-lattice nodes of the
    triangle onto it by Newton's method and returns the interpolating
    :class:`LagrangePatches`.
    """
    k = int(k)
    if k < 1:
        raise ValueError("geometric degree must be at least 1")
    m = 2 * dim_p(k) if m is None else int(m)
    base = _Patches(mesh)
    coef, cond = fit_polynomials(cloud, base.origins, base.axes, k, m, cond_bound)
    ref = lattice_nodes(k)
    pv = base.param_vertices
    x = pv[:, None, 0] + np.einsum("tab,nb->tna", base.param_jacobian, ref)
    nn = len(ref)
    owner = np.repeat(np.arange(mesh.n_triangles), nn)
    psi, res, it = newton_batch(np.repeat(coef, nn, axis=0), k, x.reshape(-1, 2),
                                newton_tol, max_iter, owner=owner)
    t = mesh.n_triangles
    return LagrangePatches(mesh, k, psi.reshape(t, nn, 3), coef, cond,
                           res.reshape(t, nn), it.reshape(t, nn))


# ---------------------------------------------------------------------------
# single patch interface

@dataclass(frozen=True)
class PatchMap:
    """Degree-k Lagrange map of one triangle onto its reconstructed patch.

    ``nodes`` are global coordinates ordered as ``lattice_nodes(k)``;
    ``parametric_triangle`` holds the triangle's vertices in frame
    coordinates.
    """

    degree: int
    nodes: np.ndarray
    frame: LocalFrame
    parametric_triangle: np.ndarray
    polynomial: FittedPolynomial = None

    @property
    def _bmat(self):
        p = self.parametric_triangle
        return np.column_stack([p[1] - p[0], p[2] - p[0]])

    def to_reference(self, uv):
        p = self.parametric_triangle
        return np.linalg.solve(self._bmat, (np.asarray(uv, dtype=float) - p[0]).T).T

    def from_reference(self, r):
        return self.parametric_triangle[0] + np.asarray(r, dtype=float) @ self._bmat.T

    def __call__(self, uv):
        r = self.to_reference(uv)
        vals, _ = lagrange_basis(r, self.degree)
        return vals @ self.nodes

    def reference_jacobian(self, r):
        _, grads = lagrange_basis(np.asarray(r, dtype=float), self.degree)
        return np.einsum("...ia,id->...da", grads, self.nodes)


def build_patch_map(poly, frame, parametric_triangle, k=None,
                    tol=DEFAULT_NEWTON_TOL, max_iter=DEFAULT_MAX_ITER):
    """Newton-project the degree-k lattice nodes onto ``poly`` and interpolate."""
    k = poly.degree if k is None else int(k)
    pt = np.asarray(parametric_triangle, dtype=float)
    bmat = np.column_stack([pt[1] - pt[0], pt[2] - pt[0]])
    x = pt[0] + lattice_nodes(k) @ bmat.T
    psi, _, _ = newton_batch(np.repeat(poly.coefficients[None], len(x), axis=0),
                             poly.degree, x, tol, max_iter)
    return PatchMap(k, frame.to_global(psi), frame, pt, poly)


def metric_at(patch, uv):
    """Jacobian, metric tensor and area factor at a parametric point.

    All quantities are with respect to the frame coordinates of the
    parametric triangle.
    """
    r = patch.to_reference(uv)
    lam = np.array([1.0 - r.sum(), r[0], r[1]])
    if np.any(lam < -1e-12) or np.any(lam > 1 + 1e-12):
        raise ValueError("point outside the parametric triangle")
    jac = patch.reference_jacobian(r) @ np.linalg.inv(patch._bmat)
    g = jac.T @ jac
    det = g[0, 0] * g[1, 1] - g[0, 1] ** 2
    if not det > 0:
        raise SingularMetric("metric tensor is not positive definite")
    return jac, g, float(np.sqrt(det))


def edge_geometry(patch, edge_index, t):
    """Arclength stretch and pulled-back unit conormal on a triangle edge.

    Returns ``(l_g, e_n)``: ``l_g = |J tau|`` for the unit parametric edge
    tangent ``tau``, and the frame-coordinate 2-vector ``e_n`` whose image
    ``J e_n`` is the outward unit conormal of the patch.
    """
    e = int(edge_index)
    r = edge_points(e, t)
    jref = patch.reference_jacobian(r)
    g = jref.T @ jref
    det = g[0, 0] * g[1, 1] - g[0, 1] ** 2
    if not det > 0:
        raise SingularMetric("metric tensor is not positive definite")
    bmat = patch._bmat
    d = REF_EDGE_VECTORS[e]
    length = np.linalg.norm(bmat @ d)
    l_g = np.linalg.norm(jref @ d) / length
    nu = REF_EDGE_NORMALS[e]
    w = np.linalg.solve(g, nu)
    e_ref = w / np.sqrt(nu @ w)
    return float(l_g), bmat @ e_ref


def reference_conormals(g, edge):
    """Unit conormals in reference coordinates for metrics ``g`` (..., 2, 2)."""
    nu = REF_EDGE_NORMALS[edge]
    w = np.linalg.solve(g, np.broadcast_to(nu, g.shape[:-1])[..., None])[..., 0]
    return w / np.sqrt(np.einsum("...a,a->...", w, nu))[..., None]
