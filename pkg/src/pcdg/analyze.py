"""Error measurement and convergence tables.

Discrete functions live on the reconstructed patches. They are compared
with exact data through the shared parametric triangle: the value of
``u_h`` at a reference point is compared with ``u`` at the exact
closest-point lift of the same parametric point.
"""
import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .dgcore import _metric, _side_data, default_beta, modal_basis
from .errors import MultiplicityMismatch
from .geometry import REF_EDGE_VECTORS, ExactPatches
from .quadrature import dg_rule


# ---------------------------------------------------------------------------
# geometry

@dataclass(frozen=True)
class GeoErrorReport:
    """Largest nodal distance to the surface and its in-plane part."""

    e_n: float
    e_t: float


def nodal_errors(patches, surface):
    """Per-node error vectors ``psi - xi`` split in each triangle's frame.

    Returns ``(normal, tangential)`` magnitudes of shape (T, n).
    """
    d = patches.nodes - surface.closest_point(patches.nodes)
    tang = np.einsum("tnd,tad->tna", d, patches.axes[:, :2])
    return np.linalg.norm(d, axis=2), np.linalg.norm(tang, axis=2)


def geometric_errors(patches, surface):
    """``e_n`` and ``e_t`` for reconstructed patches against an exact surface.

    ``xi = closest_point(psi)`` for every Lagrange node; ``e_t`` measures the
    component of ``psi - xi`` in the plane of the owning triangle.
    """
    en, et = nodal_errors(patches, surface)
    return GeoErrorReport(float(en.max()), float(et.max()))


def metric_discrepancy(patches, surface, rule=None):
    """Largest metric and Jacobian deviations from the exact patch maps.

    Both maps are expressed over the parametric triangle in frame
    coordinates; returns ``(max |g - g_h|, max |J - J_h|)`` in the spectral
    norm over the volume quadrature points.
    """
    rule = dg_rule(patches.k, 1, 2) if rule is None else rule
    exact = ExactPatches(patches.mesh, surface)
    _, jh = patches.evaluate(rule.points)
    _, je = exact.evaluate(rule.points)
    binv = np.linalg.inv(patches.param_jacobian)[:, None]
    jh = jh @ binv
    je = je @ binv
    gh = np.einsum("...ia,...ib->...ab", jh, jh)
    ge = np.einsum("...ia,...ib->...ab", je, je)
    return (float(np.linalg.norm(gh - ge, ord=2, axis=(-2, -1)).max()),
            float(np.linalg.norm(jh - je, ord=2, axis=(-2, -1)).max()))


def surface_area(space):
    """Area of the reconstructed surface, ``sum sqrt|g|``."""
    _, _, sq = space.volume_data()
    return float((sq * space.rule.weights).sum())


# ---------------------------------------------------------------------------
# solutions

@dataclass(frozen=True)
class SolutionErrors:
    L2: float
    H1: float
    jump: float


def _error_rule(space, boost):
    return dg_rule(space.k, space.l, boost)


def solution_errors(space, coeffs, u, grad_u, surface, beta=None, boost=2):
    """Broken L2, H1-seminorm and jump-norm errors of a DG solution.

    ``u`` and ``grad_u`` are the exact solution and its (ambient or
    tangential) gradient as functions of surface points. The exact map uses
    the analytic closest point of ``surface``; ``boost`` raises the
    quadrature order above the one used for assembly.
    """
    rule = _error_rule(space, boost)
    exact = ExactPatches(space.mesh, surface)
    y, je = exact.evaluate(rule.points)
    _, ginv, det = _metric(je)
    sq = np.sqrt(det)
    ginv = ginv / det[..., None, None]
    uh, guh = space.evaluate(coeffs, rule.points)
    w = rule.weights[None] * sq
    diff = uh - u(y)
    l2 = np.sqrt(np.sum(w * diff**2))
    d = guh - np.einsum("tqia,tqi->tqa", je, grad_u(y))
    h1 = np.sqrt(np.sum(w * np.einsum("tqa,tqab,tqb->tq", d, ginv, d)))
    jump = jump_norm(space, coeffs, surface, beta, rule)
    return SolutionErrors(float(l2), float(h1), float(jump))


def jump_norm(space, coeffs, surface, beta=None, rule=None):
    """``sqrt(beta/h * sum_e int_e [u_h]^2)`` with exact-surface arclength."""
    beta = default_beta(space.l) if beta is None else beta
    edges = space.mesh.interior_edges()
    if not len(edges):
        return 0.0
    rule = space.rule if rule is None else rule
    espace = _ExactView(space, surface, rule)
    t, w = rule.edge_points, rule.edge_weights
    vals = []
    ells = []
    for side in (0, 1):
        tri, phi, _, ell, _ = _side_data(espace, side, edges, t)
        c = np.asarray(coeffs)[space.cell_dofs(tri)]
        vals.append(np.einsum("esi,ei->es", phi, c))
        ells.append(ell)
    jmp = vals[0] - vals[1]
    lavg = 0.5 * (ells[0] + ells[1])
    return float(np.sqrt(beta / space.h * np.sum(w[None] * lavg * jmp**2)))


class _ExactView:
    """A DG space whose geometry is the exact closest-point map."""

    def __init__(self, space, surface, rule):
        self.mesh = space.mesh
        self.patches = ExactPatches(space.mesh, surface)
        self.l = space.l
        self.rule = rule


def edge_arclengths(patches, rule=None):
    """Length of every local edge image, shape (T, 3)."""
    from .geometry import edge_points
    rule = dg_rule(getattr(patches, "k", 1), 1, 2) if rule is None else rule
    out = np.zeros((patches.n_triangles, 3))
    for e in range(3):
        r = edge_points(e, rule.edge_points)
        _, jac = patches.evaluate(r)
        ell = np.linalg.norm(jac @ REF_EDGE_VECTORS[e], axis=-1)
        out[:, e] = ell @ rule.edge_weights
    return out


# ---------------------------------------------------------------------------
# eigenvalues

def group_multiplicities(values, rel_tol=1e-2, abs_tol=1e-8):
    """Split sorted eigenvalues into clusters of nearly equal values.

    Consecutive values whose gap is below ``rel_tol`` times their magnitude
    (or below ``abs_tol``) share a group. Returns a list of index arrays.
    """
    v = np.asarray(values, dtype=float)
    groups = [[0]] if len(v) else []
    for i in range(1, len(v)):
        if abs(v[i] - v[i - 1]) <= max(rel_tol * abs(v[i]), abs_tol):
            groups[-1].append(i)
        else:
            groups.append([i])
    return [np.array(g) for g in groups]


def eigenvalue_errors(values, reference, relative=False):
    """Per-index eigenvalue errors against exact or previous-level values.

    ``relative=True`` gives the self-convergence error
    ``|lambda_{i,h_{j+1}} - lambda_{i,h_j}| / lambda_{i,h_{j+1}}`` with
    ``values`` from the finer level. Indices are compared after sorting, so
    degenerate groups compare sorted values within the group.
    """
    v = np.sort(np.asarray(values, dtype=float))
    ref = np.sort(np.asarray(reference, dtype=float))
    n = min(len(v), len(ref))
    err = np.abs(v[:n] - ref[:n])
    if relative:
        err = err / np.abs(v[:n])
    return err


def check_multiplicities(coarse, fine, rel_tol=1e-2):
    """Raise :class:`MultiplicityMismatch` if the cluster structure differs."""
    gc = [len(g) for g in group_multiplicities(coarse, rel_tol)]
    gf = [len(g) for g in group_multiplicities(fine, rel_tol)]
    if gc != gf:
        raise MultiplicityMismatch(f"group sizes differ between levels: {gc} vs {gf}")
    return gc


def complete_groups(values, count, rel_tol=1e-2):
    """Number of leading eigenvalues that ends on a complete cluster.

    ``values`` holds more than ``count`` eigenvalues; the result is the
    smallest ``n >= count`` that does not split a cluster, or ``None`` when
    the available values do not reach the end of the cluster.
    """
    groups = group_multiplicities(values, rel_tol)
    total = 0
    for g in groups:
        total += len(g)
        if total >= count:
            return total if total < len(values) else None
    return None


def _exact_fields(space, funcs, grads, surface, rule):
    exact = ExactPatches(space.mesh, surface)
    y, je = exact.evaluate(rule.points)
    _, ginv, det = _metric(je)
    sq = np.sqrt(det)
    vals = np.stack([f(y) for f in funcs])
    gvals = np.stack([np.einsum("tqia,tqi->tqa", je, g(y)) for g in grads])
    return vals, gvals, ginv / det[..., None, None], sq


def eigenfunction_errors(space, vectors, funcs, grads, surface, boost=2):
    """L2 and H1 errors of a group of discrete eigenfunctions.

    ``vectors`` (dofs, m) span the discrete eigenspace belonging to the
    exact eigenfunctions ``funcs`` (orthonormal on the surface). The
    discrete functions are rotated onto the exact ones by the orthogonal
    polar factor of their L2 cross-Gram matrix, which also fixes signs.
    Returns arrays of per-function L2 and H1 errors.
    """
    rule = _error_rule(space, boost)
    vals, gvals, ginv, sq = _exact_fields(space, funcs, grads, surface, rule)
    w = rule.weights[None] * sq
    vec = np.atleast_2d(np.asarray(vectors, dtype=float).T)
    uh = []
    guh = []
    for c in vec:
        a, b = space.evaluate(c, rule.points)
        uh.append(a)
        guh.append(b)
    uh = np.stack(uh)
    guh = np.stack(guh)
    cross = np.einsum("itq,jtq,tq->ij", uh, vals, w)
    uu, _, vt = np.linalg.svd(cross)
    rot = uu @ vt
    uh = np.einsum("ij,itq->jtq", rot, uh)
    guh = np.einsum("ij,itqa->jtqa", rot, guh)
    l2 = np.sqrt(np.einsum("jtq,tq->j", (uh - vals) ** 2, w))
    d = guh - gvals
    h1 = np.sqrt(np.einsum("jtqa,tqab,jtqb,tq->j", d, ginv, d, w))
    return l2, h1


def sphere_eigenvalue(n, radius=1.0):
    """Eigenvalue ``n(n+1)/R^2`` of the Laplace-Beltrami operator on a sphere."""
    return n * (n + 1) / radius**2


def inflated_sphere_gap(n, eps):
    """Eigenvalue shift between the unit sphere and the sphere of radius 1+eps."""
    eps = np.asarray(eps, dtype=float)
    # n(n+1) (1 - 1/(1+eps)^2) without cancellation for small eps
    return sphere_eigenvalue(n) * eps * (2.0 + eps) / (1.0 + eps) ** 2


# ---------------------------------------------------------------------------
# tables

def observed_order(e_coarse, e_fine, h_coarse, h_fine):
    """``log(e_coarse / e_fine) / log(h_coarse / h_fine)``."""
    return float(np.log(e_coarse / e_fine) / np.log(h_coarse / h_fine))


@dataclass
class ConvergenceTable:
    """Errors per refinement level and metric with observed orders."""

    rows: list = field(default_factory=list)

    HEADER = ("level", "N_v", "dofs", "metric", "error", "order")

    def add(self, level, n_vertices, dofs, h, metric, error, with_order=True):
        """Append a row; ``with_order=False`` records a plain value."""
        if with_order and error < 0:
            raise ValueError("errors must be nonnegative")
        prev = [r for r in self.rows if r["metric"] == metric]
        order = None
        if prev and with_order:
            p = prev[-1]
            if error > 0 and p["error"] > 0 and h != p["h"]:
                order = observed_order(p["error"], error, p["h"], h)
            elif error == p["error"]:
                order = 0.0
        self.rows.append(dict(level=level, N_v=n_vertices, dofs=dofs, h=h,
                              metric=metric, error=float(error), order=order))

    def metrics(self):
        return list(dict.fromkeys(r["metric"] for r in self.rows))

    def column(self, metric, key="error"):
        return [r[key] for r in self.rows if r["metric"] == metric]

    def final_order(self, metric):
        return self.column(metric, "order")[-1]

    def to_csv(self, path=None):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(self.HEADER)
        for r in self.rows:
            wr.writerow([r["level"], "" if r["N_v"] is None else r["N_v"],
                         "" if r["dofs"] is None else r["dofs"],
                         r["metric"], f"{r['error']:.6e}",
                         "" if r["order"] is None else f"{r['order']:.4f}"])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def to_dat(self, path):
        """Whitespace table ``h error...`` per metric, for gnuplot."""
        metrics = self.metrics()
        hs = self.column(metrics[0], "h")
        with open(path, "w") as fh:
            fh.write("# h " + " ".join(metrics) + "\n")
            for i, h in enumerate(hs):
                vals = [self.column(m)[i] if i < len(self.column(m)) else np.nan
                        for m in metrics]
                fh.write(f"{h:.6e} " + " ".join(f"{v:.6e}" for v in vals) + "\n")


def convergence_table(errors, hs, n_vertices=None, dofs=None, metric="error",
                      levels=None):
    """Build a single-metric table from per-level errors and mesh sizes."""
    if len(errors) < 2:
        raise ValueError("at least two levels are needed")
    tab = ConvergenceTable()
    n = len(errors)
    for i in range(n):
        tab.add(i if levels is None else levels[i],
                None if n_vertices is None else n_vertices[i],
                None if dofs is None else dofs[i], hs[i], metric, errors[i])
    return tab
