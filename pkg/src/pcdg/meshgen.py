"""Point clouds, reference meshes, refinement and file formats."""
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, SphericalVoronoi, cKDTree

from .errors import (InvertedOrientation, MeshError, NonManifoldMesh,
                     OpenSurface, RankDeficientFit, ShapeRegularityError)
from .surfaces import PlaneZ0, Torus, UnitSphere, torus_parametrization

__all__ = [
    "PointCloud", "ReferenceMesh", "sample_sphere_cloud", "sample_torus_cloud",
    "sample_plane_cloud", "icosphere", "fibonacci_sphere_mesh",
    "torus_grid_mesh", "flat_grid_mesh", "build_initial_mesh",
    "refine", "refine_and_project", "estimate_filling_distance",
    "farthest_point_subset", "spread_neighbors", "read_xyz", "write_xyz",
    "read_off", "write_off",
]


# ---------------------------------------------------------------------------
# point clouds

@dataclass(frozen=True, eq=False)
class PointCloud:
    """Raw samples of a surface with an exact k-d tree index.

    ``filling_distance_estimate`` is computed from ``probes`` when given
    (points on the true surface), otherwise from the cloud itself by
    leave-one-out nearest distances.
    """

    points: np.ndarray
    filling_distance_estimate: float = field(default=np.nan)
    spatial_index: cKDTree = field(default=None, repr=False)

    def __init__(self, points, probes=None):
        pts = np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, 3))
        if len(pts) == 0:
            raise ValueError("empty point cloud")
        tree = cKDTree(pts)
        if len(pts) > 1:
            d, _ = tree.query(pts, k=2)
            if d[:, 1].min() <= 0.0:
                raise ValueError("point cloud contains duplicate points")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "spatial_index", tree)
        if probes is not None:
            hs = estimate_filling_distance(self, probes)
        elif len(pts) > 1:
            hs = float(d[:, 1].max())
        else:
            hs = np.inf
        object.__setattr__(self, "filling_distance_estimate", hs)

    def __len__(self):
        return len(self.points)

    def knn(self, x, k):
        """Indices and distances of the ``k`` nearest points, nearest first."""
        d, idx = self.spatial_index.query(np.asarray(x, dtype=float), k=k)
        return idx, d


def estimate_filling_distance(cloud, probes):
    """Largest distance from a probe point to its nearest cloud sample."""
    probes = np.asarray(probes, dtype=float).reshape(-1, 3)
    if len(probes) == 0:
        raise ValueError("no probe points")
    d, _ = cloud.spatial_index.query(probes, k=1)
    return float(d.max())


def fibonacci_sphere_points(n):
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def sample_sphere_cloud(n_theta, n_phi, probes=10_000):
    """Unit-sphere samples on the (theta, phi) lattice, poles kept once.

    ``theta_i = i*pi/(n_theta-1)`` for ``i = 0..n_theta-1`` and
    ``phi_j = 2*pi*j/n_phi``.
    """
    if n_theta < 4 or n_phi < 4:
        raise ValueError("n_theta and n_phi must be at least 4")
    theta = np.linspace(0.0, np.pi, n_theta)[1:-1]
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    st = np.sin(tt)
    body = np.column_stack([(st * np.cos(pp)).ravel(), (st * np.sin(pp)).ravel(),
                            np.cos(tt).ravel()])
    pts = np.vstack([[0.0, 0.0, 1.0], body, [0.0, 0.0, -1.0]])
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    prb = fibonacci_sphere_points(probes) if probes else None
    return PointCloud(pts, probes=prb)


def sample_torus_cloud(n_theta, n_phi, major=4.0, minor=1.0, probes=10_000):
    """Torus samples on the periodic (theta, phi) lattice."""
    if n_theta < 4 or n_phi < 4:
        raise ValueError("n_theta and n_phi must be at least 4")
    surf = Torus(major, minor)
    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    pts = torus_parametrization(tt.ravel(), pp.ravel(), surf.major, surf.minor)
    prb = None
    if probes:
        g = np.random.default_rng(0)
        prb = torus_parametrization(g.uniform(0, 2 * np.pi, probes),
                                    g.uniform(0, 2 * np.pi, probes),
                                    surf.major, surf.minor)
    return PointCloud(pts, probes=prb)


def sample_plane_cloud(n, extent=1.0, margin=0.25):
    """Square lattice in the plane z = 0 covering ``[-margin, extent+margin]^2``."""
    x = np.linspace(-margin, extent + margin, n)
    xx, yy = np.meshgrid(x, x, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)])
    return PointCloud(pts)


# ---------------------------------------------------------------------------
# meshes

def _edge_topology(triangles):
    tri = np.asarray(triangles)
    nt = len(tri)
    a = tri.ravel()
    b = tri[:, [1, 2, 0]].ravel()
    key = np.column_stack([np.minimum(a, b), np.maximum(a, b)])
    uniq, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    owner = np.repeat(np.arange(nt), 3)
    local = np.tile(np.arange(3), nt)
    order = np.argsort(inv, kind="stable")
    edge_tri = -np.ones((len(uniq), 2), dtype=int)
    edge_loc = -np.ones((len(uniq), 2), dtype=int)
    edge_dir = np.zeros((len(uniq), 2), dtype=int)
    starts = np.concatenate([[0], np.cumsum(counts)])
    sorted_inv = inv[order]
    slot = np.arange(len(order)) - starts[sorted_inv]
    keep = slot < 2
    e = sorted_inv[keep]
    s = slot[keep]
    src = order[keep]
    edge_tri[e, s] = owner[src]
    edge_loc[e, s] = local[src]
    edge_dir[e, s] = np.where(a[src] < b[src], 1, -1)
    return uniq, edge_tri, edge_loc, edge_dir, counts


class ReferenceMesh:
    """Flat triangulated polyhedron used as the common parametric domain.

    Local edge ``e`` of a triangle joins its local vertices ``e`` and
    ``(e + 1) % 3``. ``edge_triangles[i]`` lists the incident triangles of
    edge ``i`` in increasing index order (``-1`` marks a missing side on
    open meshes) and ``edge_local`` the matching local edge numbers.
    """

    def __init__(self, vertices, triangles, level=0, closed=True,
                 shape_bound=0.1):
        self.vertices = np.asarray(vertices, dtype=float).reshape(-1, 3)
        self.triangles = np.asarray(triangles, dtype=int).reshape(-1, 3)
        self.level = int(level)
        self.closed = closed
        self.shape_bound = shape_bound
        for arr in (self.vertices, self.triangles):
            arr.setflags(write=False)
        if self.triangles.size and (self.triangles.min() < 0
                                    or self.triangles.max() >= len(self.vertices)):
            raise MeshError("triangle references a missing vertex")
        (self.edge_vertices, self.edge_triangles, self.edge_local,
         self._edge_dir, self._edge_counts) = _edge_topology(self.triangles)
        self._validate()

    # -- validation -------------------------------------------------------
    def _validate(self):
        counts = self._edge_counts
        if np.any(counts > 2):
            raise NonManifoldMesh(f"{int(np.sum(counts > 2))} edges have more than two triangles")
        if self.closed and np.any(counts == 1):
            raise OpenSurface(f"{int(np.sum(counts == 1))} boundary edges on a mesh that must be closed")
        inner = counts == 2
        if np.any(self._edge_dir[inner, 0] == self._edge_dir[inner, 1]):
            raise InvertedOrientation("neighbouring triangles have inconsistent orientation")
        q = self.quality()
        if len(q) and q.min() < self.shape_bound:
            j = int(np.argmin(q))
            raise ShapeRegularityError(
                f"triangle {j} has inradius/diameter {q[j]:.3g} < {self.shape_bound}")

    # -- geometry ---------------------------------------------------------
    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edge_vertices)

    @property
    def euler_characteristic(self):
        return self.n_vertices - self.n_edges + self.n_triangles

    def corners(self):
        return self.vertices[self.triangles]

    def edge_lengths(self):
        c = self.corners()
        return np.linalg.norm(c[:, [1, 2, 0]] - c, axis=2)

    def diameters(self):
        return self.edge_lengths().max(axis=1)

    @property
    def h(self):
        return float(self.diameters().max())

    def areas(self):
        c = self.corners()
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    def quality(self):
        """Inradius over diameter per triangle."""
        if not self.n_triangles:
            return np.zeros(0)
        lengths = self.edge_lengths()
        inr = 2.0 * self.areas() / lengths.sum(axis=1)
        return inr / lengths.max(axis=1)

    def interior_edges(self):
        return np.flatnonzero(self._edge_counts == 2)

    def boundary_edges(self):
        return np.flatnonzero(self._edge_counts == 1)

    def with_vertices(self, vertices, level=None):
        return ReferenceMesh(vertices, self.triangles,
                             self.level if level is None else level,
                             closed=self.closed, shape_bound=self.shape_bound)

    def __repr__(self):
        return (f"ReferenceMesh(V={self.n_vertices}, T={self.n_triangles}, "
                f"level={self.level}, h={self.h:.4g})")


def _orient_outward(vertices, triangles, outward):
    c = vertices[triangles]
    n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    flip = np.einsum("ij,ij->i", n, outward(c.mean(axis=1))) < 0
    tri = triangles.copy()
    tri[flip] = tri[flip][:, [0, 2, 1]]
    return tri


def icosphere(subdivisions=1):
    """Subdivided icosahedron with vertices on the unit sphere."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array([[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
                  [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
                  [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], dtype=float)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    f = np.array([[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
                  [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
                  [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
                  [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])
    mesh = ReferenceMesh(v, f)
    for _ in range(subdivisions):
        mesh = refine(mesh)
        vv = mesh.vertices / np.linalg.norm(mesh.vertices, axis=1, keepdims=True)
        mesh = mesh.with_vertices(vv, level=0)
    return mesh


def lloyd_relax_sphere(points, iterations):
    """Move points towards the centroids of their spherical Voronoi cells."""
    p = np.asarray(points, dtype=float)
    for _ in range(iterations):
        sv = SphericalVoronoi(p)
        sv.sort_vertices_of_regions()
        new = np.empty_like(p)
        for i, reg in enumerate(sv.regions):
            a = sv.vertices[reg]
            b = np.roll(a, -1, axis=0)
            w = np.linalg.norm(np.cross(a - p[i], b - p[i]), axis=1)
            c = (w[:, None] * (p[i] + a + b)).sum(axis=0)
            new[i] = c / np.linalg.norm(c)
        p = new
    return p


def fibonacci_sphere_mesh(n=222, lloyd_iterations=20):
    """Convex hull of ``n`` near-uniform points on the unit sphere.

    Starts from the Fibonacci lattice and applies Lloyd relaxation, which
    evens out triangle sizes.
    """
    pts = lloyd_relax_sphere(fibonacci_sphere_points(n), lloyd_iterations)
    hull = ConvexHull(pts)
    tri = _orient_outward(pts, hull.simplices.astype(int), lambda x: x)
    return ReferenceMesh(pts, tri)


def torus_grid_mesh(n_theta=8, n_phi=25, major=4.0, minor=1.0):
    """Structured (theta, phi) triangulation of the ring torus."""
    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    verts = torus_parametrization(tt.ravel(), pp.ravel(), major, minor)
    idx = np.arange(n_theta * n_phi).reshape(n_theta, n_phi)
    i0 = idx
    i1 = np.roll(idx, -1, axis=0)
    j1 = np.roll(idx, -1, axis=1)
    ij = np.roll(i1, -1, axis=1)
    tri = np.concatenate([np.column_stack([i0.ravel(), i1.ravel(), ij.ravel()]),
                          np.column_stack([i0.ravel(), ij.ravel(), j1.ravel()])])
    surf = Torus(major, minor)
    tri = _orient_outward(verts, tri, surf.normal)
    return ReferenceMesh(verts, tri)


def flat_grid_mesh(n, extent=1.0, z=0.0):
    """Open structured triangulation of the square ``[0, extent]^2``."""
    x = np.linspace(0.0, extent, n + 1)
    xx, yy = np.meshgrid(x, x, indexing="ij")
    verts = np.column_stack([xx.ravel(), yy.ravel(), np.full(xx.size, z)])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    c, d = idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
    tri = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return ReferenceMesh(verts, tri, closed=False)


def build_initial_mesh(surface, **kwargs):
    """Seed mesh for a synthetic surface, or a validated mesh read from file.

    Keyword arguments are forwarded to the generator: ``kind`` selects
    ``"icosahedral"`` (default, ``subdivisions``) or ``"fibonacci"`` (``n``)
    for the sphere; ``n_theta``/``n_phi`` for the torus.
    """
    if isinstance(surface, (str, Path)):
        return read_off(surface)
    if isinstance(surface, UnitSphere):
        if kwargs.get("kind", "icosahedral") == "fibonacci":
            return fibonacci_sphere_mesh(kwargs.get("n", 222))
        return icosphere(kwargs.get("subdivisions", 1))
    if isinstance(surface, Torus):
        return torus_grid_mesh(kwargs.get("n_theta", 8), kwargs.get("n_phi", 25),
                               surface.major, surface.minor)
    if isinstance(surface, PlaneZ0):
        return flat_grid_mesh(kwargs.get("n", 4))
    raise TypeError(f"no initial mesh generator for {surface!r}")


# ---------------------------------------------------------------------------
# refinement

def refine(mesh):
    """Split every triangle into four at its edge midpoints."""
    nv = mesh.n_vertices
    ev = mesh.edge_vertices
    mids = 0.5 * (mesh.vertices[ev[:, 0]] + mesh.vertices[ev[:, 1]])
    tri = mesh.triangles
    a = tri.ravel()
    b = tri[:, [1, 2, 0]].ravel()
    key = np.column_stack([np.minimum(a, b), np.maximum(a, b)])
    # edge index of each (triangle, local edge), via sorted lookup
    flat = ev[:, 0] * nv + ev[:, 1]
    q = key[:, 0] * nv + key[:, 1]
    eid = np.searchsorted(flat, q).reshape(-1, 3) + nv
    v0, v1, v2 = tri.T
    m01, m12, m20 = eid.T
    new = np.concatenate([
        np.column_stack([v0, m01, m20]),
        np.column_stack([v1, m12, m01]),
        np.column_stack([v2, m20, m12]),
        np.column_stack([m01, m12, m20]),
    ])
    verts = np.vstack([mesh.vertices, mids])
    return ReferenceMesh(verts, new, mesh.level + 1, closed=mesh.closed,
                         shape_bound=mesh.shape_bound)


def farthest_point_subset(candidates, m):
    """Greedy farthest-point selection of ``m`` of the ``K`` candidates.

    ``candidates`` has shape (B, K, d); selection starts from candidate 0 in
    every batch row. Returns indices of shape (B, m).
    """
    cand = np.asarray(candidates, dtype=float)
    nb, k, _ = cand.shape
    rows = np.arange(nb)
    chosen = np.zeros((nb, m), dtype=int)
    mind = np.linalg.norm(cand - cand[:, :1], axis=2)
    for i in range(1, m):
        nxt = np.argmax(mind, axis=1)
        chosen[:, i] = nxt
        d = np.linalg.norm(cand - cand[rows, nxt][:, None], axis=2)
        np.minimum(mind, d, out=mind)
    return chosen


def spread_neighbors(cloud, centers, m, rows=None, pool=4):
    """Indices of ``m`` well-spread cloud points near each centre.

    Takes the ``pool*m`` nearest neighbours and thins them by farthest-point
    selection starting from the nearest one.
    """
    centers = np.asarray(centers, dtype=float).reshape(-1, 3)
    kk = min(len(cloud), pool * m)
    _, idx = cloud.spatial_index.query(centers, k=kk)
    idx = idx.reshape(len(centers), kk)
    sel = farthest_point_subset(cloud.points[idx], m)
    return np.take_along_axis(idx, sel, axis=1)


def _tls_planes(nbr):
    cen = nbr.mean(axis=1)
    _, s, vt = np.linalg.svd(nbr - cen[:, None], full_matrices=False)
    return cen, vt[:, -1], s


def refine_and_project(mesh, cloud, knn=12):
    """Uniform refinement followed by hyperplane projection of all vertices.

    Each vertex is moved to its orthogonal projection onto the total least
    squares plane of its ``knn`` nearest cloud points. Neighbour sets that
    are close to collinear (second singular value below a tenth of the
    first) are replaced by a farthest-point thinning of a larger pool.
    """
    if knn < 3:
        raise ValueError("knn must be at least 3")
    fine = refine(mesh)
    return fine.with_vertices(project_to_cloud_planes(fine.vertices, cloud, knn))


def project_to_cloud_planes(points, cloud, knn=12):
    pts = np.asarray(points, dtype=float)
    knn = min(knn, len(cloud))
    _, idx = cloud.spatial_index.query(pts, k=knn)
    idx = idx.reshape(len(pts), knn)
    cen, nrm, s = _tls_planes(cloud.points[idx])
    flat = s[:, 1] < 0.1 * s[:, 0]
    pool = 4
    while np.any(flat) and pool * knn <= min(len(cloud), 64 * knn):
        rows = np.flatnonzero(flat)
        sel = spread_neighbors(cloud, pts[rows], knn, pool=pool)
        c2, n2, s2 = _tls_planes(cloud.points[sel])
        cen[rows], nrm[rows], s[rows] = c2, n2, s2
        flat = s[:, 1] < 0.1 * s[:, 0]
        pool *= 4
    bad = s[:, 1] <= 1e-8 * s[:, 0]
    if np.any(bad):
        raise RankDeficientFit("collinear neighbours for the hyperplane fit of vertex "
                               f"{int(np.flatnonzero(bad)[0])}")
    off = np.einsum("ij,ij->i", pts - cen, nrm)
    return pts - off[:, None] * nrm


# ---------------------------------------------------------------------------
# file formats

def read_xyz(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"point cloud file not found: {path}")
    data = np.loadtxt(path, ndmin=2)
    if data.shape[1] != 3:
        raise ValueError(f"{path}: expected three columns, got {data.shape[1]}")
    return PointCloud(data)


def write_xyz(path, points):
    np.savetxt(path, np.asarray(points).reshape(-1, 3), fmt="%.17g")


def read_off(path, closed=True, shape_bound=0.1):
    """Read an ASCII OFF triangle mesh and validate it."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"mesh file not found: {path}")
    tokens = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                tokens.append(line.split())
    if not tokens or tokens[0][0] != "OFF":
        raise MeshError(f"{path}: missing OFF header")
    head = tokens[0][1:] if len(tokens[0]) > 1 else None
    rest = tokens[1:]
    if head is None:
        head, rest = rest[0], rest[1:]
    nv, nf = int(head[0]), int(head[1])
    verts = np.array([[float(x) for x in row[:3]] for row in rest[:nv]])
    faces = []
    for row in rest[nv:nv + nf]:
        if int(row[0]) != 3:
            raise MeshError(f"{path}: only triangular faces are supported")
        faces.append([int(x) for x in row[1:4]])
    if len(verts) != nv or len(faces) != nf:
        raise MeshError(f"{path}: truncated file")
    return ReferenceMesh(verts, np.array(faces, dtype=int).reshape(-1, 3),
                         closed=closed, shape_bound=shape_bound)


def write_off(path, mesh):
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.n_vertices} {mesh.n_triangles} {mesh.n_edges}\n")
        for v in mesh.vertices:
            fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for t in mesh.triangles:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")
