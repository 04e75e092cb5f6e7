"""Refinement studies: the end-to-end runs behind the command line.

Each study builds the level sequence of reference meshes, reconstructs
the patches on every level, and records errors in a
:class:`~pcdg.analyze.ConvergenceTable`.
"""
import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analyze
from .dgcore import (AT_PATCH_POINT, DGSpace, assemble_rhs, assemble_system,
                     default_beta)
from .geometry import DEFAULT_NEWTON_TOL, reconstruct_patches
from .meshgen import (flat_grid_mesh, fibonacci_sphere_mesh, read_off, read_xyz,
                      PointCloud, refine, refine_and_project, sample_plane_cloud,
                      sample_sphere_cloud, sample_torus_cloud, torus_grid_mesh)
from .polynomials import dim_p
from .solve import solve_eigen, solve_source
from .surfaces import PlaneZ0, Torus, UnitSphere

SURFACES = ("sphere", "torus", "plane-test")
DEFAULT_LATTICE = {"sphere": (800, 1600), "torus": (400, 1600), "plane-test": (161, 161)}


JUMP_WEIGHTS = ("product", "average")


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclass
class RunConfig:
    """Resolved settings of one study.

    ``beta`` and ``m`` accept ``"auto"``: ``10 (l+1)^2`` and ``(k+1)(k+2)``.
    ``jump_weight`` selects the edge-length weighting of the consistency
    jumps, see :func:`pcdg.dgcore.bilinear_terms`.
    ``cloud``/``mesh`` name XYZ and OFF files that replace the synthetic
    data; ``surface`` then only selects the exact surface used for errors
    (``None`` for none).
    """

    surface: str = "sphere"
    cloud: str = None
    mesh: str = None
    k: int = 1
    l: int = 1
    levels: int = 4
    beta: object = "auto"
    knn: int = 12
    m: object = "auto"
    newton_tol: float = DEFAULT_NEWTON_TOL
    quad_boost: int = 0
    count: int = 6
    out: str = "out"
    cloud_lattice: tuple = None
    dat: bool = False
    dump: bool = False
    jump_weight: str = "product"

    def validate(self):
        if self.surface not in SURFACES + (None, "none"):
            raise ConfigError(f"unknown surface {self.surface!r}")
        if self.surface in (None, "none") and not (self.cloud and self.mesh):
            raise ConfigError("without a synthetic surface both --cloud and --mesh are needed")
        for name in ("k", "l", "levels", "knn", "count"):
            val = getattr(self, name)
            if not isinstance(val, (int, np.integer)) or val < 1:
                raise ConfigError(f"{name} must be a positive integer, got {val!r}")
        if self.knn < 3:
            raise ConfigError("knn must be at least 3")
        if not isinstance(self.quad_boost, (int, np.integer)) or self.quad_boost < 0:
            raise ConfigError("quad_boost must be a nonnegative integer")
        if not float(self.newton_tol) > 0:
            raise ConfigError("newton_tol must be positive")
        if self.beta != "auto":
            try:
                b = float(self.beta)
            except (TypeError, ValueError):
                raise ConfigError(f"beta must be a number or 'auto', got {self.beta!r}")
            if not np.isfinite(b) or b < 0:
                raise ConfigError("beta must be nonnegative")
        if self.m != "auto":
            if int(self.m) < dim_p(self.k):
                raise ConfigError(f"m must be at least {dim_p(self.k)} for k={self.k}")
        if self.jump_weight not in JUMP_WEIGHTS:
            raise ConfigError(f"jump_weight must be one of {JUMP_WEIGHTS}")
        if self.cloud_lattice is not None and len(self.cloud_lattice) != 2:
            raise ConfigError("cloud_lattice needs two integers")
        return self

    @property
    def beta_value(self):
        return default_beta(self.l) if self.beta == "auto" else float(self.beta)

    @property
    def m_value(self):
        return 2 * dim_p(self.k) if self.m == "auto" else int(self.m)

    @property
    def exact_surface(self):
        return {"sphere": UnitSphere(), "torus": Torus(),
                "plane-test": PlaneZ0()}.get(self.surface)

    def manifest(self):
        d = dataclasses.asdict(self)
        d["beta_resolved"] = self.beta_value
        d["m_resolved"] = self.m_value
        if d["cloud_lattice"] is None and self.surface in DEFAULT_LATTICE and not self.cloud:
            d["cloud_lattice_resolved"] = list(DEFAULT_LATTICE[self.surface])
        return d


def load_config(path):
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    names = {f.name for f in dataclasses.fields(RunConfig)}
    extra = set(k.replace("-", "_") for k in data) - names
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    return {k.replace("-", "_"): v for k, v in data.items()}


# ---------------------------------------------------------------------------
# data

def make_cloud(config):
    """Point cloud from file or from the synthetic lattice sampler."""
    if config.cloud:
        return read_xyz(config.cloud)
    nt, npp = config.cloud_lattice or DEFAULT_LATTICE[config.surface]
    if config.surface == "sphere":
        return sample_sphere_cloud(nt, npp)
    if config.surface == "torus":
        return sample_torus_cloud(nt, npp)
    return sample_plane_cloud(nt, extent=1.0, margin=0.25)


def seed_mesh(config):
    if config.mesh:
        return read_off(config.mesh)
    if config.surface == "sphere":
        return fibonacci_sphere_mesh(222)
    if config.surface == "torus":
        return torus_grid_mesh(8, 25)
    return flat_grid_mesh(2)


def level_meshes(config, cloud):
    """Reference meshes for every level; level 0 is the seed mesh."""
    mesh = seed_mesh(config)
    out = [mesh]
    for _ in range(config.levels - 1):
        if config.surface == "plane-test" and not config.mesh:
            mesh = refine(mesh)
        else:
            mesh = refine_and_project(mesh, cloud, config.knn)
        out.append(mesh)
    return out


def patches_for(config, mesh, cloud):
    return reconstruct_patches(mesh, cloud, config.k, config.m_value, config.newton_tol)


# ---------------------------------------------------------------------------
# manufactured problems

def manufactured(surface):
    """Exact solution, ambient gradient and source of ``-Delta u + u = f``."""
    if isinstance(surface, UnitSphere):
        def u(x):
            return x[..., 0] * x[..., 1]

        def grad(x):
            return np.stack([x[..., 1], x[..., 0], np.zeros(x.shape[:-1])], axis=-1)

        def f(x):
            return 7.0 * x[..., 0] * x[..., 1]
        return u, grad, f
    if isinstance(surface, Torus):
        def u(x):
            return x[..., 0] - x[..., 1]

        def grad(x):
            g = np.zeros(x.shape)
            g[..., 0] = 1.0
            g[..., 1] = -1.0
            return g

        def f(x):
            lb = surface.laplace_beltrami_coordinates(x)
            return -(lb[..., 0] - lb[..., 1]) + u(x)
        return u, grad, f
    if isinstance(surface, PlaneZ0):
        # zero normal derivative on the unit square, matching natural conditions
        def u(x):
            return np.cos(np.pi * x[..., 0]) * np.cos(np.pi * x[..., 1])

        def grad(x):
            return np.stack([-np.pi * np.sin(np.pi * x[..., 0]) * np.cos(np.pi * x[..., 1]),
                             -np.pi * np.cos(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1]),
                             np.zeros(x.shape[:-1])], axis=-1)

        def f(x):
            return (2.0 * np.pi**2 + 1.0) * u(x)
        return u, grad, f
    raise ValueError(f"no manufactured solution for {surface!r}")


def sphere_spectrum(count):
    """Exact unit-sphere eigenvalues with multiplicity, ascending."""
    vals = []
    n = 0
    while len(vals) < count:
        vals += [n * (n + 1.0)] * (2 * n + 1)
        n += 1
    return np.array(vals[:count])


def sphere_first_eigenfunctions():
    """Orthonormal eigenfunctions ``x_i / sqrt(4 pi / 3)`` for eigenvalue 2."""
    c = 1.0 / np.sqrt(4.0 * np.pi / 3.0)

    def coord(i):
        return lambda x: c * x[..., i]

    def grad(i):
        def g(x):
            out = np.zeros(x.shape)
            out[..., i] = c
            return out
        return g
    return [coord(i) for i in range(3)], [grad(i) for i in range(3)]


# ---------------------------------------------------------------------------
# studies

def run_reconstruct(config, cloud=None, meshes=None):
    """Nodal errors ``e_n`` and ``e_t`` on every level."""
    surface = config.exact_surface
    if surface is None:
        raise ConfigError("geometric errors need an exact surface")
    cloud = make_cloud(config) if cloud is None else cloud
    meshes = level_meshes(config, cloud) if meshes is None else meshes
    tab = analyze.ConvergenceTable()
    for lev, mesh in enumerate(meshes):
        rep = analyze.geometric_errors(patches_for(config, mesh, cloud), surface)
        tab.add(lev, mesh.n_vertices, None, mesh.h, "e_n", rep.e_n)
        tab.add(lev, mesh.n_vertices, None, mesh.h, "e_t", rep.e_t)
    return tab


def run_solve(config, cloud=None, meshes=None, dump_dir=None):
    """Source problem errors (L2, H1, jump) for the manufactured solution."""
    surface = config.exact_surface
    if surface is None:
        raise ConfigError("solution errors need an exact surface")
    u, grad, f = manufactured(surface)
    cloud = make_cloud(config) if cloud is None else cloud
    meshes = level_meshes(config, cloud) if meshes is None else meshes
    tab = analyze.ConvergenceTable()
    for lev, mesh in enumerate(meshes):
        space = DGSpace(patches_for(config, mesh, cloud), config.l, config.k,
                        config.quad_boost)
        system = assemble_system(space, f, config.beta_value, AT_PATCH_POINT,
                                 jump_weight=config.jump_weight)
        uh = solve_source(system)
        err = analyze.solution_errors(space, uh, u, grad, surface, config.beta_value)
        for name, val in (("L2", err.L2), ("H1", err.H1), ("jump", err.jump)):
            tab.add(lev, mesh.n_vertices, space.n_dofs, mesh.h, name, val)
        if dump_dir is not None:
            np.savez(Path(dump_dir) / f"solution_level{lev}.npz", coefficients=uh,
                     vertices=mesh.vertices, triangles=mesh.triangles,
                     nodes=space.patches.nodes, l=config.l, k=config.k)
    return tab


def eigen_level(config, mesh, cloud, count):
    """Eigenpairs on one level; extra pairs avoid cutting a degenerate cluster."""
    space = DGSpace(patches_for(config, mesh, cloud), config.l, config.k, config.quad_boost)
    system = assemble_system(space, None, config.beta_value, jump_weight=config.jump_weight)
    extra = count + 4
    while True:
        res = solve_eigen(system, min(extra, space.n_dofs))
        n = analyze.complete_groups(res.eigenvalues, count)
        if n is not None or extra >= space.n_dofs:
            break
        extra *= 2
    n = count if n is None else n
    return space, res, n


def run_eigen(config, cloud=None, meshes=None):
    """Eigenvalue (and on the sphere eigenfunction) errors per level.

    The sphere is compared with its exact spectrum. Elsewhere the
    self-convergence error between consecutive levels is reported,
    starting from the second level.
    """
    surface = config.exact_surface
    cloud = make_cloud(config) if cloud is None else cloud
    meshes = level_meshes(config, cloud) if meshes is None else meshes
    tab = analyze.ConvergenceTable()
    prev = None
    count = config.count
    for lev, mesh in enumerate(meshes):
        space, res, n = eigen_level(config, mesh, cloud, count)
        lam = res.eigenvalues
        if isinstance(surface, UnitSphere):
            exact = sphere_spectrum(len(lam))
            err = analyze.eigenvalue_errors(lam, exact)
            for i in range(count):
                tab.add(lev, mesh.n_vertices, space.n_dofs, mesh.h, f"lambda_{i + 1}", err[i])
            if count >= 4:
                funcs, grads = sphere_first_eigenfunctions()
                l2, h1 = analyze.eigenfunction_errors(space, res.eigenvectors[:, 1:4],
                                                      funcs, grads, surface)
                for j in range(3):
                    tab.add(lev, mesh.n_vertices, space.n_dofs, mesh.h, f"L2_u{j + 2}", l2[j])
                    tab.add(lev, mesh.n_vertices, space.n_dofs, mesh.h, f"H1_u{j + 2}", h1[j])
        else:
            if prev is not None:
                n = min(n, len(prev))
                analyze.check_multiplicities(prev[1:n], lam[1:n])
                err = analyze.eigenvalue_errors(lam[:n], prev[:n], relative=True)
                for i in range(1, count):
                    tab.add(lev, mesh.n_vertices, space.n_dofs, mesh.h, f"Err_{i + 1}", err[i])
        for i in range(count):
            tab.add(lev, mesh.n_vertices, space.n_dofs, mesh.h, f"value_{i + 1}", lam[i],
                    with_order=False)
        prev = lam
    return tab
