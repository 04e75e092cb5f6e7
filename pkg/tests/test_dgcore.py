import numpy as np
import pytest

from pcdg.analyze import jump_norm, surface_area
from pcdg.dgcore import (AT_EXACT_CLOSEST_POINT, AT_PATCH_POINT, DGSpace, assemble_bilinear,
                         assemble_mass, assemble_rhs, assemble_system, bilinear_terms,
                         default_beta, interpolate, lagrange_to_modal, modal_basis)
from pcdg.errors import NonConformingEdge, SingularMetric
from pcdg.geometry import ExactPatches, FlatPatches, reconstruct_patches
from pcdg.meshgen import ReferenceMesh, flat_grid_mesh, sample_plane_cloud
from pcdg.quadrature import doubled, triangle_rule
from pcdg.surfaces import PlaneZ0, UnitSphere

from flat_oracle import flat_ipdg_oracle, jiggled_grid, to_oracle_basis


@pytest.mark.parametrize("l", [1, 2, 3])
@pytest.mark.parametrize("patches", ["flat", "fitted"])
def test_flat_geometry_matches_planar_oracle(l, patches):
    mesh = jiggled_grid(3)
    if patches == "flat":
        p = FlatPatches(mesh)
    else:
        p = reconstruct_patches(mesh, sample_plane_cloud(61), 2)
    beta = default_beta(l)
    for weight in ("product", "average"):
        a = assemble_bilinear(DGSpace(p, l, 2), beta, jump_weight=weight).A.toarray()
        c = to_oracle_basis(mesh, l)
        ref = c.T @ flat_ipdg_oracle(mesh, l, beta) @ c
        assert np.abs(a - ref).max() <= 1e-12 * np.abs(ref).max()


def test_single_triangle_p1_matrices():
    verts = np.array([[0.0, 0, 0], [2, 0, 0], [0.5, 1.5, 0]])
    mesh = ReferenceMesh(verts, [[0, 1, 2]], closed=False)
    space = DGSpace(FlatPatches(mesh), 1)
    l2m = lagrange_to_modal(1)
    a = l2m.T @ assemble_bilinear(space).A.toarray() @ l2m
    m = l2m.T @ assemble_mass(space).toarray() @ l2m
    area = 1.5
    mass = area / 12 * (np.ones((3, 3)) + np.eye(3))
    # gradients of the barycentric coordinates
    b = np.column_stack([verts[1, :2] - verts[0, :2], verts[2, :2] - verts[0, :2]])
    gl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]) @ np.linalg.inv(b)
    stiff = area * gl @ gl.T
    assert np.allclose(m, mass, atol=1e-14)
    assert np.allclose(a, stiff + mass, atol=1e-13)


def test_unit_right_triangle_mass():
    mesh = ReferenceMesh([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]], closed=False)
    l2m = lagrange_to_modal(1)
    m = l2m.T @ assemble_mass(DGSpace(FlatPatches(mesh), 1)).toarray() @ l2m
    assert np.allclose(m, 0.5 / 12 * np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]), atol=1e-15)


def test_modal_basis_is_orthonormal():
    pts, wts = triangle_rule(8)
    vals, _ = modal_basis(pts, 3)
    assert np.allclose((vals * wts[:, None]).T @ vals, np.eye(10), atol=1e-13)


@pytest.fixture(scope="module")
def sphere_space(sphere_mesh, sphere_cloud):
    return DGSpace(reconstruct_patches(sphere_mesh, sphere_cloud, 2), 2)


@pytest.mark.parametrize("weight", ["product", "average"])
def test_symmetry_and_constant_identity(sphere_space, weight):
    terms = bilinear_terms(sphere_space, jump_weight=weight)
    a = sum(terms.values())
    m = terms["mass"]
    assert abs(a - a.T).max() <= 1e-12 * abs(a).max()
    one = np.zeros(sphere_space.n_dofs)
    one[::6] = modal_basis(np.zeros((1, 2)), 2)[0][0, 0] ** -1
    assert abs(one @ a @ one - one @ m @ one) <= 1e-10 * abs(one @ m @ one)
    assert abs(one @ terms["consistency"] @ one) <= 1e-10 * abs(m).max()


def test_mass_is_positive_definite(sphere_space):
    m = assemble_mass(sphere_space).toarray()
    assert np.linalg.eigvalsh(m).min() > 0


def test_positive_definite_at_default_beta(sphere_space, torus_mesh, torus_cloud):
    assert np.linalg.eigvalsh(assemble_bilinear(sphere_space).A.toarray()).min() > 0
    space = DGSpace(reconstruct_patches(torus_mesh, torus_cloud, 1), 1)
    assert np.linalg.eigvalsh(assemble_bilinear(space).A.toarray()).min() > 0


def test_zero_penalty_is_indefinite():
    mesh = ReferenceMesh([[0.0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]],
                         [[0, 1, 2], [0, 2, 3]], closed=False)
    a = assemble_bilinear(DGSpace(FlatPatches(mesh), 1), beta=0.0).A.toarray()
    assert np.linalg.eigvalsh(a).min() < 0


def test_quadrature_doubling_stability(sphere_space):
    a = assemble_bilinear(sphere_space).A
    a2 = assemble_bilinear(sphere_space.with_rule(doubled(sphere_space.rule))).A
    assert abs(a - a2).max() <= 1e-10 * abs(a).max()


def test_rhs_of_constant_on_flat_mesh():
    mesh = jiggled_grid(2)
    space = DGSpace(FlatPatches(mesh), 2)
    b = assemble_rhs(space, lambda x: np.ones(x.shape[:-1]))
    pts, wts = triangle_rule(4)
    vals, _ = modal_basis(pts, 2)
    ref = np.outer(2 * mesh.areas(), wts @ vals).ravel()
    assert np.allclose(b, ref, atol=1e-14)


def test_rhs_evaluation_modes(sphere_space):
    f = lambda x: x[..., 2] ** 2
    b1 = assemble_rhs(sphere_space, f, AT_PATCH_POINT)
    b2 = assemble_rhs(sphere_space, f, AT_EXACT_CLOSEST_POINT, UnitSphere())
    assert 0 < np.abs(b1 - b2).max() < 1e-2 * np.abs(b1).max()
    with pytest.raises(ValueError):
        assemble_rhs(sphere_space, f, AT_EXACT_CLOSEST_POINT)


@pytest.mark.parametrize("k", [1, 2])
def test_area_converges(k, sphere_meshes, sphere_cloud):
    errs, hs = [], []
    for mesh in sphere_meshes:
        space = DGSpace(reconstruct_patches(mesh, sphere_cloud, k), 1, k)
        m = assemble_mass(space)
        b = assemble_rhs(space, lambda x: np.ones(x.shape[:-1]))
        c0 = modal_basis(np.zeros((1, 2)), 1)[0][0, 0]
        assert abs(b[::3].sum() / c0 - surface_area(space)) <= 1e-12
        one = np.zeros(space.n_dofs)
        one[::3] = 1 / c0
        errs.append(abs(one @ m @ one - 4 * np.pi))
        hs.append(mesh.h)
    assert np.log(errs[-2] / errs[-1]) / np.log(hs[-2] / hs[-1]) >= k + 0.7


def test_interpolation_reproduces_polynomials():
    mesh = jiggled_grid(3)
    for l in (1, 2, 3):
        space = DGSpace(FlatPatches(mesh), l)
        u = lambda x: 1 + x[..., 0] ** l - 2 * x[..., 0] * x[..., 1] ** (l - 1)
        c = interpolate(space, u)
        pts = np.random.default_rng(0).random((7, 2)) * 0.5
        vals, _ = space.evaluate(c, pts)
        assert np.allclose(vals, u(FlatPatches(mesh).flat_points(pts)), atol=1e-12)


def test_interpolated_constant_has_no_jumps(sphere_space):
    c = interpolate(sphere_space, lambda x: np.full(x.shape[:-1], 3.0))
    assert jump_norm(sphere_space, c, UnitSphere()) <= 1e-12


def test_interpolation_error_order(sphere_meshes, sphere_cloud):
    from pcdg.analyze import solution_errors
    u = lambda x: x[..., 0] * x[..., 1]
    grad = lambda x: np.stack([x[..., 1], x[..., 0], 0 * x[..., 0]], axis=-1)
    errs, jumps, hs = [], [], []
    for mesh in sphere_meshes:
        space = DGSpace(reconstruct_patches(mesh, sphere_cloud, 3), 2)
        err = solution_errors(space, interpolate(space, u), u, grad, UnitSphere())
        errs.append(err.L2)
        jumps.append(err.jump)
        hs.append(mesh.h)
    rate = lambda e: np.log(e[-2] / e[-1]) / np.log(hs[-2] / hs[-1])
    assert rate(errs) >= 2.7
    assert rate(jumps) >= 2.2


def test_singular_metric_detected():
    # a vertical triangle projected onto the plane z = 0 collapses
    mesh = ReferenceMesh([[0.0, 0, 0], [1, 0, 0], [0, 0, 1]], [[0, 1, 2]], closed=False)
    with pytest.raises(SingularMetric):
        DGSpace(ExactPatches(mesh, PlaneZ0()), 1).volume_data()


class _Shifted(FlatPatches):
    def flat_points(self, r, tri=None):
        pts = super().flat_points(r, tri)
        return pts + 1e-6 * np.asarray(tri)[:, None, None]


def test_nonconforming_edge_detected():
    with pytest.raises(NonConformingEdge):
        bilinear_terms(DGSpace(_Shifted(flat_grid_mesh(2)), 1))


def test_assemble_system_fills_rhs(sphere_space):
    sysm = assemble_system(sphere_space, lambda x: x[..., 0])
    assert sysm.b.shape == (sphere_space.n_dofs,)
    assert sysm.beta == default_beta(2) and sysm.h == sphere_space.h
