import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pcdg.analyze import (ConvergenceTable, check_multiplicities, complete_groups,
                          convergence_table, eigenfunction_errors, eigenvalue_errors,
                          geometric_errors, group_multiplicities, inflated_sphere_gap,
                          jump_norm, observed_order, solution_errors, sphere_eigenvalue)
from pcdg.dgcore import DGSpace, assemble_system, interpolate
from pcdg.errors import MultiplicityMismatch
from pcdg.geometry import FlatPatches, reconstruct_patches
from pcdg.meshgen import PointCloud, fibonacci_sphere_points
from pcdg.pipeline import manufactured, sphere_first_eigenfunctions
from pcdg.solve import solve_eigen, solve_source
from pcdg.surfaces import PlaneZ0, UnitSphere

from conftest import random_rotation
from flat_oracle import jiggled_grid


def test_order_of_quartered_error():
    tab = convergence_table([1e-2, 2.5e-3], [0.2, 0.1])
    assert tab.final_order("error") == pytest.approx(2.0, abs=1e-12)


def test_equal_errors_have_order_zero():
    tab = convergence_table([3e-4, 3e-4, 3e-4], [0.4, 0.2, 0.1])
    assert tab.column("error", "order") == [None, 0.0, 0.0]


def test_replay_of_reference_sphere_column():
    errs = [1.12e-02, 2.95e-03, 7.21e-04, 1.80e-04, 4.64e-05]
    hs = [2.0 ** -i for i in range(5)]
    orders = convergence_table(errs, hs).column("error", "order")[1:]
    # later levels halve h exactly; the coarsest pair has a slightly larger ratio
    assert [round(o, 2) for o in orders[1:]] == [2.03, 2.00, 1.96]
    assert orders[0] == pytest.approx(1.94, abs=0.02)


def test_observed_order_scale_free():
    assert observed_order(8.0, 1.0, 2.0, 1.0) == pytest.approx(3.0)
    assert observed_order(8e-9, 1e-9, 2e-3, 1e-3) == pytest.approx(3.0)


def test_csv_layout():
    tab = ConvergenceTable()
    tab.add(0, 222, 1320, 0.3, "L2", 1e-2)
    tab.add(1, 882, 5280, 0.15, "L2", 2.5e-3)
    rows = list(csv.reader(io.StringIO(tab.to_csv())))
    assert rows[0] == ["level", "N_v", "dofs", "metric", "error", "order"]
    assert rows[1] == ["0", "222", "1320", "L2", "1.000000e-02", ""]
    assert rows[2][5] == "2.0000"


def test_negative_error_rejected():
    with pytest.raises(ValueError):
        ConvergenceTable().add(0, 1, 1, 0.1, "e", -1.0)
    with pytest.raises(ValueError):
        convergence_table([1.0], [0.1])


def test_dat_output(tmp_path):
    tab = ConvergenceTable()
    for lev, (h, e) in enumerate([(0.2, 1e-2), (0.1, 2.5e-3)]):
        tab.add(lev, None, None, h, "a", e)
        tab.add(lev, None, None, h, "b", 2 * e)
    tab.to_dat(tmp_path / "t.dat")
    data = np.loadtxt(tmp_path / "t.dat")
    assert np.allclose(data, [[0.2, 1e-2, 2e-2], [0.1, 2.5e-3, 5e-3]])


def test_multiplicity_groups():
    vals = [0.0, 2.0, 2.0001, 1.9999, 6.0, 6.0, 6.0, 6.0, 6.0001]
    assert [len(g) for g in group_multiplicities(sorted(vals))] == [1, 3, 5]
    assert complete_groups(sorted(vals) + [12.0], 2) == 4
    assert complete_groups(sorted(vals), 5) is None
    check_multiplicities(sorted(vals), sorted(vals))
    with pytest.raises(MultiplicityMismatch):
        check_multiplicities([0, 2, 2, 2], [0, 2, 2, 2.5])


def test_eigenvalue_errors():
    err = eigenvalue_errors([2.1, 0.0, 1.9, 2.0], [0, 2, 2, 2])
    assert np.allclose(err, [0, 0.1, 0, 0.1])
    rel = eigenvalue_errors([1.0, 4.0], [1.5, 3.0], relative=True)
    assert np.allclose(rel, [0.5, 0.25])


def test_sphere_spectrum_and_inflation():
    assert sphere_eigenvalue(2) == 6 and sphere_eigenvalue(1, 2.0) == 0.5
    for n in (1, 2, 3):
        eps = np.array([1e-4, 2e-4])
        slope = np.diff(inflated_sphere_gap(n, eps))[0] / 1e-4
        assert abs(slope / (2 * n * (n + 1)) - 1) <= 1e-2


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.floats(1e-8, 1e-2))
def test_inflation_gap_is_linear_for_small_radius_change(n, eps):
    gap = inflated_sphere_gap(n, eps)
    assert gap > 0
    assert abs(gap / (2 * n * (n + 1) * eps) - 1) <= 2 * eps


def test_flat_interpolant_of_polynomial_has_no_error():
    mesh = jiggled_grid(3)
    space = DGSpace(FlatPatches(mesh), 2)
    u = lambda x: x[..., 0] ** 2 - x[..., 0] * x[..., 1] + 3
    grad = lambda x: np.stack([2 * x[..., 0] - x[..., 1], -x[..., 0], 0 * x[..., 0]], axis=-1)
    err = solution_errors(space, interpolate(space, u), u, grad, PlaneZ0())
    assert max(err.L2, err.H1, err.jump) <= 1e-12


def test_procrustes_alignment_recovers_group(sphere_mesh, sphere_cloud):
    space = DGSpace(reconstruct_patches(sphere_mesh, sphere_cloud, 2), 2)
    funcs, grads = sphere_first_eigenfunctions()
    vecs = np.column_stack([interpolate(space, f) for f in funcs])
    base = eigenfunction_errors(space, vecs, funcs, grads, UnitSphere())
    q = random_rotation(3) @ np.diag([1.0, -1.0, 1.0])
    mixed = eigenfunction_errors(space, vecs @ q, funcs, grads, UnitSphere())
    assert np.allclose(base[0], mixed[0], rtol=1e-8, atol=1e-14)
    assert np.allclose(base[1], mixed[1], rtol=1e-8, atol=1e-14)


@pytest.fixture(scope="module")
def fibonacci_cloud():
    # no distance ties, so neighbour selection commutes with rotation
    return PointCloud(fibonacci_sphere_points(30_000))


def _rotated_problem(mesh, cloud, rot):
    mesh = mesh.with_vertices(mesh.vertices @ rot.T)
    cloud = PointCloud(cloud.points @ rot.T)
    return mesh, cloud


@pytest.mark.parametrize("seed", [1, 2])
def test_errors_invariant_under_rotation(sphere_mesh, fibonacci_cloud, seed):
    rot = random_rotation(seed)
    u0, g0, f0 = manufactured(UnitSphere())
    out = []
    for r in (np.eye(3), rot):
        mesh, cloud = _rotated_problem(sphere_mesh, fibonacci_cloud, r)
        u = lambda x, r=r: u0(x @ r)
        g = lambda x, r=r: g0(x @ r) @ r.T
        f = lambda x, r=r: f0(x @ r)
        patches = reconstruct_patches(mesh, cloud, 2)
        space = DGSpace(patches, 2)
        sysm = assemble_system(space, f)
        err = solution_errors(space, solve_source(sysm), u, g, UnitSphere())
        lam = solve_eigen(sysm, 9).eigenvalues
        geo = geometric_errors(patches, UnitSphere())
        out.append(np.array([err.L2, err.H1, err.jump, geo.e_n, geo.e_t, *lam[1:]]))
    assert np.abs(out[1] / out[0] - 1).max() <= 1e-9


def test_jump_norm_of_interpolant_decays(sphere_meshes, sphere_cloud):
    u = lambda x: np.exp(x[..., 0]) * x[..., 2]
    for l in (1, 2):
        jumps, hs = [], []
        for mesh in sphere_meshes:
            space = DGSpace(reconstruct_patches(mesh, sphere_cloud, 2), l)
            jumps.append(jump_norm(space, interpolate(space, u), UnitSphere()))
            hs.append(mesh.h)
        assert observed_order(jumps[-2], jumps[-1], hs[-2], hs[-1]) >= l + 0.2
