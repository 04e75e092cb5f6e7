import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcdg.surfaces import PlaneZ0, Torus, UnitSphere, surface_from_name, torus_parametrization

angles = st.floats(0.0, 2 * np.pi, allow_nan=False)


def test_torus_parametrization_examples():
    # tube radius 4 around a unit centre circle
    assert np.allclose(torus_parametrization(0.0, 0.0, major=1.0, minor=4.0), [5, 0, 0])
    assert np.allclose(torus_parametrization(np.pi / 2, 0.0, major=1.0, minor=4.0),
                       [1, 0, 4], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(angles, angles)
def test_torus_implicit_residual(theta, phi):
    x = torus_parametrization(theta, phi, major=1.0, minor=4.0)
    res = (np.hypot(x[0], x[1]) - 1.0) ** 2 + x[2] ** 2 - 16.0
    # the residual form (rho - 1)^2 + z^2 = 16 holds where rho = 4cos(theta) + 1 >= 0
    if 4 * np.cos(theta) + 1 >= 0:
        assert abs(res) <= 1e-12
    y = torus_parametrization(theta, phi)
    assert abs((np.hypot(y[0], y[1]) - 4.0) ** 2 + y[2] ** 2 - 1.0) <= 1e-12


def test_ring_torus_requires_major_above_minor():
    with pytest.raises(ValueError):
        Torus(major=1.0, minor=4.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_sphere_closest_point_idempotent(x):
    x = np.array(x)
    if np.linalg.norm(x) < 1e-3:
        return
    s = UnitSphere()
    y = s.closest_point(x)
    assert abs(np.linalg.norm(y) - 1.0) <= 1e-12
    assert np.linalg.norm(s.closest_point(y) - y) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(angles, angles, st.floats(-0.5, 0.5))
def test_torus_closest_point_idempotent(theta, phi, d):
    t = Torus()
    y = torus_parametrization(theta, phi)
    x = y + d * t.normal(y)
    assert np.linalg.norm(t.closest_point(x) - y) <= 1e-12
    assert abs(t.signed_distance(x) - d) <= 1e-12


@pytest.mark.parametrize("surface", [UnitSphere(), Torus(), PlaneZ0()])
def test_closest_point_jacobian_finite_differences(surface):
    g = np.random.default_rng(1)
    if isinstance(surface, Torus):
        x = torus_parametrization(g.random(5) * 6, g.random(5) * 6) + 0.1 * g.normal(size=(5, 3))
    else:
        x = g.normal(size=(5, 3)) * 0.3 + np.array([0.2, 0.3, 0.9])
    jac = surface.closest_point_jacobian(x)
    eps = 1e-6
    for i in range(3):
        e = np.zeros(3)
        e[i] = eps
        fd = (surface.closest_point(x + e) - surface.closest_point(x - e)) / (2 * eps)
        assert np.allclose(jac[:, :, i], fd, atol=1e-7)


def sphere_lb_fd(f, theta, phi, eps=1e-4):
    """Laplace-Beltrami in spherical coordinates by central differences."""
    def F(t, p):
        return f(np.array([np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)]))

    def ft(t):
        return (F(t + eps, phi) - F(t - eps, phi)) / (2 * eps)

    d_theta = (np.sin(theta + eps / 2) * (F(theta + eps, phi) - F(theta, phi))
               - np.sin(theta - eps / 2) * (F(theta, phi) - F(theta - eps, phi))) / eps**2
    d_phi = (F(theta, phi + eps) - 2 * F(theta, phi) + F(theta, phi - eps)) / eps**2
    return d_theta / np.sin(theta) + d_phi / np.sin(theta) ** 2


def test_sphere_laplacian_of_x1x2_is_minus_six_x1x2():
    # the identity behind the manufactured source 7 x1 x2
    f = lambda x: x[0] * x[1]
    for theta, phi in [(0.7, 0.3), (1.2, 2.0), (2.5, 4.1)]:
        x = np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
        assert abs(sphere_lb_fd(f, theta, phi) - (-6.0 * x[0] * x[1])) < 1e-6


def test_sphere_coordinate_laplacian():
    s = UnitSphere()
    y = s.closest_point(np.array([[0.3, -0.4, 0.5]]))
    assert np.allclose(s.laplace_beltrami_coordinates(y), -2.0 * y)


def torus_lb_fd(f, theta, phi, R=4.0, r=1.0, eps=1e-4):
    """Laplace-Beltrami in (theta, phi) coordinates by central differences."""
    def F(t, p):
        return f(torus_parametrization(t, p, R, r))

    def rho(t):
        return R + r * np.cos(t)

    d_theta = (rho(theta + eps / 2) * (F(theta + eps, phi) - F(theta, phi))
               - rho(theta - eps / 2) * (F(theta, phi) - F(theta - eps, phi))) / eps**2
    d_phi = (F(theta, phi + eps) - 2 * F(theta, phi) + F(theta, phi - eps)) / eps**2
    return d_theta / (r**2 * rho(theta)) + d_phi / rho(theta) ** 2


@pytest.mark.parametrize("theta,phi", [(0.3, 0.2), (2.0, 1.1), (4.0, 5.5)])
def test_torus_coordinate_laplacian_matches_finite_differences(theta, phi):
    t = Torus()
    y = torus_parametrization(theta, phi)
    lb = t.laplace_beltrami_coordinates(y)
    for i in range(3):
        assert abs(torus_lb_fd(lambda x: x[i], theta, phi) - lb[i]) < 1e-6


def test_surface_from_name():
    assert isinstance(surface_from_name("sphere"), UnitSphere)
    assert isinstance(surface_from_name("torus"), Torus)
    assert isinstance(surface_from_name("plane-test"), PlaneZ0)
    with pytest.raises(ValueError):
        surface_from_name("cube")
