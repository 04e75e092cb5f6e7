"""Closed-form test surfaces.

These are only used to generate data and to measure errors; the
reconstruction itself never sees them.
"""
import numpy as np


def _rows(x):
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, 3), x.shape


class ExactSurface:
    """A surface with an analytic closest-point map.

    Subclasses implement ``closest_point``, ``closest_point_jacobian``,
    ``normal`` and ``mean_curvature`` (sum of principal curvatures with the
    outward normal, so the unit sphere has 2).
    """

    name = "surface"
    euler_characteristic = None
    area = None

    def closest_point(self, x):
        raise NotImplementedError

    def closest_point_jacobian(self, x):
        raise NotImplementedError

    def normal(self, x):
        raise NotImplementedError

    def mean_curvature(self, x):
        raise NotImplementedError

    def signed_distance(self, x):
        x2, shape = _rows(x)
        y = self.closest_point(x2)
        d = np.einsum("ij,ij->i", x2 - y, self.normal(y))
        return d.reshape(shape[:-1])

    def laplace_beltrami_coordinates(self, y):
        """Laplace-Beltrami of the coordinate functions, ``-H * nu``."""
        return -self.mean_curvature(y)[..., None] * self.normal(y)


class UnitSphere(ExactSurface):
    name = "sphere"
    euler_characteristic = 2
    area = 4.0 * np.pi

    def closest_point(self, x):
        x = np.asarray(x, dtype=float)
        return x / np.linalg.norm(x, axis=-1, keepdims=True)

    def closest_point_jacobian(self, x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        u = x / r[..., None]
        eye = np.broadcast_to(np.eye(3), u.shape + (3,))
        return (eye - u[..., :, None] * u[..., None, :]) / r[..., None, None]

    def normal(self, x):
        return self.closest_point(x)

    def mean_curvature(self, x):
        return np.full(np.shape(x)[:-1], 2.0)

    def __repr__(self):
        return "UnitSphere()"


def torus_parametrization(theta, phi, major=4.0, minor=1.0):
    """Point of the torus with the given centre-circle and tube radii.

    ``x = (minor*cos(theta) + major)*cos(phi)``,
    ``y = (minor*cos(theta) + major)*sin(phi)``, ``z = minor*sin(theta)``.
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    rho = minor * np.cos(theta) + major
    return np.stack([rho * np.cos(phi), rho * np.sin(phi),
                     minor * np.sin(theta)], axis=-1)


class Torus(ExactSurface):
    """Ring torus around the z-axis; requires ``major > minor``."""

    name = "torus"
    euler_characteristic = 0

    def __init__(self, major=4.0, minor=1.0):
        if not major > minor > 0:
            raise ValueError("a smooth ring torus needs major > minor > 0")
        self.major = float(major)
        self.minor = float(minor)
        self.area = 4.0 * np.pi**2 * self.major * self.minor

    def _split(self, x):
        x = np.asarray(x, dtype=float)
        rho = np.hypot(x[..., 0], x[..., 1])
        q = np.zeros_like(x)
        q[..., 0] = x[..., 0] / rho
        q[..., 1] = x[..., 1] / rho
        c = self.major * q
        w = x - c
        return rho, q, c, w

    def closest_point(self, x):
        _, _, c, w = self._split(x)
        return c + self.minor * w / np.linalg.norm(w, axis=-1, keepdims=True)

    def closest_point_jacobian(self, x):
        rho, q, c, w = self._split(x)
        pxy = np.diag([1.0, 1.0, 0.0])
        dc = self.major * (pxy - q[..., :, None] * q[..., None, :]) / rho[..., None, None]
        wn = np.linalg.norm(w, axis=-1)
        nu = w / wn[..., None]
        eye = np.eye(3)
        proj = eye - nu[..., :, None] * nu[..., None, :]
        return dc + self.minor * (proj @ (eye - dc)) / wn[..., None, None]

    def normal(self, x):
        _, _, _, w = self._split(x)
        return w / np.linalg.norm(w, axis=-1, keepdims=True)

    def mean_curvature(self, x):
        y = self.closest_point(x)
        rho = np.hypot(y[..., 0], y[..., 1])
        return 1.0 / self.minor + (rho - self.major) / (self.minor * rho)

    def angles(self, x):
        """Tube angle theta and azimuth phi of the closest point."""
        y = self.closest_point(x)
        rho = np.hypot(y[..., 0], y[..., 1])
        return np.arctan2(y[..., 2], rho - self.major), np.arctan2(y[..., 1], y[..., 0])

    def __repr__(self):
        return f"Torus(major={self.major}, minor={self.minor})"


class PlaneZ0(ExactSurface):
    name = "plane"

    def closest_point(self, x):
        y = np.array(x, dtype=float)
        y[..., 2] = 0.0
        return y

    def closest_point_jacobian(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.diag([1.0, 1.0, 0.0]), x.shape + (3,)).copy()

    def normal(self, x):
        n = np.zeros(np.shape(x))
        n[..., 2] = 1.0
        return n

    def mean_curvature(self, x):
        return np.zeros(np.shape(x)[:-1])

    def __repr__(self):
        return "PlaneZ0()"


def surface_from_name(name, **params):
    if name == "sphere":
        return UnitSphere()
    if name == "torus":
        return Torus(**params)
    if name in ("plane", "plane-test"):
        return PlaneZ0()
    raise ValueError(f"unknown surface {name!r}")
