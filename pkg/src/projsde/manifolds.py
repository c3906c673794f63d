"""Catalog of test manifolds, their default SDEs, intrinsic models and oracles."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .geometry import ManifoldSpec, QuadraticConstraint
from .metrics import euclidean_dist_sq, great_circle_dist
from .stepper import SdeProblem

GUARD_BAND = 0.05


class NotAvailableError(LookupError):
    """No intrinsic model or oracle exists for the requested entry."""


def make_quadratic(f0, h, G, name="quadratic") -> ManifoldSpec:
    """Single quadratic constraint ``f0 + h.y + y^T G y = 0``."""
    q = QuadraticConstraint(f0, h, G)
    return ManifoldSpec(
        ambient_dim=q.dim,
        num_constraints=1,
        constraint_eval=lambda x: q(x)[..., None],
        gradient_eval=lambda x: q.gradient(x)[..., None, :],
        name=name,
    )


def stack_constraints(parts, name="intersection", exact=None) -> ManifoldSpec:
    """Intersection of several manifolds in the same ambient space."""
    n = parts[0].ambient_dim
    if any(m.ambient_dim != n for m in parts):
        raise ValueError("all constraints must share the ambient dimension")
    return ManifoldSpec(
        ambient_dim=n,
        num_constraints=sum(m.num_constraints for m in parts),
        constraint_eval=lambda x: np.concatenate([m.constraint_eval(x) for m in parts], axis=-1),
        gradient_eval=lambda x: np.concatenate([m.gradient_eval(x) for m in parts], axis=-2),
        exact_normal_projection=exact,
        name=name,
    )


@dataclass(frozen=True)
class IntrinsicModel:
    """Stratonovich SDE in intrinsic coordinates with diagonal noise.

    ``drift(phi, t)`` returns ``(..., m)`` and ``noise_diag(phi, t)`` the
    diagonal of the ``m x m`` noise matrix.
    """

    intrinsic_dim: int
    drift: Callable
    noise_diag: Callable
    embedding: Callable
    initial: np.ndarray
    ranges: tuple
    singular_set: str = "none"
    domain: Optional[Callable] = None
    wrap: Optional[Callable] = None

    def noise(self, phi, t):
        return self.noise_diag(phi, t)[..., :, None] * np.eye(self.intrinsic_dim)

    def to_problem(self, name="intrinsic") -> SdeProblem:
        return SdeProblem(
            drift=self.drift,
            noise=self.noise,
            noise_dim=self.intrinsic_dim,
            initial_state=np.asarray(self.initial, dtype=float),
            embedding=self.embedding,
            domain=self.domain,
            wrap=self.wrap,
            name=name,
        )


@dataclass(frozen=True)
class CatalogEntry:
    """A manifold together with the experiment wired around it.

    ``observables`` map ambient points ``(N, n)`` to ``(N,)``; ``oracles``
    give the exact ensemble mean of the same-named observable as a
    function of time.
    """

    name: str
    manifold: ManifoldSpec
    params: dict
    problem: SdeProblem
    observables: dict
    oracles: dict = field(default_factory=dict)
    intrinsic: Optional[IntrinsicModel] = None


# ---------------------------------------------------------------- oracles

def kubo_moment(m: int, t, omega0: float, b: float):
    """``<z(t)^m>`` for ``z(0) = 1`` and ``omega(t) = omega0 t``."""
    t = np.asarray(t, dtype=float)
    return np.exp(1j * m * omega0 * t**2 / 2 - m**2 * b**2 * t / 2)


def catenoid_msd(t):
    """Mean squared Euclidean displacement on the catenoid, ``2t``."""
    return 2.0 * np.asarray(t, dtype=float)


def hypersphere_msd(n: int, t):
    """Mean squared displacement on the unit sphere in ``R^n``."""
    if n < 2:
        raise ValueError("n must be >= 2")
    return 2.0 * (1.0 - np.exp(-(n - 1) * np.asarray(t, dtype=float) / 2.0))


# ---------------------------------------------------------------- helpers

def _identity_noise(n):
    eye = np.eye(n)

    def noise(x, t):
        return np.broadcast_to(eye, np.shape(x)[:-1] + (n, n))

    return noise


def _zero_drift(x, t):
    return np.zeros_like(x)


def _unit_rotation(x):
    # unit tangent of the circle through x, J x / |x|
    r = np.sqrt(x[..., 0] ** 2 + x[..., 1] ** 2)
    return np.stack([-x[..., 1] / r, x[..., 0] / r], axis=-1)


def _msd_observable(x0):
    x0 = np.asarray(x0, dtype=float)
    return lambda x: euclidean_dist_sq(x, x0)


def _sphere_intrinsic(c, name):
    """Spheroid ``x^2 + y^2 + z^2/c^2 = 1`` in polar coordinates (theta, phi)."""

    def drift(u, t):
        th = u[..., 0]
        d = (c**2 - 1.0) * np.cos(2 * th) - (1.0 + c**2)
        return np.stack([-1.0 / (np.tan(th) * d), np.zeros_like(th)], axis=-1)

    def noise_diag(u, t):
        th = u[..., 0]
        return np.stack(
            [1.0 / np.sqrt(np.cos(th) ** 2 + c**2 * np.sin(th) ** 2), 1.0 / np.sin(th)],
            axis=-1,
        )

    def embedding(u):
        th, ph = u[..., 0], u[..., 1]
        return np.stack(
            [np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), c * np.cos(th)], axis=-1
        )

    def domain(u):
        th = u[..., 0]
        return (th > GUARD_BAND) & (th < np.pi - GUARD_BAND)

    def wrap(u):
        # a step across a pole lands at (-theta, phi) ~ (theta, phi + pi)
        th = np.mod(u[..., 0], 2 * np.pi)
        flip = th > np.pi
        th = np.where(flip, 2 * np.pi - th, th)
        ph = np.mod(u[..., 1] + np.where(flip, np.pi, 0.0), 2 * np.pi)
        return np.stack([th, ph], axis=-1)

    return drift, noise_diag, embedding, domain, wrap


# ---------------------------------------------------------------- entries

def _circle(omega0=2.5, b=1.0):
    m = make_quadratic(-1.0, np.zeros(2), np.eye(2), name="circle")

    def drift(x, t):
        return omega0 * t * _unit_rotation(x)

    def noise(x, t):
        return b * _unit_rotation(x)[..., None]

    x0 = np.array([1.0, 0.0])
    problem = SdeProblem(drift, noise, 1, x0, manifold=m, name="circle")
    intrinsic = IntrinsicModel(
        intrinsic_dim=1,
        drift=lambda u, t: np.full_like(u, omega0 * t),
        noise_diag=lambda u, t: np.full_like(u, b),
        embedding=lambda u: np.concatenate([np.cos(u), np.sin(u)], axis=-1),
        initial=np.array([0.0]),
        ranges=((-np.inf, np.inf),),
    )
    return CatalogEntry(
        name="circle",
        manifold=m,
        params={"omega0": omega0, "b": b},
        problem=problem,
        observables={"x": lambda x: x[..., 0], "y": lambda x: x[..., 1]},
        oracles={
            "x": lambda t: kubo_moment(1, t, omega0, b).real,
            "y": lambda t: kubo_moment(1, t, omega0, b).imag,
        },
        intrinsic=intrinsic,
    )


def _hypersphere(n=10, exact=True):
    n = int(n)
    if n < 2:
        raise ValueError("hypersphere needs n >= 2")
    q = QuadraticConstraint(-1.0, np.zeros(n), np.eye(n))
    proj = (lambda x: x / np.linalg.norm(x, axis=-1, keepdims=True)) if exact else None
    m = ManifoldSpec(
        ambient_dim=n,
        num_constraints=1,
        constraint_eval=lambda x: q(x)[..., None],
        gradient_eval=lambda x: q.gradient(x)[..., None, :],
        exact_normal_projection=proj,
        name=f"hypersphere{n}",
    )
    x0 = np.zeros(n)
    x0[0] = 1.0
    problem = SdeProblem(_zero_drift, _identity_noise(n), n, x0, manifold=m,
                         name="hypersphere")
    intrinsic = None
    if n == 3:
        intrinsic = _polar_model(1.0, np.array([np.pi / 2, 0.0]), "wrap", "sphere")
    return CatalogEntry(
        name="hypersphere",
        manifold=m,
        params={"n": n, "exact": bool(exact)},
        problem=problem,
        observables={"R2": _msd_observable(x0)},
        oracles={"R2": lambda t: hypersphere_msd(n, t)},
        intrinsic=intrinsic,
    )


def _polar_model(c, u0, poles, name):
    """Polar-chart model; ``poles`` is ``"wrap"`` (continue across) or ``"reject"``."""
    if poles not in ("wrap", "reject"):
        raise ValueError(f"poles must be 'wrap' or 'reject', got {poles!r}")
    drift, noise_diag, embedding, domain, wrap = _sphere_intrinsic(c, name)
    return IntrinsicModel(
        2, drift, noise_diag, embedding, u0,
        ((0.0, np.pi), (0.0, 2 * np.pi)), "poles theta = 0, pi",
        domain=domain if poles == "reject" else None,
        wrap=wrap if poles == "wrap" else None,
    )


def _spheroid(c=0.25, theta0=1.0, phi0=1.0, poles="wrap"):
    if not c > 0:
        raise ValueError("spheroid needs c > 0")
    G = np.diag([1.0, 1.0, 1.0 / c**2])
    m = make_quadratic(-1.0, np.zeros(3), G, name="spheroid")
    intrinsic = _polar_model(c, np.array([theta0, phi0]), poles, "spheroid")
    x0 = intrinsic.embedding(intrinsic.initial)
    problem = SdeProblem(_zero_drift, _identity_noise(3), 3, x0, manifold=m,
                         name="spheroid")
    return CatalogEntry(
        name="spheroid",
        manifold=m,
        params={"c": c, "theta0": theta0, "phi0": phi0, "poles": poles},
        problem=problem,
        observables={
            "Theta": lambda x: great_circle_dist(x, x0, G),
            "R2": _msd_observable(x0),
        },
        intrinsic=intrinsic,
    )


def _hyperboloid(c=0.25, v0=0.0, theta0=0.0):
    if not c > 0:
        raise ValueError("hyperboloid needs c > 0")
    m = make_quadratic(-1.0, np.zeros(3), np.diag([1.0, 1.0, -1.0 / c**2]),
                       name="hyperboloid")

    def drift(u, t):
        v = u[..., 0]
        d = c**2 - 1.0 + (c**2 + 1.0) * np.cosh(2 * v)
        return np.stack([np.tanh(v) / d, np.zeros_like(v)], axis=-1)

    def noise_diag(u, t):
        v = u[..., 0]
        return np.stack(
            [1.0 / np.sqrt(np.sinh(v) ** 2 + c**2 * np.cosh(v) ** 2), 1.0 / np.cosh(v)],
            axis=-1,
        )

    def embedding(u):
        v, th = u[..., 0], u[..., 1]
        return np.stack(
            [np.cosh(v) * np.cos(th), np.cosh(v) * np.sin(th), c * np.sinh(v)], axis=-1
        )

    u0 = np.array([v0, theta0])
    x0 = embedding(u0)
    problem = SdeProblem(_zero_drift, _identity_noise(3), 3, x0, manifold=m,
                         name="hyperboloid")
    intrinsic = IntrinsicModel(
        2, drift, noise_diag, embedding, u0,
        ((-np.inf, np.inf), (0.0, 2 * np.pi)), "none",
    )
    return CatalogEntry(
        name="hyperboloid",
        manifold=m,
        params={"c": c, "v0": v0, "theta0": theta0},
        problem=problem,
        observables={"R2": _msd_observable(x0)},
        intrinsic=intrinsic,
    )


def _catenoid():
    def f(x):
        return (x[..., 0] ** 2 + x[..., 1] ** 2 - np.sinh(x[..., 2]) ** 2 - 1.0)[..., None]

    def grad(x):
        g = np.stack([2 * x[..., 0], 2 * x[..., 1], -np.sinh(2 * x[..., 2])], axis=-1)
        return g[..., None, :]

    m = ManifoldSpec(3, 1, f, grad, name="catenoid")

    def embedding(u):
        v, th = u[..., 0], u[..., 1]
        return np.stack([np.cosh(v) * np.cos(th), np.cosh(v) * np.sin(th), v], axis=-1)

    # conformal metric cosh^2 v (dv^2 + dtheta^2)
    intrinsic = IntrinsicModel(
        2,
        drift=lambda u, t: np.stack(
            [np.tanh(u[..., 0]) / (2 * np.cosh(u[..., 0]) ** 2), np.zeros_like(u[..., 0])],
            axis=-1,
        ),
        noise_diag=lambda u, t: np.repeat(1.0 / np.cosh(u[..., :1]), 2, axis=-1),
        embedding=embedding,
        initial=np.array([0.0, 0.0]),
        ranges=((-np.inf, np.inf), (0.0, 2 * np.pi)),
    )
    x0 = np.array([1.0, 0.0, 0.0])
    problem = SdeProblem(_zero_drift, _identity_noise(3), 3, x0, manifold=m,
                         name="catenoid")
    return CatalogEntry(
        name="catenoid",
        manifold=m,
        params={},
        problem=problem,
        observables={"R2": _msd_observable(x0)},
        oracles={"R2": catenoid_msd},
        intrinsic=intrinsic,
    )


def _polynomial(N=4, n=3, axial_force=2.0):
    N, n = int(N), int(n)
    if N < 2 or N % 2:
        raise ValueError("polynomial order N must be even and >= 2")
    if n < 2:
        raise ValueError("polynomial surface needs n >= 2")

    def f(x):
        return (np.sum(x**N, axis=-1) - 1.0)[..., None]

    def grad(x):
        return (N * x ** (N - 1))[..., None, :]

    m = ManifoldSpec(n, 1, f, grad, name="polynomial")

    def drift(x, t):
        a = np.zeros_like(x)
        a[..., -1] = axial_force * x[..., -1]
        return a

    x0 = np.zeros(n)
    x0[0] = 1.0
    problem = SdeProblem(drift, _identity_noise(n), n, x0, manifold=m, name="polynomial")
    return CatalogEntry(
        name="polynomial",
        manifold=m,
        params={"N": N, "n": n, "axial_force": axial_force},
        problem=problem,
        observables={"R2": _msd_observable(x0)},
    )


def _sphere_plane(omega0=0.0, b=1.0):
    sphere = make_quadratic(-1.0, np.zeros(3), np.eye(3), name="sphere")
    plane = ManifoldSpec(
        3, 1,
        lambda x: x[..., 2:3],
        lambda x: np.broadcast_to(np.array([0.0, 0.0, 1.0]), np.shape(x)[:-1] + (1, 3)),
        name="plane",
    )
    m = stack_constraints([sphere, plane], name="sphere_plane")

    def drift(x, t):
        return omega0 * t * np.stack([-x[..., 1], x[..., 0], np.zeros_like(x[..., 0])], axis=-1)

    eye = np.eye(3)

    def noise(x, t):
        return b * np.broadcast_to(eye, np.shape(x)[:-1] + (3, 3))

    x0 = np.array([1.0, 0.0, 0.0])
    problem = SdeProblem(drift, noise, 3, x0, manifold=m, name="sphere_plane")
    return CatalogEntry(
        name="sphere_plane",
        manifold=m,
        params={"omega0": omega0, "b": b},
        problem=problem,
        observables={"x": lambda x: x[..., 0], "y": lambda x: x[..., 1]},
        oracles={
            "x": lambda t: kubo_moment(1, t, omega0, b).real,
            "y": lambda t: kubo_moment(1, t, omega0, b).imag,
        },
    )


_BUILDERS = {
    "circle": _circle,
    "kubo": _circle,
    "hypersphere": _hypersphere,
    "sphere": lambda **kw: _hypersphere(n=3, **kw),
    "spheroid": _spheroid,
    "hyperboloid": _hyperboloid,
    "catenoid": _catenoid,
    "polynomial": _polynomial,
    "sphere_plane": _sphere_plane,
}

CATALOG_NAMES = tuple(_BUILDERS)


def catalog(name: str, **params) -> CatalogEntry:
    """Build a catalog entry by name; keyword arguments override defaults."""
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise KeyError(f"unknown manifold {name!r}; known: {', '.join(CATALOG_NAMES)}") from None
    try:
        return builder(**params)
    except TypeError as err:
        raise ValueError(f"invalid parameters for {name!r}: {err}") from None


def intrinsic_model(entry: CatalogEntry) -> IntrinsicModel:
    if entry.intrinsic is None:
        raise NotAvailableError(f"no intrinsic model for {entry.name!r}")
    return entry.intrinsic
