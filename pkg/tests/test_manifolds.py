import cmath
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from projsde import (
    StepConfig,
    catalog,
    catenoid_msd,
    hypersphere_msd,
    integrate_ensemble,
    intrinsic_model,
    kubo_moment,
    make_quadratic,
    tangential_project,
)
from projsde.geometry import max_residual
from projsde.manifolds import CATALOG_NAMES, NotAvailableError


def test_make_quadratic_examples():
    assert make_quadratic(-1, np.zeros(2), np.eye(2)).constraint_eval(
        np.array([1.0, 0.0])) == pytest.approx([0.0])
    c = 0.25
    spheroid = make_quadratic(-1, np.zeros(3), np.diag([1, 1, 1 / c**2]))
    assert spheroid.constraint_eval(np.array([0.0, 0.0, 0.25])) == pytest.approx([0.0])
    hyperboloid = make_quadratic(-1, np.zeros(3), np.diag([1, 1, -1 / c**2]))
    assert hyperboloid.constraint_eval(np.array([1.0, 0.0, 0.0])) == pytest.approx([0.0])


def test_catalog_examples():
    m = catalog("catenoid").manifold
    x = np.array([math.cosh(1) * math.cos(0.5), math.cosh(1) * math.sin(0.5), 1.0])
    assert abs(m.constraint_eval(x)[0]) <= 1e-12
    poly = catalog("polynomial", N=4, n=3).manifold
    np.testing.assert_allclose(poly.gradient_eval(np.array([1.0, 0.0, 0.0])), [[4.0, 0.0, 0.0]])
    sp = catalog("sphere_plane").manifold
    basis = np.array([tangential_project(e, np.array([1.0, 0.0, 0.0]), sp) for e in np.eye(3)])
    assert np.linalg.matrix_rank(basis, tol=1e-12) == 1


def test_hypersphere_has_exact_projection():
    m = catalog("hypersphere", n=10).manifold
    x = np.arange(1.0, 11.0)
    np.testing.assert_allclose(m.exact_normal_projection(x), x / np.linalg.norm(x))


@pytest.mark.parametrize("name", CATALOG_NAMES)
def test_every_entry_starts_on_its_manifold(name):
    entry = catalog(name)
    x0 = entry.problem.initial(2)
    assert np.all(max_residual(entry.manifold, x0) <= 1e-12)
    for k, obs in entry.observables.items():
        assert np.all(np.isfinite(obs(x0)))


@pytest.mark.parametrize("name,params", [
    ("spheroid", {"c": 0.0}), ("hyperboloid", {"c": -1.0}), ("polynomial", {"N": 3}),
    ("polynomial", {"n": 1}), ("hypersphere", {"n": 1}), ("circle", {"bogus": 1}),
])
def test_invalid_params(name, params):
    with pytest.raises(ValueError):
        catalog(name, **params)


def test_unknown_name():
    with pytest.raises(KeyError):
        catalog("torus")


# ---------------------------------------------------------------- intrinsic models

def test_sphere_reduction_of_spheroid_model():
    model = catalog("spheroid", c=1.0).intrinsic
    rng = np.random.default_rng(1)
    th = rng.uniform(0.1, np.pi - 0.1, 200)
    u = np.stack([th, rng.uniform(0, 2 * np.pi, 200)], axis=-1)
    np.testing.assert_allclose(model.drift(u, 0.0)[:, 0], 0.5 / np.tan(th), rtol=0, atol=1e-14)
    np.testing.assert_allclose(model.noise_diag(u, 0.0)[:, 0], 1.0, rtol=0, atol=1e-14)
    np.testing.assert_allclose(model.noise_diag(u, 0.0)[:, 1], 1 / np.sin(th), rtol=0,
                               atol=1e-14)
    u = np.array([[np.pi / 4, 0.0]])
    assert model.drift(u, 0.0)[0, 0] == pytest.approx(0.5, abs=1e-15)


def test_spheroid_noise_coefficient():
    model = catalog("spheroid", c=0.25).intrinsic
    expect = 1 / math.sqrt(math.cos(1) ** 2 + 0.0625 * math.sin(1) ** 2)
    assert expect == pytest.approx(1.724699, abs=1e-6)
    assert model.noise_diag(np.array([[1.0, 0.0]]), 0.0)[0, 0] == pytest.approx(expect,
                                                                               abs=1e-14)


def test_hyperboloid_drift_vanishes_at_waist():
    model = catalog("hyperboloid").intrinsic
    assert model.drift(np.array([[0.0, 1.3]]), 0.0)[0, 0] == 0.0


def test_hyperboloid_drift_formula():
    c = 0.25
    model = catalog("hyperboloid", c=c).intrinsic
    v = 0.7
    expect = math.tanh(v) / (c * c - 1 + (c * c + 1) * math.cosh(2 * v))
    assert model.drift(np.array([[v, 0.0]]), 0.0)[0, 0] == pytest.approx(expect, rel=1e-14)


@pytest.mark.parametrize("name", ["polynomial", "hypersphere", "sphere_plane"])
def test_intrinsic_model_not_available(name):
    with pytest.raises(NotAvailableError):
        intrinsic_model(catalog(name))


@pytest.mark.parametrize("name", ["circle", "sphere", "spheroid", "hyperboloid", "catenoid"])
def test_embedding_consistency(name, rng):
    entry = catalog(name)
    model = intrinsic_model(entry)
    lo = np.array([max(r[0], -3.0) for r in model.ranges])
    hi = np.array([min(r[1], 3.0) for r in model.ranges])
    u = rng.uniform(lo, hi, size=(1000, len(lo)))
    x = model.embedding(u)
    assert np.max(max_residual(entry.manifold, x)) <= 1e-12


@pytest.mark.parametrize("name", ["circle", "sphere", "spheroid", "hyperboloid", "catenoid"])
def test_intrinsic_coefficients_finite_off_singular_set(name, rng):
    model = intrinsic_model(catalog(name))
    lo = np.array([max(r[0], -3.0) + 0.05 for r in model.ranges])
    hi = np.array([min(r[1], 3.0) - 0.05 for r in model.ranges])
    u = rng.uniform(lo, hi, size=(500, len(lo)))
    assert np.all(np.isfinite(model.drift(u, 0.3)))
    assert np.all(np.isfinite(model.noise_diag(u, 0.3)))


@given(th=st.floats(-10, 10), ph=st.floats(-10, 10))
def test_pole_wrap_preserves_the_point(th, ph):
    model = catalog("spheroid").intrinsic
    u = np.array([th, ph])
    w = model.wrap(u)
    assert 0 <= w[0] <= np.pi and 0 <= w[1] < 2 * np.pi + 1e-12
    np.testing.assert_allclose(model.embedding(w), model.embedding(u), atol=1e-12)


@pytest.mark.parametrize("name,obs,t_max", [("catenoid", "R2", 1.0), ("sphere", "R2", 1.0)])
def test_intrinsic_and_projected_agree(name, obs, t_max):
    entry = catalog(name)
    f = {obs: entry.observables[obs]}
    ref = integrate_ensemble(entry.intrinsic.to_problem(),
                             StepConfig(0.01, "midpoint_unconstrained"), 20000, t_max, f, 3,
                             output_stride=10, workers=1)
    run = integrate_ensemble(entry.problem, StepConfig(0.05, "cMP"), 20000, t_max, f, 4,
                             output_stride=2, workers=1)
    np.testing.assert_allclose(ref.times, run.times)
    sig = np.hypot(ref.sigmas[obs], run.sigmas[obs])
    assert np.all(np.abs(ref.means[obs] - run.means[obs]) <= 3 * sig + 1e-12)


# ---------------------------------------------------------------- oracles

def test_kubo_moment_examples():
    assert kubo_moment(1, 0.0, 2.5, 1.0) == pytest.approx(1.0)
    expect = math.exp(-0.5) * math.cos(1.25)
    assert expect == pytest.approx(0.191253, abs=1e-6)
    assert kubo_moment(1, 1.0, 2.5, 1.0).real == pytest.approx(expect, abs=1e-15)
    assert kubo_moment(2, 1.0, 0.0, 1.0) == pytest.approx(math.exp(-2.0))


@given(m=st.integers(1, 4), t=st.floats(0, 5), w=st.floats(0, 5), b=st.floats(0, 2))
def test_kubo_moment_closed_form(m, t, w, b):
    expect = cmath.exp(1j * m * w * t * t / 2 - m * m * b * b * t / 2)
    assert complex(kubo_moment(m, t, w, b)) == pytest.approx(expect, abs=1e-12)


def test_msd_oracles():
    assert catenoid_msd(2.5) == 5.0
    assert hypersphere_msd(10, 1e3) == pytest.approx(2.0)
    expect = 2 * (1 - math.exp(-2.25))
    assert expect == pytest.approx(1.789202, abs=1e-6)
    assert hypersphere_msd(10, 0.5) == pytest.approx(expect, abs=1e-15)
    with pytest.raises(ValueError):
        hypersphere_msd(1, 1.0)
