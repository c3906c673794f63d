import numpy as np
import pytest

from projsde import (
    DivergenceError,
    ManifoldSpec,
    NoisePlan,
    SdeProblem,
    StepConfig,
    catalog,
    gaussian_increments,
    integrate_ensemble,
)
from projsde.ensemble import WORKERS_ENV, default_workers, n_steps_for, output_steps
from projsde.stepper import step


def kubo_run(n_traj, workers=1, seed=3, block_size=256, alg="cMP"):
    entry = catalog("kubo")
    return integrate_ensemble(entry.problem, StepConfig(0.05, alg), n_traj, 1.0,
                              entry.observables, seed, workers=workers,
                              block_size=block_size)


def test_single_trajectory_is_bitwise_reproducible():
    a, b = kubo_run(1), kubo_run(1)
    assert a.same_as(b)
    assert a.means["x"].tobytes() == b.means["x"].tobytes()


@pytest.mark.parametrize("workers", [4, 16])
def test_thread_count_independence(workers):
    ref = kubo_run(2000, workers=1)
    assert kubo_run(2000, workers=workers).same_as(ref)


def test_env_var_sets_worker_count(monkeypatch):
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert default_workers() == 3


def test_result_shapes_and_sigma():
    r = kubo_run(3000)
    assert len(r.times) == len(r.means["x"]) == len(r.sigmas["x"]) == len(r.constraint)
    assert np.all(r.sigmas["x"] >= 0)
    assert r.times[0] == 0 and r.times[-1] == pytest.approx(1.0)
    assert r.means["x"][0] == 1.0 and r.sigmas["x"][0] == 0.0


def test_batch_sigma_definition():
    r = kubo_run(3000)
    bm = r.batch_means["x"]
    np.testing.assert_allclose(r.sigmas["x"], bm.std(axis=1, ddof=1) / np.sqrt(10),
                               rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(r.means["x"], bm.mean(axis=1), rtol=1e-12)


def test_output_grid():
    assert output_steps(100) == list(range(0, 101, 2))
    assert output_steps(10, stride=3) == [0, 3, 6, 9, 10]
    assert n_steps_for(5.0, 0.05) == 100
    with pytest.raises(ValueError):
        n_steps_for(1.0, 0.3)


def test_means_follow_first_step_directly():
    # one step, one block: the ensemble mean is the mean of stepped states
    entry = catalog("kubo")
    cfg = StepConfig(0.05, "cMP")
    r = integrate_ensemble(entry.problem, cfg, 100, 0.05, entry.observables, 9,
                           workers=1, block_size=100)
    x0 = entry.problem.initial(100)
    dw = NoisePlan(9, block_size=100).block(0, 0, 1, 0.05)
    x1 = step(entry.problem, x0, 0.0, cfg, dw)
    assert r.means["x"][-1] == pytest.approx(x1[:, 0].mean(), abs=1e-15)


def _arctan_ring():
    # f = arctan(|x|^2 - 1): Newton iteration diverges far from the ring
    def f(x):
        return np.arctan(np.sum(x * x, axis=-1) - 1.0)[..., None]

    def grad(x):
        s = np.sum(x * x, axis=-1) - 1.0
        return (2 * x / (1 + s * s)[..., None])[..., None, :]

    return ManifoldSpec(2, 1, f, grad, name="arctan ring")


def test_divergence_names_trajectory_and_step():
    m = _arctan_ring()

    def noise(x, t):
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        return 3.0 * np.stack([-x[..., 1:2], x[..., 0:1]], axis=-2) / r[..., None]

    p = SdeProblem(lambda x, t: np.zeros_like(x), noise, 1, np.array([1.0, 0.0]), manifold=m)
    cfg = StepConfig(1.0, "cEP")
    with pytest.raises(DivergenceError) as info:
        integrate_ensemble(p, cfg, 500, 2.0, {"x": lambda x: x[..., 0]}, 5, workers=1,
                           block_size=100)
    err = info.value
    assert err.trajectory is not None and err.step is not None
    assert f"trajectory {err.trajectory}" in str(err) and f"step {err.step}" in str(err)
    # replaying that trajectory alone reproduces the failure
    assert err.step == 0
    dw = NoisePlan(5, block_size=100).for_trajectory(err.trajectory)
    with pytest.raises(DivergenceError):
        step(p, np.array([1.0, 0.0]), 0.0, cfg, gaussian_increments(dw, 0, 1, 1.0))
    # every earlier trajectory survives the same step
    for k in range(err.trajectory):
        dwk = gaussian_increments(NoisePlan(5, k, block_size=100), 0, 1, 1.0)
        step(p, np.array([1.0, 0.0]), 0.0, cfg, dwk)


def test_guard_band_rejections_are_counted():
    entry = catalog("spheroid", poles="reject", theta0=0.3)
    p = entry.intrinsic.to_problem()
    r = integrate_ensemble(p, StepConfig(0.01, "midpoint_unconstrained"), 2000, 1.0,
                           {"Theta": entry.observables["Theta"]}, 2, workers=1)
    assert r.rejected > 0
    wrapped = catalog("spheroid", theta0=0.3).intrinsic.to_problem()
    r2 = integrate_ensemble(wrapped, StepConfig(0.01, "midpoint_unconstrained"), 2000, 1.0,
                            {"Theta": entry.observables["Theta"]}, 2, workers=1)
    assert r2.rejected == 0


def test_unconstrained_problem_has_nan_constraint():
    model = catalog("catenoid").intrinsic
    r = integrate_ensemble(model.to_problem(), StepConfig(0.05, "midpoint_unconstrained"), 50,
                           0.5, {"v": lambda x: x[..., 2]}, 1, workers=1)
    assert np.all(np.isnan(r.constraint))


def test_rejects_bad_arguments():
    entry = catalog("kubo")
    with pytest.raises(ValueError):
        integrate_ensemble(entry.problem, StepConfig(0.05), 0, 1.0, entry.observables, 1)
    with pytest.raises(ValueError):
        integrate_ensemble(entry.problem, StepConfig(0.3), 10, 1.0, entry.observables, 1)
