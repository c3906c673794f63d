import numpy as np
import pytest
from hypothesis import given, strategies as st

from projsde import NoisePlan, gaussian_increments
from projsde.noise import stream_id

N = 10**6
DT = 0.05


def big_sample(seed=7, s=2):
    plan = NoisePlan(seed, block_size=N)
    return plan.block(0, 3, s, DT)


@given(seed=st.integers(0, 2**64 - 1), traj=st.integers(0, 10**9), step=st.integers(0, 10**6))
def test_increments_reproducible(seed, traj, step):
    a = gaussian_increments(NoisePlan(seed, traj), step, 3, DT)
    b = gaussian_increments(NoisePlan(seed, traj), step, 3, DT)
    assert a.tobytes() == b.tobytes()


def test_trajectory_row_matches_block():
    plan = NoisePlan(11, block_size=64)
    block = plan.block(2, 5, 3, DT)
    for row in (0, 17, 63):
        np.testing.assert_array_equal(
            gaussian_increments(plan.for_trajectory(2 * 64 + row), 5, 3, DT), block[row])


def test_distinct_keys_give_distinct_draws():
    base = gaussian_increments(NoisePlan(1, 0), 0, 4, DT)
    for other in (NoisePlan(2, 0), NoisePlan(1, 1), NoisePlan(1, 0, stream=9)):
        assert not np.array_equal(base, gaussian_increments(other, 0, 4, DT))
    assert not np.array_equal(base, gaussian_increments(NoisePlan(1, 0), 1, 4, DT))


def test_sample_mean_and_variance():
    dw = big_sample()
    assert np.all(np.abs(dw.mean(axis=0)) <= 5 * np.sqrt(DT / N))
    var = dw.var(axis=0)
    # 5-sigma band of the sample variance, dt * (1 +- 5 sqrt(2/N)), rounded inward
    assert DT * 5 * np.sqrt(2 / N) == pytest.approx(0.00035, abs=5e-6)
    assert np.all((var > 0.04965) & (var < 0.05035))


def test_cross_covariance():
    dw = big_sample(seed=8, s=3)
    cov = np.cov(dw.T)
    off = cov[~np.eye(3, dtype=bool)]
    assert np.all(np.abs(off) <= 5 * DT / np.sqrt(N))


def test_gaussian_increments_rejects_bad_dt():
    with pytest.raises(ValueError):
        gaussian_increments(NoisePlan(0), 0, 1, 0.0)


def test_substeps_sum_fine_increments():
    coarse = NoisePlan(5, stream=3, block_size=32, substeps=5)
    fine = NoisePlan(5, stream=3, block_size=32)
    expect = sum(fine.block(1, 10 + j, 2, DT / 5) for j in range(5))
    np.testing.assert_allclose(coarse.block(1, 2, 2, DT), expect, rtol=0, atol=1e-15)


def test_stream_id_is_stable():
    assert stream_id("cMP:0.05") == stream_id("cMP:0.05")
    assert stream_id("cMP:0.05") != stream_id("cEP:0.05")
    assert 0 <= stream_id("x") < 2**32
