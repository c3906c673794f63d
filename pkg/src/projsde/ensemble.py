"""Parallel Monte Carlo ensembles of projected or intrinsic SDE trajectories."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .geometry import DivergenceError, ProjectionError, max_residual
from .noise import DEFAULT_BLOCK_SIZE, NoisePlan
from .stepper import SdeProblem, StepConfig, step

N_BATCHES = 10
OUTPUT_POINTS = 50
WORKERS_ENV = "PROJSDE_WORKERS"


@dataclass
class EnsembleResult:
    """Ensemble statistics on the output time grid.

    ``sigmas`` are batch-means sampling errors: the standard deviation of
    the sub-ensemble means divided by the square root of the batch count.
    ``constraint`` is the ensemble mean of ``max_j |f^j|`` (NaN for
    problems without a manifold). ``batch_means[name]`` holds the
    sub-ensemble means, shape ``(len(times), n_batches)``.
    """

    times: np.ndarray
    means: dict
    sigmas: dict
    constraint: np.ndarray
    constraint_sigma: np.ndarray
    n_traj: int
    rejected: int = 0
    divergences: int = 0
    meta: dict = field(default_factory=dict)
    batch_means: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        n = len(self.times)
        for series in (*self.means.values(), *self.sigmas.values(),
                       self.constraint, self.constraint_sigma):
            if len(series) != n:
                raise ValueError("all series must match the time grid")

    @property
    def max_constraint(self) -> float:
        return float(np.max(self.constraint))

    def same_as(self, other: "EnsembleResult") -> bool:
        """Bitwise equality of every series (NaNs compare equal)."""
        def eq(a, b):
            return np.asarray(a).tobytes() == np.asarray(b).tobytes()

        return (
            eq(self.times, other.times)
            and self.means.keys() == other.means.keys()
            and all(eq(self.means[k], other.means[k]) for k in self.means)
            and all(eq(self.sigmas[k], other.sigmas[k]) for k in self.sigmas)
            and eq(self.constraint, other.constraint)
            and eq(self.constraint_sigma, other.constraint_sigma)
            and self.rejected == other.rejected
        )


def output_steps(n_steps: int, output_points: int = OUTPUT_POINTS, stride=None):
    if stride is None:
        stride = max(1, n_steps // max(1, output_points))
    steps = list(range(0, n_steps + 1, stride))
    if steps[-1] != n_steps:
        steps.append(n_steps)
    return steps


def n_steps_for(t_max: float, dt: float) -> int:
    n = int(round(t_max / dt))
    if n < 1 or abs(n * dt - t_max) > 1e-9 * max(1.0, t_max):
        raise ValueError(f"t_max={t_max} is not a whole number of steps of dt={dt}")
    return n


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _batch_stats(sums, counts):
    # sums (..., n_batches), counts (n_batches,)
    total = sums.sum(axis=-1) / counts.sum(axis=-1)
    used = counts > 0
    k = int(np.count_nonzero(used))
    if k < 2:
        return total, np.full_like(total, np.nan)
    bm = sums[..., used] / counts[used]
    return total, bm.std(axis=-1, ddof=1) / math.sqrt(k)


def integrate_ensemble(
    problem: SdeProblem,
    cfg: StepConfig,
    n_traj: int,
    t_max: float,
    observables: dict,
    seed: int,
    *,
    stream: int = 0,
    output_points: int = OUTPUT_POINTS,
    output_stride: int | None = None,
    workers: int | None = None,
    block_size: int = DEFAULT_BLOCK_SIZE,
    n_batches: int = N_BATCHES,
    substeps: int = 1,
) -> EnsembleResult:
    """Integrate ``n_traj`` independent trajectories up to ``t_max``.

    Trajectories are processed in fixed blocks of ``block_size``; per-block
    partial sums are reduced in block order, so the result is bit-identical
    for any number of ``workers``. ``substeps`` builds each increment from
    that many finer ones (see ``NoisePlan``) to couple runs at different
    step-sizes.

    Raises
    ------
    DivergenceError, ProjectionError
        From any trajectory; ``trajectory`` and ``step`` name the first
        failure found in block order.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be positive")
    n_steps = n_steps_for(t_max, cfg.dt)
    out = output_steps(n_steps, output_points, output_stride)
    out_index = {k: i for i, k in enumerate(out)}
    names = list(observables)
    plan = NoisePlan(seed, stream=stream, block_size=block_size, substeps=substeps)
    n_blocks = math.ceil(n_traj / block_size)
    s = problem.noise_dim
    dt = cfg.dt

    def run_block(b):
        lo = b * block_size
        rows = min(n_traj, lo + block_size) - lo
        init_rng = np.random.Generator(np.random.Philox(
            np.random.SeedSequence([seed, stream, b, 2**32])))
        x = problem.initial(rows, init_rng)
        alive = np.ones(rows, dtype=bool)
        batch = (np.arange(lo, lo + rows) * n_batches) // n_traj
        obs_sums = np.zeros((len(out), len(names), n_batches))
        res_sums = np.zeros((len(out), n_batches))
        counts = np.zeros((len(out), n_batches))
        rejected = 0

        def record(i):
            xa = x if alive.all() else x[alive]
            ba = batch if alive.all() else batch[alive]
            amb = problem.embedding(xa) if problem.embedding is not None else xa
            counts[i] = np.bincount(ba, minlength=n_batches)
            for j, name in enumerate(names):
                obs_sums[i, j] = np.bincount(ba, weights=observables[name](amb),
                                             minlength=n_batches)
            if problem.manifold is not None:
                res_sums[i] = np.bincount(ba, weights=max_residual(problem.manifold, xa),
                                          minlength=n_batches)
            else:
                res_sums[i] = np.nan

        record(0)
        for k in range(n_steps):
            dw = plan.block(b, k, s, dt)[:rows]
            idx = None if alive.all() else np.flatnonzero(alive)
            try:
                if idx is None:
                    x = step(problem, x, k * dt, cfg, dw)
                else:
                    x[idx] = step(problem, x[idx], k * dt, cfg, dw[idx])
            except ProjectionError as err:
                local = getattr(err, "index", None) or 0
                if idx is not None:
                    local = int(idx[local])
                err.trajectory = lo + local
                err.step = k
                err.args = (f"{err.args[0]} [trajectory {lo + local}, step {k}]",)
                raise
            if problem.wrap is not None:
                x = problem.wrap(x)
            if problem.domain is not None:
                sel = np.flatnonzero(alive)
                bad = sel[~problem.domain(x[sel])]
                if bad.size:
                    alive[bad] = False
                    rejected += int(bad.size)
            if k + 1 in out_index:
                record(out_index[k + 1])
        return obs_sums, res_sums, counts, rejected

    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or n_blocks == 1:
        parts = [run_block(b) for b in range(n_blocks)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run_block, range(n_blocks)))

    obs_sums, res_sums, counts = (p.copy() for p in parts[0][:3])
    rejected = parts[0][3]
    for part in parts[1:]:
        obs_sums += part[0]
        res_sums += part[1]
        counts += part[2]
        rejected += part[3]

    means, sigmas, batch_means = {}, {}, {}
    with np.errstate(invalid="ignore", divide="ignore"):
        for j, name in enumerate(names):
            mu, sig = zip(*(_batch_stats(obs_sums[i, j], counts[i]) for i in range(len(out))))
            means[name] = np.array(mu)
            sigmas[name] = np.array(sig)
            batch_means[name] = obs_sums[:, j] / counts
    mu, sig = zip(*(_batch_stats(res_sums[i], counts[i]) for i in range(len(out))))
    return EnsembleResult(
        times=np.array(out, dtype=float) * dt,
        means=means,
        sigmas=sigmas,
        constraint=np.array(mu),
        constraint_sigma=np.array(sig),
        n_traj=n_traj,
        rejected=rejected,
        meta={
            "algorithm": cfg.algorithm,
            "dt": dt,
            "t_max": t_max,
            "seed": seed,
            "stream": stream,
            "midpoint_iters": cfg.midpoint_iters,
            "normal_iters": cfg.normal_iters,
            "problem": problem.name,
            "substeps": substeps,
        },
        batch_means=batch_means,
    )


__all__ = ["EnsembleResult", "integrate_ensemble", "DivergenceError"]
