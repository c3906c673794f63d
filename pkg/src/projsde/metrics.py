"""Distances, truncation errors and per-algorithm error tables."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

REFERENCE_RATIO = 5


def euclidean_dist_sq(x, y):
    """Squared Euclidean distance along the last axis."""
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return np.sum(d * d, axis=-1)


def great_circle_dist(x, y, G=None):
    """``arccos(x^T G y)`` with the argument clamped to ``[-1, 1]``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if G is None:
        c = np.sum(x * y, axis=-1)
    else:
        c = np.einsum("...i,ij,...j->...", x, np.asarray(G, dtype=float), y)
    return np.arccos(np.clip(c, -1.0, 1.0))


def truncation_error(series, reference, times=None, ref_times=None):
    """Signed error ``series - reference`` and its maximum magnitude.

    Raises ``ValueError`` if the two time grids differ.
    """
    series = np.asarray(series, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if series.shape != reference.shape:
        raise ValueError(f"grid mismatch: {series.shape} vs {reference.shape}")
    if times is not None and ref_times is not None:
        if not np.allclose(times, ref_times, rtol=0, atol=1e-9):
            raise ValueError("grid mismatch: time points differ")
    err = series - reference
    return err, float(np.max(np.abs(err)))


@dataclass
class ReferenceSeries:
    """Reference means on a time grid (``source`` is oracle/intrinsic/fine-step)."""

    times: np.ndarray
    means: dict
    sigmas: dict
    source: str
    dt: float | None = None
    rejected: int = 0
    batch_means: dict = field(default_factory=dict, repr=False)


@dataclass(frozen=True)
class ErrorRow:
    observable: str
    dt: float
    algorithm: str
    max_error: float
    max_constraint: float
    sigma: float


@dataclass
class ErrorTable:
    """Maximum-over-time truncation and constraint errors per (observable, dt, algorithm)."""

    rows: list
    meta: dict
    results: dict = field(default_factory=dict, repr=False)
    references: dict = field(default_factory=dict, repr=False)

    def get(self, observable, dt, algorithm) -> ErrorRow:
        for r in self.rows:
            if r.observable == observable and np.isclose(r.dt, dt) and r.algorithm == algorithm:
                return r
        raise KeyError((observable, dt, algorithm))


def resolve_reference_mode(entry, mode="auto", observables=None):
    names = list(observables or entry.observables)
    if mode == "auto":
        if all(k in entry.oracles for k in names):
            return "oracle"
        if entry.intrinsic is not None:
            return "intrinsic"
        return "fine"
    if mode == "oracle" and not all(k in entry.oracles for k in names):
        raise LookupError(f"no exact oracle for {entry.name!r}")
    if mode == "intrinsic" and entry.intrinsic is None:
        raise LookupError(f"no intrinsic model for {entry.name!r}")
    if mode not in ("oracle", "intrinsic", "fine"):
        raise ValueError(f"unknown reference mode {mode!r}")
    return mode


def compute_reference(entry, mode, dt, n_traj, t_max, seed, output_stride,
                      observables=None, ratio=REFERENCE_RATIO, midpoint_iters=3,
                      normal_iters=3, workers=None, stream_label=None):
    """Reference series on the grid ``k * output_stride * dt``.

    Simulated references run at ``dt / ratio`` with the output stride scaled
    so that the two grids coincide.
    """
    from .ensemble import integrate_ensemble, n_steps_for, output_steps
    from .noise import stream_id
    from .stepper import StepConfig

    names = list(observables or entry.observables)
    obs = {k: entry.observables[k] for k in names}
    if mode == "oracle":
        n_steps = n_steps_for(t_max, dt)
        times = np.array(output_steps(n_steps, stride=output_stride), dtype=float) * dt
        means = {k: np.asarray(entry.oracles[k](times), dtype=float) for k in names}
        return ReferenceSeries(times, means, {k: np.zeros_like(times) for k in names},
                               "oracle")
    fine = dt / ratio
    if mode == "intrinsic":
        problem = entry.intrinsic.to_problem(entry.name + "-intrinsic")
        algorithm = "midpoint_unconstrained"
    else:
        problem = entry.problem
        algorithm = "cMP"
    cfg = StepConfig(fine, algorithm, midpoint_iters, normal_iters)
    res = integrate_ensemble(
        problem, cfg, n_traj, t_max, obs, seed,
        stream=stream_id(stream_label or f"reference:{mode}:{fine!r}"),
        output_stride=output_stride * ratio, workers=workers,
    )
    return ReferenceSeries(res.times, res.means, res.sigmas, mode, fine, res.rejected,
                           res.batch_means)


def _nanmax(a):
    a = np.asarray(a, dtype=float)
    return float(np.nanmax(a)) if np.any(np.isfinite(a)) else float("nan")


def _difference_sigma(bm_a, bm_b):
    # batch-means error of a paired difference, per time point
    d = np.asarray(bm_a) - np.asarray(bm_b)
    k = np.sum(np.isfinite(d), axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.nanstd(d, axis=-1, ddof=1) / np.sqrt(k)


def build_error_table(entry, algorithms, dt_list, n_traj, t_max, seed,
                      reference="auto", observables=None, output_points=50,
                      midpoint_iters=3, normal_iters=3, common_random_numbers=False,
                      workers=None, ref_n_traj=None, references=None,
                      output_stride=None) -> ErrorTable:
    """Run every (algorithm, dt) pair against a reference and tabulate max errors.

    The reference is the exact oracle when one exists, else an intrinsic
    midpoint simulation at ``dt/5``, else cMP at ``dt/5``. Precomputed
    references (``{dt: ReferenceSeries}``) are used as given.

    With ``common_random_numbers`` all algorithms at one ``dt`` share a noise
    stream; a fine-step cMP reference is then driven by the same Brownian
    path (each coarse increment is the sum of the fine ones) and ``sigma``
    is the batch-means error of the difference itself.
    """
    from .ensemble import integrate_ensemble, n_steps_for
    from .noise import stream_id
    from .stepper import StepConfig

    names = list(observables or entry.observables)
    obs = {k: entry.observables[k] for k in names}
    mode = resolve_reference_mode(entry, reference, names)
    rows, results, refs = [], {}, {}
    coupled = common_random_numbers and mode == "fine" and ref_n_traj in (None, n_traj)
    for dt in dt_list:
        n_steps = n_steps_for(t_max, dt)
        stride = output_stride or max(1, n_steps // max(1, output_points))
        ref = (references or {}).get(dt)
        if ref is None:
            ref = compute_reference(entry, mode, dt, ref_n_traj or n_traj, t_max, seed,
                                    stride, names, midpoint_iters=midpoint_iters,
                                    normal_iters=normal_iters, workers=workers,
                                    stream_label=f"{dt!r}" if coupled else None)
        refs[dt] = ref
        for alg in algorithms:
            cfg = StepConfig(dt, alg, midpoint_iters, normal_iters)
            label = f"{dt!r}" if common_random_numbers else f"{alg}:{dt!r}"
            res = integrate_ensemble(entry.problem, cfg, n_traj, t_max, obs, seed,
                                     stream=stream_id(label), output_stride=stride,
                                     workers=workers,
                                     substeps=REFERENCE_RATIO if coupled else 1)
            results[(alg, dt)] = res
            for k in names:
                _, emax = truncation_error(res.means[k], ref.means[k], res.times, ref.times)
                if coupled and k in ref.batch_means:
                    sig = _difference_sigma(res.batch_means[k], ref.batch_means[k])
                else:
                    sig = np.sqrt(res.sigmas[k] ** 2 + ref.sigmas[k] ** 2)
                rows.append(ErrorRow(k, dt, alg, emax, res.max_constraint, _nanmax(sig)))
    meta = {
        "manifold": entry.name,
        "params": dict(entry.params),
        "n_traj": n_traj,
        "t_max": t_max,
        "seed": seed,
        "reference": mode,
        "midpoint_iters": midpoint_iters,
        "normal_iters": normal_iters,
        "common_random_numbers": common_random_numbers,
    }
    return ErrorTable(rows, meta, results, refs)
