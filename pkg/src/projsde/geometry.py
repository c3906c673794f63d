"""Constraint geometry: gradients, normal frames and the two projections.

Every function accepts a single point of shape ``(n,)`` or a batch of points
of shape ``(N, n)``; batched inputs are processed without Python loops over
the batch axis so that whole ensembles can be projected at once.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

TOL_RANK = 1e-10
TOL_CONSTRAINT = 1e-10
DIVERGENCE_FLOOR = 1e-12


class ProjectionError(ArithmeticError):
    """Base class for failures of the tangential or normal projection."""


class InvalidStateError(ValueError):
    """Raised for non-finite or wrongly shaped states."""


class RankDeficiencyError(ProjectionError):
    """Constraint gradients are (numerically) linearly dependent.

    Attributes
    ----------
    row : int
        Index of the gradient row that collapsed during orthonormalization.
    index : int or None
        Batch index of the offending point, if the input was batched.
    """

    def __init__(self, message, row, index=None):
        super().__init__(message)
        self.row = row
        self.index = index


class SingularPointError(RankDeficiencyError):
    """Rank deficiency met while iterating a normal projection."""


class DivergenceError(ProjectionError):
    """The normal projection fixed-point iteration stopped contracting.

    ``trajectory`` and ``step`` are filled in by the ensemble integrator.
    """

    def __init__(self, message, index=None, trajectory=None, step=None):
        super().__init__(message)
        self.index = index
        self.trajectory = trajectory
        self.step = step


@dataclass(frozen=True)
class ManifoldSpec:
    """Implicit manifold ``f(x) = 0`` with ``f: R^n -> R^p``.

    ``constraint_eval`` maps ``(..., n)`` to ``(..., p)`` and
    ``gradient_eval`` maps ``(..., n)`` to ``(..., p, n)``, row ``j`` being
    the gradient of ``f^j``.
    """

    ambient_dim: int
    num_constraints: int
    constraint_eval: Callable[[np.ndarray], np.ndarray]
    gradient_eval: Callable[[np.ndarray], np.ndarray]
    exact_normal_projection: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "manifold"

    def __post_init__(self):
        if self.ambient_dim < 1:
            raise ValueError("ambient_dim must be positive")
        if not 1 <= self.num_constraints <= self.ambient_dim - 1:
            raise ValueError(
                f"num_constraints must lie in [1, {self.ambient_dim - 1}], "
                f"got {self.num_constraints}"
            )


@dataclass(frozen=True)
class QuadraticConstraint:
    """Scalar constraint ``f(y) = f0 + h.y + y^T G y``.

    ``G`` is symmetrized on construction, so the gradient is ``h + 2 G y``.
    """

    f0: float
    h: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        G = np.asarray(self.G, dtype=float)
        if G.ndim != 2 or G.shape[0] != G.shape[1] or h.shape != (G.shape[0],):
            raise ValueError("G must be n x n and h of length n")
        object.__setattr__(self, "f0", float(self.f0))
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "G", 0.5 * (G + G.T))

    @property
    def dim(self):
        return self.h.shape[0]

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        return self.f0 + y @ self.h + np.einsum("...i,ij,...j->...", y, self.G, y)

    def gradient(self, y):
        y = np.asarray(y, dtype=float)
        return self.h + 2.0 * (y @ self.G)


@dataclass(frozen=True)
class NormalFrame:
    """Orthonormalized constraint gradients at one point (or a batch).

    ``projection_matrix[..., i, j]`` is ``raw_gradients[..., i, :] .
    normals[..., j, :]``; with Gram-Schmidt ordering it is lower triangular.
    """

    normals: np.ndarray
    raw_gradients: np.ndarray
    projection_matrix: np.ndarray = field(repr=False)


def _as_state(x, n=None):
    x = np.asarray(x, dtype=float)
    if x.ndim not in (1, 2):
        raise InvalidStateError(f"state must be 1-d or 2-d, got shape {x.shape}")
    if n is not None and x.shape[-1] != n:
        raise InvalidStateError(
            f"state has dimension {x.shape[-1]}, manifold expects {n}"
        )
    if not np.all(np.isfinite(x)):
        bad = np.argwhere(~np.isfinite(np.atleast_2d(x)).all(axis=-1))
        raise InvalidStateError(f"non-finite state at batch index {bad[0, 0]}")
    return x


def eval_constraints(m: ManifoldSpec, x) -> np.ndarray:
    """Constraint values ``f(x)``, shape ``(..., p)``."""
    x = _as_state(x, m.ambient_dim)
    return np.asarray(m.constraint_eval(x), dtype=float)


def constraint_gradients(m: ManifoldSpec, x) -> np.ndarray:
    """Gradient rows ``grad f^j(x)``, shape ``(..., p, n)``."""
    x = _as_state(x, m.ambient_dim)
    return np.asarray(m.gradient_eval(x), dtype=float)


def max_residual(m: ManifoldSpec, x) -> np.ndarray:
    """``max_j |f^j(x)|`` per point."""
    return np.max(np.abs(eval_constraints(m, x)), axis=-1)


def orthonormalize(V, tol_rank: float = TOL_RANK) -> NormalFrame:
    """Modified Gram-Schmidt on the rows of ``V`` (shape ``(..., p, n)``).

    Raises
    ------
    RankDeficiencyError
        If a row's remaining norm falls below ``tol_rank`` times the
        largest input row norm at that point.
    """
    V = np.asarray(V, dtype=float)
    if V.ndim < 2:
        raise ValueError("V must have shape (..., p, n)")
    if not np.all(np.isfinite(V)):
        raise InvalidStateError("non-finite gradient rows")
    p = V.shape[-2]
    Q = V.copy()
    scale = np.max(np.linalg.norm(V, axis=-1), axis=-1)
    for i in range(p):
        qi = Q[..., i, :]
        norm = np.linalg.norm(qi, axis=-1)
        small = ~(norm > tol_rank * scale)
        if np.any(small):
            idx = None
            if small.ndim:
                idx = int(np.flatnonzero(small)[0])
            where = "" if idx is None else f" at batch index {idx}"
            raise RankDeficiencyError(
                f"gradient row {i} is linearly dependent on earlier rows{where}",
                row=i,
                index=idx,
            )
        qi /= norm[..., None]
        for j in range(i + 1, p):
            Q[..., j, :] -= np.sum(Q[..., j, :] * qi, axis=-1)[..., None] * qi
    M = np.einsum("...ik,...jk->...ij", V, Q)
    return NormalFrame(normals=Q, raw_gradients=V, projection_matrix=M)


def normal_frame(m: ManifoldSpec, x, tol_rank: float = TOL_RANK) -> NormalFrame:
    return orthonormalize(constraint_gradients(m, x), tol_rank)


def _remove_normals(delta, normals):
    coeff = np.einsum("...jk,...k->...j", normals, delta)
    return delta - np.einsum("...j,...jk->...k", coeff, normals)


def tangential_project(delta, x, m: ManifoldSpec, tol_rank: float = TOL_RANK):
    """Remove from ``delta`` every component along the normals at ``x``."""
    delta = np.asarray(delta, dtype=float)
    frame = normal_frame(m, x, tol_rank)
    return _remove_normals(delta, frame.normals)


def normal_project(
    x,
    m: ManifoldSpec,
    max_iters: int = 3,
    tol_rank: float = TOL_RANK,
    divergence_floor: float = DIVERGENCE_FLOOR,
    use_exact: bool = True,
):
    """Project ``x`` onto the manifold along the normal directions.

    Each pass solves the linearized constraint for Lagrange multipliers with
    the frame and ``M`` evaluated at the current iterate,
    ``y <- y - sum_ij n^i [M^-1]_ij f^j(y)``.  If the manifold supplies an
    exact projection (and ``use_exact`` is true) that is returned instead.

    Raises
    ------
    SingularPointError
        Gradients lose rank at an iterate.
    DivergenceError
        ``max_j |f^j|`` becomes non-finite or ends above its starting
        value (growth below ``divergence_floor`` is roundoff and ignored).
        Intermediate overshoots are tolerated. A smaller step-size is needed.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    y = _as_state(x, m.ambient_dim).copy()
    if use_exact and m.exact_normal_projection is not None:
        return np.asarray(m.exact_normal_projection(y), dtype=float)
    f = np.asarray(m.constraint_eval(y), dtype=float)
    start = np.max(np.abs(f), axis=-1)
    for it in range(max_iters):
        try:
            frame = normal_frame(m, y, tol_rank)
        except RankDeficiencyError as err:
            raise SingularPointError(
                f"singular point during normal projection (iteration {it}): {err}",
                row=err.row,
                index=err.index,
            ) from err
        lam = np.linalg.solve(frame.projection_matrix, f[..., None])[..., 0]
        y = y - np.einsum("...i,...ik->...k", lam, frame.normals)
        f = np.asarray(m.constraint_eval(y), dtype=float)
        new = np.max(np.abs(f), axis=-1)
        # Newton overshoots are transient; only net growth counts as divergence
        grew = np.zeros_like(new, dtype=bool)
        if it + 1 == max_iters:
            grew = (new > start) & (new > divergence_floor)
        bad = ~np.isfinite(new) | grew
        if np.any(bad):
            flat = np.atleast_1d(bad)
            idx = int(np.flatnonzero(flat)[0])
            raise DivergenceError(
                f"normal projection diverged at iteration {it + 1} "
                f"(max|f| {np.atleast_1d(start)[idx]:.3g} -> "
                f"{np.atleast_1d(new)[idx]:.3g}); reduce the step-size",
                index=idx if bad.ndim else None,
            )
    return y
