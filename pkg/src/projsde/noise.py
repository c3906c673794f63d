"""Reproducible Gaussian increments addressed by (seed, trajectory, step).

Trajectories are grouped in fixed blocks of ``block_size``. Each block owns a
Philox key derived from ``(seed, stream, block)`` and each step selects a
disjoint region of the 256-bit Philox counter, so any increment can be
regenerated directly without replaying earlier steps, and the values do not
depend on how blocks are distributed among workers.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

DEFAULT_BLOCK_SIZE = 4096


def stream_id(label: str) -> int:
    """Stable 32-bit id for a stream label (unlike ``hash``, fixed across runs)."""
    return zlib.crc32(label.encode("utf-8"))


@dataclass(frozen=True)
class NoisePlan:
    seed: int
    trajectory_index: int = 0
    stream: int = 0
    block_size: int = DEFAULT_BLOCK_SIZE
    substeps: int = 1

    def __post_init__(self):
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.block_size < 1:
            raise ValueError("block_size must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be positive")

    def _generator(self, block: int, step: int) -> np.random.Generator:
        key = np.random.SeedSequence([self.seed, self.stream, block]).generate_state(
            2, np.uint64
        )
        counter = np.array([0, 0, step, 0], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(counter=counter, key=key))

    def block(self, block: int, step: int, s: int, dt: float) -> np.ndarray:
        """Increments for every trajectory of ``block`` at ``step``: ``(block_size, s)``.

        With ``substeps = r`` each increment is the sum of the ``r`` increments
        a plan with ``substeps = 1`` draws at steps ``r*step ... r*step + r - 1``
        with step-size ``dt / r``, so coarse and fine runs share one Brownian
        path.
        """
        if self.substeps == 1:
            z = self._generator(block, step).standard_normal((self.block_size, s))
            return np.sqrt(dt) * z
        fine = NoisePlan(self.seed, self.trajectory_index, self.stream, self.block_size)
        r = self.substeps
        out = fine.block(block, r * step, s, dt / r)
        for j in range(1, r):
            out += fine.block(block, r * step + j, s, dt / r)
        return out

    def for_trajectory(self, trajectory_index: int) -> "NoisePlan":
        return NoisePlan(self.seed, trajectory_index, self.stream, self.block_size,
                         self.substeps)


def gaussian_increments(plan: NoisePlan, step_index: int, s: int, dt: float) -> np.ndarray:
    """Wiener increments with covariance ``dt * I`` for one trajectory and step."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    block, row = divmod(plan.trajectory_index, plan.block_size)
    return plan.block(block, step_index, s, dt)[row]
