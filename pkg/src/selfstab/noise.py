"""Reproducible Gaussian increment streams for Monte Carlo.

Every (trial, particle) pair owns an independent stream derived from the
base seed through a counter-based generator (Philox keyed by hashing the
triple). The increment at step s is a pure function of
(base_seed, trial, particle, s): raw 64-bit counter outputs are mapped
to uniforms and through the inverse normal CDF, so streams can be
generated in chunks, in any order, on any worker layout, and always
agree bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.random import Philox, SeedSequence
from scipy.special import ndtri

__all__ = ["NoisePlan"]

_INV_2_53 = 2.0 ** -53
_HALF_ULP = 2.0 ** -54
_RAW_PER_BLOCK = 4  # Philox advances its counter in blocks of 4 outputs


@dataclass(frozen=True)
class NoisePlan:
    """Seeded derivation rule for per-(trial, particle) Gaussian streams."""

    base_seed: int
    dt: float

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    def stream_key(self, trial, particle):
        return SeedSequence([int(self.base_seed), int(trial), int(particle)]).generate_state(
            2, dtype=np.uint64
        )

    def _raw(self, trial, particle, start, count):
        bg = Philox(key=self.stream_key(trial, particle))
        skip_blocks, misalign = divmod(start, _RAW_PER_BLOCK)
        if skip_blocks:
            bg.advance(skip_blocks)
        raw = bg.random_raw(misalign + count)
        return raw[misalign:]

    def gaussian_increments(self, trial, particle, n_steps, dim, start_step=0):
        """Standard normal increments, shape (n_steps, dim).

        Step s of the returned array is the stream's absolute step
        start_step + s, regardless of chunking.
        """
        raw = self._raw(trial, particle, start_step * dim, n_steps * dim)
        u = (raw >> np.uint64(11)).astype(np.float64) * _INV_2_53 + _HALF_ULP
        return ndtri(u).reshape(n_steps, dim)

    def gaussian_block(self, trials, particle, start_step, n_steps, dim):
        """Increments for several trials at once: (n_steps, n_trials, dim)."""
        trials = np.asarray(trials)
        out = np.empty((n_steps, len(trials), dim))
        for j, trial in enumerate(trials):
            out[:, j, :] = self.gaussian_increments(int(trial), particle, n_steps, dim,
                                                    start_step=start_step)
        return out

    def particle_block(self, trial, particles, start_step, n_steps, dim):
        """Increments for several particles of one trial: (n_steps, n_particles, dim)."""
        particles = np.asarray(particles)
        out = np.empty((n_steps, len(particles), dim))
        for j, p in enumerate(particles):
            out[:, j, :] = self.gaussian_increments(trial, int(p), n_steps, dim,
                                                    start_step=start_step)
        return out
