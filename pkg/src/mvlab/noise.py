"""Counter-based Brownian increment streams.

All randomness in the library flows through a NoisePlan.  Increments are
generated with the Philox counter-based generator keyed by
(seed, stream kind, sub-stream id) with the step index placed in the
counter, so the increment consumed by row i at step j of stream (kind,
subid) is a pure function of (seed, kind, subid, step, i) -- independent of
how many rows are drawn, of earlier draws, and of any worker count.  Rows
index particles in cloud streams and replicas in coupling streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from numpy.random import Generator, Philox

_MASK64 = (1 << 64) - 1


class Stream(IntEnum):
    """Stream kinds.  subid distinguishes replicas within a kind."""

    INIT = 0            # initial-condition sampling
    W = 1               # per-particle driving noise (cloud runs)
    WTILDE = 2          # per-particle measure-noise (cloud runs)
    SHARED_WTILDE = 3   # shared measure-noise for conditioned runs; rows = replicas
    COUPLING_W = 4      # driving noise of coupled pairs; rows = replicas


@dataclass(frozen=True)
class NoisePlan:
    """Two independent Brownian families on a fixed uniform grid.

    seed     64-bit master seed
    h        step size
    n_steps  number of steps; the horizon is T = n_steps * h
    """

    seed: int
    h: float
    n_steps: int

    def __post_init__(self):
        if self.h <= 0 or self.n_steps < 0:
            raise ValueError("need h > 0 and n_steps >= 0")

    @property
    def horizon(self) -> float:
        return self.h * self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.h

    def _generator(self, kind: int, step: int, subid: int) -> Generator:
        key = [self.seed & _MASK64, ((int(kind) << 32) | (subid & 0xFFFFFFFF)) & _MASK64]
        # counter word 0 advances during generation; step isolated in word 1
        return Generator(Philox(counter=[0, step, 0, 0], key=key))

    def gauss(self, kind: int, step: int, shape: tuple[int, ...], subid: int = 0) -> np.ndarray:
        """Standard-normal block for (kind, subid) at the given step."""
        return self._generator(kind, step, subid).standard_normal(shape)

    def uniform(self, kind: int, step: int, shape: tuple[int, ...], subid: int = 0) -> np.ndarray:
        return self._generator(kind, step, subid).random(shape)

    def brownian(self, kind: int, step: int, rows: int, dim: int, subid: int = 0) -> np.ndarray:
        """(rows, dim) Brownian increments ~ N(0, h I) for one step."""
        return self.gauss(kind, step, (rows, dim), subid) * math.sqrt(self.h)

    def brownian_path(self, kind: int, rows: int, dim: int, subid: int = 0,
                      n_steps: int | None = None) -> np.ndarray:
        """(n_steps, rows, dim) increments for steps 0..n_steps-1."""
        steps = self.n_steps if n_steps is None else n_steps
        out = np.empty((steps, rows, dim))
        for j in range(steps):
            out[j] = self.brownian(kind, j, rows, dim, subid)
        return out

    def restricted(self, n_steps: int) -> "NoisePlan":
        """Same streams truncated to a shorter horizon."""
        if n_steps > self.n_steps:
            raise ValueError("cannot extend a plan")
        return NoisePlan(self.seed, self.h, n_steps)
