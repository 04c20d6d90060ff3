# models/rng.py
"""
Counter-based random numbers. Every draw is a pure function of
(seed, domain, counter, index, axis), so serial and parallel runs, and runs
split across any number of workers, see exactly the same numbers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Draw domains keep independent uses of one seed apart.
BROWNIAN = 0
SAMPLING = 1
AUGMENT = 2
SHUFFLE = 3
INIT = 4

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TWO_POW_M53 = 2.0 ** -53


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = x + _GOLDEN
        z = (z ^ (z >> _S30)) * _MIX1
        z = (z ^ (z >> _S27)) * _MIX2
        return z ^ (z >> _S31)


def _hash(*keys) -> np.ndarray:
    """Chain splitmix64 over broadcast uint64 keys."""
    arrays = np.broadcast_arrays(*[np.atleast_1d(np.asarray(k, dtype=np.uint64)) for k in keys])
    h = _splitmix64(arrays[0].copy())
    for k in arrays[1:]:
        h = _splitmix64(h ^ k)
    return h


def _unit_open(h: np.ndarray) -> np.ndarray:
    # top 53 bits mapped to (0, 1]
    return ((h >> _S11).astype(np.float64) + 1.0) * _TWO_POW_M53


@dataclass(frozen=True)
class RngStream:
    seed: int = 0

    def uniforms(self, domain: int, counter, index, axis) -> np.ndarray:
        """Uniforms in (0, 1] keyed by broadcastable (counter, index, axis)."""
        return _unit_open(_hash(self.seed, domain, counter, index, axis))

    def standard_normals(self, domain: int, counter, index, axis) -> np.ndarray:
        """Box-Muller normals from two keyed uniforms."""
        axis = np.asarray(axis, dtype=np.uint64)
        u1 = self.uniforms(domain, counter, index, axis * np.uint64(2))
        u2 = self.uniforms(domain, counter, index, axis * np.uint64(2) + np.uint64(1))
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    def normals(self, step: int, count: int) -> np.ndarray:
        """(count, 3) Brownian normals N_n^p for time step `step`."""
        p = np.arange(count, dtype=np.uint64)[:, None]
        axis = np.arange(3, dtype=np.uint64)[None, :]
        return self.standard_normals(BROWNIAN, step, p, axis)

    def coupled_normals(self, time: float, dt: float, base_dt: float, count: int) -> np.ndarray:
        """
        Normals for a step of size dt starting at `time`, built from the
        base_dt-resolution increments that cover the same time interval.
        Runs at different dt therefore share their Brownian paths.
        """
        ratio = dt / base_dt
        steps = int(round(ratio))
        if steps < 1 or abs(ratio - steps) > 1e-9 * max(1.0, ratio):
            raise ValueError(f"dt={dt} is not an integer multiple of base_dt={base_dt}")
        first = int(round(time / base_dt))
        total = np.zeros((count, 3))
        for k in range(first, first + steps):
            total += self.normals(k, count)
        return total / np.sqrt(steps)

    def generator(self, domain: int, *key: int) -> np.random.Generator:
        """A numpy Generator on a Philox stream keyed by (seed, domain, *key)."""
        h = _hash(self.seed, domain, *key) if key else _hash(self.seed, domain)
        return np.random.Generator(np.random.Philox(key=int(h[0])))
