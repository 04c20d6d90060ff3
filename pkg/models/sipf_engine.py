# models/sipf_engine.py
"""
Stochastic interacting particle-field loop. Density is carried by P
particles, concentration by a grid field; every step bins the particles,
consumes concentration bin by bin, interpolates the concentration and moves
the particles by Euler-Maruyama along its gradient.
"""
from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from tqdm import tqdm

from models.core import (Grid3, ParticleEnsemble, PreconditionError, ScalarField3,
                         ScenarioSpec, SimParams, StabilityError, discretize)
from models.rng import SAMPLING, RngStream

logger = logging.getLogger(__name__)

MAX_REJECTIONS = 1000


class Interpolator(Protocol):
    """Differentiable surrogate of a grid field, queried at arbitrary points."""
    name: str

    def query(self, conc: ScalarField3, points: np.ndarray):
        """Returns (values (N,), gradients (N, 3))."""
        ...


@dataclass(frozen=True)
class SipfState:
    ensemble: ParticleEnsemble
    conc: ScalarField3
    rho_hist: ScalarField3
    step: int = 0
    time: float = 0.0


def sample_particles(spec: ScenarioSpec, P: int, rng: RngStream) -> ParticleEnsemble:
    """
    P draws from the initial density mixture: pick a blob by weight, draw a
    Gaussian point, redraw the particles that land outside the domain.
    """
    if P < 1:
        raise PreconditionError(f"need at least one particle, got P={P}")
    extent = spec.grid.extent
    weights = np.array([b.weight for b in spec.rho0])
    edges = np.cumsum(weights)
    edges[-1] = 1.0
    centers = np.array([b.center for b in spec.rho0])
    sigmas = np.array([b.sigma for b in spec.rho0])

    positions = np.empty((P, 3))
    pending = np.arange(P)
    for attempt in range(MAX_REJECTIONS + 1):
        if len(pending) == 0:
            break
        p = pending.astype(np.uint64)
        u = rng.uniforms(SAMPLING, attempt, p, np.uint64(6))
        blob = np.searchsorted(edges, u, side="left").clip(0, len(weights) - 1)
        z = rng.standard_normals(SAMPLING, attempt, p[:, None], np.arange(3, dtype=np.uint64)[None, :])
        draws = centers[blob] + sigmas[blob][:, None] * z
        inside = np.all((draws >= 0.0) & (draws <= extent), axis=1)
        positions[pending[inside]] = draws[inside]
        pending = pending[~inside]
    else:
        if len(pending):
            raise PreconditionError(
                f"{len(pending)} particles rejected {MAX_REJECTIONS} times in a row; "
                "the initial density barely overlaps the domain")
    return ParticleEnsemble(positions, spec.params.mass, extent)


def bin_particles(ensemble: ParticleEnsemble, grid: Grid3) -> ScalarField3:
    """Histogram density: (M0/P) * count / h^3 per cell."""
    pos = ensemble.positions
    if not np.all(grid.contains(pos)):
        raise RuntimeError("particle outside the domain reached binning")
    idx = grid.cell_index(pos)
    flat = (idx[:, 0] * grid.n + idx[:, 1]) * grid.n + idx[:, 2]
    counts = np.bincount(flat, minlength=grid.n ** 3)
    values = counts * (ensemble.particle_mass / grid.cell_volume)
    return ScalarField3(grid, values.reshape(grid.shape))


def update_concentration(conc: ScalarField3, rho_hist: ScalarField3, dt: float) -> ScalarField3:
    """c <- c (1 - dt rho), bin by bin."""
    if conc.grid != rho_hist.grid:
        raise PreconditionError("concentration and density live on different grids")
    peak = dt * rho_hist.max()
    if peak > 1.0:
        raise PreconditionError(
            f"dt * max(rho) = {peak:.4g} > 1 would drive c negative; "
            "use a smaller dt or more particles (one particle adds M0/(P h^3) to its bin)")
    return ScalarField3(conc.grid, conc.values * (1.0 - dt * rho_hist.values))


def reflect(positions: np.ndarray, extent: float) -> np.ndarray:
    """Mirror coordinates back into [0, extent] across the violated faces."""
    folded = np.mod(positions, 2.0 * extent)
    return np.where(folded > extent, 2.0 * extent - folded, folded)


def step_particles(ensemble: ParticleEnsemble, gradc: np.ndarray, params: SimParams,
                   n: int, rng: RngStream, noise: np.ndarray = None) -> ParticleEnsemble:
    """
    X <- X + chi grad c dt + sqrt(2 gamma dt) N, with N keyed by (seed, n, p, axis)
    unless precomputed `noise` is supplied.
    """
    gradc = np.asarray(gradc, dtype=np.float64)
    if gradc.shape != ensemble.positions.shape:
        raise PreconditionError(
            f"gradient shape {gradc.shape} does not match {ensemble.positions.shape}")
    if not np.all(np.isfinite(gradc)):
        raise StabilityError(f"non-finite concentration gradient at step {n}")
    moved = ensemble.positions + params.chi * params.dt * gradc
    if params.gamma > 0:
        if noise is None:
            noise = rng.normals(n, ensemble.count)
        moved = moved + np.sqrt(2.0 * params.gamma * params.dt) * noise
    return ParticleEnsemble(reflect(moved, ensemble.extent), ensemble.mass, ensemble.extent)


def _snapshot_steps(params: SimParams, save_times) -> dict:
    n_total = params.n_steps
    wanted = {}
    for t in save_times:
        n = int(round(float(t) / params.dt))
        if n < 0 or n > n_total:
            raise PreconditionError(f"save time {t} lies outside [0, {params.t_end}]")
        wanted[n] = n * params.dt
    return wanted


def run_sipf(spec: ScenarioSpec, P: int, interp: Interpolator, save_times=None,
             coupling_dt: float = None, progress: bool = False) -> list:
    """
    Run the particle-field loop to spec.params.t_end and return snapshots at
    the steps nearest to `save_times` (default: start and end).

    With `coupling_dt`, Brownian increments are built from a shared
    coupling_dt-resolution path keyed to physical time, so runs at different
    dt see the same noise.
    """
    params = spec.params
    grid = spec.grid
    rng = RngStream(params.seed)
    wanted = _snapshot_steps(params, save_times if save_times is not None
                             else (0.0, params.t_end))

    ensemble = sample_particles(spec, P, rng)
    rho_hist = bin_particles(ensemble, grid)
    conc = discretize(spec, "concentration")
    snapshots = []
    if 0 in wanted:
        snapshots.append(SipfState(ensemble, conc, rho_hist, 0, 0.0))

    started = _time.perf_counter()
    for n in tqdm(range(1, params.n_steps + 1), disable=not progress, desc=interp.name):
        conc = update_concentration(conc, rho_hist, params.dt)
        _, gradc = interp.query(conc, ensemble.positions)
        noise = None
        if coupling_dt is not None and params.gamma > 0:
            noise = rng.coupled_normals((n - 1) * params.dt, params.dt, coupling_dt, ensemble.count)
        ensemble = step_particles(ensemble, gradc, params, n, rng, noise=noise)
        rho_hist = bin_particles(ensemble, grid)
        if n in wanted:
            snapshots.append(SipfState(ensemble, conc, rho_hist, n, wanted[n]))
        logger.debug("sipf step %d max rho=%.4g min c=%.4g", n, rho_hist.max(), conc.min())

    logger.info("%s run %s P=%d n=%d dt=%g: %d steps in %.2fs", interp.name, spec.name, P,
                grid.n, params.dt, params.n_steps, _time.perf_counter() - started)
    return snapshots
