# models/radial_solver.py
"""
Explicit finite differences for the radially symmetric system

    rho_t = gamma (rho_rr + 2/r rho_r) - chi (rho_r c_r + rho c_rr + 2/r rho c_r)
    c_t   = -c rho

on r in [0, r_max] with zero-flux ends. This is the cheap generator of
training data for the neural interpolator.
"""
from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

from models.core import (Grid3, PreconditionError, ScalarField3, ScenarioSpec,
                         SimParams, StabilityError)
from utils.field_io import read_radial, write_radial

logger = logging.getLogger(__name__)

DEFAULT_RADIAL_POINTS = 512
TRAINING_SNAPSHOTS = 50
INDEX_FILE = "index.csv"
PARAMS_FILE = "params.json"


@dataclass(frozen=True)
class RadialState:
    r: np.ndarray
    rho: np.ndarray
    conc: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        r = np.asarray(self.r, dtype=np.float64)
        rho = np.asarray(self.rho, dtype=np.float64)
        conc = np.asarray(self.conc, dtype=np.float64)
        if len(r) < 8:
            raise PreconditionError(f"radial grid needs at least 8 samples, got {len(r)}")
        if not (len(r) == len(rho) == len(conc)):
            raise PreconditionError("r, rho and conc must have the same length")
        if rho.min() < 0 or conc.min() < 0:
            raise StabilityError(
                f"negative radial values at t={self.time}: "
                f"min rho={rho.min():.3e}, min c={conc.min():.3e}")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "conc", conc)

    @property
    def dr(self) -> float:
        return float(self.r[1] - self.r[0])

    def mass(self) -> float:
        """Discrete radial mass 4 pi sum rho_j r_j^2 dr."""
        return float(4.0 * math.pi * np.sum(self.rho * self.r ** 2) * self.dr)


@dataclass(frozen=True)
class RadialSolution:
    states: tuple
    params: SimParams

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        times = [s.time for s in self.states]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"snapshot times must be strictly increasing, got {times}")

    @property
    def times(self) -> list:
        return [s.time for s in self.states]


def _derivatives(f: np.ndarray, dr: float):
    """Central first/second derivatives with mirrored ghost points at both ends."""
    ext = np.concatenate(([f[1]], f, [f[-2]]))
    f_r = (ext[2:] - ext[:-2]) / (2.0 * dr)
    f_rr = (ext[2:] - 2.0 * f + ext[:-2]) / dr ** 2
    return f_r, f_rr


def stable_radial_dt(state: RadialState, params: SimParams) -> float:
    """Explicit step bound for the radial scheme; inf when nothing constrains it."""
    dr = state.dr
    bounds = [math.inf]
    if params.gamma > 0:
        bounds.append(0.25 * dr ** 2 / params.gamma)
    c_r, _ = _derivatives(state.conc, dr)
    drift = params.chi * float(np.max(np.abs(c_r)))
    if drift > 0:
        bounds.append(0.5 * dr / drift)
    rho_max = float(state.rho.max())
    if rho_max > 0:
        bounds.append(1.0 / rho_max)
    return min(bounds)


def radial_step(state: RadialState, params: SimParams, dt_r: float) -> RadialState:
    dr = state.dr
    r = state.r
    rho, conc = state.rho, state.conc
    rho_r, rho_rr = _derivatives(rho, dr)
    c_r, c_rr = _derivatives(conc, dr)

    # (2/r) f_r, with its r -> 0 limit 2 f_rr(0)
    inv_r = np.zeros_like(r)
    inv_r[1:] = 2.0 / r[1:]
    rho_lap = rho_rr + inv_r * rho_r
    c_r_over = inv_r * c_r
    if r[0] == 0.0:
        rho_lap[0] = 3.0 * rho_rr[0]
        c_r_over[0] = 2.0 * c_rr[0]

    rho_t = params.gamma * rho_lap - params.chi * (rho_r * c_r + rho * c_rr + rho * c_r_over)
    new_rho = rho + dt_r * rho_t
    new_conc = conc - dt_r * conc * rho
    time = state.time + dt_r

    if not (np.all(np.isfinite(new_rho)) and np.all(np.isfinite(new_conc))):
        raise StabilityError(
            f"radial step to t={time:.6g} produced non-finite values (dt_r={dt_r:.3e}, dr={dr:.3e})")
    return RadialState(r, new_rho, new_conc, time)


def radial_grid(spec: ScenarioSpec, m: int = DEFAULT_RADIAL_POINTS) -> np.ndarray:
    r_max = spec.grid.extent * math.sqrt(3.0) / 2.0
    return np.linspace(0.0, r_max, m)


def initial_radial_state(spec: ScenarioSpec, m: int = DEFAULT_RADIAL_POINTS) -> RadialState:
    if not spec.is_radial():
        raise PreconditionError(
            f"scenario {spec.name!r} is not radially symmetric "
            "(needs one rho0 blob and one c0 blob sharing a center)")
    r = radial_grid(spec, m)
    blob, cblob = spec.rho0[0], spec.c0[0]
    rho = spec.params.mass * (2.0 * math.pi * blob.sigma ** 2) ** -1.5 \
        * np.exp(-r ** 2 / (2.0 * blob.sigma ** 2))
    conc = cblob.amplitude * np.exp(-r ** 2 / (2.0 * cblob.sigma ** 2))
    return RadialState(r, rho, conc, 0.0)


def run_radial(spec: ScenarioSpec, m: int = DEFAULT_RADIAL_POINTS, save_times=(0.0,)) -> RadialSolution:
    """
    Integrate from t = 0 to max(save_times) with a stable step that is
    shortened to land exactly on every requested time.
    """
    state = initial_radial_state(spec, m)
    params = spec.params
    targets = sorted(set(float(t) for t in save_times))
    if not targets or targets[0] < 0:
        raise PreconditionError(f"save_times must be non-negative, got {list(save_times)}")
    snapshots = []
    steps = 0
    for target in targets:
        while state.time < target - 1e-12:
            dt_r = min(stable_radial_dt(state, params), target - state.time)
            state = radial_step(state, params, dt_r)
            steps += 1
        snapshots.append(RadialState(state.r, state.rho, state.conc, target))
    logger.info("radial run %s: %d snapshots up to t=%g in %d steps",
                spec.name, len(snapshots), targets[-1], steps)
    return RadialSolution(tuple(snapshots), params)


def training_save_times(t_end: float, count: int = TRAINING_SNAPSHOTS,
                        generator: np.random.Generator = None) -> list:
    """`count` distinct times drawn uniformly from (0, t_end]."""
    generator = generator or np.random.default_rng()
    times = t_end * (1.0 - generator.random(count))
    return sorted(set(float(t) for t in times))


def lift_profile(r: np.ndarray, profile: np.ndarray, grid: Grid3, center) -> ScalarField3:
    """Linear interpolation of a radial profile at each cell center's distance."""
    xs = grid.cell_centers()
    c = np.asarray(center, dtype=np.float64)
    dist = np.sqrt((xs[:, None, None] - c[0]) ** 2
                   + (xs[None, :, None] - c[1]) ** 2
                   + (xs[None, None, :] - c[2]) ** 2)
    return ScalarField3(grid, np.interp(dist, r, profile))


def lift_radial_to_3d(state: RadialState, grid: Grid3, center):
    """Returns (rho_field, conc_field)."""
    return (lift_profile(state.r, state.rho, grid, center),
            lift_profile(state.r, state.conc, grid, center))


def save_radial_solution(sol: RadialSolution, directory):
    os.makedirs(directory, exist_ok=True)
    rows = []
    for i, state in enumerate(sol.states):
        filename = f"radial_{i:04d}.phkr"
        write_radial(state.rho, state.conc, state.dr, state.time, os.path.join(directory, filename))
        rows.append({"time": state.time, "filename": filename})
    pd.DataFrame(rows, columns=["time", "filename"]).to_csv(
        os.path.join(directory, INDEX_FILE), index=False, float_format="%.17g")
    with open(os.path.join(directory, PARAMS_FILE), "w") as f:
        json.dump(asdict(sol.params), f, indent=2)
    logger.info("saved %d radial snapshots to %s", len(sol.states), directory)


def load_radial_solution(directory) -> RadialSolution:
    index_path = os.path.join(directory, INDEX_FILE)
    if not os.path.exists(index_path):
        raise FileNotFoundError(f"no radial index found at {index_path}")
    with open(os.path.join(directory, PARAMS_FILE), "r") as f:
        params = SimParams(**json.load(f))
    states = []
    for row in pd.read_csv(index_path).itertuples(index=False):
        rho, conc, dr, time = read_radial(os.path.join(directory, row.filename))
        states.append(RadialState(np.arange(len(rho)) * dr, rho, conc, time))
    return RadialSolution(tuple(states), params)
