# models/harness.py
"""
Experiment studies over the three solvers: accuracy metrics, convergence in
particle count and time step, wall-clock benchmarks, snapshot diagnostics
and the builtin scenarios.
"""
from __future__ import annotations

import logging
import time as _time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from models.core import (AnnuliSpec, GaussianBlob, Grid3, PreconditionError, Ring,
                         ScalarField3, ScenarioError, ScenarioSpec, SimParams,
                         blobs_from_points)
from models.fdm3d import run_fdm
from models.interp_classical import ClassicalInterpolator
from models.neural_interp import NeuralInterpolator, active_box, refine
from models.run_model import record_run
from models.sipf_engine import SipfState, run_sipf

logger = logging.getLogger(__name__)

METHODS = ("fdm", "sipf-classical", "sipf-neural")
AXES = ("particles", "timestep")
AGGREGATION_RADIUS = 15.0
CONVERGENCE_T_END = 10.0
BENCH_DT = 0.1


# --- Builtin scenarios ----------------------------------------------------

def _center_blob(sigma, amplitude=1.0):
    return GaussianBlob(center=(50.0, 50.0, 50.0), sigma=sigma, amplitude=amplitude)


def builtin_scenarios() -> list:
    """one_blob, two_blob and annuli with gamma = chi = 1, M0 = 1, T = 40, dt = 0.1."""
    params = SimParams(gamma=1.0, chi=1.0, mass=1.0, dt=0.1, t_end=40.0, seed=0)
    grid = Grid3(100.0, 100)
    rings = AnnuliSpec(rings=(Ring(center=(50.0, 50.0, 35.0), radius=20.0, tube=3.0),
                              Ring(center=(50.0, 50.0, 65.0), radius=20.0, tube=3.0)),
                       amplitude=1.0)
    return [
        ScenarioSpec(params, grid, (_center_blob(5.0),), (_center_blob(10.0),), name="one_blob"),
        ScenarioSpec(params, grid, blobs_from_points([(30, 30, 30), (70, 70, 70)], 5.0),
                     (_center_blob(10.0, amplitude=50.0),), name="two_blob"),
        ScenarioSpec(params, grid, (_center_blob(5.0),), rings, name="annuli"),
    ]


def get_builtin(name: str) -> ScenarioSpec:
    for spec in builtin_scenarios():
        if spec.name == name:
            return spec
    names = ", ".join(s.name for s in builtin_scenarios())
    raise ScenarioError(f"unknown builtin scenario {name!r} (available: {names})")


def make_interpolator(method: str, model=None):
    if method == "sipf-classical":
        return ClassicalInterpolator()
    if method == "sipf-neural":
        if model is None:
            raise PreconditionError("sipf-neural needs a trained model (--model)")
        return NeuralInterpolator(model)
    raise PreconditionError(f"{method!r} is not a particle method")


# --- Metrics --------------------------------------------------------------

def relative_l2(num: ScalarField3, ref: ScalarField3) -> float:
    """sqrt(sum (num - ref)^2) / sqrt(sum ref^2)."""
    if num.grid != ref.grid:
        raise PreconditionError("relative_l2 needs fields on the same grid")
    denom = np.sqrt(np.sum(ref.values ** 2))
    if denom == 0:
        raise PreconditionError("relative_l2 reference field is identically zero")
    return float(np.sqrt(np.sum((num.values - ref.values) ** 2)) / denom)


def fit_slope(levels, errors):
    """Least-squares slope of log(error) against log(level); None below two usable points."""
    levels = np.asarray(levels, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    usable = errors > 0
    if not usable.all():
        logger.warning("dropping %d zero errors from the slope fit", int((~usable).sum()))
    if usable.sum() < 2:
        return None
    q = np.polyfit(np.log(levels[usable]), np.log(errors[usable]), 1)
    return float(q[0])


def snapshot_metrics(state, spec: ScenarioSpec) -> dict:
    """
    Scalar diagnostics of one snapshot: mass, extrema, spread, fraction near
    the domain center and (annuli) mean distance to the nearest ring.
    Particle snapshots use the particles, grid snapshots weight cell centers
    by density.
    """
    center = np.asarray(spec.domain_center)
    if isinstance(state, SipfState):
        rho, conc = state.rho_hist, state.conc
        points = state.ensemble.positions
        weights = np.full(len(points), 1.0 / len(points))
        count = state.ensemble.count
    else:
        rho, conc = state.rho, state.conc
        points = rho.grid.center_points()
        weights = rho.flat / rho.flat.sum()
        count = None

    mean = weights @ points
    if count is not None and count > 1:
        var = points.var(axis=0, ddof=1)
    else:
        var = weights @ (points - mean) ** 2
    dist = np.linalg.norm(points - center, axis=1)
    metrics = {
        "time": state.time,
        "particles": count,
        "mass": rho.integral(),
        "rho_min": rho.min(),
        "rho_max": rho.max(),
        "c_min": conc.min(),
        "c_max": conc.max(),
        "var_x": float(var[0]),
        "var_y": float(var[1]),
        "var_z": float(var[2]),
        "center_fraction": float(weights[dist <= AGGREGATION_RADIUS].sum()),
        "ring_distance": None,
    }
    if isinstance(spec.c0, AnnuliSpec):
        metrics["ring_distance"] = float(weights @ spec.c0.nearest_distance(points))
    return metrics


def cross_section(field: ScalarField3, axis: int, coord: float) -> np.ndarray:
    """2D slice through the cells containing `coord` along `axis`."""
    if axis not in (0, 1, 2):
        raise ValueError(f"axis must be 0, 1 or 2, got {axis}")
    idx = min(max(int(coord // field.grid.h), 0), field.grid.n - 1)
    return np.take(field.values, idx, axis=axis)


def neural_slice(model, conc: ScalarField3, axis: int, coord: float):
    """(raw slice, network-refined slice) of a concentration field."""
    raw = cross_section(conc, axis, coord)
    if conc.max() <= 0:
        return raw, raw.copy()
    lo, hi = active_box(conc)
    refined = conc.values.copy()
    if np.all(hi - lo >= 3):
        refined[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = refine(model, conc, lo, hi)
    return raw, cross_section(ScalarField3(conc.grid, refined), axis, coord)


# --- Convergence ----------------------------------------------------------

@dataclass
class ConvergenceReport:
    axis: str
    samples: list = field(default_factory=list)
    slope_rho: float = None
    slope_c: float = None

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}, got {self.axis!r}")

    def rows(self) -> list:
        return [{"level": level, "err_rho": e_rho, "err_c": e_c,
                 "slope_rho": self.slope_rho, "slope_c": self.slope_c}
                for level, e_rho, e_c in self.samples]


def _final_fields(job):
    spec, P, interp, coupling_dt = job
    final = run_sipf(spec, P, interp, save_times=(spec.params.t_end,), coupling_dt=coupling_dt)[-1]
    return final.rho_hist, final.conc


def _run_jobs(jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_final_fields, jobs))
    return [_final_fields(job) for job in jobs]


def _report(axis, levels, reference, results) -> ConvergenceReport:
    ref_rho, ref_c = reference
    samples = [(level, relative_l2(rho, ref_rho), relative_l2(conc, ref_c))
               for level, (rho, conc) in zip(levels, results)]
    report = ConvergenceReport(axis, samples,
                               fit_slope(levels, [s[1] for s in samples]),
                               fit_slope(levels, [s[2] for s in samples]))
    logger.info("%s convergence: slope rho=%s slope c=%s", axis, report.slope_rho, report.slope_c)
    return report


def converge_particles(spec: ScenarioSpec, interp, P_list, reference_P: int,
                       dt: float = None, workers: int = 1) -> ConvergenceReport:
    """Errors at t_end of runs with P particles against one reference run, same seed."""
    P_list = [int(p) for p in P_list]
    if not P_list:
        raise PreconditionError("P_list is empty")
    if reference_P <= max(P_list):
        raise PreconditionError(f"reference_P={reference_P} must exceed max(P_list)={max(P_list)}")
    spec = spec.with_overrides(dt=dt)
    jobs = [(spec, reference_P, interp, None)] + [(spec, p, interp, None) for p in P_list]
    results = _run_jobs(jobs, workers)
    return _report("particles", P_list, results[0], results[1:])


def converge_timestep(spec: ScenarioSpec, interp, dt_list, reference_dt: float, P: int,
                      workers: int = 1) -> ConvergenceReport:
    """
    Errors at t_end of runs at each dt against a reference_dt run. All runs
    share one Brownian path at reference_dt resolution.
    """
    dt_list = [float(d) for d in dt_list]
    if not dt_list:
        raise PreconditionError("dt_list is empty")
    if reference_dt > min(dt_list):
        raise PreconditionError(f"reference_dt={reference_dt} must not exceed min(dt_list)={min(dt_list)}")
    for d in dt_list:
        ratio = d / reference_dt
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise PreconditionError(f"dt={d} is not an integer multiple of reference_dt={reference_dt}")
    jobs = [(spec.with_overrides(dt=reference_dt), P, interp, reference_dt)]
    jobs += [(spec.with_overrides(dt=d), P, interp, reference_dt) for d in dt_list]
    results = _run_jobs(jobs, workers)
    return _report("timestep", dt_list, results[0], results[1:])


# --- Benchmarks and comparisons -------------------------------------------

@dataclass
class BenchReport:
    rows: list = field(default_factory=list)

    def add(self, method, n, P, seconds, steps):
        if not seconds > 0:
            raise ValueError(f"bench seconds must be positive, got {seconds}")
        self.rows.append({"method": method, "n": n, "P": P, "seconds": seconds, "steps": steps})

    def seconds(self, method, n=None, P=None) -> float:
        for row in self.rows:
            if row["method"] == method and n in (None, row["n"]) and P in (None, row["P"]):
                return row["seconds"]
        raise KeyError(f"no bench row for {method} n={n} P={P}")


def bench(methods, resolutions, P: int, t_end: float, spec: ScenarioSpec = None,
          model=None, dt: float = BENCH_DT, db_file=None) -> BenchReport:
    """Time one full run per (method, resolution)."""
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise PreconditionError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
    base = spec or get_builtin("one_blob")
    report = BenchReport()
    for n in resolutions:
        run_spec = base.with_overrides(n=n, t_end=t_end, dt=dt)
        for method in methods:
            started = _time.perf_counter()
            if method == "fdm":
                steps = run_fdm(run_spec, save_times=(t_end,))[-1].steps
                particles = None
            else:
                run_sipf(run_spec, P, make_interpolator(method, model), save_times=(t_end,))
                steps = run_spec.params.n_steps
                particles = P
            seconds = _time.perf_counter() - started
            report.add(method, n, particles, seconds, steps)
            logger.info("bench %s n=%d P=%s: %.3fs (%d steps)", method, n, particles, seconds, steps)
            if db_file:
                record_run(method, run_spec.name, n, particles, dt, t_end, run_spec.params.seed,
                           steps, seconds, db_file=db_file)
    return report


def compare_methods(spec: ScenarioSpec, P: int, interp, save_times=None) -> list:
    """Relative L2 of particle-field snapshots against the grid solver at the same times."""
    sipf = run_sipf(spec, P, interp, save_times=save_times)
    fdm = run_fdm(spec, save_times=[s.time for s in sipf])
    rows = []
    for particle, grid in zip(sipf, fdm):
        rows.append({"time": particle.time,
                     "rel_l2_rho": relative_l2(particle.rho_hist, grid.rho),
                     "rel_l2_c": relative_l2(particle.conc, grid.conc)})
    return rows
