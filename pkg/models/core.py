# models/core.py
"""
Shared domain types for the chemotaxis solvers: simulation parameters,
uniform grids, grid-sampled fields, particle ensembles and scenarios.
"""
from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, replace
from typing import Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_EXTENT = 100.0
DEFAULT_GRID = 100
WEIGHT_TOLERANCE = 1e-12


class ScenarioError(ValueError):
    """Invalid scenario definition or scenario file."""


class PreconditionError(ValueError):
    """An operation was called outside its documented preconditions."""


class StabilityError(RuntimeError):
    """Explicit stepping produced non-finite or sign-violating values."""


class FieldFormatError(ValueError):
    """A binary dump does not match the expected layout."""


@dataclass(frozen=True)
class SimParams:
    gamma: float = 1.0
    chi: float = 1.0
    mass: float = 1.0
    dt: float = 0.1
    t_end: float = 40.0
    seed: int = 0

    def __post_init__(self):
        # gamma == 0 is the deterministic limit; scenarios require gamma > 0
        if not self.gamma >= 0:
            raise ScenarioError(f"gamma must be >= 0, got {self.gamma}")
        if not self.chi >= 0:
            raise ScenarioError(f"chi must be >= 0, got {self.chi}")
        if not self.mass > 0:
            raise ScenarioError(f"mass must be > 0, got {self.mass}")
        if not self.dt > 0:
            raise ScenarioError(f"dt must be > 0, got {self.dt}")
        if not self.t_end >= 0:
            raise ScenarioError(f"t_end must be >= 0, got {self.t_end}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ScenarioError(f"seed must fit in 64 bits, got {self.seed}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass(frozen=True)
class Grid3:
    """Uniform cubic grid over [0, extent]^3 with n cells per axis."""
    extent: float = DEFAULT_EXTENT
    n: int = DEFAULT_GRID

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 4:
            raise ScenarioError(f"grid needs n >= 4 cells per axis, got {self.n}")
        if not self.extent > 0:
            raise ScenarioError(f"grid extent must be > 0, got {self.extent}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "extent", float(self.extent))

    @property
    def h(self) -> float:
        return self.extent / self.n

    @property
    def shape(self) -> tuple:
        return (self.n, self.n, self.n)

    @property
    def cell_volume(self) -> float:
        return self.h ** 3

    def cell_centers(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) * self.h

    def center_points(self) -> np.ndarray:
        """All cell centers as an (n^3, 3) array in z-fastest order."""
        xs = self.cell_centers()
        gx, gy, gz = np.meshgrid(xs, xs, xs, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)

    def cell_index(self, points: np.ndarray) -> np.ndarray:
        """
        Integer cell indices of points (right-open cells, the top face
        x = extent folds into the last cell).
        """
        idx = np.floor(np.asarray(points, dtype=np.float64) / self.h).astype(np.int64)
        return np.clip(idx, 0, self.n - 1)

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return np.all((pts >= 0.0) & (pts <= self.extent), axis=-1)


@dataclass(frozen=True)
class ScalarField3:
    """
    Scalar samples on a Grid3. `values` has shape (n, n, n) in C order,
    so the flat index is (ix*n + iy)*n + iz.
    """
    grid: Grid3
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64)
        if arr.size != self.grid.n ** 3:
            raise ValueError(
                f"field needs {self.grid.n ** 3} values for n={self.grid.n}, got {arr.size}")
        arr = arr.reshape(self.grid.shape)
        if not np.all(np.isfinite(arr)):
            raise StabilityError("field contains non-finite values")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @classmethod
    def zeros(cls, grid: Grid3) -> "ScalarField3":
        return cls(grid, np.zeros(grid.shape))

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    def max(self) -> float:
        return float(self.values.max())

    def min(self) -> float:
        return float(self.values.min())


@dataclass(frozen=True)
class ParticleEnsemble:
    """P particle positions carrying total mass `mass` inside [0, extent]^3."""
    positions: np.ndarray
    mass: float
    extent: float = DEFAULT_EXTENT

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64).reshape(-1, 3)
        if len(pos) < 1:
            raise PreconditionError("an ensemble needs at least one particle")
        if not np.all((pos >= 0.0) & (pos <= self.extent)):
            raise PreconditionError(f"particle positions must lie in [0, {self.extent}]")
        pos.flags.writeable = False
        object.__setattr__(self, "positions", pos)

    @property
    def count(self) -> int:
        return len(self.positions)

    @property
    def particle_mass(self) -> float:
        return self.mass / self.count


@dataclass(frozen=True)
class GaussianBlob:
    center: tuple
    sigma: float
    weight: float = 1.0
    amplitude: float = 1.0

    def __post_init__(self):
        if len(self.center) != 3:
            raise ScenarioError(f"blob center must be a 3D point, got {self.center}")
        if not self.sigma > 0:
            raise ScenarioError(f"blob sigma must be > 0, got {self.sigma}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))


@dataclass(frozen=True)
class Ring:
    """Circle of radius `radius` around `center`, in the plane normal to `normal`."""
    center: tuple
    radius: float
    tube: float
    normal: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if not self.radius > 0 or not self.tube > 0:
            raise ScenarioError(
                f"ring needs radius > 0 and tube > 0, got {self.radius}, {self.tube}")
        nrm = np.asarray(self.normal, dtype=np.float64)
        length = float(np.linalg.norm(nrm))
        if length == 0:
            raise ScenarioError("ring normal must be non-zero")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "normal", tuple(float(v) for v in nrm / length))

    def distance(self, points: np.ndarray) -> np.ndarray:
        v = np.asarray(points, dtype=np.float64) - np.asarray(self.center)
        nrm = np.asarray(self.normal)
        axial = v @ nrm
        in_plane = np.linalg.norm(v - axial[..., None] * nrm, axis=-1)
        return np.hypot(in_plane - self.radius, axial)


@dataclass(frozen=True)
class AnnuliSpec:
    rings: tuple
    amplitude: float = 1.0

    def __post_init__(self):
        if len(self.rings) < 1:
            raise ScenarioError("annuli concentration needs at least one ring")
        object.__setattr__(self, "rings", tuple(self.rings))

    def nearest_distance(self, points: np.ndarray) -> np.ndarray:
        return np.min([ring.distance(points) for ring in self.rings], axis=0)


Concentration = Union[tuple, AnnuliSpec]


@dataclass(frozen=True)
class ScenarioSpec:
    params: SimParams
    grid: Grid3
    rho0: tuple
    c0: Concentration
    name: str = "custom"

    def __post_init__(self):
        if self.params.gamma <= 0:
            raise ScenarioError(f"scenario gamma must be > 0, got {self.params.gamma}")
        if len(self.rho0) < 1:
            raise ScenarioError("rho0 needs at least one blob")
        object.__setattr__(self, "rho0", tuple(self.rho0))
        total = sum(b.weight for b in self.rho0)
        if abs(total - 1.0) > WEIGHT_TOLERANCE:
            raise ScenarioError(f"rho0 weights must sum to 1, got {total!r}")
        if not isinstance(self.c0, AnnuliSpec):
            object.__setattr__(self, "c0", tuple(self.c0))
        blobs = list(self.rho0) + (list(self.c0) if self.has_blob_concentration else [])
        for blob in blobs:
            if not all(0.0 <= c <= self.grid.extent for c in blob.center):
                raise ScenarioError(f"blob center {blob.center} lies outside the domain")

    @property
    def has_blob_concentration(self) -> bool:
        return not isinstance(self.c0, AnnuliSpec)

    @property
    def domain_center(self) -> tuple:
        half = self.grid.extent / 2
        return (half, half, half)

    def is_radial(self) -> bool:
        """Single density blob and single concentration blob sharing a center."""
        return (len(self.rho0) == 1 and self.has_blob_concentration
                and len(self.c0) == 1 and self.rho0[0].center == self.c0[0].center)

    def with_overrides(self, dt=None, n=None, t_end=None, seed=None, chi=None) -> "ScenarioSpec":
        changes = {k: v for k, v in
                   (("dt", dt), ("t_end", t_end), ("seed", seed), ("chi", chi)) if v is not None}
        params = replace(self.params, **changes) if changes else self.params
        grid = Grid3(self.grid.extent, n) if n is not None else self.grid
        return replace(self, params=params, grid=grid)


def _as_points(x) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=np.float64))


def _squared_distance(points: np.ndarray, center: tuple) -> np.ndarray:
    return np.sum((points - np.asarray(center)) ** 2, axis=-1)


def eval_scenario_density(spec: ScenarioSpec, x):
    """
    M0 * sum_k w_k N(x; center_k, sigma_k^2 I). Accepts one point or an
    (N, 3) array; a single point returns a float.
    """
    pts = _as_points(x)
    out = np.zeros(len(pts))
    for blob in spec.rho0:
        norm = (2.0 * math.pi * blob.sigma ** 2) ** -1.5
        out += blob.weight * norm * np.exp(-_squared_distance(pts, blob.center) / (2 * blob.sigma ** 2))
    out *= spec.params.mass
    return float(out[0]) if np.ndim(x) == 1 else out


def eval_scenario_concentration(spec: ScenarioSpec, x):
    pts = _as_points(x)
    out = np.zeros(len(pts))
    if spec.has_blob_concentration:
        for blob in spec.c0:
            out += blob.amplitude * np.exp(-_squared_distance(pts, blob.center) / (2 * blob.sigma ** 2))
    else:
        for ring in spec.c0.rings:
            out += spec.c0.amplitude * np.exp(-ring.distance(pts) ** 2 / (2 * ring.tube ** 2))
    return float(out[0]) if np.ndim(x) == 1 else out


def discretize(spec: ScenarioSpec, which: str) -> ScalarField3:
    """Sample the initial density or concentration at cell centers."""
    evaluators = {"density": eval_scenario_density, "concentration": eval_scenario_concentration}
    if which not in evaluators:
        raise ValueError(f"which must be 'density' or 'concentration', got {which!r}")
    values = evaluators[which](spec, spec.grid.center_points())
    return ScalarField3(spec.grid, values.reshape(spec.grid.shape))


# --- Scenario files -------------------------------------------------------

def _blob_to_dict(blob: GaussianBlob) -> dict:
    return {"center": list(blob.center), "sigma": blob.sigma,
            "weight": blob.weight, "amplitude": blob.amplitude}


def scenario_to_dict(spec: ScenarioSpec) -> dict:
    if spec.has_blob_concentration:
        c0 = {"kind": "blobs", "blobs": [_blob_to_dict(b) for b in spec.c0]}
    else:
        c0 = {"kind": "annuli", "amplitude": spec.c0.amplitude,
              "rings": [{"center": list(r.center), "radius": r.radius,
                         "tube": r.tube, "normal": list(r.normal)} for r in spec.c0.rings]}
    return {
        "name": spec.name,
        "params": asdict(spec.params),
        "grid": {"extent": spec.grid.extent, "n": spec.grid.n},
        "rho0": [_blob_to_dict(b) for b in spec.rho0],
        "c0": c0,
    }


def scenario_from_dict(data: dict) -> ScenarioSpec:
    try:
        params = SimParams(**data["params"])
        grid = Grid3(**data["grid"])
        rho0 = tuple(GaussianBlob(**b) for b in data["rho0"])
        c0_data = data["c0"]
        kind = c0_data.get("kind", "blobs")
        if kind == "blobs":
            c0 = tuple(GaussianBlob(**b) for b in c0_data["blobs"])
        elif kind == "annuli":
            c0 = AnnuliSpec(rings=tuple(Ring(**r) for r in c0_data["rings"]),
                            amplitude=c0_data.get("amplitude", 1.0))
        else:
            raise ScenarioError(f"unknown c0 kind {kind!r}")
    except (KeyError, TypeError) as e:
        raise ScenarioError(f"malformed scenario: {e}") from e
    return ScenarioSpec(params=params, grid=grid, rho0=rho0, c0=c0,
                        name=data.get("name", "custom"))


def load_scenario(path) -> ScenarioSpec:
    with open(path, "r") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ScenarioError(f"{path}: invalid JSON ({e})") from e
    spec = scenario_from_dict(data)
    if spec.name == "custom":
        spec = replace(spec, name=os.path.splitext(os.path.basename(str(path)))[0])
    return spec


def save_scenario(spec: ScenarioSpec, path):
    with open(path, "w") as f:
        json.dump(scenario_to_dict(spec), f, indent=2)


def blobs_from_points(centers: Sequence, sigma: float, amplitude: float = 1.0) -> tuple:
    """Equal-weight blobs, one per center."""
    weight = 1.0 / len(centers)
    return tuple(GaussianBlob(center=c, sigma=sigma, weight=weight, amplitude=amplitude)
                 for c in centers)
