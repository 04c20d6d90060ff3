# models/interp_classical.py
"""
Trilinear interpolation of cell-centered samples with the analytic gradient
of the trilinear surrogate. Queries outside the hull of cell centers are
clamped to it.

The particle solver's classical path rebuilds a scipy RegularGridInterpolator
over the whole grid on every step and queries it per particle; the
hand-vectorized trilinear_sample backs single-point queries and the
neural path's fallback.
"""
from __future__ import annotations

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from models.core import ScalarField3

CORNERS = [(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)]


def trilinear_sample(values: np.ndarray, origin, h: float, points: np.ndarray,
                     gradient: bool = True):
    """
    Trilinear blend of a node array whose node (i, j, k) sits at
    origin + (i, j, k) h. Returns (values, gradients or None).
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    shape = np.array(values.shape)
    s = (pts - np.asarray(origin, dtype=np.float64)) / h
    s = np.clip(s, 0.0, shape - 1)
    base = np.minimum(np.floor(s).astype(np.int64), np.maximum(shape - 2, 0))
    frac = s - base
    one = 1.0 - frac

    out = np.zeros(len(pts))
    grad = np.zeros((len(pts), 3)) if gradient else None
    for a, b, c in CORNERS:
        corner = values[base[:, 0] + a, base[:, 1] + b, base[:, 2] + c]
        wx = frac[:, 0] if a else one[:, 0]
        wy = frac[:, 1] if b else one[:, 1]
        wz = frac[:, 2] if c else one[:, 2]
        out += corner * wx * wy * wz
        if gradient:
            sx = 1.0 if a else -1.0
            sy = 1.0 if b else -1.0
            sz = 1.0 if c else -1.0
            grad[:, 0] += corner * sx * wy * wz
            grad[:, 1] += corner * wx * sy * wz
            grad[:, 2] += corner * wx * wy * sz
    if gradient:
        grad /= h
    return out, grad


def _origin(field: ScalarField3):
    half = 0.5 * field.grid.h
    return (half, half, half)


def batch_query(field: ScalarField3, points):
    """Values and surrogate gradients at every point; cost linear in len(points)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return np.zeros(0), np.zeros((0, 3))
    return trilinear_sample(field.values, _origin(field), field.grid.h, pts)


def interp_value(field: ScalarField3, x) -> float:
    values, _ = trilinear_sample(field.values, _origin(field), field.grid.h, x, gradient=False)
    return float(values[0])


def interp_gradient(field: ScalarField3, x) -> np.ndarray:
    _, grad = trilinear_sample(field.values, _origin(field), field.grid.h, x)
    return grad[0]


class TrilinearInterpolant:
    """Callable surrogate bound to one field."""

    def __init__(self, field: ScalarField3):
        self.field = field

    def __call__(self, x) -> float:
        return interp_value(self.field, x)

    def gradient(self, x) -> np.ndarray:
        return interp_gradient(self.field, x)


def grid_surrogate(field: ScalarField3) -> RegularGridInterpolator:
    """Linear interpolant over every cell center of the field."""
    axis = field.grid.cell_centers()
    return RegularGridInterpolator((axis, axis, axis), field.values, method="linear",
                                   bounds_error=False, fill_value=None)


def grid_query(field: ScalarField3, points):
    """
    Same surrogate as batch_query, evaluated through grid_surrogate. The
    gradient along each axis is the difference of the surrogate on the two
    faces of the enclosing cell, which is the exact trilinear derivative.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return np.zeros(0), np.zeros((0, 3))
    axis = field.grid.cell_centers()
    h = field.grid.h
    pts = np.clip(pts, axis[0], axis[-1])
    surrogate = grid_surrogate(field)
    values = surrogate(pts)

    base = np.minimum(np.floor((pts - axis[0]) / h).astype(np.int64), len(axis) - 2)
    grads = np.empty_like(pts)
    for d in range(3):
        lower = pts.copy()
        upper = pts.copy()
        lower[:, d] = axis[base[:, d]]
        upper[:, d] = axis[base[:, d] + 1]
        grads[:, d] = (surrogate(upper) - surrogate(lower)) / h
    return values, grads


class ClassicalInterpolator:
    name = "sipf-classical"

    def query(self, conc: ScalarField3, points: np.ndarray):
        return grid_query(conc, points)
