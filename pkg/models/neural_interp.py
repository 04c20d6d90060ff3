# models/neural_interp.py
"""
Neural interpolator: a six-layer 3D convolutional network that restores
degraded concentration patches, trained with hand-written backpropagation
and Adam on patches lifted from radial solutions.

Layers are 3x3x3 convolutions with stride 1 and zero same-padding, each
followed by ReLU. The post-ReLU activation of layer 2 is added to the
post-ReLU activation of layer 4 before layer 5.
"""
from __future__ import annotations

import itertools
import logging
import os
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import convolve1d
from tqdm import tqdm

from models.core import (FieldFormatError, Grid3, PreconditionError, ScalarField3,
                         StabilityError)
from models.interp_classical import batch_query, trilinear_sample
from models.radial_solver import lift_profile
from models.rng import AUGMENT, INIT, SHUFFLE, RngStream

logger = logging.getLogger(__name__)

CHANNEL_PLAN = (1, 16, 32, 32, 32, 16, 1)
KERNEL = 3
SKIP_FROM = 2   # post-ReLU output of layer 2 ...
SKIP_TO = 4     # ... is added to the post-ReLU output of layer 4
ACTIVE_THRESHOLD = 1e-6
ACTIVE_PAD = 4
DOWNSAMPLE = 2
MAX_SHIFT = 2
BLUR_SIGMA = (0.5, 1.5)
DEFAULT_PATCHES = 200
DEFAULT_PATCH_SIZE = 32

MODEL_MAGIC = b"PHKW"
MODEL_VERSION = 1

_OFFSETS = list(itertools.product(range(KERNEL), repeat=3))


# --- Model ----------------------------------------------------------------

@dataclass(frozen=True)
class CnnModel:
    kernels: tuple
    biases: tuple
    channels: tuple = CHANNEL_PLAN

    def __post_init__(self):
        channels = tuple(int(c) for c in self.channels)
        layers = len(channels) - 1
        if layers != 6:
            raise ValueError(f"the interpolator has 6 layers, channel plan {channels} gives {layers}")
        if channels[SKIP_FROM] != channels[SKIP_TO]:
            raise ValueError(
                f"skip connection needs layer {SKIP_FROM} and layer {SKIP_TO} widths to match, "
                f"got {channels[SKIP_FROM]} and {channels[SKIP_TO]}")
        if len(self.kernels) != layers or len(self.biases) != layers:
            raise ValueError(f"expected {layers} kernels and biases, got "
                             f"{len(self.kernels)} and {len(self.biases)}")
        for l, (k, b) in enumerate(zip(self.kernels, self.biases)):
            want = (channels[l + 1], channels[l], KERNEL, KERNEL, KERNEL)
            if k.shape != want:
                raise ValueError(f"layer {l + 1} kernel has shape {k.shape}, plan needs {want}")
            if b.shape != (channels[l + 1],):
                raise ValueError(f"layer {l + 1} bias has shape {b.shape}, plan needs ({channels[l + 1]},)")
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "kernels", tuple(self.kernels))
        object.__setattr__(self, "biases", tuple(self.biases))

    @property
    def dtype(self):
        return self.kernels[0].dtype

    @property
    def layer_count(self) -> int:
        return len(self.kernels)

    def parameters(self) -> list:
        """Flat parameter list: kernel 1, bias 1, ..., kernel 6, bias 6."""
        params = []
        for k, b in zip(self.kernels, self.biases):
            params.extend([k, b])
        return params

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def with_parameters(self, params: list) -> "CnnModel":
        return CnnModel(tuple(params[0::2]), tuple(params[1::2]), self.channels)

    @classmethod
    def initialize(cls, generator: np.random.Generator, channels=CHANNEL_PLAN,
                   dtype=np.float32) -> "CnnModel":
        """Fan-in scaled normal kernels (std sqrt(2 / fan_in)), zero biases."""
        kernels, biases = [], []
        for c_in, c_out in zip(channels[:-1], channels[1:]):
            std = np.sqrt(2.0 / (c_in * KERNEL ** 3))
            kernels.append((generator.standard_normal((c_out, c_in, KERNEL, KERNEL, KERNEL)) * std)
                           .astype(dtype))
            biases.append(np.zeros(c_out, dtype=dtype))
        return cls(tuple(kernels), tuple(biases), tuple(channels))

    @classmethod
    def identity(cls, channels=CHANNEL_PLAN, dtype=np.float32) -> "CnnModel":
        """Routes channel 0 straight through; reproduces any non-negative input."""
        kernels, biases = [], []
        for l, (c_in, c_out) in enumerate(zip(channels[:-1], channels[1:])):
            k = np.zeros((c_out, c_in, KERNEL, KERNEL, KERNEL), dtype=dtype)
            # layer 5 sees the skip sum 2x
            k[0, 0, 1, 1, 1] = 0.5 if l == SKIP_TO else 1.0
            kernels.append(k)
            biases.append(np.zeros(c_out, dtype=dtype))
        return cls(tuple(kernels), tuple(biases), tuple(channels))


def conv3d_same(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """(C_in, D, H, W) -> (C_out, D, H, W) cross-correlation with zero padding."""
    _, d, hh, w = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1)))
    out = np.empty((kernel.shape[0], d, hh, w), dtype=x.dtype)
    out[...] = bias[:, None, None, None]
    for dz, dy, dx in _OFFSETS:
        window = xp[:, dz:dz + d, dy:dy + hh, dx:dx + w]
        out += np.tensordot(kernel[:, :, dz, dy, dx], window, axes=(1, 0))
    return out


def conv3d_backward(x: np.ndarray, kernel: np.ndarray, grad_out: np.ndarray,
                    need_input: bool = True):
    """Returns (d kernel, d bias, d input or None) for conv3d_same."""
    _, d, hh, w = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1)))
    d_kernel = np.empty_like(kernel)
    d_bias = grad_out.sum(axis=(1, 2, 3))
    d_xp = np.zeros_like(xp) if need_input else None
    for dz, dy, dx in _OFFSETS:
        window = xp[:, dz:dz + d, dy:dy + hh, dx:dx + w]
        d_kernel[:, :, dz, dy, dx] = np.tensordot(grad_out, window, axes=([1, 2, 3], [1, 2, 3]))
        if need_input:
            d_xp[:, dz:dz + d, dy:dy + hh, dx:dx + w] += np.tensordot(
                kernel[:, :, dz, dy, dx], grad_out, axes=(0, 0))
    d_x = d_xp[:, 1:-1, 1:-1, 1:-1] if need_input else None
    return d_kernel, d_bias.astype(kernel.dtype), d_x


def _check_patch(model: CnnModel, patch) -> np.ndarray:
    x = np.asarray(patch)
    if x.ndim != 3 or min(x.shape) < 3:
        raise PreconditionError(f"patch must be 3D with at least 3 cells per axis, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise PreconditionError("patch contains non-finite values")
    return x.astype(model.dtype, copy=False)


def _forward(model: CnnModel, x: np.ndarray):
    """Runs the network keeping every layer input and pre-activation."""
    inputs, pre = [], []
    current = x[None]
    post = [current]
    for l, (k, b) in enumerate(zip(model.kernels, model.biases)):
        inputs.append(current)
        z = conv3d_same(current, k, b)
        a = np.maximum(z, 0)
        pre.append(z)
        post.append(a)
        current = a + post[SKIP_FROM] if l + 1 == SKIP_TO else a
    return post[-1][0], inputs, pre


def cnn_forward(model: CnnModel, patch) -> np.ndarray:
    out, _, _ = _forward(model, _check_patch(model, patch))
    return out


def cnn_backward(model: CnnModel, patch, target):
    """
    Mean-squared error of the forward pass against `target` and its gradient
    for every parameter, in `model.parameters()` order.
    """
    x = _check_patch(model, patch)
    target = np.asarray(target)
    if target.shape != x.shape:
        raise PreconditionError(f"target shape {target.shape} does not match patch {x.shape}")
    out, inputs, pre = _forward(model, x)
    residual = out - target.astype(model.dtype)
    loss = float(np.mean(residual.astype(np.float64) ** 2))

    grad = (2.0 / residual.size * residual)[None].astype(model.dtype)
    d_kernels = [None] * model.layer_count
    d_biases = [None] * model.layer_count
    skip_grad = None
    for l in reversed(range(model.layer_count)):
        grad_z = grad * (pre[l] > 0)
        d_kernels[l], d_biases[l], grad = conv3d_backward(
            inputs[l], model.kernels[l], grad_z, need_input=l > 0)
        if l == SKIP_TO:
            # input of layer SKIP_TO + 1 is post[SKIP_TO] + post[SKIP_FROM]
            skip_grad = grad
        if l == SKIP_FROM and skip_grad is not None:
            grad = grad + skip_grad
    grads = []
    for dk, db in zip(d_kernels, d_biases):
        grads.extend([dk, db])
    return loss, grads


# --- Optimizer ------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        for name in ("epochs", "learning_rate", "batch_size", "beta1", "beta2", "eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"train config {name} must be positive, got {getattr(self, name)}")


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def for_model(cls, model: CnnModel) -> "AdamState":
        params = model.parameters()
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(state: AdamState, model: CnnModel, grads: list, cfg: TrainConfig):
    """One bias-corrected Adam update. Returns (model, state)."""
    params = model.parameters()
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ValueError("gradient shapes do not match the model parameters")
    t = state.step + 1
    correction1 = 1.0 - cfg.beta1 ** t
    correction2 = 1.0 - cfg.beta2 ** t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        step = cfg.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + cfg.eps)
        new_params.append((p - step).astype(p.dtype))
        new_m.append(m.astype(p.dtype))
        new_v.append(v.astype(p.dtype))
    return model.with_parameters(new_params), AdamState(new_m, new_v, t)


# --- Training data --------------------------------------------------------

@dataclass(frozen=True)
class TrainingPatch:
    input: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        if self.input.shape != self.target.shape:
            raise ValueError(f"input {self.input.shape} and target {self.target.shape} differ")
        if not (np.all(np.isfinite(self.input)) and np.all(np.isfinite(self.target))):
            raise ValueError("training patch contains non-finite values")
        if self.target.min() < 0:
            raise ValueError("training target must be non-negative")


def downsample_upsample(patch: np.ndarray, factor: int = DOWNSAMPLE) -> np.ndarray:
    d, h, w = patch.shape
    coarse = patch.reshape(d // factor, factor, h // factor, factor, w // factor, factor).mean(axis=(1, 3, 5))
    return coarse.repeat(factor, axis=0).repeat(factor, axis=1).repeat(factor, axis=2)


def blur(patch: np.ndarray, sigma: float) -> np.ndarray:
    """Separable 5-point Gaussian blur with circular padding."""
    offsets = np.arange(-2, 3)
    kernel = np.exp(-offsets ** 2 / (2.0 * sigma ** 2))
    kernel /= kernel.sum()
    out = patch
    for axis in range(3):
        out = convolve1d(out, kernel, axis=axis, mode="wrap")
    return out


def augment_patch(clean: np.ndarray, generator: np.random.Generator,
                  factor: int = DOWNSAMPLE) -> TrainingPatch:
    """
    Degrade a clean patch by a random non-empty subset of downsampling,
    circular shifting and blurring; the clean patch is the target.
    """
    clean = np.asarray(clean, dtype=np.float64)
    if any(s % factor for s in clean.shape):
        raise PreconditionError(f"patch dims {clean.shape} are not divisible by {factor}")
    ops = generator.random(3) < 0.5
    if not ops.any():
        ops[generator.integers(3)] = True
    degraded = clean
    if ops[0]:
        degraded = downsample_upsample(degraded, factor)
    if ops[1]:
        shift = tuple(int(s) for s in generator.integers(-MAX_SHIFT, MAX_SHIFT + 1, size=3))
        degraded = np.roll(degraded, shift, axis=(0, 1, 2))
    if ops[2]:
        degraded = blur(degraded, generator.uniform(*BLUR_SIGMA))
    return TrainingPatch(degraded.astype(np.float32), clean.astype(np.float32))


def _patch_start(voxel: int, size: int, n: int, generator: np.random.Generator) -> int:
    lo = max(0, voxel - size + 1)
    hi = min(voxel, n - size)
    return int(generator.integers(lo, hi + 1))


def build_dataset(solutions: list, grid: Grid3, n_patches: int = DEFAULT_PATCHES,
                  patch_size: int = DEFAULT_PATCH_SIZE, rng: RngStream = None,
                  center=None, threshold: float = ACTIVE_THRESHOLD) -> list:
    """
    Lift random (solution, snapshot) concentrations to 3D and cut cubic
    patches that contain at least one active voxel, each one augmented.
    """
    if patch_size > grid.n:
        raise PreconditionError(f"patch size {patch_size} exceeds grid size {grid.n}")
    if n_patches <= 0:
        return []
    rng = rng or RngStream(0)
    center = center if center is not None else (grid.extent / 2,) * 3
    snapshots = [state for sol in solutions for state in sol.states]
    if not snapshots:
        raise PreconditionError("no radial snapshots to build a dataset from")

    picks = rng.generator(AUGMENT).integers(len(snapshots), size=n_patches)
    dataset = [None] * n_patches
    for snap in np.unique(picks):
        state = snapshots[snap]
        lifted = lift_profile(state.r, state.conc, grid, center).values
        active = np.argwhere(lifted > threshold * lifted.max()) if lifted.max() > 0 else np.empty((0, 3))
        for k in np.flatnonzero(picks == snap):
            if len(active) == 0:
                logger.warning("snapshot at t=%g has no active region; skipping patch %d", state.time, k)
                continue
            gen = rng.generator(AUGMENT, int(k) + 1)
            voxel = active[gen.integers(len(active))]
            start = [_patch_start(int(v), patch_size, grid.n, gen) for v in voxel]
            clean = lifted[start[0]:start[0] + patch_size,
                           start[1]:start[1] + patch_size,
                           start[2]:start[2] + patch_size]
            dataset[k] = augment_patch(clean, gen)
    return [p for p in dataset if p is not None]


def train(dataset: list, cfg: TrainConfig = TrainConfig(), rng: RngStream = None,
          model: CnnModel = None, channels=CHANNEL_PLAN, progress: bool = False):
    """
    Shuffled mini-batch Adam on the mean-squared restoration error.
    Returns (model, per-epoch mean loss).
    """
    if not dataset:
        raise PreconditionError("cannot train on an empty dataset")
    rng = rng or RngStream(0)
    model = model or CnnModel.initialize(rng.generator(INIT), channels)
    state = AdamState.for_model(model)
    curve = []
    for epoch in tqdm(range(cfg.epochs), disable=not progress, desc="train"):
        order = rng.generator(SHUFFLE, epoch).permutation(len(dataset))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            total = None
            batch_loss = 0.0
            # fixed summation order keeps the reduction bit-reproducible
            for idx in batch:
                loss, grads = cnn_backward(model, dataset[idx].input, dataset[idx].target)
                batch_loss += loss
                total = grads if total is None else [t + g for t, g in zip(total, grads)]
            scale = model.dtype.type(1.0 / len(batch))
            model, state = adam_step(state, model, [g * scale for g in total], cfg)
            losses.append(batch_loss / len(batch))
        epoch_loss = float(np.mean(losses))
        if not np.isfinite(epoch_loss):
            raise StabilityError(f"training loss became non-finite in epoch {epoch + 1}")
        curve.append(epoch_loss)
        logger.info("epoch %d/%d mean mse %.6g", epoch + 1, cfg.epochs, epoch_loss)
    return model, curve


# --- Query path -----------------------------------------------------------

def active_box(conc: ScalarField3, threshold: float = ACTIVE_THRESHOLD, pad: int = ACTIVE_PAD):
    """(lo, hi) cell index bounds of cells above threshold * max, padded and clipped."""
    values = conc.values
    idx = np.argwhere(values > threshold * values.max())
    n = conc.grid.n
    lo = np.maximum(idx.min(axis=0) - pad, 0)
    hi = np.minimum(idx.max(axis=0) + pad + 1, n)
    return lo, hi


def refine(model: CnnModel, conc: ScalarField3, lo, hi) -> np.ndarray:
    """Network output on the sub-box, scaled by the field maximum."""
    scale = conc.max()
    box = conc.values[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] / scale
    return cnn_forward(model, box.astype(np.float32)).astype(np.float64) * scale


def neural_query(model: CnnModel, conc: ScalarField3, points,
                 threshold: float = ACTIVE_THRESHOLD, pad: int = ACTIVE_PAD):
    """
    One forward pass over the active region, then trilinear values and
    central-difference gradients of the refined box at the query points.
    Points outside the box fall back to the raw field.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if conc.max() <= 0:
        return np.zeros(len(pts)), np.zeros((len(pts), 3))
    lo, hi = active_box(conc, threshold, pad)
    if np.any(hi - lo < 3):
        logger.warning("active box %s-%s too small for the network; using trilinear", lo, hi)
        return batch_query(conc, pts)

    h = conc.grid.h
    refined = refine(model, conc, lo, hi)
    origin = (lo + 0.5) * h
    inside = np.all((pts >= lo * h) & (pts <= hi * h), axis=1)

    values, grads = batch_query(conc, pts[~inside]) if not inside.all() else (None, None)
    out_values = np.empty(len(pts))
    out_grads = np.empty((len(pts), 3))
    if not inside.all():
        out_values[~inside] = values
        out_grads[~inside] = grads

    sel = pts[inside]
    out_values[inside], _ = trilinear_sample(refined, origin, h, sel, gradient=False)
    for axis, component in enumerate(np.gradient(refined, h)):
        out_grads[inside, axis], _ = trilinear_sample(component, origin, h, sel, gradient=False)
    return out_values, out_grads


@dataclass
class NeuralInterpolator:
    model: CnnModel
    threshold: float = ACTIVE_THRESHOLD
    pad: int = ACTIVE_PAD
    name: str = field(default="sipf-neural", init=False)

    def query(self, conc: ScalarField3, points: np.ndarray):
        return neural_query(self.model, conc, points, self.threshold, self.pad)


# --- Weights file ---------------------------------------------------------

def save_model(model: CnnModel, path):
    chunks = [struct.pack("<4sII", MODEL_MAGIC, MODEL_VERSION, model.layer_count)]
    for k, b in zip(model.kernels, model.biases):
        chunks.append(struct.pack("<5I", *k.shape))
        chunks.append(np.ascontiguousarray(k, dtype="<f4").tobytes())
        chunks.append(struct.pack("<I", b.shape[0]))
        chunks.append(np.asarray(b, dtype="<f4").tobytes())
    try:
        with open(path, "wb") as f:
            for chunk in chunks:
                f.write(chunk)
    except Exception:
        if os.path.exists(path):
            os.remove(path)
        raise
    logger.info("saved model (%d parameters) to %s", model.parameter_count(), path)


class _Reader:
    def __init__(self, path, data: bytes):
        self.path = path
        self.data = data
        self.offset = 0

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.data):
            raise FieldFormatError(f"{self.path}: truncated model file")
        values = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += size
        return values

    def floats(self, count: int) -> np.ndarray:
        size = 4 * count
        if self.offset + size > len(self.data):
            raise FieldFormatError(f"{self.path}: truncated model file")
        values = np.frombuffer(self.data, dtype="<f4", count=count, offset=self.offset)
        self.offset += size
        return values.astype(np.float32)


def load_model(path, expected_channels=CHANNEL_PLAN) -> CnnModel:
    with open(path, "rb") as f:
        reader = _Reader(path, f.read())
    magic, version, layers = reader.unpack("<4sII")
    if magic != MODEL_MAGIC:
        raise FieldFormatError(f"{path}: bad magic {magic!r}, expected {MODEL_MAGIC!r}")
    if version != MODEL_VERSION:
        raise FieldFormatError(f"{path}: unsupported model version {version}")
    if layers != 6:
        raise FieldFormatError(f"{path}: model has {layers} layers, expected 6")
    kernels, biases = [], []
    channels = []
    for l in range(layers):
        c_out, c_in, kd, kh, kw = reader.unpack("<5I")
        if (kd, kh, kw) != (KERNEL,) * 3:
            raise FieldFormatError(f"{path}: layer {l + 1} kernel is {kd}x{kh}x{kw}, expected 3x3x3")
        if channels and c_in != channels[-1]:
            raise FieldFormatError(
                f"{path}: layer {l + 1} takes {c_in} channels but layer {l} produces {channels[-1]}")
        if not channels:
            channels.append(c_in)
        channels.append(c_out)
        kernel = reader.floats(c_out * c_in * KERNEL ** 3).reshape(c_out, c_in, KERNEL, KERNEL, KERNEL)
        (bias_count,) = reader.unpack("<I")
        if bias_count != c_out:
            raise FieldFormatError(f"{path}: layer {l + 1} has {bias_count} biases for {c_out} outputs")
        kernels.append(kernel)
        biases.append(reader.floats(bias_count))
    if reader.offset != len(reader.data):
        raise FieldFormatError(f"{path}: {len(reader.data) - reader.offset} trailing bytes")
    found = tuple(channels)
    if expected_channels is not None and found != tuple(expected_channels):
        raise FieldFormatError(
            f"{path}: channel plan {found} does not match expected {tuple(expected_channels)}")
    try:
        return CnnModel(tuple(kernels), tuple(biases), found)
    except ValueError as e:
        raise FieldFormatError(f"{path}: {e}") from e
