"""Cameras, ray sampling, and differentiable transmittance compositing.

Rays follow the OpenGL-style convention: the camera looks down -z, pixel
(u, v) maps to camera-space direction ((u+0.5-W/2)/f, -(v+0.5-H/2)/f, -1)
before rotation into world space. Compositing converts raw field outputs
into pixel colors: relu on density, sigmoid on color, alpha from the
per-interval optical depth, transmittance as the exponentiated exclusive
cumulative sum (algebraically the product of (1 - alpha) prefixes, but
with a simpler backward rule).

Rendering is embarrassingly parallel over ray chunks given read-only
parameters; each chunk owns its graph.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import ndtensor as nd

LAST_INTERVAL_CAP = 1e10


class PoseError(ValueError):
    """Camera pose fails validation (non-orthonormal rotation, bad focal)."""


@dataclass(frozen=True)
class CameraModel:
    camera_to_world: np.ndarray  # 4x4, right-handed, looks down -z
    focal: float  # pixels
    width: int
    height: int

    def __post_init__(self):
        m = np.asarray(self.camera_to_world, dtype=np.float64)
        if m.shape != (4, 4):
            raise PoseError(f"camera_to_world has shape {m.shape}, expected (4, 4)")
        r = m[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-4):
            raise PoseError("rotation block is not orthonormal to 1e-4")
        if self.focal <= 0:
            raise PoseError(f"focal must be positive, got {self.focal}")
        object.__setattr__(self, "camera_to_world", m)


@dataclass
class RayBatch:
    origins: np.ndarray  # (z, 3) world units
    directions: np.ndarray  # (z, 3) unit vectors
    near: float
    far: float
    target_rgb: Optional[np.ndarray] = None  # (z, 3) in [0,1], training only

    def __post_init__(self):
        norms = np.linalg.norm(self.directions, axis=1)
        assert np.abs(norms - 1.0).max() < 1e-5, "ray directions must be unit length"
        assert self.near < self.far

    @property
    def count(self) -> int:
        return self.origins.shape[0]


@dataclass
class SamplePoints:
    t_vals: np.ndarray  # (z, n) float64, strictly increasing per ray
    positions: np.ndarray  # (z, n, 3) float32 = o + t*d


@dataclass
class RenderOutput:
    rgb: nd.Tensor  # (z, 3) in [0, 1]
    weights: nd.Tensor  # (z, n) in [0, 1]
    accumulated_alpha: nd.Tensor  # (z,)
    depth: nd.Tensor  # (z,) expected termination distance


@dataclass(frozen=True)
class RenderConfig:
    n_coarse: int = 64
    n_fine: int = 128
    chunk_rays: int = 1024
    background: tuple = (1.0, 1.0, 1.0)
    near: Optional[float] = None  # default: scene bounds
    far: Optional[float] = None


# ---------------------------------------------------------------- cameras


def generate_rays(
    camera: CameraModel, pixel_ids: np.ndarray, near: float = 2.0, far: float = 6.0
) -> RayBatch:
    """Rays through the centers of the given (u, v) pixels.

    pixel_ids: (k, 2) integer array of (column, row) pairs.
    """
    ids = np.asarray(pixel_ids)
    if ids.ndim == 1:
        ids = ids[None, :]
    u = ids[:, 0].astype(np.float64)
    v = ids[:, 1].astype(np.float64)
    if (u < 0).any() or (u >= camera.width).any() or (v < 0).any() or (v >= camera.height).any():
        raise IndexError(
            f"pixel ids outside {camera.width}x{camera.height} image bounds"
        )
    dirs_cam = np.stack(
        [
            (u + 0.5 - camera.width / 2.0) / camera.focal,
            -(v + 0.5 - camera.height / 2.0) / camera.focal,
            -np.ones_like(u),
        ],
        axis=-1,
    )
    rot = camera.camera_to_world[:3, :3]
    dirs_world = dirs_cam @ rot.T
    dirs_world /= np.linalg.norm(dirs_world, axis=1, keepdims=True)
    origins = np.broadcast_to(camera.camera_to_world[:3, 3], dirs_world.shape)
    return RayBatch(
        origins=origins.astype(np.float32),
        directions=dirs_world.astype(np.float32),
        near=near,
        far=far,
    )


def all_pixel_ids(width: int, height: int) -> np.ndarray:
    """(H*W, 2) array of (u, v) pairs in row-major image order."""
    u, v = np.meshgrid(np.arange(width), np.arange(height))
    return np.stack([u.reshape(-1), v.reshape(-1)], axis=-1)


# --------------------------------------------------------------- sampling


def stratified_sample(batch: RayBatch, n: int, jitter: bool, rng=None) -> SamplePoints:
    """One t per equal bin of [near, far]: midpoints, or uniform in-bin."""
    assert n >= 2
    z = batch.count
    span = batch.far - batch.near
    if jitter:
        offsets = rng.uniform(0.0, 1.0, size=(z, n))
    else:
        offsets = np.full((z, n), 0.5)
    t = batch.near + (np.arange(n) + offsets) * (span / n)  # float64
    positions = batch.origins[:, None, :] + t[:, :, None] * batch.directions[:, None, :]
    return SamplePoints(t_vals=t, positions=positions.astype(np.float32))


def hierarchical_resample(
    batch: RayBatch,
    coarse_weights: np.ndarray,
    t_coarse: np.ndarray,
    n_fine: int,
    rng,
) -> SamplePoints:
    """Inverse-CDF draws from the piecewise-constant PDF over the coarse
    stratification bins, proportional to weights + 1e-5; the fine t are
    merged and sorted with the coarse t."""
    z, n_bins = coarse_weights.shape
    assert (coarse_weights >= 0).all(), "weights must be nonnegative"
    pdf = coarse_weights.astype(np.float64) + 1e-5
    cdf = np.cumsum(pdf, axis=1)
    cdf = cdf / cdf[:, -1:]
    u = rng.uniform(0.0, 1.0, size=(z, n_fine))
    # searchsorted per ray: bin index whose cdf first exceeds u
    idx = np.empty((z, n_fine), dtype=np.int64)
    for i in range(z):
        idx[i] = np.searchsorted(cdf[i], u[i], side="right")
    idx = np.clip(idx, 0, n_bins - 1)
    cdf_lo = np.take_along_axis(np.concatenate([np.zeros((z, 1)), cdf], axis=1), idx, axis=1)
    cdf_hi = np.take_along_axis(cdf, idx, axis=1)
    frac = (u - cdf_lo) / np.maximum(cdf_hi - cdf_lo, 1e-12)
    bin_width = (batch.far - batch.near) / n_bins
    t_fine = batch.near + (idx + frac) * bin_width
    t_all = np.sort(np.concatenate([np.asarray(t_coarse, np.float64), t_fine], axis=1), axis=1)
    positions = batch.origins[:, None, :] + t_all[:, :, None] * batch.directions[:, None, :]
    return SamplePoints(t_vals=t_all, positions=positions.astype(np.float32))


# ------------------------------------------------------------- composite


def composite(
    delta: nd.Tensor,
    c: nd.Tensor,
    t_vals: np.ndarray,
    background,
    far_bound: Optional[float] = None,
) -> RenderOutput:
    """Transmittance compositing of raw field outputs along each ray.

    delta: (z, n) raw densities (relu applied here); c: (z, n, 3) raw colors
    (sigmoid applied here). The last interval extends to a 1e10 cap unless
    far_bound is given, in which case it ends there (finite media).
    """
    t = np.asarray(t_vals, dtype=np.float64)
    z, n = t.shape
    if delta.shape != (z, n):
        raise nd.DimensionError(f"composite: delta {delta.shape} vs t {t.shape}")
    if c.shape != (z, n, 3):
        raise nd.DimensionError(f"composite: color {c.shape}, expected {(z, n, 3)}")
    if not (np.diff(t, axis=1) > 0).all():
        raise ValueError("composite: t_vals must be strictly increasing per ray")
    if far_bound is None:
        last = np.full((z, 1), LAST_INTERVAL_CAP)
    else:
        last = far_bound - t[:, -1:]
    dists = np.concatenate([np.diff(t, axis=1), last], axis=1).astype(np.float32)

    sigma = nd.relu(delta)
    tau = nd.hadamard(sigma, nd.Tensor(dists))  # optical depth per interval
    transmittance = nd.exp(nd.scale_shift(nd.exclusive_cumsum(tau, axis=1), -1.0))
    alpha = nd.scale_shift(nd.exp(nd.scale_shift(tau, -1.0)), -1.0, 1.0)
    weights = nd.hadamard(transmittance, alpha)
    acc = nd.tensor_sum(weights, axis=1)

    rgb_samples = nd.sigmoid(c)
    w3 = nd.repeat_last(nd.reshape(weights, (z, n, 1)), 3)
    fg = nd.tensor_sum(nd.hadamard(w3, rgb_samples), axis=1)
    bg = np.broadcast_to(np.asarray(background, dtype=np.float32), (z, 3)).copy()
    leftover = nd.repeat_last(nd.reshape(nd.scale_shift(acc, -1.0, 1.0), (z, 1)), 3)
    rgb = nd.add(fg, nd.hadamard(leftover, nd.Tensor(bg)))
    depth = nd.tensor_sum(nd.hadamard(weights, nd.Tensor(t)), axis=1)
    return RenderOutput(rgb=rgb, weights=weights, accumulated_alpha=acc, depth=depth)


# --------------------------------------------------------------- renderer

FieldFn = Callable[[np.ndarray, np.ndarray], tuple]


def render_rays(
    coarse_fn: FieldFn,
    fine_fn: FieldFn,
    batch: RayBatch,
    cfg: RenderConfig,
    rng,
    jitter: bool = False,
):
    """Coarse pass, importance resampling, fine pass. Returns both
    RenderOutputs and the sample points used by the fine pass."""
    z = batch.count
    coarse_pts = stratified_sample(batch, cfg.n_coarse, jitter, rng)
    dirs_per_sample = np.repeat(batch.directions, cfg.n_coarse, axis=0)
    delta, c = coarse_fn(coarse_pts.positions.reshape(-1, 3), dirs_per_sample)
    out_c = composite(
        nd.reshape(delta, (z, cfg.n_coarse)),
        nd.reshape(c, (z, cfg.n_coarse, 3)),
        coarse_pts.t_vals,
        cfg.background,
    )

    fine_pts = hierarchical_resample(
        batch, out_c.weights.values.copy(), coarse_pts.t_vals, cfg.n_fine, rng
    )
    n_all = cfg.n_coarse + cfg.n_fine
    dirs_fine = np.repeat(batch.directions, n_all, axis=0)
    delta_f, c_f = fine_fn(fine_pts.positions.reshape(-1, 3), dirs_fine)
    out_f = composite(
        nd.reshape(delta_f, (z, n_all)),
        nd.reshape(c_f, (z, n_all, 3)),
        fine_pts.t_vals,
        cfg.background,
    )
    return out_c, out_f


def render_image(
    coarse_fn: FieldFn,
    fine_fn: FieldFn,
    camera: CameraModel,
    near: float,
    far: float,
    cfg: RenderConfig,
    seed: int = 0,
):
    """Full-frame render in chunks of cfg.chunk_rays (the final chunk is
    zero-padded to full size and the padding dropped). Deterministic for a
    given seed. Returns (H, W, 3) rgb in [0,1] and (H, W) depth."""
    ids = all_pixel_ids(camera.width, camera.height)
    total = ids.shape[0]
    rgb_rows = np.empty((total, 3), dtype=np.float32)
    depth_rows = np.empty(total, dtype=np.float32)
    near = cfg.near if cfg.near is not None else near
    far = cfg.far if cfg.far is not None else far
    with nd.no_grad():
        for chunk_index, start in enumerate(range(0, total, cfg.chunk_rays)):
            chunk = ids[start : start + cfg.chunk_rays]
            pad = cfg.chunk_rays - chunk.shape[0]
            if pad:
                chunk = np.concatenate([chunk, np.repeat(chunk[-1:], pad, axis=0)])
            batch = generate_rays(camera, chunk, near=near, far=far)
            rng = np.random.default_rng([seed, chunk_index])
            _, out_f = render_rays(coarse_fn, fine_fn, batch, cfg, rng, jitter=False)
            keep = cfg.chunk_rays - pad
            rgb_rows[start : start + keep] = out_f.rgb.values[:keep]
            depth_rows[start : start + keep] = out_f.depth.values[:keep]
    h, w = camera.height, camera.width
    return rgb_rows.reshape(h, w, 3), depth_rows.reshape(h, w)


# ------------------------------------------------------------------- png


def write_png(path, image: np.ndarray) -> None:
    """8-bit RGB PNG; values clamped to [0,1], scaled by 255, half-up."""
    from PIL import Image

    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    quantized = np.floor(arr * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(quantized, mode="RGB").save(path)


def read_png(path) -> np.ndarray:
    """(H, W, 4) float32 RGBA in [0,1]; RGB files get alpha = 1."""
    from PIL import Image

    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGBA"), dtype=np.float32) / 255.0
    return arr
