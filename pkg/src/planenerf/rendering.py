"""Ray generation, stratified and grid-guided sampling, and
differentiable alpha compositing.

Rays live in normalized scene coordinates (the padded scene box mapped to
the unit cube) with unit directions; t values measure distance in that
space. Pinhole convention: camera looks down +z, x right, y down, and the
direction of pixel index (cx, cy) under an identity pose is exactly
(0, 0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, exclusive_cumsum, exp, reduce_sum, reshape
from .grid import SceneBounds


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    c2w: np.ndarray  # (4, 4) row-major camera-to-world
    near: float
    far: float

    def __post_init__(self):
        self.c2w = np.asarray(self.c2w, dtype=np.float64)
        if self.c2w.shape != (4, 4):
            raise ValueError(f"c2w must be 4x4, got {self.c2w.shape}")
        rot = self.c2w[:3, :3]
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-4):
            raise ValueError("camera rotation block is not orthonormal")
        if not (self.near < self.far):
            raise ValueError(f"near {self.near} must be < far {self.far}")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def pixel_grid(self) -> np.ndarray:
        """All (x, y) pixel indices, row-major, shape (W*H... rows*cols, 2)."""
        ys, xs = np.mgrid[0:self.height, 0:self.width]
        return np.stack([xs.ravel(), ys.ravel()], axis=1)


@dataclass
class RayBatch:
    """Rays in normalized scene coordinates; invalid rays missed the box."""

    origins: np.ndarray    # (N, 3)
    dirs: np.ndarray       # (N, 3), unit length
    t_near: np.ndarray     # (N,)
    t_far: np.ndarray      # (N,)
    valid: np.ndarray      # (N,) bool

    def __len__(self) -> int:
        return self.origins.shape[0]

    def select(self, mask) -> "RayBatch":
        return RayBatch(self.origins[mask], self.dirs[mask],
                        self.t_near[mask], self.t_far[mask], self.valid[mask])


@dataclass
class RenderOutput:
    color: Tensor          # (N, 3)
    weights: Tensor        # (N, S)
    transmittance: Tensor  # (N,)
    depth: Tensor          # (N,)


def _slab_intersect(origins, dirs, eps=1e-12):
    """Entry/exit parameters of rays against the unit cube."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / np.where(np.abs(dirs) < eps, np.where(dirs < 0, -eps, eps), dirs)
    t0 = (0.0 - origins) * inv
    t1 = (1.0 - origins) * inv
    t_enter = np.minimum(t0, t1).max(axis=1)
    t_exit = np.maximum(t0, t1).min(axis=1)
    return t_enter, t_exit


def generate_rays(camera: Camera, pixels: np.ndarray, bounds: SceneBounds) -> RayBatch:
    """Rays through the given (x, y) pixel indices, clipped to the scene.

    Directions are built in camera space as ((x - cx)/fx, (y - cy)/fy, 1),
    rotated to world space, then mapped to normalized space and unit
    normalized. Rays whose segment misses the unit cube (or whose world
    near/far window is empty inside it) are flagged invalid.
    """
    pixels = np.asarray(pixels)
    if pixels.ndim != 2 or pixels.shape[1] != 2:
        raise ValueError(f"pixels must be (N, 2), got {pixels.shape}")
    if (pixels[:, 0].min() < 0 or pixels[:, 0].max() >= camera.width
            or pixels[:, 1].min() < 0 or pixels[:, 1].max() >= camera.height):
        raise ValueError("pixel indices outside the image bounds")
    d_cam = np.stack([
        (pixels[:, 0] - camera.cx) / camera.fx,
        (pixels[:, 1] - camera.cy) / camera.fy,
        np.ones(len(pixels)),
    ], axis=1)
    rot = camera.c2w[:3, :3]
    d_world = d_cam @ rot.T
    d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
    o_world = np.broadcast_to(camera.c2w[:3, 3], d_world.shape)

    origins = bounds.to_normalized(o_world)
    d_scaled = bounds.direction_to_normalized(d_world)
    scale = np.linalg.norm(d_scaled, axis=1, keepdims=True)
    dirs = d_scaled / scale

    t_enter, t_exit = _slab_intersect(origins, dirs)
    t_near = np.maximum(t_enter, camera.near * scale[:, 0])
    t_far = np.minimum(t_exit, camera.far * scale[:, 0])
    valid = (t_far > t_near) & (t_far > 0)
    t_near = np.maximum(t_near, 0.0)
    return RayBatch(origins=origins, dirs=dirs, t_near=t_near, t_far=t_far, valid=valid)


def stratified_sample(t_near: np.ndarray, t_far: np.ndarray, count: int,
                      jitter: bool, rng: np.random.Generator | None = None) -> np.ndarray:
    """One sample per equal bin of [t_near, t_far] for each ray -> (N, count).

    Bin centers when jitter is off, uniform within each bin when on;
    either way the samples are strictly increasing.
    """
    t_near = np.atleast_1d(np.asarray(t_near, dtype=np.float64))
    t_far = np.atleast_1d(np.asarray(t_far, dtype=np.float64))
    if count < 1:
        raise ValueError("need at least one sample per ray")
    if np.any(t_far <= t_near):
        raise ValueError("empty ray: t_far <= t_near")
    if jitter:
        if rng is None:
            raise ValueError("jittered sampling needs an rng")
        offsets = rng.random((t_near.shape[0], count))
    else:
        offsets = np.full((t_near.shape[0], count), 0.5)
    fractions = (np.arange(count) + offsets) / count
    return t_near[:, None] + fractions * (t_far - t_near)[:, None]


def grid_guided_sample(coarse_weights: np.ndarray, t_near: np.ndarray,
                       t_far: np.ndarray, count: int,
                       rng: np.random.Generator,
                       weight_floor: float = 0.01) -> np.ndarray:
    """Inverse-transform samples from the piecewise-constant PDF the
    coarse compositing weights induce on the coarse bins -> (N, count).

    The floor keeps every bin reachable even where the coarse grid says
    empty; rays with no positive mass at all fall back to stratified
    centers. Output is sorted and inside [t_near, t_far].
    """
    w = np.asarray(coarse_weights, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError(f"coarse weights must be (N, S), got {w.shape}")
    if np.any(w < 0):
        raise ValueError("compositing weights must be non-negative")
    n, s = w.shape
    t_near = np.asarray(t_near, dtype=np.float64)
    t_far = np.asarray(t_far, dtype=np.float64)
    if t_near.shape != (n,) or t_far.shape != (n,):
        raise ValueError("t bounds must match the weight rows")

    pdf = w + weight_floor
    total = pdf.sum(axis=1)
    dead = total <= 0
    if np.any(dead):  # only possible with the floor disabled
        fallback = stratified_sample(t_near[dead], t_far[dead], count, jitter=False)
        pdf[dead] = 1.0
        total[dead] = s
    pdf = pdf / total[:, None]
    cdf = np.cumsum(pdf, axis=1)
    cdf[:, -1] = 1.0

    u = rng.random((n, count))
    # one global searchsorted: offset each row's cdf and u by the row index
    row = np.arange(n, dtype=np.float64)[:, None]
    flat_cdf = (cdf + row).ravel()
    idx = np.searchsorted(flat_cdf, (u + row).ravel(), side="right")
    bins = (idx - np.repeat(np.arange(n), count) * s).reshape(n, count)
    bins = np.clip(bins, 0, s - 1)

    cdf_lo = np.concatenate([np.zeros((n, 1)), cdf[:, :-1]], axis=1)
    take = np.arange(n)[:, None]
    p_bin = pdf[take, bins]
    frac = np.where(p_bin > 0, (u - cdf_lo[take, bins]) / np.where(p_bin > 0, p_bin, 1.0), 0.0)
    frac = np.clip(frac, 0.0, 1.0)

    width = (t_far - t_near)[:, None] / s
    ts = t_near[:, None] + (bins + frac) * width
    ts = np.sort(ts, axis=1)
    if np.any(dead):
        ts[dead] = fallback
    return ts


def composite(sigmas: Tensor, colors: Tensor, ts: np.ndarray, t_far: np.ndarray,
              background: np.ndarray) -> RenderOutput:
    """Alpha-composite per-sample density/color along each ray.

    sigmas (N, S) and colors (N, S, 3) are graph tensors; ts (N, S) are
    sorted sample positions and t_far the ray exit, both plain arrays
    (sampling positions carry no gradient). delta_i = t_{i+1} - t_i with
    the last interval closed by t_far; alpha_i = 1 - exp(-sigma_i
    delta_i); w_i = T_i alpha_i with T the accumulated transmittance; the
    remaining transmittance falls on the background color.
    """
    ts = np.asarray(ts)
    n, s = ts.shape
    if sigmas.shape != (n, s):
        raise ValueError(f"sigmas shape {sigmas.shape} does not match samples {(n, s)}")
    if colors.shape != (n, s, 3):
        raise ValueError(f"colors shape {colors.shape} does not match samples {(n, s)}")
    if np.any(np.diff(ts, axis=1) < 0):
        raise ValueError("sample positions must be sorted")
    if np.any(sigmas.data < 0):
        raise ValueError("densities must be non-negative")

    dtype = sigmas.data.dtype
    t_far = np.asarray(t_far).reshape(n)
    deltas = np.empty((n, s), dtype=dtype)
    deltas[:, :-1] = np.diff(ts, axis=1)
    deltas[:, -1] = np.maximum(t_far - ts[:, -1], 0.0)

    sdelta = sigmas * Tensor(deltas)
    trans = exp(-exclusive_cumsum(sdelta, axis=1))      # T_i, (N, S)
    alpha = 1.0 - exp(-sdelta)
    weights = trans * alpha
    t_final = exp(-reduce_sum(sdelta, axis=1))          # (N,)

    fg = reduce_sum(reshape(weights, (n, s, 1)) * colors, axis=1)
    bg = reshape(t_final, (n, 1)) * Tensor(np.asarray(background, dtype=dtype))
    color = fg + bg
    depth = reduce_sum(weights * Tensor(ts.astype(dtype)), axis=1)
    return RenderOutput(color=color, weights=weights, transmittance=t_final, depth=depth)
