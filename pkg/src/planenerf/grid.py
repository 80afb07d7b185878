"""Factorized multi-resolution ground feature planes.

Each level holds separately learned density and appearance factors; a
factor is an (R, H, W) xy-plane matrix plus an (R, D_z) z-axis vector,
and the implied dense grid value is their channel-wise outer product.
Continuous queries bilinearly interpolate the plane, linearly interpolate
the z vector, and multiply; `densify` materializes the full grid with
explicit loops as the test oracle for that claim.

All queries are in normalized scene coordinates: the scene bounding box,
expanded by 5% padding, maps affinely to the unit cube.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as kernels
from .autodiff import Tensor, concat, make_node

DENSIFY_CAP = 2 ** 24


@dataclass(frozen=True)
class SceneBounds:
    """Affine map between world space and the normalized unit cube."""

    lo: np.ndarray  # (3,) padded min corner, world units
    hi: np.ndarray  # (3,) padded max corner

    PADDING = 0.05

    @classmethod
    def from_aabb(cls, aabb) -> "SceneBounds":
        aabb = np.asarray(aabb, dtype=np.float64)
        lo, hi = aabb[0], aabb[1]
        if np.any(hi <= lo):
            raise ValueError(f"degenerate scene AABB: {aabb.tolist()}")
        pad = cls.PADDING * (hi - lo)
        return cls(lo=lo - pad, hi=hi + pad)

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo

    def to_normalized(self, pts: np.ndarray) -> np.ndarray:
        return (np.asarray(pts, dtype=np.float64) - self.lo) / self.extent

    def to_world(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=np.float64) * self.extent + self.lo

    def direction_to_normalized(self, d: np.ndarray) -> np.ndarray:
        """Map a world direction; the result is NOT unit length."""
        return np.asarray(d, dtype=np.float64) / self.extent


@dataclass
class PlaneFactor:
    """One resolution level of one field (density or appearance)."""

    m_xy: Tensor  # (R, H, W)
    v_z: Tensor   # (R, D_z)

    def __post_init__(self):
        r, h, w = self.m_xy.shape
        rv, d = self.v_z.shape
        if rv != r:
            raise ValueError(f"channel mismatch: plane R={r}, vector R={rv}")
        if r < 1:
            raise ValueError("factor needs at least one channel")
        if min(h, w, d) < 2:
            raise ValueError(f"resolution {h}x{w}x{d} too small to interpolate")

    @property
    def channels(self) -> int:
        return self.m_xy.shape[0]

    @property
    def resolution(self) -> tuple[int, int, int]:
        """(H, W, D_z)."""
        return (self.m_xy.shape[1], self.m_xy.shape[2], self.v_z.shape[1])

    def parameter_count(self) -> int:
        return self.m_xy.data.size + self.v_z.data.size


@dataclass
class PyramidLevel:
    density: PlaneFactor
    appearance: PlaneFactor

    def __post_init__(self):
        if self.density.resolution != self.appearance.resolution:
            raise ValueError("density/appearance factors of a level must share resolution")


@dataclass
class FeaturePyramid:
    """Levels ordered fine to coarse (level l+1 is level l downsampled)."""

    levels: list[PyramidLevel]
    aabb: np.ndarray = field(default_factory=lambda: np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]))

    def feature_dim(self, kind: str) -> int:
        return sum(getattr(lv, kind).channels for lv in self.levels)

    def parameter_count(self) -> int:
        return sum(lv.density.parameter_count() + lv.appearance.parameter_count()
                   for lv in self.levels)

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for l, lv in enumerate(self.levels):
            for kind in ("density", "appearance"):
                factor = getattr(lv, kind)
                out[f"level{l}.{kind}.M_xy"] = factor.m_xy
                out[f"level{l}.{kind}.v_z"] = factor.v_z
        return out

    def bounds(self) -> SceneBounds:
        return SceneBounds.from_aabb(self.aabb)


# -- differentiable lookup ops --------------------------------------------------


def _plane_lookup(plane: Tensor, xs: np.ndarray, ys: np.ndarray) -> Tensor:
    _, height, width = plane.shape
    data = kernels.plane_gather(plane.data, xs, ys)

    def vjp(g):
        return (kernels.plane_scatter(np.ascontiguousarray(g), xs, ys, height, width),)

    return make_node(data, (plane,), vjp)


def _zvec_lookup(vec: Tensor, zs: np.ndarray) -> Tensor:
    depth = vec.shape[1]
    data = kernels.zvec_gather(vec.data, zs)

    def vjp(g):
        return (kernels.zvec_scatter(np.ascontiguousarray(g), zs, depth),)

    return make_node(data, (vec,), vjp)


def sample_factor(factor: PlaneFactor, points: np.ndarray) -> Tensor:
    """Continuous features of one factor at normalized points (N, 3) -> (N, R)."""
    h, w, d = factor.resolution
    dtype = factor.m_xy.data.dtype
    pts = np.asarray(points)
    xs = np.ascontiguousarray(pts[:, 0] * (w - 1), dtype=dtype)
    ys = np.ascontiguousarray(pts[:, 1] * (h - 1), dtype=dtype)
    zs = np.ascontiguousarray(pts[:, 2] * (d - 1), dtype=dtype)
    return _plane_lookup(factor.m_xy, xs, ys) * _zvec_lookup(factor.v_z, zs)


def sample_features(pyramid: FeaturePyramid, points: np.ndarray, kind: str) -> Tensor:
    """Multi-resolution features at normalized points.

    Channels concatenate within a level, levels concatenate coarse to
    fine, giving (N, sum of per-level R). Differentiable w.r.t. plane and
    vector entries; points are plain arrays and carry no gradient.
    """
    if kind not in ("density", "appearance"):
        raise ValueError(f"unknown feature kind {kind!r}")
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points must be (N, 3), got {pts.shape}")
    if pts.size and (pts.min() < 0.0 or pts.max() > 1.0):
        raise ValueError("points outside the unit cube; cull or clamp before sampling")
    parts = [sample_factor(getattr(lv, kind), pts) for lv in reversed(pyramid.levels)]
    return parts[0] if len(parts) == 1 else concat(parts, axis=1)


# -- oracle and construction ----------------------------------------------------


def densify(factor: PlaneFactor, cap: int = DENSIFY_CAP) -> np.ndarray:
    """Materialize the dense (R, D_z, H, W) grid implied by a factor.

    Explicit loops on purpose: this is the reference the continuous
    sampler is tested against, so it must stay independent of it.
    """
    h, w, d = factor.resolution
    r = factor.channels
    if r * d * h * w > cap:
        raise ValueError(f"densify of {r}x{d}x{h}x{w} exceeds cap {cap}")
    m_xy = factor.m_xy.data
    v_z = factor.v_z.data
    out = np.empty((r, d, h, w), dtype=m_xy.dtype)
    for ri in range(r):
        for k in range(d):
            for j in range(h):
                for i in range(w):
                    out[ri, k, j, i] = v_z[ri, k] * m_xy[ri, j, i]
    return out


def level_resolutions(base_resolution, downsample_factors) -> list[tuple[int, int, int]]:
    h, w, d = base_resolution
    out = []
    for f in downsample_factors:
        out.append((max(2, h // f), max(2, w // f), max(2, d // f)))
    return out


def build_pyramid(base_resolution, r_sigma: int = 8, r_c: int = 16,
                  downsample_factors=(1, 4, 16), init_scale: float = 0.1,
                  seed: int = 0, aabb=None, dtype=np.float32) -> FeaturePyramid:
    """Random pyramid, i.i.d. uniform in [-init_scale, init_scale].

    Deterministic given the seed; draw order is fixed (per level: density
    plane, density vector, appearance plane, appearance vector).
    """
    if min(base_resolution) < 2:
        raise ValueError(f"base resolution {base_resolution} too small to interpolate")
    rng = np.random.default_rng(seed)

    def factor(channels: int, res) -> PlaneFactor:
        h, w, d = res
        m = rng.uniform(-init_scale, init_scale, size=(channels, h, w))
        v = rng.uniform(-init_scale, init_scale, size=(channels, d))
        return PlaneFactor(m_xy=Tensor(m.astype(dtype), requires_grad=True),
                           v_z=Tensor(v.astype(dtype), requires_grad=True))

    levels = [PyramidLevel(density=factor(r_sigma, res), appearance=factor(r_c, res))
              for res in level_resolutions(base_resolution, downsample_factors)]
    if aabb is None:
        aabb = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
    return FeaturePyramid(levels=levels, aabb=np.asarray(aabb, dtype=np.float64))


def default_base_resolution(aabb, plane_resolution: int) -> tuple[int, int, int]:
    """Scale the z-vector resolution by the scene's relative height,
    clamped to [16, 256]; plane resolution is used for both xy axes."""
    aabb = np.asarray(aabb, dtype=np.float64)
    extent = aabb[1] - aabb[0]
    ratio = extent[2] / max(extent[0], extent[1])
    d_z = int(np.clip(round(plane_resolution * ratio), 16, 256))
    return (plane_resolution, plane_resolution, d_z)


def export_plane_images(pyramid: FeaturePyramid, directory) -> list[Path]:
    """One grayscale PNG per (level, kind, channel), min-max normalized
    per channel; a constant channel renders mid-gray."""
    from PIL import Image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for l, lv in enumerate(pyramid.levels):
        for kind in ("density", "appearance"):
            planes = getattr(lv, kind).m_xy.data
            for r in range(planes.shape[0]):
                img = planes[r]
                lo, hi = float(img.min()), float(img.max())
                if hi > lo:
                    norm = (img - lo) / (hi - lo)
                else:
                    norm = np.full_like(img, 0.5)
                path = directory / f"level{l}_{kind}_c{r:02d}.png"
                Image.fromarray(np.round(norm * 255.0).astype(np.uint8), mode="L").save(path)
                written.append(path)
    return written
