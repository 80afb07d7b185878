"""The two-branch scene model: feature pyramid, grid-branch heads, and
the NeRF branch, with batched render paths for both branches.

The grid branch renders from stratified coarse samples. The NeRF branch
renders from the union of the coarse samples and fine samples drawn from
the coarse compositing weights (detached), so it never sees fewer points
than the grid branch.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .autodiff import Tensor, reshape
from .grid import (FeaturePyramid, SceneBounds, build_pyramid,
                   default_base_resolution, sample_features)
from .heads import (GridBranchHeads, NerfBranch, PEConfig,
                    grid_branch_eval_encoded, nerf_branch_eval_encoded)
from .rendering import RayBatch, RenderOutput, composite, grid_guided_sample, stratified_sample


def ray_points(rays: RayBatch, ts: np.ndarray) -> np.ndarray:
    """Sample positions (N, S, 3) in normalized coordinates, clamped to
    the unit cube against boundary roundoff."""
    pts = rays.origins[:, None, :] + ts[:, :, None] * rays.dirs[:, None, :]
    return np.clip(pts, 0.0, 1.0)


class SceneModel:
    def __init__(self, config, aabb, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        self.aabb = np.asarray(aabb, dtype=np.float64)
        self.bounds = SceneBounds.from_aabb(self.aabb)
        self.pe = PEConfig(l_pos=config.l_pos, l_dir=config.l_dir)

        seeds = np.random.SeedSequence(config.seed).spawn(3)
        base_res = (config.plane_resolution, config.plane_resolution,
                    config.z_resolution) if config.z_resolution else \
            default_base_resolution(self.aabb, config.plane_resolution)
        self.pyramid: FeaturePyramid = build_pyramid(
            base_res, r_sigma=config.r_sigma, r_c=config.r_c,
            downsample_factors=tuple(config.downsample_factors),
            init_scale=config.init_scale, seed=seeds[0], aabb=self.aabb, dtype=dtype)
        self.grid_heads = GridBranchHeads(
            sigma_dim=self.pyramid.feature_dim("density"),
            color_dim=self.pyramid.feature_dim("appearance"),
            pe=self.pe, hidden=config.grid_hidden,
            rng=np.random.default_rng(seeds[1]), dtype=dtype)
        self.nerf = NerfBranch(
            sigma_dim=self.pyramid.feature_dim("density"),
            color_dim=self.pyramid.feature_dim("appearance"),
            pe=self.pe, width=config.nerf_width, depth=config.nerf_depth,
            rng=np.random.default_rng(seeds[2]), dtype=dtype)
        self.background = np.asarray(config.background, dtype=dtype)
        self.nerf_trained = False

    # -- parameter bookkeeping ---------------------------------------------

    def named_parameters(self) -> dict[str, Tensor]:
        return {**self.pyramid.named_parameters(),
                **self.grid_heads.named_parameters(),
                **self.nerf.named_parameters()}

    def grid_parameters(self) -> dict[str, Tensor]:
        return {**self.pyramid.named_parameters(), **self.grid_heads.named_parameters()}

    def nerf_parameters(self) -> dict[str, Tensor]:
        return self.nerf.named_parameters()

    @contextmanager
    def frozen(self):
        """Evaluate without building gradient graphs (rendering, eval)."""
        params = self.named_parameters()
        saved = {n: p.requires_grad for n, p in params.items()}
        for p in params.values():
            p.requires_grad = False
        try:
            yield
        finally:
            for n, p in params.items():
                p.requires_grad = saved[n]

    # -- branch evaluation ----------------------------------------------------

    def _features_at(self, pts_flat: np.ndarray, detach: bool) -> tuple[Tensor, Tensor]:
        g_sigma = sample_features(self.pyramid, pts_flat, "density")
        g_c = sample_features(self.pyramid, pts_flat, "appearance")
        if detach:
            g_sigma, g_c = g_sigma.detach(), g_c.detach()
        return g_sigma, g_c

    def render_grid_branch(self, rays: RayBatch, ts: np.ndarray,
                           detach_features: bool = False) -> RenderOutput:
        """Grid-branch compositing at the given sample positions (N, S)."""
        n, s = ts.shape
        pts = ray_points(rays, ts).reshape(-1, 3)
        g_sigma, g_c = self._features_at(pts, detach_features)
        # directions are constant along a ray: encode once, repeat per sample
        pe_d = np.repeat(self.pe.encode_directions(rays.dirs).astype(self.dtype), s, axis=0)
        sigma, color = grid_branch_eval_encoded(self.grid_heads, g_sigma, g_c, pe_d)
        return composite(reshape(sigma, (n, s)), reshape(color, (n, s, 3)),
                         ts, rays.t_far, self.background)

    def render_nerf_branch(self, rays: RayBatch, ts: np.ndarray,
                           detach_features: bool = False,
                           zero_features: bool = False) -> RenderOutput:
        """NeRF-branch compositing at the given sample positions (N, S)."""
        n, s = ts.shape
        pts = ray_points(rays, ts).reshape(-1, 3)
        if zero_features:
            g_sigma = Tensor(np.zeros((n * s, self.pyramid.feature_dim("density")), dtype=self.dtype))
            g_c = Tensor(np.zeros((n * s, self.pyramid.feature_dim("appearance")), dtype=self.dtype))
        else:
            g_sigma, g_c = self._features_at(pts, detach_features)
        pe_x = self.pe.encode_positions(pts).astype(self.dtype)
        pe_d = np.repeat(self.pe.encode_directions(rays.dirs).astype(self.dtype), s, axis=0)
        sigma, color = nerf_branch_eval_encoded(self.nerf, g_sigma, g_c, pe_x, pe_d)
        return composite(reshape(sigma, (n, s)), reshape(color, (n, s, 3)),
                         ts, rays.t_far, self.background)

    def guided_union_ts(self, coarse_ts: np.ndarray, coarse_weights: np.ndarray,
                        rays: RayBatch, rng: np.random.Generator) -> np.ndarray:
        """Coarse samples plus grid-guided fine samples, sorted per ray.
        The guiding weights are plain arrays: sample positions never carry
        gradients."""
        fine = grid_guided_sample(coarse_weights, rays.t_near, rays.t_far,
                                  self.config.n_fine, rng,
                                  weight_floor=self.config.weight_floor)
        return np.sort(np.concatenate([coarse_ts, fine], axis=1), axis=1)

    # -- full-image rendering ---------------------------------------------------

    def render_image(self, camera, branch: str, chunk: int = 4096) -> np.ndarray:
        """Render one full view through a branch -> (H, W, 3) float.

        Rays that miss the scene box get the background color. Evaluation
        only: no gradient graphs are built.
        """
        from .rendering import generate_rays

        if branch not in ("grid", "nerf"):
            raise ValueError(f"unknown branch {branch!r}")
        pixels = camera.pixel_grid()
        out = np.tile(self.background.astype(np.float64), (len(pixels), 1))
        rays_all = generate_rays(camera, pixels, self.bounds)
        idx = np.flatnonzero(rays_all.valid)
        rng = np.random.default_rng(0)  # eval sampling is jitter-free
        with self.frozen():
            for start in range(0, len(idx), chunk):
                sel = idx[start:start + chunk]
                rays = rays_all.select(sel)
                coarse = stratified_sample(rays.t_near, rays.t_far,
                                           self.config.n_coarse, jitter=False)
                coarse_out = self.render_grid_branch(rays, coarse)
                if branch == "grid":
                    out[sel] = coarse_out.color.data.astype(np.float64)
                else:
                    union = self.guided_union_ts(coarse, coarse_out.weights.data, rays, rng)
                    nerf_out = self.render_nerf_branch(
                        rays, union, zero_features=self.config.zero_grid_features)
                    out[sel] = nerf_out.color.data.astype(np.float64)
        return np.clip(out.reshape(camera.height, camera.width, 3), 0.0, 1.0)

    # -- checkpointing -----------------------------------------------------------

    def state_records(self) -> dict[str, np.ndarray]:
        records = {name: p.data for name, p in self.named_parameters().items()}
        records["meta.aabb"] = self.aabb
        records["meta.nerf_trained"] = np.array(int(self.nerf_trained), dtype=np.int64)
        return records

    def load_state_records(self, records: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters().items():
            if name not in records:
                raise KeyError(f"checkpoint is missing parameter {name!r}")
            arr = records[name]
            if arr.shape != p.data.shape:
                raise ValueError(f"parameter {name!r}: checkpoint shape {arr.shape} "
                                 f"!= model shape {p.data.shape}")
            p.data = arr.astype(self.dtype, copy=True)
        self.nerf_trained = bool(records.get("meta.nerf_trained", np.array(0)).item())
