"""Two-stage optimization: grid-branch pretrain, then joint training of
both branches with a weighted (default 1:1) reconstruction loss.

During joint steps the coarse grid render is supervised directly, its
compositing weights are detached to drive guided sampling, and the NeRF
branch renders the union sample set with grid features attached, so its
loss refines the feature planes too.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .autodiff import NonFiniteError, Tensor, assert_all_finite, gradients
from .config import TrainConfig
from .metrics import psnr, ssim
from .model import SceneModel
from .optim import Adam
from .rendering import generate_rays, stratified_sample
from .scene import SceneDataset


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, message: str):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass
class TrainReport:
    rows: list[dict] = field(default_factory=list)
    final_metrics: dict = field(default_factory=dict)

    def log(self, **row) -> None:
        if self.rows and row["iteration"] <= self.rows[-1]["iteration"]:
            raise ValueError("logged iterations must be strictly increasing")
        self.rows.append(row)

    def write(self, path) -> None:
        lines = []
        for row in self.rows:
            lines.append(
                f"iter={row['iteration']} stage={row['stage']} "
                f"loss_grid={row['loss_grid']:.6f} loss_nerf={row['loss_nerf']:.6f} "
                f"loss={row['loss']:.6f} time={row['time']:.3f}")
        lines.append("summary " + json.dumps(self.final_metrics, sort_keys=True))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def mse_pixel_loss(pred: Tensor, true: np.ndarray) -> Tensor:
    """Mean over rays of the squared color error summed over channels."""
    true = np.asarray(true)
    if pred.shape != true.shape:
        raise ValueError(f"color count mismatch: {pred.shape} vs {true.shape}")
    diff = pred - Tensor(true.astype(pred.data.dtype))
    return (diff * diff).sum() * (1.0 / pred.shape[0])


# -- parameter/optimizer wiring ----------------------------------------------------


def lr_table(model: SceneModel, config: TrainConfig) -> dict[str, float]:
    # plane/vector factors use the tensor-factor rate, all MLPs the other
    return {name: (config.lr_planes if name.startswith("level") else config.lr_mlp)
            for name in model.named_parameters()}


def make_optimizer(model: SceneModel, config: TrainConfig) -> Adam:
    return Adam(params=model.named_parameters(), lr_by_name=lr_table(model, config))


def trainable_names(model: SceneModel, config: TrainConfig, stage: str) -> list[str]:
    if stage == "pretrain":
        return list(model.grid_parameters())
    if config.freeze_grid_features:
        return list(model.nerf_parameters())
    return list(model.named_parameters())


# -- single steps -----------------------------------------------------------------


def _apply_grads(model: SceneModel, optimizer: Adam, loss: Tensor,
                 names: list[str], lr_scale: float, iteration: int) -> None:
    params = model.named_parameters()
    leaves = [params[n] for n in names]
    try:
        assert_all_finite(loss.data, "training loss")
        grads = gradients(loss, leaves)
        for name, g in zip(names, grads):
            assert_all_finite(g, f"gradient of {name}")
    except NonFiniteError as exc:
        raise TrainingDiverged(iteration, str(exc)) from exc
    optimizer.step(dict(zip(names, grads)), lr_scale=lr_scale)
    for leaf in leaves:
        leaf.grad = None


def pretrain_step(model: SceneModel, optimizer: Adam, rays, gt_colors: np.ndarray,
                  config: TrainConfig, rng: np.random.Generator,
                  lr_scale: float = 1.0, iteration: int = 0) -> dict[str, float]:
    """Coarse stratified render through the grid branch only."""
    ts = stratified_sample(rays.t_near, rays.t_far, config.n_coarse, config.jitter, rng)
    out = model.render_grid_branch(rays, ts)
    loss = mse_pixel_loss(out.color, gt_colors)
    _apply_grads(model, optimizer, loss,
                 trainable_names(model, config, "pretrain"), lr_scale, iteration)
    value = loss.item()
    return {"loss_grid": value, "loss_nerf": 0.0, "loss": value}


def joint_step(model: SceneModel, optimizer: Adam, rays, gt_colors: np.ndarray,
               config: TrainConfig, rng: np.random.Generator,
               lr_scale: float = 1.0, iteration: int = 0) -> dict[str, float]:
    """Both branches: grid loss on coarse samples, NeRF loss on the guided
    union set, summed with the configured weights."""
    frozen = config.freeze_grid_features
    coarse_ts = stratified_sample(rays.t_near, rays.t_far, config.n_coarse,
                                  config.jitter, rng)
    grid_out = model.render_grid_branch(rays, coarse_ts, detach_features=frozen)
    loss_grid = mse_pixel_loss(grid_out.color, gt_colors)

    union_ts = model.guided_union_ts(coarse_ts, grid_out.weights.data, rays, rng)
    nerf_out = model.render_nerf_branch(rays, union_ts, detach_features=frozen,
                                        zero_features=config.zero_grid_features)
    loss_nerf = mse_pixel_loss(nerf_out.color, gt_colors)

    if frozen:
        total = loss_nerf if config.loss_weight_nerf == 1.0 \
            else loss_nerf * config.loss_weight_nerf
    else:
        total = loss_grid * config.loss_weight_grid + loss_nerf * config.loss_weight_nerf
    _apply_grads(model, optimizer, total,
                 trainable_names(model, config, "joint"), lr_scale, iteration)
    model.nerf_trained = True
    return {"loss_grid": loss_grid.item(), "loss_nerf": loss_nerf.item(),
            "loss": loss_grid.item() * config.loss_weight_grid
                    + loss_nerf.item() * config.loss_weight_nerf}


# -- ray pool ----------------------------------------------------------------------


@dataclass
class RayPool:
    """All valid training rays of a dataset, flattened for shuffling."""

    origins: np.ndarray
    dirs: np.ndarray
    t_near: np.ndarray
    t_far: np.ndarray
    colors: np.ndarray

    def __len__(self) -> int:
        return len(self.origins)

    def batch(self, idx) -> tuple:
        from .rendering import RayBatch

        rays = RayBatch(self.origins[idx], self.dirs[idx], self.t_near[idx],
                        self.t_far[idx], np.ones(len(idx), dtype=bool))
        return rays, self.colors[idx]


def build_ray_pool(dataset: SceneDataset, split: str = "train") -> RayPool:
    bounds = dataset.bounds()
    parts = {k: [] for k in ("o", "d", "tn", "tf", "c")}
    for frame in dataset.frames_for(split):
        if frame.image is None:
            raise ValueError(f"frame {frame.file} has no image loaded")
        rays = generate_rays(frame.camera, frame.camera.pixel_grid(), bounds)
        mask = rays.valid
        parts["o"].append(rays.origins[mask])
        parts["d"].append(rays.dirs[mask])
        parts["tn"].append(rays.t_near[mask])
        parts["tf"].append(rays.t_far[mask])
        parts["c"].append(frame.image.reshape(-1, 3)[mask])
    if not parts["o"]:
        raise ValueError(f"dataset has no {split!r} frames")
    return RayPool(origins=np.concatenate(parts["o"]), dirs=np.concatenate(parts["d"]),
                   t_near=np.concatenate(parts["tn"]), t_far=np.concatenate(parts["tf"]),
                   colors=np.concatenate(parts["c"]))


# -- evaluation ----------------------------------------------------------------------


def evaluate_model(model: SceneModel, dataset: SceneDataset, split: str = "test",
                   branches=("grid", "nerf")) -> dict:
    """Held-out PSNR/SSIM per branch -> {branch: {psnr, ssim}}."""
    frames = dataset.frames_for(split)
    if not frames:
        raise ValueError(f"dataset has no {split!r} frames")
    out: dict[str, dict[str, float]] = {}
    for branch in branches:
        scores_p, scores_s = [], []
        for frame in frames:
            pred = model.render_image(frame.camera, branch)
            scores_p.append(psnr(pred, frame.image))
            scores_s.append(ssim(pred, frame.image))
        out[f"{branch}_branch"] = {"psnr": float(np.mean(scores_p)),
                                   "ssim": float(np.mean(scores_s))}
    return out


# -- the full run -------------------------------------------------------------------


def save_checkpoint(path, model: SceneModel, optimizer: Adam, iteration: int) -> None:
    records = model.state_records()
    for name, state in optimizer.states.items():
        records[f"adam.{name}.m"] = state.m
        records[f"adam.{name}.v"] = state.v
        records[f"adam.{name}.t"] = np.array(state.t, dtype=np.int64)
    records["meta.iteration"] = np.array(iteration, dtype=np.int64)
    checkpoint.save_arrays(path, records)


def load_checkpoint(path, model: SceneModel, optimizer: Adam | None = None) -> int:
    records = checkpoint.load_arrays(path)
    model.load_state_records(records)
    if optimizer is not None:
        for name, param in model.named_parameters().items():
            if f"adam.{name}.m" in records:
                state = optimizer.states[name]
                state.m = records[f"adam.{name}.m"].astype(param.data.dtype)
                state.v = records[f"adam.{name}.v"].astype(param.data.dtype)
                state.t = int(records[f"adam.{name}.t"].item())
    return int(records.get("meta.iteration", np.array(0)).item())


class _RayShuffler:
    """Global permutation of all training rays, renewed each epoch."""

    def __init__(self, pool: RayPool, batch: int, rng: np.random.Generator):
        self.pool = pool
        self.batch = min(batch, len(pool))
        self.rng = rng
        self.order = rng.permutation(len(pool))
        self.cursor = 0

    def next_batch(self):
        if self.cursor + self.batch > len(self.pool):
            self.order = self.rng.permutation(len(self.pool))
            self.cursor = 0
        idx = self.order[self.cursor:self.cursor + self.batch]
        self.cursor += self.batch
        return self.pool.batch(idx)


def run_training(dataset: SceneDataset, config: TrainConfig, out_dir,
                 model: SceneModel | None = None, optimizer: Adam | None = None,
                 stages=("pretrain", "joint"), start_iteration: int = 0,
                 quiet: bool = True) -> tuple[TrainReport, SceneModel]:
    """Run the requested stages, writing checkpoints and the report log.

    On a non-finite loss the previous checkpoint is retained and
    TrainingDiverged propagates.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if model is None:
        model = SceneModel(config, dataset.aabb)
    if optimizer is None:
        optimizer = make_optimizer(model, config)

    pool = build_ray_pool(dataset, "train")
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    shuffler = _RayShuffler(pool, config.batch_rays, np.random.default_rng(seeds[0]))
    sample_rng = np.random.default_rng(seeds[1])

    plan = []
    if "pretrain" in stages:
        plan += [("pretrain", i) for i in range(config.pretrain_iters)]
    if "joint" in stages:
        plan += [("joint", i) for i in range(config.joint_iters)]
    total = max(1, len(plan))

    report = TrainReport()
    t0 = time.perf_counter()
    iteration = start_iteration
    step_fns = {"pretrain": pretrain_step, "joint": joint_step}

    for step_idx, (stage, _) in enumerate(plan):
        iteration += 1
        lr_scale = config.lr_decay_factor ** (step_idx / total)
        rays, gt = shuffler.next_batch()
        losses = step_fns[stage](model, optimizer, rays, gt, config, sample_rng,
                                 lr_scale=lr_scale, iteration=iteration)
        is_stage_end = step_idx + 1 == len(plan) or plan[step_idx + 1][0] != stage
        if config.log_every and (iteration % config.log_every == 0 or is_stage_end):
            row = dict(iteration=iteration, stage=stage,
                       time=time.perf_counter() - t0, **losses)
            report.log(**row)
            if not quiet:
                print(f"[{stage}] iter {iteration} loss {losses['loss']:.5f}")
        if config.checkpoint_every and iteration % config.checkpoint_every == 0:
            save_checkpoint(out_dir / f"checkpoint_iter{iteration:07d}.bin",
                            model, optimizer, iteration)
        if is_stage_end:
            save_checkpoint(out_dir / f"checkpoint_{stage}.bin", model, optimizer, iteration)

    save_checkpoint(out_dir / "checkpoint_final.bin", model, optimizer, iteration)
    branches = ("grid", "nerf") if model.nerf_trained else ("grid",)
    if dataset.frames_for("test"):
        report.final_metrics = evaluate_model(model, dataset, "test", branches)
    report.write(out_dir / "train_report.log")
    return report, model
