"""Synthetic scenes, the analytic reference renderer, and dataset I/O.

The built-in benchmark is a toy city block: colored axis-aligned boxes
standing on a finite ground rectangle, viewed from a hemisphere of poses.
`oracle_render` produces exact first-hit images of such scenes and serves
as ground truth for every end-to-end test. Datasets on disk are a JSON
manifest plus 8-bit PNGs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import SceneBounds
from .rendering import Camera


class DataError(RuntimeError):
    """Bad manifest, missing image, or invalid camera."""


# -- synthetic scenes -------------------------------------------------------------


@dataclass
class Box:
    aabb: np.ndarray   # (2, 3) world units
    color: np.ndarray  # (3,) in [0, 1]


@dataclass
class SyntheticScene:
    aabb: np.ndarray        # (2, 3) scene bounds, ground plane at aabb[0, 2]
    ground_color: np.ndarray
    boxes: list[Box]
    seed: int

    @property
    def ground_z(self) -> float:
        return float(self.aabb[0, 2])


def generate_synthetic_scene(n_boxes: int, seed: int, extents=((0.0, 0.0, 0.0), (8.0, 8.0, 3.0)),
                             max_tries: int = 200) -> SyntheticScene:
    """Deterministic layout of non-overlapping boxes resting on the ground."""
    if n_boxes < 0:
        raise ValueError("n_boxes must be >= 0")
    aabb = np.asarray(extents, dtype=np.float64)
    lo, hi = aabb[0], aabb[1]
    span = hi - lo
    rng = np.random.default_rng(seed)
    ground_color = rng.uniform(0.15, 0.45, size=3)

    boxes: list[Box] = []
    for _ in range(n_boxes):
        for attempt in range(max_tries):
            size = rng.uniform(0.05, 0.13, size=2) * span[:2]
            height = rng.uniform(0.25, 0.95) * span[2]
            center = lo[:2] + size / 2 + rng.random(2) * (span[:2] - size)
            b_lo = np.array([center[0] - size[0] / 2, center[1] - size[1] / 2, lo[2]])
            b_hi = np.array([center[0] + size[0] / 2, center[1] + size[1] / 2, lo[2] + height])
            overlap = any(
                np.all(b_lo[:2] < other.aabb[1, :2]) and np.all(b_hi[:2] > other.aabb[0, :2])
                for other in boxes)
            if not overlap:
                boxes.append(Box(aabb=np.stack([b_lo, b_hi]),
                                 color=rng.uniform(0.05, 0.95, size=3)))
                break
        else:
            raise RuntimeError(f"could not place box {len(boxes)} after {max_tries} tries")
    return SyntheticScene(aabb=aabb, ground_color=ground_color, boxes=boxes, seed=seed)


def _pixel_dirs_world(camera: Camera, pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d_cam = np.stack([
        (pixels[:, 0] - camera.cx) / camera.fx,
        (pixels[:, 1] - camera.cy) / camera.fy,
        np.ones(len(pixels)),
    ], axis=1)
    d_world = d_cam @ camera.c2w[:3, :3].T
    d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
    origin = camera.c2w[:3, 3]
    return origin, d_world


def oracle_render(scene: SyntheticScene, camera: Camera,
                  background=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Exact first-hit render -> (H, W, 3) float in [0, 1].

    Point-sampled: one ray per pixel, flat surface colors, hard edges, no
    anti-aliasing. Rays that hit nothing get the background color.
    """
    pixels = camera.pixel_grid()
    origin, dirs = _pixel_dirs_world(camera, pixels)
    n = len(pixels)
    eps = 1e-9

    best_t = np.full(n, np.inf)
    color = np.tile(np.asarray(background, dtype=np.float64), (n, 1))

    # finite ground rectangle: the scene footprint at ground height
    dz = dirs[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = (scene.ground_z - origin[2]) / dz
    px = origin[0] + t_ground * dirs[:, 0]
    py = origin[1] + t_ground * dirs[:, 1]
    hit = (np.abs(dz) > eps) & (t_ground > eps) \
        & (px >= scene.aabb[0, 0]) & (px <= scene.aabb[1, 0]) \
        & (py >= scene.aabb[0, 1]) & (py <= scene.aabb[1, 1])
    best_t[hit] = t_ground[hit]
    color[hit] = scene.ground_color

    for box in scene.boxes:
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / np.where(np.abs(dirs) < eps, np.where(dirs < 0, -eps, eps), dirs)
        t0 = (box.aabb[0] - origin) * inv
        t1 = (box.aabb[1] - origin) * inv
        t_enter = np.minimum(t0, t1).max(axis=1)
        t_exit = np.maximum(t0, t1).min(axis=1)
        hit = (t_enter <= t_exit) & (t_enter > eps) & (t_enter < best_t)
        best_t[hit] = t_enter[hit]
        color[hit] = box.color

    return color.reshape(camera.height, camera.width, 3)


# -- camera rigs ------------------------------------------------------------------


def look_at_pose(eye, target, up_hint=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world matrix for the +z-forward, y-down convention."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("eye and target coincide")
    forward = forward / norm
    up = np.asarray(up_hint, dtype=np.float64)
    if abs(forward @ up) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    # image up (-y_cam) is the up hint projected off the view direction
    y_cam = -(up - (up @ forward) * forward)
    y_cam /= np.linalg.norm(y_cam)
    x_cam = np.cross(y_cam, forward)
    c2w = np.eye(4)
    c2w[:3, 0] = x_cam
    c2w[:3, 1] = y_cam
    c2w[:3, 2] = forward
    c2w[:3, 3] = eye
    return c2w


def hemisphere_cameras(scene_aabb, n_views: int, image_size: int = 64,
                       n_test_every: int = 7) -> list[tuple[Camera, str]]:
    """Cameras on a hemisphere above the scene center looking at it, with
    every n-th view labeled test. Deterministic."""
    aabb = np.asarray(scene_aabb, dtype=np.float64)
    center = aabb.mean(axis=0)
    diag = float(np.linalg.norm(aabb[1] - aabb[0]))
    radius = 0.95 * diag
    golden = np.pi * (3.0 - np.sqrt(5.0))
    # mostly low orbits: occlusion and parallax keep the benchmark honest
    elevations = np.deg2rad([16.0, 30.0, 48.0])
    focal = image_size * 0.9

    out = []
    for i in range(n_views):
        az = (i * golden) % (2 * np.pi)
        el = elevations[i % len(elevations)]
        eye = center + radius * np.array([
            np.cos(az) * np.cos(el), np.sin(az) * np.cos(el), np.sin(el)])
        cam = Camera(fx=focal, fy=focal, cx=image_size / 2, cy=image_size / 2,
                     width=image_size, height=image_size,
                     c2w=look_at_pose(eye, center),
                     near=0.05 * diag, far=3.0 * diag)
        split = "test" if (i + 1) % n_test_every == 0 else "train"
        out.append((cam, split))
    return out


# -- PNG and manifest I/O ----------------------------------------------------------


def write_png(path, image: np.ndarray) -> None:
    """Store a float [0,1] (H, W, 3) image as 8-bit RGB."""
    from PIL import Image

    data = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path)


def read_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        data = np.asarray(img.convert("RGB"), dtype=np.float64)
    return data / 255.0


@dataclass
class Frame:
    file: str
    camera: Camera
    split: str
    image: np.ndarray | None = None  # (H, W, 3) float in [0, 1]


@dataclass
class SceneDataset:
    aabb: np.ndarray
    frames: list[Frame]
    root: Path

    def frames_for(self, split: str) -> list[Frame]:
        return [f for f in self.frames if f.split == split]

    def bounds(self) -> SceneBounds:
        return SceneBounds.from_aabb(self.aabb)


def _frame_dict(frame: Frame) -> dict:
    cam = frame.camera
    return {
        "file": frame.file,
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "w": cam.width, "h": cam.height,
        "c2w": [float(v) for v in np.asarray(cam.c2w).reshape(16)],
        "near": cam.near, "far": cam.far,
        "split": frame.split,
    }


def save_manifest(path, aabb, frames: list[Frame]) -> None:
    """Canonical serialization: load followed by save is byte-identical."""
    doc = {
        "aabb": [[float(v) for v in row] for row in np.asarray(aabb)],
        "frames": [_frame_dict(f) for f in frames],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_dataset(manifest_path, load_images: bool = True) -> SceneDataset:
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {manifest_path}: {exc}") from exc
    try:
        aabb = np.asarray(doc["aabb"], dtype=np.float64)
        raw_frames = doc["frames"]
    except (KeyError, TypeError) as exc:
        raise DataError(f"manifest {manifest_path} missing aabb/frames") from exc
    if aabb.shape != (2, 3):
        raise DataError(f"manifest aabb must be 2x3, got {aabb.shape}")

    root = manifest_path.parent
    frames = []
    for rec in raw_frames:
        try:
            camera = Camera(fx=rec["fx"], fy=rec["fy"], cx=rec["cx"], cy=rec["cy"],
                            width=int(rec["w"]), height=int(rec["h"]),
                            c2w=np.asarray(rec["c2w"], dtype=np.float64).reshape(4, 4),
                            near=rec["near"], far=rec["far"])
        except (KeyError, ValueError) as exc:
            raise DataError(f"bad frame record {rec.get('file', '?')}: {exc}") from exc
        split = rec.get("split")
        if split not in ("train", "test"):
            raise DataError(f"frame {rec['file']}: split must be train or test, got {split!r}")
        image = None
        if load_images:
            img_path = root / rec["file"]
            if not img_path.exists():
                raise DataError(f"missing image file {img_path}")
            image = read_png(img_path)
            if image.shape != (camera.height, camera.width, 3):
                raise DataError(
                    f"{img_path}: image is {image.shape[:2]}, manifest says "
                    f"{(camera.height, camera.width)}")
        frames.append(Frame(file=rec["file"], camera=camera, split=split, image=image))
    return SceneDataset(aabb=aabb, frames=frames, root=root)


def synthesize_dataset(out_dir, n_boxes: int = 12, seed: int = 0, n_views: int = 56,
                       image_size: int = 64, background=(0.0, 0.0, 0.0)) -> Path:
    """Generate a scene, oracle-render every pose, write PNGs + manifest.
    Returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scene = generate_synthetic_scene(n_boxes=n_boxes, seed=seed)
    frames = []
    for i, (camera, split) in enumerate(hemisphere_cameras(scene.aabb, n_views, image_size)):
        name = f"view_{i:03d}.png"
        write_png(out_dir / name, oracle_render(scene, camera, background))
        frames.append(Frame(file=name, camera=camera, split=split))
    manifest = out_dir / "manifest.json"
    save_manifest(manifest, scene.aabb, frames)
    return manifest
