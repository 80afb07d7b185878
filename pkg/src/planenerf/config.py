"""Training/run configuration and the JSON config-file machinery.

Kept free of numpy imports so the CLI can resolve --threads and set BLAS
environment variables before any numeric module loads.

Defaults follow the reference training recipe: pretrain 10k then joint
100k iterations, 4096 rays per batch, Adam at 0.02 for the plane/vector
factors and 0.01 for all MLP layers, 1:1 branch loss weights, 64 coarse
and 128 fine samples, position encoding up to frequency 2^15, and an
8/16-channel three-level pyramid at x1/x4/x16 downsampling.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    """Unknown keys, malformed values, or inconsistent options."""


@dataclass
class TrainConfig:
    # schedule
    pretrain_iters: int = 10000
    joint_iters: int = 100000
    batch_rays: int = 4096
    lr_planes: float = 0.02
    lr_mlp: float = 0.01
    lr_decay_factor: float = 0.1
    loss_weight_grid: float = 1.0
    loss_weight_nerf: float = 1.0
    seed: int = 0
    # ray sampling
    n_coarse: int = 64
    n_fine: int = 128
    jitter: bool = True
    weight_floor: float = 0.01
    # positional encodings
    l_pos: int = 16
    l_dir: int = 4
    # feature pyramid
    plane_resolution: int = 256
    z_resolution: int = 0  # 0 = derived from the scene's relative height
    r_sigma: int = 8
    r_c: int = 16
    downsample_factors: tuple = (1, 4, 16)
    init_scale: float = 0.1
    # heads
    grid_hidden: int = 128
    nerf_width: int = 256
    nerf_depth: int = 4
    # behavior
    background: tuple = (0.0, 0.0, 0.0)
    freeze_grid_features: bool = False
    zero_grid_features: bool = False
    log_every: int = 100
    checkpoint_every: int = 0  # 0 = stage boundaries only

    def __post_init__(self):
        if self.pretrain_iters < 0 or self.joint_iters < 0:
            raise ConfigError("iteration counts must be >= 0")
        if self.batch_rays < 1:
            raise ConfigError("batch_rays must be >= 1")
        if self.loss_weight_grid < 0 or self.loss_weight_nerf < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.n_coarse < 1 or self.n_fine < 1:
            raise ConfigError("sample counts must be >= 1")

    def replace(self, **kwargs) -> "TrainConfig":
        return dataclasses.replace(self, **kwargs)


@dataclass
class RunConfig:
    """Everything a CLI invocation needs: the train config plus paths and
    subcommand options. Flags override config-file values."""

    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: str | None = None
    output: str | None = None
    checkpoint: str | None = None
    branch: str = "grid"
    split: str = "test"
    threads: int = 0  # 0 = library default, 1 = deterministic mode
    # synthetic dataset options
    n_boxes: int = 12
    n_views: int = 56
    image_size: int = 64


_TRAIN_FIELDS = {f.name: f for f in fields(TrainConfig)}
_RUN_FIELDS = {f.name: f for f in fields(RunConfig) if f.name != "train"}
_TUPLE_KEYS = {"downsample_factors", "background"}


def _coerce(key: str, value, kind: type):
    try:
        if key in _TUPLE_KEYS:
            if isinstance(value, str):
                value = [float(v) for v in value.split(",") if v.strip()]
            return tuple(int(v) if float(v) == int(v) and key == "downsample_factors"
                         else float(v) for v in value)
        if kind is bool:
            if isinstance(value, bool):
                return value
            if str(value).lower() in ("1", "true", "yes", "on"):
                return True
            if str(value).lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if kind is int:
            if isinstance(value, float) and value != int(value):
                raise ValueError(f"not an integer: {value!r}")
            return int(value)
        if kind is float:
            return float(value)
        return value
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from exc


def apply_overrides(run: RunConfig, overrides: dict) -> RunConfig:
    """Set known keys on the run/train config; unknown keys are a hard
    error so typos never pass silently."""
    train_kwargs = {}
    run_kwargs = {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key in _TRAIN_FIELDS:
            train_kwargs[key] = _coerce(key, value, _TRAIN_FIELDS[key].type
                                        if isinstance(_TRAIN_FIELDS[key].type, type)
                                        else type(getattr(run.train, key)))
        elif key in _RUN_FIELDS:
            run_kwargs[key] = _coerce(key, value, type(getattr(run, key))
                                      if getattr(run, key) is not None else str)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        train = run.train.replace(**train_kwargs) if train_kwargs else run.train
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return dataclasses.replace(run, train=train, **run_kwargs)


def load_config_file(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return doc


def resolve(config_path=None, flag_overrides: dict | None = None) -> RunConfig:
    """File values first, then command-line flags on top."""
    run = RunConfig()
    if config_path:
        run = apply_overrides(run, load_config_file(config_path))
    if flag_overrides:
        run = apply_overrides(run, flag_overrides)
    return run


def to_flat_dict(run: RunConfig) -> dict:
    out = {}
    for name in _TRAIN_FIELDS:
        value = getattr(run.train, name)
        out[name] = list(value) if isinstance(value, tuple) else value
    for name in _RUN_FIELDS:
        out[name] = getattr(run, name)
    return out


def echo_config(run: RunConfig, out_dir) -> Path:
    """Write the fully resolved config next to the outputs it produced."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config.json"
    path.write_text(json.dumps(to_flat_dict(run), indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path
