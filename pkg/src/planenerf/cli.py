"""Command-line interface: synth, train, render, eval, dump-planes.

Config precedence is command-line flag over config-file value over
default, and every run echoes its fully resolved config into the output
directory. --threads pins the BLAS/OpenMP thread pools (1 gives the
deterministic single-threaded mode), which must happen before numpy is
imported; numeric modules are therefore imported lazily inside the
command handlers.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

from .config import ConfigError, RunConfig, TrainConfig, echo_config, resolve

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_THREAD_ENV_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                    "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS")


def _pin_threads_early(argv: list[str]) -> None:
    """Apply --threads before numpy import so BLAS pools honor it."""
    n = 0
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            n = argv[i + 1]
        elif arg.startswith("--threads="):
            n = arg.split("=", 1)[1]
    try:
        n = int(n)
    except ValueError:
        return  # argparse will reject it with a proper message
    if n < 1:
        return
    if "numpy" in sys.modules:  # too late for env vars; best-effort limit
        try:
            import threadpoolctl

            threadpoolctl.threadpool_limits(limits=n)
        except ImportError:
            pass
        return
    for var in _THREAD_ENV_VARS:
        os.environ[var] = str(n)


# -- argument plumbing -----------------------------------------------------------


def _flag_name(field_name: str) -> str:
    return "--" + field_name.replace("_", "-")


def _add_override_flags(parser: argparse.ArgumentParser) -> None:
    """One flag per config field; unset flags stay None so file values
    and defaults shine through."""
    group = parser.add_argument_group("config overrides")
    for f in fields(TrainConfig):
        if f.name in ("downsample_factors", "background"):
            group.add_argument(_flag_name(f.name), type=str, default=None,
                               metavar="V,V,V", help=f"override {f.name}")
        elif f.type == "bool" or isinstance(f.default, bool):
            group.add_argument(_flag_name(f.name), type=str, default=None,
                               metavar="BOOL", help=f"override {f.name}")
        else:
            group.add_argument(_flag_name(f.name), type=str, default=None,
                               metavar="V", help=f"override {f.name}")
    for name in ("n_boxes", "n_views", "image_size"):
        group.add_argument(_flag_name(name), type=str, default=None, metavar="V",
                           help=f"override {name}")


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, default=None, help="JSON config file")
    parser.add_argument("--output", "--out", dest="output", type=str, default=None,
                        help="output directory")
    parser.add_argument("--threads", type=int, default=None,
                        help="thread cap for numeric libraries (1 = deterministic)")
    _add_override_flags(parser)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="planenerf",
        description="Plane-factorized radiance fields: synthesize data, train the "
                    "two-branch model, render and evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic box-scene dataset")
    p.add_argument("--boxes", dest="n_boxes", type=str, default=None,
                   help="number of boxes (alias of --n-boxes)")
    _common_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run pretrain and/or joint training")
    p.add_argument("--dataset", type=str, default=None, help="manifest path")
    p.add_argument("--stage", choices=("pretrain", "joint", "both"), default="both")
    p.add_argument("--resume", type=str, default=None, help="checkpoint to resume from")
    p.add_argument("--iters", type=int, default=None,
                   help="override the iteration count of the selected stage(s)")
    _common_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render poses through one branch")
    p.add_argument("--dataset", type=str, default=None, help="manifest with poses")
    p.add_argument("--checkpoint", type=str, default=None)
    p.add_argument("--branch", choices=("grid", "nerf"), default=None)
    p.add_argument("--split", choices=("train", "test", "all"), default=None)
    _common_flags(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="PSNR/SSIM of the test split per branch")
    p.add_argument("--dataset", type=str, default=None)
    p.add_argument("--checkpoint", type=str, default=None)
    _common_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dump-planes", help="export feature-plane images")
    p.add_argument("--dataset", type=str, default=None, help="manifest (for scene bounds)")
    p.add_argument("--checkpoint", type=str, default=None)
    _common_flags(p)
    p.set_defaults(func=cmd_dump_planes)

    return parser


def _resolve_run(args: argparse.Namespace, extra_keys=()) -> RunConfig:
    overrides = {}
    for f in fields(TrainConfig):
        overrides[f.name] = getattr(args, f.name, None)
    for name in ("n_boxes", "n_views", "image_size", "dataset", "checkpoint",
                 "output", "branch", "split", "threads", *extra_keys):
        if getattr(args, name, None) is not None:
            overrides[name] = getattr(args, name)
    config_path = args.config
    if config_path is None and getattr(args, "checkpoint", None):
        # a training run echoes its config next to its checkpoints; pick
        # it up so render/eval rebuild the matching architecture
        sibling = Path(args.checkpoint).parent / "config.json"
        if sibling.exists():
            config_path = sibling
    return resolve(config_path, overrides)


def _need(value, what: str):
    if not value:
        raise ConfigError(f"missing required option: {what}")
    return value


def _load_dataset(run: RunConfig, load_images: bool = True):
    from .scene import load_dataset

    return load_dataset(_need(run.dataset, "--dataset"), load_images=load_images)


def _restore_model(run: RunConfig, aabb):
    from .model import SceneModel
    from .training import load_checkpoint

    model = SceneModel(run.train, aabb)
    load_checkpoint(_need(run.checkpoint, "--checkpoint"), model)
    return model


# -- commands ---------------------------------------------------------------------


def cmd_synth(args) -> int:
    run = _resolve_run(args)
    out_dir = Path(_need(run.output, "--output"))
    from .scene import synthesize_dataset

    manifest = synthesize_dataset(out_dir, n_boxes=run.n_boxes, seed=run.train.seed,
                                  n_views=run.n_views, image_size=run.image_size,
                                  background=tuple(run.train.background))
    echo_config(run, out_dir)
    print(f"wrote {run.n_views} views to {manifest}")
    return EXIT_OK


def cmd_train(args) -> int:
    run = _resolve_run(args)
    if args.iters is not None:
        patch = {}
        if args.stage in ("pretrain", "both"):
            patch["pretrain_iters"] = args.iters
        if args.stage in ("joint", "both"):
            patch["joint_iters"] = args.iters
        run = dataclasses.replace(run, train=run.train.replace(**patch))
    out_dir = Path(_need(run.output, "--output"))
    dataset = _load_dataset(run)

    from .model import SceneModel
    from .training import load_checkpoint, make_optimizer, run_training

    model = SceneModel(run.train, dataset.aabb)
    optimizer = make_optimizer(model, run.train)
    start_iteration = 0
    if args.resume:
        start_iteration = load_checkpoint(args.resume, model, optimizer)
    stages = ("pretrain", "joint") if args.stage == "both" else (args.stage,)
    echo_config(run, out_dir)
    report, model = run_training(dataset, run.train, out_dir, model=model,
                                 optimizer=optimizer, stages=stages,
                                 start_iteration=start_iteration, quiet=False)
    if report.final_metrics:
        print("test metrics: " + json.dumps(report.final_metrics, sort_keys=True))
    return EXIT_OK


def cmd_render(args) -> int:
    run = _resolve_run(args)
    out_dir = Path(_need(run.output, "--output"))
    dataset = _load_dataset(run, load_images=False)
    model = _restore_model(run, dataset.aabb)

    from .scene import DataError, write_png

    if run.branch == "nerf" and not model.nerf_trained:
        raise DataError("NeRF branch uninitialized: checkpoint has no joint training")
    frames = dataset.frames if run.split == "all" else dataset.frames_for(run.split)
    if not frames:
        raise DataError(f"no frames in split {run.split!r}")

    out_dir.mkdir(parents=True, exist_ok=True)
    echo_config(run, out_dir)
    for frame in frames:
        t0 = time.perf_counter()
        image = model.render_image(frame.camera, run.branch)
        elapsed = time.perf_counter() - t0
        target = out_dir / f"render_{run.branch}_{Path(frame.file).stem}.png"
        write_png(target, image)
        print(f"{target.name}: {elapsed:.2f}s")
    return EXIT_OK


def cmd_eval(args) -> int:
    run = _resolve_run(args)
    out_dir = Path(_need(run.output, "--output"))
    dataset = _load_dataset(run)
    model = _restore_model(run, dataset.aabb)
    branches = ("grid", "nerf") if model.nerf_trained else ("grid",)

    from .training import evaluate_model

    metrics = evaluate_model(model, dataset, split="test", branches=branches)
    out_dir.mkdir(parents=True, exist_ok=True)
    echo_config(run, out_dir)
    (out_dir / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def cmd_dump_planes(args) -> int:
    run = _resolve_run(args)
    out_dir = Path(_need(run.output, "--output"))
    dataset = _load_dataset(run, load_images=False)
    model = _restore_model(run, dataset.aabb)

    from .grid import export_plane_images

    written = export_plane_images(model.pyramid, out_dir)
    echo_config(run, out_dir)
    print(f"wrote {len(written)} plane images to {out_dir}")
    return EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _pin_threads_early(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # classify lazily so numpy loads after --threads
        from .autodiff import NonFiniteError
        from .checkpoint import CheckpointError
        from .scene import DataError
        from .training import TrainingDiverged

        if isinstance(exc, (TrainingDiverged, NonFiniteError)):
            print(f"numeric failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        if isinstance(exc, (DataError, CheckpointError, FileNotFoundError)):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        raise


if __name__ == "__main__":
    sys.exit(main())
