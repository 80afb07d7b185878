"""Plane-factorized neural radiance fields.

A multi-resolution ground-plane feature grid (grid branch) jointly
trained with a positional-encoding MLP (NeRF branch), rendered by
differentiable volume compositing with grid-density-guided ray sampling,
on a self-contained numpy reverse-mode autodiff engine.

Kept import-light: submodules load numpy on demand so the CLI can pin
thread pools first.
"""

__version__ = "0.1.0"

_EXPORTS = {
    "Tensor": "autodiff",
    "gradients": "autodiff",
    "TrainConfig": "config",
    "RunConfig": "config",
    "build_pyramid": "grid",
    "sample_features": "grid",
    "densify": "grid",
    "FeaturePyramid": "grid",
    "SceneBounds": "grid",
    "positional_encoding": "heads",
    "Camera": "rendering",
    "composite": "rendering",
    "generate_rays": "rendering",
    "stratified_sample": "rendering",
    "grid_guided_sample": "rendering",
    "psnr": "metrics",
    "ssim": "metrics",
    "SceneModel": "model",
    "generate_synthetic_scene": "scene",
    "oracle_render": "scene",
    "load_dataset": "scene",
    "run_training": "training",
    "adam_step": "optim",
    "AdamState": "optim",
}


def __getattr__(name: str):
    if name in _EXPORTS:
        import importlib

        module = importlib.import_module(f".{_EXPORTS[name]}", __name__)
        return getattr(module, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
