"""Benchmark the compiled interpolation kernels against the numpy
fallback, plus one end-to-end training-step comparison.

Usage: python benchmarks/bench_kernels.py [--quick]
"""

import argparse
import time

import numpy as np

from planenerf._kernels import _fallback

try:
    from planenerf._kernels import _native
except ImportError:
    _native = None


def best_of(fn, repeats=5):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_kernels(n_points, channels, height, width, depth, dtype=np.float32):
    rng = np.random.default_rng(0)
    plane = rng.normal(size=(channels, height, width)).astype(dtype)
    vec = rng.normal(size=(channels, depth)).astype(dtype)
    xs = (rng.random(n_points) * (width - 1)).astype(dtype)
    ys = (rng.random(n_points) * (height - 1)).astype(dtype)
    zs = (rng.random(n_points) * (depth - 1)).astype(dtype)
    grad = rng.normal(size=(n_points, channels)).astype(dtype)

    cases = {
        "plane_gather": lambda impl: impl.plane_gather(plane, xs, ys),
        "plane_scatter": lambda impl: impl.plane_scatter(grad, xs, ys, height, width),
        "zvec_gather": lambda impl: impl.zvec_gather(vec, zs),
        "zvec_scatter": lambda impl: impl.zvec_scatter(grad, zs, depth),
    }
    print(f"\n{n_points} points, {channels} channels, plane {height}x{width}, z {depth}:")
    print(f"  {'kernel':<14} {'numpy':>10} {'native':>10} {'speedup':>8}")
    for name, call in cases.items():
        t_np = best_of(lambda: call(_fallback))
        if _native is None:
            print(f"  {name:<14} {t_np * 1e3:9.2f}ms {'n/a':>10}")
            continue
        t_nat = best_of(lambda: call(_native))
        print(f"  {name:<14} {t_np * 1e3:9.2f}ms {t_nat * 1e3:9.2f}ms {t_np / t_nat:7.1f}x")


def bench_training_step(backend_env: str) -> tuple[str, float]:
    """One pretrain step on a synthetic batch with the chosen backend.
    Runs in a subprocess so the import-time backend selection applies."""
    import os
    import subprocess
    import sys
    import textwrap

    code = textwrap.dedent("""
        import time
        import numpy as np
        from planenerf.config import TrainConfig
        from planenerf.model import SceneModel
        from planenerf.rendering import RayBatch
        from planenerf.training import make_optimizer, pretrain_step
        from planenerf._kernels import BACKEND

        cfg = TrainConfig(batch_rays=1024, n_coarse=32, plane_resolution=128,
                          l_pos=10, grid_hidden=64, nerf_width=128)
        model = SceneModel(cfg, [[0, 0, 0], [8, 8, 3]])
        opt = make_optimizer(model, cfg)
        rng = np.random.default_rng(0)
        n = cfg.batch_rays
        o = np.full((n, 3), 0.5); o[:, 2] = 0.02
        d = rng.normal(size=(n, 3)); d[:, 2] = np.abs(d[:, 2]) + 1.0
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        rays = RayBatch(o, d, np.zeros(n), np.full(n, 0.9), np.ones(n, bool))
        gt = rng.random((n, 3))
        pretrain_step(model, opt, rays, gt, cfg, rng)  # warm up
        t0 = time.perf_counter()
        for _ in range(5):
            pretrain_step(model, opt, rays, gt, cfg, rng)
        print(f"{BACKEND} {(time.perf_counter() - t0) / 5:.4f}")
    """)
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                         env={**os.environ, "PLANENERF_KERNELS": backend_env})
    if out.returncode != 0:
        raise RuntimeError(out.stderr)
    backend, seconds = out.stdout.split()
    return backend, float(seconds)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true", help="small sizes only")
    args = parser.parse_args()

    sizes = [(4096, 8, 64, 64, 16)] if args.quick else \
        [(4096, 8, 64, 64, 16), (32768, 8, 128, 128, 48), (65536, 16, 256, 256, 64)]
    for case in sizes:
        bench_kernels(*case)

    print("\nfull pretrain step (1024 rays x 32 samples):")
    for env in ("numpy", ""):
        backend, seconds = bench_training_step(env)
        print(f"  {backend:<8} {seconds * 1e3:8.1f} ms/step")


if __name__ == "__main__":
    main()
