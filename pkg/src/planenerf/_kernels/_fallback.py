"""Pure-numpy interpolation kernels.

Gather/scatter pairs for bilinear plane sampling and linear z-vector
sampling. Coordinates are in grid units (x in [0, W-1], y in [0, H-1],
z in [0, D-1]); callers map from normalized scene space. Scatter ops are
the exact adjoints of the gathers.
"""

from __future__ import annotations

import numpy as np


def _cell(coords: np.ndarray, extent: int):
    """Lower vertex index and in-cell fraction, clamped so the upper
    vertex stays in range (coords == extent-1 lands on the last cell)."""
    i0 = np.clip(np.floor(coords).astype(np.int64), 0, extent - 2)
    frac = np.clip(coords - i0, 0.0, 1.0).astype(coords.dtype)
    return i0, frac


def plane_gather(plane: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear sample of an (R, H, W) plane at N points -> (N, R)."""
    _, height, width = plane.shape
    x0, fx = _cell(xs, width)
    y0, fy = _cell(ys, height)
    w00 = (1.0 - fy) * (1.0 - fx)
    w01 = (1.0 - fy) * fx
    w10 = fy * (1.0 - fx)
    w11 = fy * fx
    out = (plane[:, y0, x0] * w00 + plane[:, y0, x0 + 1] * w01
           + plane[:, y0 + 1, x0] * w10 + plane[:, y0 + 1, x0 + 1] * w11)
    return np.ascontiguousarray(out.T)


def plane_scatter(grad_out: np.ndarray, xs: np.ndarray, ys: np.ndarray,
                  height: int, width: int) -> np.ndarray:
    """Adjoint of plane_gather: (N, R) output grads -> (R, H, W) plane grads."""
    n, r = grad_out.shape
    x0, fx = _cell(xs, width)
    y0, fy = _cell(ys, height)
    base = y0 * width + x0
    acc = np.zeros(r * height * width, dtype=grad_out.dtype)
    chan = np.arange(r, dtype=np.int64) * (height * width)
    for offset, wgt in (
        (0, (1.0 - fy) * (1.0 - fx)),
        (1, (1.0 - fy) * fx),
        (width, fy * (1.0 - fx)),
        (width + 1, fy * fx),
    ):
        idx = (base + offset)[:, None] + chan[None, :]
        vals = grad_out * wgt[:, None]
        acc += np.bincount(idx.ravel(), weights=vals.ravel(),
                           minlength=acc.size).astype(grad_out.dtype)
    return acc.reshape(r, height, width)


def zvec_gather(vec: np.ndarray, zs: np.ndarray) -> np.ndarray:
    """Linear sample of an (R, D) vector stack at N points -> (N, R)."""
    depth = vec.shape[1]
    z0, fz = _cell(zs, depth)
    out = vec[:, z0] * (1.0 - fz) + vec[:, z0 + 1] * fz
    return np.ascontiguousarray(out.T)


def zvec_scatter(grad_out: np.ndarray, zs: np.ndarray, depth: int) -> np.ndarray:
    """Adjoint of zvec_gather: (N, R) output grads -> (R, D) vector grads."""
    n, r = grad_out.shape
    z0, fz = _cell(zs, depth)
    acc = np.zeros(r * depth, dtype=grad_out.dtype)
    chan = np.arange(r, dtype=np.int64) * depth
    for offset, wgt in ((0, 1.0 - fz), (1, fz)):
        idx = (z0 + offset)[:, None] + chan[None, :]
        vals = grad_out * wgt[:, None]
        acc += np.bincount(idx.ravel(), weights=vals.ravel(),
                           minlength=acc.size).astype(grad_out.dtype)
    return acc.reshape(r, depth)
