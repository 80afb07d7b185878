"""Image quality metrics: PSNR and SSIM on float images in [0, 1]."""

from __future__ import annotations

import numpy as np

_LUMA = np.array([0.299, 0.587, 0.114])  # rec. 601

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(pred: np.ndarray, true: np.ndarray) -> None:
    if pred.shape != true.shape:
        raise ValueError(f"image shapes differ: {pred.shape} vs {true.shape}")


def psnr(pred: np.ndarray, true: np.ndarray) -> float:
    """10 log10(1 / MSE) in dB; +inf for identical images."""
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    _check_pair(pred, true)
    mse = float(np.mean((pred - true) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def _to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ _LUMA
    if img.ndim == 2:
        return img
    raise ValueError(f"expected (H, W) or (H, W, 3) image, got {img.shape}")


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(pred: np.ndarray, true: np.ndarray) -> float:
    """Mean structural similarity over valid (fully inside) windows.

    Gaussian 11x11 window with sigma 1.5, K1=0.01, K2=0.03, dynamic
    range 1. Color inputs are converted to rec. 601 luma first.
    """
    x = _to_gray(pred)
    y = _to_gray(true)
    _check_pair(x, y)
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")

    kernel = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)

    def wmean(img: np.ndarray) -> np.ndarray:
        windows = np.lib.stride_tricks.sliding_window_view(img, (SSIM_WINDOW, SSIM_WINDOW))
        return np.einsum("hwij,ij->hw", windows, kernel)

    mu_x = wmean(x)
    mu_y = wmean(y)
    var_x = wmean(x * x) - mu_x ** 2
    var_y = wmean(y * y) - mu_y ** 2
    cov = wmean(x * y) - mu_x * mu_y

    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))
