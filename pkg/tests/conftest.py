import numpy as np
import pytest

from planenerf.autodiff import Tensor, gradients


def central_difference(loss_fn, param: Tensor, flat_index: int, eps: float = 1e-4) -> float:
    """Central finite difference of scalar loss_fn() w.r.t. one entry of
    param.data; loss_fn rebuilds its graph on every call."""
    flat = param.data.ravel()
    saved = flat[flat_index]
    flat[flat_index] = saved + eps
    lo_hi = loss_fn()
    flat[flat_index] = saved - eps
    lo_lo = loss_fn()
    flat[flat_index] = saved
    return (float(lo_hi) - float(lo_lo)) / (2.0 * eps)


def relative_error(a: float, b: float, floor: float = 1e-7) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_gradients(loss_fn, params: dict[str, Tensor], entries_per_param: int = 3,
                    eps: float = 1e-4, rtol: float = 1e-3, seed: int = 0,
                    atol: float = 1e-8) -> None:
    """Compare analytic gradients of loss_fn() against central differences
    at randomly chosen entries of every parameter. Use float64 params."""
    rng = np.random.default_rng(seed)
    loss = loss_fn()
    grads = gradients(loss, list(params.values()))
    for (name, param), grad in zip(params.items(), grads):
        n = param.data.size
        idx = rng.choice(n, size=min(entries_per_param, n), replace=False)
        for k in idx:
            fd = central_difference(loss_fn, param, int(k), eps)
            an = float(grad.ravel()[k])
            if abs(fd) < atol and abs(an) < atol:
                continue
            assert relative_error(fd, an) < rtol, \
                f"{name}[{k}]: finite difference {fd:.6g} vs analytic {an:.6g}"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
