"""Positional encoding and the neural heads of both branches.

The grid branch translates grid features through two small MLPs (density
head, direction-conditioned color head). The NeRF branch is a 4-layer
trunk without skip connections that consumes grid features concatenated
with positionally encoded coordinates; density leaves the trunk directly
so it stays view-independent, and color comes from one final layer that
additionally sees the encoded view direction.

Density activations are softplus, colors sigmoid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, relu, reshape, sigmoid, softplus


def positional_encoding(x: np.ndarray, n_freqs: int) -> np.ndarray:
    """(sin(2^l u), cos(2^l u)) for l in 0..L-1, per input component.

    x: (N, D) -> (N, 2*L*D), component-major then frequency, entries in
    [-1, 1]. No pi factor and no identity passthrough.
    """
    if n_freqs < 1:
        raise ValueError("positional encoding needs at least one frequency")
    x = np.asarray(x)
    freqs = (2.0 ** np.arange(n_freqs)).astype(x.dtype)
    ang = x[:, :, None] * freqs  # (N, D, L)
    out = np.stack([np.sin(ang), np.cos(ang)], axis=-1)  # (N, D, L, 2)
    return out.reshape(x.shape[0], -1)


@dataclass(frozen=True)
class PEConfig:
    l_pos: int = 16  # highest position frequency 2^15
    l_dir: int = 4

    def __post_init__(self):
        if self.l_pos < 1 or self.l_dir < 1:
            raise ValueError("frequency counts must be >= 1")

    def encode_positions(self, x: np.ndarray) -> np.ndarray:
        return positional_encoding(x, self.l_pos)

    def encode_directions(self, d: np.ndarray) -> np.ndarray:
        return positional_encoding(d, self.l_dir)

    @property
    def pos_dim(self) -> int:
        return 2 * self.l_pos * 3

    @property
    def dir_dim(self) -> int:
        return 2 * self.l_dir * 3


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


class MLPHead:
    """Fully connected stack: hidden layers with ReLU, linear output.

    `widths` lists every layer size including input and output, e.g.
    (24, 128, 128, 1) is two hidden layers of 128.
    """

    def __init__(self, widths, rng: np.random.Generator, dtype=np.float32):
        if len(widths) < 2:
            raise ValueError("an MLP needs at least input and output widths")
        self.widths = tuple(int(w) for w in widths)
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            self.weights.append(Tensor(_glorot(rng, fan_in, fan_out, dtype), requires_grad=True))
            self.biases.append(Tensor(np.zeros(fan_out, dtype=dtype), requires_grad=True))

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"MLP expects input width {self.in_dim}, got {x.shape}")
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = (h @ w) + b
            if i != last:
                h = relu(h)
        return h

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.{i}.weight"] = w
            out[f"{prefix}.{i}.bias"] = b
        return out


class GridBranchHeads:
    """Density head F(G_sigma) and direction-conditioned color head
    F(G_c, PE(d)) for the grid branch."""

    def __init__(self, sigma_dim: int, color_dim: int, pe: PEConfig,
                 hidden: int = 128, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.pe = pe
        self.density = MLPHead((sigma_dim, hidden, hidden, 1), rng, dtype)
        self.color = MLPHead((color_dim + pe.dir_dim, hidden, hidden, 3), rng, dtype)

    def named_parameters(self) -> dict[str, Tensor]:
        return {**self.density.named_parameters("grid_head.density"),
                **self.color.named_parameters("grid_head.color")}


def grid_branch_eval(heads: GridBranchHeads, g_sigma: Tensor, g_c: Tensor,
                     dirs: np.ndarray) -> tuple[Tensor, Tensor]:
    """Density (N,) and color (N, 3) of the grid branch.

    Direction enters only the color head, so density is view-independent
    by construction.
    """
    pe_d = heads.pe.encode_directions(dirs).astype(g_c.dtype)
    return grid_branch_eval_encoded(heads, g_sigma, g_c, pe_d)


def grid_branch_eval_encoded(heads: GridBranchHeads, g_sigma: Tensor, g_c: Tensor,
                             pe_d: np.ndarray) -> tuple[Tensor, Tensor]:
    """Same as grid_branch_eval but with directions already encoded;
    render paths encode once per ray and repeat across samples."""
    n = g_sigma.shape[0]
    sigma = softplus(reshape(heads.density(g_sigma), n))
    color = sigmoid(heads.color(concat([g_c, Tensor(pe_d)], axis=1)))
    return sigma, color


class NerfBranch:
    """4-layer trunk on concat(G_sigma, G_c, PE(X)); density straight off
    the trunk, color from one extra layer that also sees PE(d)."""

    def __init__(self, sigma_dim: int, color_dim: int, pe: PEConfig,
                 width: int = 256, depth: int = 4,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.pe = pe
        in_dim = sigma_dim + color_dim + pe.pos_dim
        self.trunk = MLPHead((in_dim,) + (width,) * depth, rng, dtype)
        self.sigma_out = MLPHead((width, 1), rng, dtype)
        self.color_out = MLPHead((width + pe.dir_dim, 3), rng, dtype)

    def named_parameters(self) -> dict[str, Tensor]:
        return {**self.trunk.named_parameters("nerf_branch.trunk"),
                **self.sigma_out.named_parameters("nerf_branch.sigma"),
                **self.color_out.named_parameters("nerf_branch.color")}


def nerf_branch_eval(branch: NerfBranch, g_sigma: Tensor, g_c: Tensor,
                     points: np.ndarray, dirs: np.ndarray) -> tuple[Tensor, Tensor]:
    """Density (N,) and color (N, 3) of the NeRF branch at normalized
    points. A pointwise function: rows never interact."""
    dtype = g_sigma.dtype
    pe_x = branch.pe.encode_positions(points).astype(dtype)
    pe_d = branch.pe.encode_directions(dirs).astype(dtype)
    return nerf_branch_eval_encoded(branch, g_sigma, g_c, pe_x, pe_d)


def nerf_branch_eval_encoded(branch: NerfBranch, g_sigma: Tensor, g_c: Tensor,
                             pe_x: np.ndarray, pe_d: np.ndarray) -> tuple[Tensor, Tensor]:
    """nerf_branch_eval with both encodings precomputed."""
    n = g_sigma.shape[0]
    h = relu(branch.trunk(concat([g_sigma, g_c, Tensor(pe_x)], axis=1)))
    sigma = softplus(reshape(branch.sigma_out(h), n))
    color = sigmoid(branch.color_out(concat([h, Tensor(pe_d)], axis=1)))
    return sigma, color
