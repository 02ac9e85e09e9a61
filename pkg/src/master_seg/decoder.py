"""Lightweight mask decoder.

Codebook tokens are mapped to decoder width, attend to the projected visual
grid, the grid attends back to the tokens, and each class logit is the dot
product of that class's token with a grid cell, divided by sqrt(d_dec).
Logits are bilinearly upsampled to the input resolution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from . import numerics as nx
from .encoders import PatchTokens
from .errors import ConfigError, ShapeError
from .numerics import Rng, Tensor

N_CLASS = 9


@dataclass
class DecoderConfig:
    d_dec: int = 64
    heads: int = 4
    n_class: int = N_CLASS
    class_token_map: tuple[int, ...] = ()  # class i reads codebook row map[i]; empty = identity

    def validate(self, n_code: int | None = None) -> None:
        if self.d_dec <= 0 or self.heads <= 0 or self.n_class <= 0:
            raise ConfigError("decoder.d_dec, decoder.heads and decoder.n_class must be positive")
        if self.d_dec % self.heads:
            raise ConfigError("decoder.d_dec must be divisible by decoder.heads")
        if n_code is not None and n_code < self.n_class:
            raise ConfigError(f"fusion.n_code ({n_code}) must be >= decoder.n_class ({self.n_class})")
        if self.class_token_map:
            if len(self.class_token_map) != self.n_class:
                raise ConfigError("decoder.class_token_map needs one entry per class")
            if n_code is not None and max(self.class_token_map) >= n_code:
                raise ConfigError("decoder.class_token_map refers past the codebook")

    def token_index(self) -> np.ndarray:
        if self.class_token_map:
            return np.asarray(self.class_token_map, dtype=np.int64)
        return np.arange(self.n_class)


@dataclass
class FeatureGrid:
    grid: Tensor  # (rows, cols, d_dec)
    size: tuple[int, int]  # source raster (H, W)
    patch_size: int

    @property
    def rows(self) -> int:
        return self.grid.shape[0]

    @property
    def cols(self) -> int:
        return self.grid.shape[1]


def init_decoder_params(cfg: DecoderConfig, vision_dim: int, code_dim: int, rng: Rng, dtype=np.float64) -> nn.Params:
    cfg.validate()
    params: nn.Params = {}
    d = cfg.d_dec
    nn.init_linear(params, rng, "v2d", 2 * vision_dim, d, dtype)
    nn.init_linear(params, rng, "dec.tok", code_dim, d, dtype)
    nn.init_layer_norm(params, "dec.t2g.ln_q", d, dtype)
    nn.init_layer_norm(params, "dec.t2g.ln_kv", d, dtype)
    nn.init_attention(params, rng, "dec.t2g", d, dtype)
    nn.init_layer_norm(params, "dec.g2t.ln_q", d, dtype)
    nn.init_layer_norm(params, "dec.g2t.ln_kv", d, dtype)
    nn.init_attention(params, rng, "dec.g2t", d, dtype)
    return params


def project_v2d(f_rgb: PatchTokens, f_thr: PatchTokens, params: nn.Params, patch_size: int | None = None) -> FeatureGrid:
    """Per-position [rgb || thr] concatenation, linear map to d_dec, reshaped to the grid."""
    if f_rgb.grid != f_thr.grid or f_rgb.n_patch != f_thr.n_patch:
        raise ShapeError(f"rgb grid {f_rgb.grid} and thermal grid {f_thr.grid} differ")
    rows, cols = f_rgb.grid
    x = nx.concat([f_rgb.tokens, f_thr.tokens], axis=1)
    x = nn.linear(x, params, "v2d")
    p = patch_size or 0
    return FeatureGrid(nx.reshape(x, (rows, cols, x.shape[1])), (rows * p, cols * p), p)


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) half-pixel-centre bilinear interpolation weights, edges clamped."""
    m = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def upsample_bilinear(x: Tensor, size: tuple[int, int]) -> Tensor:
    """(C, h, w) -> (C, H, W) as U_h @ x @ U_w^T per plane."""
    c, h, w = x.shape
    uh = np.broadcast_to(bilinear_matrix(h, size[0]), (c, size[0], h)).astype(x.dtype)
    uw = np.broadcast_to(bilinear_matrix(w, size[1]).T, (c, w, size[1])).astype(x.dtype)
    return nx.matmul(nx.matmul(Tensor(uh, dtype=x.dtype), x), Tensor(uw, dtype=x.dtype))


def decode_masks(codebook: Tensor, grid: FeatureGrid, params: nn.Params, cfg: DecoderConfig,
                 size: tuple[int, int] | None = None) -> Tensor:
    """Return per-class mask logits of shape (n_class, H, W)."""
    n_code = codebook.shape[0]
    if n_code < cfg.n_class:
        raise ConfigError(f"codebook has {n_code} tokens but {cfg.n_class} classes are required")
    if codebook.shape[1] != params["dec.tok.w"].shape[0]:
        raise ShapeError(f"codebook width {codebook.shape[1]} does not match decoder input {params['dec.tok.w'].shape[0]}")
    rows, cols, d = grid.grid.shape
    size = size or grid.size
    t = nn.linear(codebook, params, "dec.tok")
    g = nx.reshape(grid.grid, (rows * cols, d))

    gk = nn.layer_norm(g, params, "dec.t2g.ln_kv")
    t = nx.add(t, nn.attention(nn.layer_norm(t, params, "dec.t2g.ln_q"), gk, params, "dec.t2g", cfg.heads))
    tk = nn.layer_norm(t, params, "dec.g2t.ln_kv")
    g = nx.add(g, nn.attention(nn.layer_norm(g, params, "dec.g2t.ln_q"), tk, params, "dec.g2t", cfg.heads))

    cls = nx.take(t, cfg.token_index(), axis=0)
    # scaled like attention scores so early Adam steps do not overshoot
    logits = nx.scale(nx.matmul(cls, nx.transpose(g, (1, 0))), 1.0 / math.sqrt(d))
    logits = nx.reshape(logits, (cfg.n_class, rows, cols))
    return upsample_bilinear(logits, size)


def predict(logits) -> np.ndarray:
    """Per-pixel argmax over classes; ties go to the lowest class id."""
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return np.argmax(arr, axis=0).astype(np.uint8)
