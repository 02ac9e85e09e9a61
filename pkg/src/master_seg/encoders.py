"""Dual-path patch-transformer encoders for RGB and thermal rasters.

Rasters are ``(C, H, W)`` float arrays in [0, 1]: C=3 for RGB, C=1 for
thermal. Each path has its own patch embedding and positional table; the
transformer trunk is shared only when ``share_trunk`` is set.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import numerics as nx
from .errors import ConfigError, ShapeError
from .numerics import Rng, Tensor

MODALITY_CHANNELS = {"rgb": 3, "thermal": 1}


@dataclass
class EncoderConfig:
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 4
    heads: int = 4
    mlp_ratio: int = 4
    share_trunk: bool = False
    frozen: bool = False
    height: int = 64
    width: int = 64

    def validate(self) -> None:
        for f in ("patch_size", "embed_dim", "depth", "heads", "mlp_ratio", "height", "width"):
            if getattr(self, f) <= 0:
                raise ConfigError(f"encoder.{f} must be positive")
        if self.embed_dim % self.heads:
            raise ConfigError("encoder.embed_dim must be divisible by encoder.heads")
        if self.height % self.patch_size or self.width % self.patch_size:
            raise ConfigError("encoder.height/width must be divisible by encoder.patch_size")

    @property
    def grid(self) -> tuple[int, int]:
        return self.height // self.patch_size, self.width // self.patch_size

    @property
    def n_patch(self) -> int:
        rows, cols = self.grid
        return rows * cols


@dataclass
class PatchTokens:
    tokens: Tensor  # (n_patch, D)
    grid: tuple[int, int]
    modality: str

    @property
    def n_patch(self) -> int:
        return self.tokens.shape[0]


def patchify(img: np.ndarray, patch_size: int) -> np.ndarray:
    """Split a (C, H, W) raster into row-major patches, each flattened (c, y, x)."""
    img = np.asarray(img)
    if img.ndim != 3:
        raise ShapeError(f"expected a (C, H, W) raster, got shape {img.shape}")
    c, h, w = img.shape
    p = patch_size
    if h % p or w % p:
        raise ShapeError(f"raster {h}x{w} is not divisible by patch size {p}; H and W must both be multiples of {p}")
    rows, cols = h // p, w // p
    x = img.reshape(c, rows, p, cols, p).transpose(1, 3, 0, 2, 4)
    return x.reshape(rows * cols, c * p * p)


def _trunk_prefix(cfg: EncoderConfig, modality: str) -> str:
    return "enc.shared" if cfg.share_trunk else f"enc.{modality}"


def init_encoder_params(cfg: EncoderConfig, rng: Rng, dtype=np.float64) -> nn.Params:
    """Parameters for both paths (and one or two trunks)."""
    cfg.validate()
    params: nn.Params = {}
    d, p = cfg.embed_dim, cfg.patch_size
    for modality, channels in MODALITY_CHANNELS.items():
        nn.init_linear(params, rng, f"enc.{modality}.embed", channels * p * p, d, dtype)
        nn.new_param(params, f"enc.{modality}.pos", nx.normal_init(rng.child(f"enc.{modality}.pos"), (cfg.n_patch, d), dtype=dtype))
    trunks = ["shared"] if cfg.share_trunk else list(MODALITY_CHANNELS)
    for t in trunks:
        for i in range(cfg.depth):
            nn.init_block(params, rng, f"enc.{t}.blocks.{i}", d, cfg.mlp_ratio, dtype)
        nn.init_layer_norm(params, f"enc.{t}.ln_f", d, dtype)
    return params


def encode(img: np.ndarray, cfg: EncoderConfig, params: nn.Params, modality: str = "rgb") -> PatchTokens:
    """Patch embed + positions + ``depth`` pre-norm blocks + final norm."""
    if modality not in MODALITY_CHANNELS:
        raise ConfigError(f"unknown modality {modality!r}")
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != MODALITY_CHANNELS[modality]:
        raise ShapeError(f"{modality} raster must have {MODALITY_CHANNELS[modality]} channels, got shape {img.shape}")
    if img.shape[1:] != (cfg.height, cfg.width):
        raise ShapeError(f"{modality} raster is {img.shape[1]}x{img.shape[2]}, encoder expects {cfg.height}x{cfg.width}")
    dtype = params[f"enc.{modality}.pos"].dtype
    patches = Tensor(patchify(img, cfg.patch_size), dtype=dtype)
    x = nn.linear(patches, params, f"enc.{modality}.embed")
    x = nx.add(x, params[f"enc.{modality}.pos"])
    trunk = _trunk_prefix(cfg, modality)
    for i in range(cfg.depth):
        x = nn.block(x, params, f"{trunk}.blocks.{i}", cfg.heads)
    x = nn.layer_norm(x, params, f"{trunk}.ln_f")
    return PatchTokens(x, cfg.grid, modality)


def dual_encode(rgb: np.ndarray, thermal: np.ndarray, cfg: EncoderConfig, params: nn.Params) -> tuple[PatchTokens, PatchTokens]:
    rgb, thermal = np.asarray(rgb), np.asarray(thermal)
    if rgb.shape[1:] != thermal.shape[1:]:
        raise ShapeError(f"rgb {rgb.shape[1:]} and thermal {thermal.shape[1:]} rasters differ spatially")
    return encode(rgb, cfg, params, "rgb"), encode(thermal, cfg, params, "thermal")
