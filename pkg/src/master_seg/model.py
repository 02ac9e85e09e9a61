"""End-to-end forward pass: encoders -> fusion -> mask decoder."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .decoder import DecoderConfig, decode_masks, init_decoder_params, project_v2d
from .encoders import EncoderConfig, dual_encode, init_encoder_params
from .errors import ConfigError
from .fusion import FusionConfig, fuse_tokens, init_fusion_params
from .numerics import Rng, Tensor

DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)

    def validate(self, prompt_len: int = 0) -> None:
        self.encoder.validate()
        self.fusion.validate()
        self.decoder.validate(self.fusion.n_code)
        need = 2 * self.encoder.n_patch + prompt_len + self.fusion.n_code
        if self.fusion.max_len < need:
            raise ConfigError(f"fusion.max_len ({self.fusion.max_len}) must be >= {need} "
                              f"(2 x {self.encoder.n_patch} patches + {prompt_len} prompt + {self.fusion.n_code} codebook)")


def init_params(cfg: ModelConfig, seed: int, dtype="float64") -> nn.Params:
    """All model parameters; each tensor's init stream is derived from its name."""
    dt = DTYPES[dtype] if isinstance(dtype, str) else dtype
    rng = Rng(seed)
    params = init_encoder_params(cfg.encoder, rng, dt)
    params.update(init_fusion_params(cfg.fusion, cfg.encoder.embed_dim, rng, dt))
    params.update(init_decoder_params(cfg.decoder, cfg.encoder.embed_dim, cfg.fusion.d_model, rng, dt))
    return params


def trainable(params: nn.Params, cfg: ModelConfig) -> dict[str, Tensor]:
    if cfg.encoder.frozen:
        return {k: v for k, v in params.items() if not k.startswith("enc.")}
    return dict(params)


def forward(params: nn.Params, cfg: ModelConfig, rgb: np.ndarray, thermal: np.ndarray, text_ids) -> Tensor:
    """Mask logits (n_class, H, W) for one RGB/thermal pair and a tokenized prompt."""
    f_rgb, f_thr = dual_encode(rgb, thermal, cfg.encoder, params)
    c_out = fuse_tokens(f_rgb, f_thr, text_ids, params, cfg.fusion)
    grid = project_v2d(f_rgb, f_thr, params, cfg.encoder.patch_size)
    return decode_masks(c_out, grid, params, cfg.decoder, (np.asarray(rgb).shape[1], np.asarray(rgb).shape[2]))
