"""Text-conditioned fusion of visual tokens into codebook tokens.

Both visual token sets go through one shared vision-to-text projection, are
concatenated with the prompt embeddings and the learnable codebook (in that
order), and pass through a small decoder-only transformer. The hidden states
at the codebook positions are the fused codebook ``C_out``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import nn
from . import numerics as nx
from .encoders import PatchTokens
from .errors import ConfigError, ShapeError
from .numerics import Rng, Tensor

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<bos>", "<eos>")
SEGMENTS = ("rgb", "thermal", "text", "codebook")
_WORD = re.compile(r"[a-z0-9]+")


class Vocabulary:
    """Word-level vocabulary; line number in the vocab file is the id."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:4]) != RESERVED:
            raise ConfigError(f"vocabulary must start with {RESERVED}")
        if len(set(tokens)) != len(tokens):
            raise ConfigError("vocabulary contains duplicate tokens")
        self.tokens = tokens
        self.ids = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, word) -> bool:
        return word in self.ids

    def id(self, word: str) -> int:
        return self.ids.get(word, UNK)

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(line.strip() for line in lines if line.strip())

    @classmethod
    def default(cls) -> "Vocabulary":
        text = resources.files("master_seg").joinpath("data/vocab.txt").read_text(encoding="utf-8")
        return cls(line.strip() for line in text.splitlines() if line.strip())

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")


def tokenize(prompt: str, vocab: Vocabulary) -> list[int]:
    """Lowercase, split on anything that is not a letter or digit, look up."""
    return [vocab.id(w) for w in _WORD.findall(prompt.lower())]


@dataclass
class FusionConfig:
    d_model: int = 96
    depth: int = 2
    heads: int = 4
    mlp_ratio: int = 4
    vocab_size: int = 64
    n_code: int = 9
    max_len: int = 192
    causal: bool = True

    def validate(self) -> None:
        for f in ("d_model", "depth", "heads", "mlp_ratio", "vocab_size", "n_code", "max_len"):
            if getattr(self, f) <= 0:
                raise ConfigError(f"fusion.{f} must be positive")
        if self.d_model % self.heads:
            raise ConfigError("fusion.d_model must be divisible by fusion.heads")


@dataclass
class TokenSequence:
    embeddings: Tensor  # (L, d_model)
    segments: list[str]
    mask: np.ndarray  # (L, L) bool, True = may attend
    position_ids: np.ndarray

    def __len__(self) -> int:
        return self.embeddings.shape[0]

    def segment_slice(self, name: str) -> slice:
        idx = [i for i, s in enumerate(self.segments) if s == name]
        if not idx:
            return slice(0, 0)
        return slice(idx[0], idx[-1] + 1)


def init_fusion_params(cfg: FusionConfig, vision_dim: int, rng: Rng, dtype=np.float64) -> nn.Params:
    cfg.validate()
    params: nn.Params = {}
    d = cfg.d_model
    nn.init_linear(params, rng, "v2t.fc1", vision_dim, d, dtype)
    nn.init_linear(params, rng, "v2t.fc2", d, d, dtype)
    nn.new_param(params, "llm.tok_emb", nx.normal_init(rng.child("llm.tok_emb"), (cfg.vocab_size, d), dtype=dtype))
    nn.new_param(params, "llm.pos_emb", nx.normal_init(rng.child("llm.pos_emb"), (cfg.max_len, d), dtype=dtype))
    nn.new_param(params, "codebook.C_seg", nx.normal_init(rng.child("codebook.C_seg"), (cfg.n_code, d), dtype=dtype))
    for i in range(cfg.depth):
        nn.init_block(params, rng, f"llm.blocks.{i}", d, cfg.mlp_ratio, dtype)
    nn.init_layer_norm(params, "llm.ln_f", d, dtype)
    return params


def project_v2t(tokens: PatchTokens | Tensor, params: nn.Params) -> Tensor:
    """Vision-to-text projection: linear -> GELU -> linear, token count preserved."""
    x = tokens.tokens if isinstance(tokens, PatchTokens) else tokens
    expect = params["v2t.fc1.w"].shape[0]
    if x.ndim != 2 or x.shape[1] != expect:
        raise ShapeError(f"v2t projection expects width {expect}, got tokens of shape {x.shape}")
    return nn.mlp(x, params, "v2t")


def embed_text(ids, params: nn.Params) -> Tensor:
    table = params["llm.tok_emb"]
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        return Tensor(np.zeros((0, table.shape[1]), dtype=table.dtype))
    return nx.embedding(table, ids)


def build_mask(segments: list[str], pad: np.ndarray, causal: bool = True) -> np.ndarray:
    """Causal (or full) visibility; pad columns hidden from every other row."""
    n = len(segments)
    mask = np.tril(np.ones((n, n), dtype=bool)) if causal else np.ones((n, n), dtype=bool)
    mask[:, pad] = False
    mask[np.arange(n), np.arange(n)] = True
    return mask


def assemble(rgb_t: Tensor, thermal_t: Tensor, text: Tensor, codebook: Tensor,
             max_len: int, causal: bool = True, text_ids=None) -> TokenSequence:
    """Concatenate rows as [rgb][thermal][text][codebook] with segment tags and mask."""
    parts = [("rgb", rgb_t), ("thermal", thermal_t), ("text", text), ("codebook", codebook)]
    width = codebook.shape[1]
    for name, t in parts:
        if t.ndim != 2 or t.shape[1] != width:
            raise ShapeError(f"{name} segment has shape {t.shape}, expected width {width}")
    total = sum(t.shape[0] for _, t in parts)
    if total > max_len:
        raise ShapeError(f"sequence length {total} exceeds max_len {max_len}")
    segments = [name for name, t in parts for _ in range(t.shape[0])]
    pad = np.zeros(total, dtype=bool)
    if text_ids is not None and len(text_ids):
        start = rgb_t.shape[0] + thermal_t.shape[0]
        pad[start:start + len(text_ids)] = np.asarray(text_ids) == PAD
    nonempty = [t for _, t in parts if t.shape[0] > 0]
    emb = nx.concat(nonempty, axis=0)
    return TokenSequence(emb, segments, build_mask(segments, pad, causal), np.arange(total))


def fuse(seq: TokenSequence, params: nn.Params, cfg: FusionConfig) -> Tensor:
    """Run the decoder-only transformer; return hidden states at the codebook rows."""
    code = seq.segment_slice("codebook")
    if code.stop - code.start != cfg.n_code or code.stop != len(seq):
        raise ShapeError("token sequence must end with exactly n_code codebook rows")
    x = nx.add(seq.embeddings, nx.embedding(params["llm.pos_emb"], seq.position_ids))
    for i in range(cfg.depth):
        x = nn.block(x, params, f"llm.blocks.{i}", cfg.heads, seq.mask)
    x = nn.layer_norm(x, params, "llm.ln_f")
    return nx.slice_rows(x, code.start, code.stop)


def fuse_tokens(f_rgb: PatchTokens, f_thr: PatchTokens, text_ids, params: nn.Params, cfg: FusionConfig) -> Tensor:
    """Full fusion step: project, assemble, run the fusion transformer."""
    seq = assemble(
        project_v2t(f_rgb, params),
        project_v2t(f_thr, params),
        embed_text(text_ids, params),
        params["codebook.C_seg"],
        cfg.max_len,
        cfg.causal,
        text_ids,
    )
    return fuse(seq, params, cfg)
