"""Functional transformer pieces over a flat ``{name: Tensor}`` parameter dict."""
from __future__ import annotations

import math

import numpy as np

from . import numerics as nx
from .numerics import Rng, Tensor

Params = dict[str, Tensor]


def new_param(params: Params, name: str, data: np.ndarray) -> Tensor:
    t = Tensor(data, requires_grad=True, name=name, dtype=data.dtype)
    params[name] = t
    return t


def init_linear(params: Params, rng: Rng, name: str, fan_in: int, fan_out: int, dtype) -> None:
    new_param(params, f"{name}.w", nx.xavier_uniform(rng.child(f"{name}.w"), fan_in, fan_out, dtype))
    new_param(params, f"{name}.b", np.zeros(fan_out, dtype=dtype))


def init_layer_norm(params: Params, name: str, dim: int, dtype) -> None:
    new_param(params, f"{name}.g", np.ones(dim, dtype=dtype))
    new_param(params, f"{name}.b", np.zeros(dim, dtype=dtype))


def init_attention(params: Params, rng: Rng, name: str, dim: int, dtype, kv_dim: int | None = None) -> None:
    kv_dim = dim if kv_dim is None else kv_dim
    init_linear(params, rng, f"{name}.q", dim, dim, dtype)
    init_linear(params, rng, f"{name}.k", kv_dim, dim, dtype)
    init_linear(params, rng, f"{name}.v", kv_dim, dim, dtype)
    init_linear(params, rng, f"{name}.o", dim, dim, dtype)


def init_block(params: Params, rng: Rng, name: str, dim: int, mlp_ratio: int, dtype) -> None:
    init_layer_norm(params, f"{name}.ln1", dim, dtype)
    init_attention(params, rng, f"{name}.attn", dim, dtype)
    init_layer_norm(params, f"{name}.ln2", dim, dtype)
    init_linear(params, rng, f"{name}.fc1", dim, dim * mlp_ratio, dtype)
    init_linear(params, rng, f"{name}.fc2", dim * mlp_ratio, dim, dtype)


def linear(x: Tensor, p: Params, name: str) -> Tensor:
    return nx.add(nx.matmul(x, p[f"{name}.w"]), p[f"{name}.b"])


def layer_norm(x: Tensor, p: Params, name: str, eps: float = 1e-5) -> Tensor:
    return nx.layer_norm(x, p[f"{name}.g"], p[f"{name}.b"], eps)


def mlp(x: Tensor, p: Params, name: str) -> Tensor:
    return linear(nx.gelu(linear(x, p, f"{name}.fc1")), p, f"{name}.fc2")


def _split_heads(x: Tensor, heads: int) -> Tensor:
    n, d = x.shape
    return nx.transpose(nx.reshape(x, (n, heads, d // heads)), (1, 0, 2))


def attention(q_in: Tensor, kv_in: Tensor, p: Params, name: str, heads: int,
              mask: np.ndarray | None = None) -> Tensor:
    """Multi-head attention. ``mask[i, j]`` True means query i may see key j."""
    q = _split_heads(linear(q_in, p, f"{name}.q"), heads)
    k = _split_heads(linear(kv_in, p, f"{name}.k"), heads)
    v = _split_heads(linear(kv_in, p, f"{name}.v"), heads)
    dh = q.shape[-1]
    scores = nx.scale(nx.matmul(q, nx.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dh))
    if mask is not None:
        bias = np.where(mask, 0.0, nx.MASK_FILL).astype(scores.dtype)
        scores = nx.add(scores, np.broadcast_to(bias, scores.shape))
    weights = nx.softmax(scores, axis=-1)
    out = nx.matmul(weights, v)
    lq = q_in.shape[0]
    out = nx.reshape(nx.transpose(out, (1, 0, 2)), (lq, heads * dh))
    return linear(out, p, f"{name}.o")


def block(x: Tensor, p: Params, name: str, heads: int, mask: np.ndarray | None = None) -> Tensor:
    """Pre-norm transformer block: x + attn(ln(x)), then x + mlp(ln(x))."""
    h = layer_norm(x, p, f"{name}.ln1")
    x = nx.add(x, attention(h, h, p, f"{name}.attn", heads, mask))
    return nx.add(x, mlp(layer_norm(x, p, f"{name}.ln2"), p, name))
