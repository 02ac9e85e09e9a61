"""Segmentation loss, Adam updates, the training loop and checkpoints."""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import nn
from . import numerics as nx
from .dataio import CLASS_NAMES, IGNORE_INDEX, SegmentationSample
from .errors import ConfigError, DataError, NumericError
from .model import ModelConfig, forward, init_params, trainable
from .numerics import Rng, Tensor

log = logging.getLogger(__name__)

DICE_SMOOTH = 1.0


@dataclass
class TrainConfig:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    steps: int = 2000
    batch_size: int = 2
    seed: int = 0
    ce_weight: float = 1.0
    dice_weight: float = 0.5
    ignore_index: int = IGNORE_INDEX
    checkpoint_every: int = 0
    dtype: str = "float32"

    def validate(self) -> None:
        if self.lr < 0:
            raise ConfigError("train.lr must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("train.beta1/beta2 must lie in [0, 1)")
        if self.steps < 0:
            raise ConfigError("train.steps must be non-negative")
        if self.batch_size <= 0:
            raise ConfigError("train.batch_size must be positive")
        if self.ce_weight < 0 or self.dice_weight < 0 or self.ce_weight + self.dice_weight <= 0:
            raise ConfigError("train.ce_weight/dice_weight must be >= 0 with a positive sum")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("train.dtype must be float32 or float64")


@dataclass
class TrainState:
    params: nn.Params
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    running_loss: float = float("nan")

    @classmethod
    def fresh(cls, params: nn.Params) -> "TrainState":
        return cls(params,
                   {k: np.zeros_like(p.data) for k, p in params.items()},
                   {k: np.zeros_like(p.data) for k, p in params.items()})


# ---------------------------------------------------------------------------
# loss


def seg_loss(logits: Tensor, labels: np.ndarray, cfg: TrainConfig) -> Tensor:
    """ce_weight * mean pixel CE + dice_weight * (1 - mean class soft dice); ignored pixels excluded."""
    n_class, h, w = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (h, w):
        raise DataError(f"labels shape {labels.shape} does not match logits {(h, w)}")
    bad = (labels >= n_class) & (labels != cfg.ignore_index)
    if bad.any() or (labels < 0).any():
        y, x = np.argwhere(bad | (labels < 0))[0]
        raise DataError(f"label {int(labels[y, x])} out of range at (row={y}, col={x})")
    valid = labels != cfg.ignore_index
    n_valid = int(valid.sum())
    onehot = np.zeros((n_class, h, w), dtype=logits.dtype)
    yy, xx = np.nonzero(valid)
    onehot[labels[yy, xx].astype(np.int64), yy, xx] = 1.0
    vmask = np.broadcast_to(valid, (n_class, h, w)).astype(logits.dtype)

    total = None
    if cfg.ce_weight > 0:
        logp = nx.log_softmax(logits, axis=0)
        ce = nx.scale(nx.sum(nx.mul(logp, onehot)), -1.0 / max(n_valid, 1))
        total = nx.scale(ce, cfg.ce_weight)
    if cfg.dice_weight > 0:
        prob = nx.mul(nx.softmax(logits, axis=0), vmask)
        inter = nx.sum(nx.reshape(nx.mul(prob, onehot), (n_class, h * w)), axis=1)
        psum = nx.sum(nx.reshape(prob, (n_class, h * w)), axis=1)
        ysum = onehot.reshape(n_class, -1).sum(axis=1)
        num = nx.add_scalar(nx.scale(inter, 2.0), DICE_SMOOTH)
        den = nx.add_scalar(nx.add(psum, ysum), DICE_SMOOTH)
        dice = nx.mean(nx.div(num, den))
        term = nx.scale(nx.add_scalar(nx.scale(dice, -1.0), 1.0), cfg.dice_weight)
        total = term if total is None else nx.add(total, term)
    return total


# ---------------------------------------------------------------------------
# optimisation


def adam_update(state: TrainState, names, cfg: TrainConfig) -> None:
    """Bias-corrected Adam with optional decoupled weight decay, in place."""
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name in names:
        p = state.params[name]
        g = p.grad
        if g is None:
            continue
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if cfg.lr == 0.0:
            continue
        upd = (cfg.lr / c1) * m / (np.sqrt(v / c2) + cfg.adam_eps)
        if cfg.weight_decay:
            upd = upd + cfg.lr * cfg.weight_decay * p.data
        p.data = (p.data - upd).astype(p.data.dtype, copy=False)


def batch_loss(params: nn.Params, model_cfg: ModelConfig, batch, text_ids, cfg: TrainConfig) -> Tensor:
    losses = [seg_loss(forward(params, model_cfg, s.rgb, s.thermal, text_ids), s.labels, cfg) for s in batch]
    total = losses[0] if len(losses) == 1 else nx.sum(nx.concat([nx.reshape(x, (1,)) for x in losses]))
    return nx.scale(total, 1.0 / len(losses))


def train_step(state: TrainState, batch, text_ids, model_cfg: ModelConfig, cfg: TrainConfig) -> float:
    """One forward/backward/update on ``batch``; returns the batch loss."""
    if not batch:
        raise DataError("empty batch")
    names = list(trainable(state.params, model_cfg))
    try:
        loss = batch_loss(state.params, model_cfg, batch, text_ids, cfg)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError(f"non-finite loss {value}")
        for name in names:
            state.params[name].zero_grad()
        nx.backward(loss)
    except NumericError as e:
        raise NumericError(f"step {state.step + 1}: {e}") from e
    state.step += 1
    adam_update(state, names, cfg)
    state.running_loss = value if not np.isfinite(state.running_loss) else 0.9 * state.running_loss + 0.1 * value
    return value


def _batches(n: int, batch_size: int, rng: Rng):
    while True:
        order = rng.permutation(n)
        for i in range(0, n, batch_size):
            yield order[i:i + batch_size]


def fit(model_cfg: ModelConfig, cfg: TrainConfig, dataset: list[SegmentationSample], text_ids,
        state: TrainState | None = None, checkpoint_path: str | Path | None = None,
        config_echo: dict | None = None,
        on_step: Callable[[int, float], None] | None = None) -> tuple[TrainState, list[tuple[int, float]]]:
    """Run ``cfg.steps`` Adam steps with seeded shuffling; returns state and the (step, loss) log."""
    if not dataset:
        raise DataError("cannot train on an empty dataset")
    cfg.validate()
    model_cfg.validate(len(text_ids))
    if state is None:
        state = TrainState.fresh(init_params(model_cfg, cfg.seed, cfg.dtype))
    batches = _batches(len(dataset), cfg.batch_size, Rng(cfg.seed).child("shuffle"))
    history = []
    for _ in range(cfg.steps):
        idx = next(batches)
        loss = train_step(state, [dataset[i] for i in idx], text_ids, model_cfg, cfg)
        history.append((state.step, loss))
        if on_step is not None:
            on_step(state.step, loss)
        if checkpoint_path and cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
            save_checkpoint(checkpoint_path, state, config_echo or {})
    return state, history


def write_loss_csv(history, path: str | Path) -> None:
    lines = ["step,loss"] + [f"{s},{loss:.9g}" for s, loss in history]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# checkpoints
#
# File layout (all integers little-endian):
#   8 bytes   magic b"MSEGCKPT"
#   4 bytes   format version (uint32, currently 1)
#   8 bytes   header length N (uint64)
#   N bytes   UTF-8 JSON header: {"config": ..., "step": int,
#             "tensors": [{"name", "kind", "shape", "offset", "count"}, ...]}
#   payload   float32 little-endian values; offsets are in bytes from payload start
# ``kind`` is "param", "adam_m" or "adam_v".

MAGIC = b"MSEGCKPT"
VERSION = 1


def save_checkpoint(path: str | Path, state: TrainState, config: dict) -> None:
    entries, blobs, offset = [], [], 0
    for kind, store in (("param", {k: p.data for k, p in state.params.items()}), ("adam_m", state.m), ("adam_v", state.v)):
        for name, arr in store.items():
            raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            entries.append({"name": name, "kind": kind, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
            blobs.append(raw)
            offset += len(raw)
    header = json.dumps({"config": config, "step": state.step, "tensors": entries}, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", VERSION, len(header)))
        f.write(header)
        for b in blobs:
            f.write(b)


def load_checkpoint(path: str | Path, dtype="float32") -> tuple[TrainState, dict]:
    """Returns the restored state and the config echo stored with it."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[20:20 + hlen].decode("utf-8"))
    payload = memoryview(raw)[20 + hlen:]
    dt = np.dtype(dtype)
    params, m, v = {}, {}, {}
    for e in header["tensors"]:
        arr = np.frombuffer(payload, dtype="<f4", count=e["count"], offset=e["offset"]).reshape(e["shape"]).astype(dt)
        if e["kind"] == "param":
            params[e["name"]] = Tensor(arr, requires_grad=True, name=e["name"], dtype=dt)
        elif e["kind"] == "adam_m":
            m[e["name"]] = arr
        else:
            v[e["name"]] = arr
    return TrainState(params, m, v, int(header["step"])), header["config"]


# ---------------------------------------------------------------------------
# inference helpers


def predict_sample(params: nn.Params, model_cfg: ModelConfig, rgb, thermal, text_ids) -> np.ndarray:
    from .decoder import predict

    return predict(forward(params, model_cfg, rgb, thermal, text_ids))


def evaluate(params: nn.Params, model_cfg: ModelConfig, samples, text_ids, zero_rgb=False, zero_thermal=False):
    """Confusion matrix over ``samples`` (optionally with one modality zeroed)."""
    from .evaluation import ConfusionMatrix

    cm = ConfusionMatrix(len(CLASS_NAMES))
    for s in samples:
        rgb = np.zeros_like(s.rgb) if zero_rgb else s.rgb
        thr = np.zeros_like(s.thermal) if zero_thermal else s.thermal
        cm = cm.accumulate(s.labels, predict_sample(params, model_cfg, rgb, thr, text_ids))
    return cm
