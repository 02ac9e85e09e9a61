"""Run configuration: nested dataclasses, flat ``section.key = value`` files.

Example file::

    # comments start with '#'
    seed = 3
    prompt = segment: background car person bike curve stop guardrail cone bump
    encoder.depth = 4
    train.lr = 0.0003
    scene.illumination = night

A top-level ``seed`` is copied into ``train.seed`` and ``scene.seed`` unless
those keys are set explicitly. Command-line overrides are applied last.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .dataio import CLASS_NAMES, SceneSpec
from .decoder import DecoderConfig
from .encoders import EncoderConfig
from .errors import ConfigError
from .fusion import FusionConfig, Vocabulary, tokenize
from .model import ModelConfig
from .training import TrainConfig

DEFAULT_PROMPT = "segment: " + " ".join(CLASS_NAMES)
SECTIONS = {"encoder": EncoderConfig, "fusion": FusionConfig, "decoder": DecoderConfig,
            "train": TrainConfig, "scene": SceneSpec}


@dataclass
class RunConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    scene: SceneSpec = field(default_factory=SceneSpec)
    prompt: str = DEFAULT_PROMPT
    vocab_path: str = ""
    data_dir: str = ""
    seed: int = 0

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(self.encoder, self.fusion, self.decoder)

    def vocabulary(self) -> Vocabulary:
        return Vocabulary.load(self.vocab_path) if self.vocab_path else Vocabulary.default()

    def text_ids(self) -> list[int]:
        return tokenize(self.prompt, self.vocabulary())

    def validate(self) -> None:
        """Per-section checks plus cross-field consistency."""
        self.model.validate(len(self.text_ids()))
        self.train.validate()
        self.scene.validate()
        if self.fusion.vocab_size != len(self.vocabulary()):
            raise ConfigError(f"fusion.vocab_size ({self.fusion.vocab_size}) != vocabulary size ({len(self.vocabulary())})")
        if self.decoder.n_class != len(CLASS_NAMES):
            raise ConfigError(f"decoder.n_class must be {len(CLASS_NAMES)}")
        if (self.scene.height, self.scene.width) != (self.encoder.height, self.encoder.width):
            raise ConfigError("scene.height/width must equal encoder.height/width")
        if self.scene.patch_size != self.encoder.patch_size:
            raise ConfigError("scene.patch_size must equal encoder.patch_size")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        cfg = cls()
        for key, value in d.items():
            if key in SECTIONS:
                for k, v in value.items():
                    _set(cfg, f"{key}.{k}", v)
            else:
                _set(cfg, key, value)
        return cfg


def _coerce(value, hint, key: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    try:
        if origin is typing.Union or (origin is not None and type(None) in args):
            inner = [a for a in args if a is not type(None)][0]
            return None if value in (None, "", "none", "None") else _coerce(value, inner, key)
        if hint is bool:
            if isinstance(value, bool):
                return value
            s = str(value).strip().lower()
            if s in ("1", "true", "yes", "on"):
                return True
            if s in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if hint is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if hint is float:
            return float(value)
        if hint is str:
            return str(value)
        if origin is tuple:
            items = value
            if isinstance(value, str):
                items = [x for x in value.replace(";", ",").split(",") if x.strip()] if "(" not in value else _parse_nested(value)
            if len(args) == 2 and args[1] is Ellipsis:
                return tuple(_coerce(x, args[0], key) for x in items)
            return tuple(_coerce(x, a, key) for x, a in zip(items, args))
    except (TypeError, ValueError, IndexError):
        raise ConfigError(f"{key}: cannot parse {value!r}") from None
    return value


def _parse_nested(text: str) -> list[list[str]]:
    groups = []
    for chunk in text.split(")"):
        chunk = chunk.strip(" ,;(")
        if chunk:
            groups.append([x.strip() for x in chunk.replace("(", "").split(",") if x.strip()])
    return groups


def _set(cfg: RunConfig, key: str, value) -> None:
    parts = key.split(".")
    if len(parts) == 1:
        target, name = cfg, parts[0]
    elif len(parts) == 2 and parts[0] in SECTIONS:
        target, name = getattr(cfg, parts[0]), parts[1]
    else:
        raise ConfigError(f"{key}: unknown config key")
    hints = typing.get_type_hints(type(target))
    if name not in hints or name not in {f.name for f in dataclasses.fields(target)}:
        raise ConfigError(f"{key}: unknown config key")
    setattr(target, name, _coerce(value, hints[name], key))


def parse_pairs(lines) -> dict[str, str]:
    out = {}
    for n, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {raw!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults <- file <- overrides; the top-level seed feeds train/scene seeds."""
    pairs: dict = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        pairs.update(parse_pairs(p.read_text(encoding="utf-8").splitlines()))
    pairs.update(overrides or {})
    cfg = RunConfig()
    for k, v in pairs.items():
        _set(cfg, k, v)
    if "seed" in pairs:
        if "train.seed" not in pairs:
            cfg.train.seed = cfg.seed
        if "scene.seed" not in pairs:
            cfg.scene.seed = cfg.seed
    return cfg


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in SECTIONS:
            for sf in dataclasses.fields(value):
                lines.append(f"{f.name}.{sf.name} = {_fmt(getattr(value, sf.name))}")
        else:
            lines.append(f"{f.name} = {_fmt(value)}")
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return " ".join("(" + ", ".join(repr(x) for x in t) + ")" for t in v)
        return ", ".join(repr(x) for x in v)
    return str(v)
