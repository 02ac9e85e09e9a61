"""MFNet-style dataset layout on disk plus a synthetic RGB-T scene generator.

Layout::

    root/rgb/<name>.png       8-bit, 3 channels
    root/thermal/<name>.png   8-bit, 1 channel
    root/labels/<name>.png    8-bit, 1 channel, raw class ids (255 = ignore)
    root/<split>.txt          one basename per line, in order
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError
from .numerics import Rng

CLASS_NAMES = ("background", "car", "person", "bike", "curve", "stop", "guardrail", "cone", "bump")
IGNORE_INDEX = 255
SUBDIRS = ("rgb", "thermal", "labels")

# thermal brightness per class; background is cold
DEFAULT_EMISSIVITY = (0.10, 0.95, 0.88, 0.80, 0.72, 0.65, 0.57, 0.50, 0.42)
DEFAULT_COLORS = (
    (0.50, 0.50, 0.50),
    (0.85, 0.20, 0.20),
    (0.20, 0.75, 0.25),
    (0.25, 0.30, 0.85),
    (0.85, 0.80, 0.20),
    (0.80, 0.30, 0.80),
    (0.20, 0.80, 0.80),
    (0.95, 0.55, 0.15),
    (0.30, 0.20, 0.25),
)
NIGHT_CONTRAST = 0.1
NIGHT_LEVEL = 0.05


@dataclass
class SegmentationSample:
    rgb: np.ndarray  # (3, H, W) float in [0, 1]
    thermal: np.ndarray  # (1, H, W) float in [0, 1]
    labels: np.ndarray  # (H, W) uint8
    name: str = ""

    def __post_init__(self):
        if self.rgb.shape[0] != 3 or self.thermal.shape[0] != 1:
            raise DataError(f"{self.name}: expected 3-channel rgb and 1-channel thermal")
        if self.rgb.shape[1:] != self.thermal.shape[1:] or self.rgb.shape[1:] != self.labels.shape:
            raise DataError(f"{self.name}: rgb {self.rgb.shape}, thermal {self.thermal.shape} "
                            f"and labels {self.labels.shape} are not aligned")
        check_labels(self.labels, self.name)


def check_labels(labels: np.ndarray, name: str = "") -> None:
    bad = (labels > len(CLASS_NAMES) - 1) & (labels != IGNORE_INDEX)
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise DataError(f"{name}: invalid label id {int(labels[y, x])} at (row={y}, col={x})")


@dataclass
class Shape:
    kind: str  # "rect" | "ellipse"
    cls: int
    top: int
    left: int
    height: int
    width: int

    def contains(self, y: float, x: float) -> bool:
        """Point test on a pixel centre (y, x) in continuous coordinates."""
        if self.kind == "rect":
            return self.top <= y < self.top + self.height and self.left <= x < self.left + self.width
        cy, cx = self.top + self.height / 2, self.left + self.width / 2
        return ((y - cy) / (self.height / 2)) ** 2 + ((x - cx) / (self.width / 2)) ** 2 <= 1.0


@dataclass
class SceneSpec:
    height: int = 64
    width: int = 64
    min_objects: int = 2
    max_objects: int = 4
    min_size: int = 14
    max_size: int = 30
    emissivity: tuple[float, ...] = DEFAULT_EMISSIVITY
    colors: tuple[tuple[float, float, float], ...] = DEFAULT_COLORS
    illumination: str = "day"
    noise: float = 0.02
    night_noise: float = 0.06
    thermal_noise: float = 0.02
    seed: int = 0
    patch_size: int = 8

    def validate(self) -> None:
        from .errors import ConfigError

        if self.height % self.patch_size or self.width % self.patch_size:
            raise ConfigError("scene.height/width must be divisible by scene.patch_size")
        if self.illumination not in ("day", "night"):
            raise ConfigError("scene.illumination must be 'day' or 'night'")
        if not 0 <= self.min_objects <= self.max_objects:
            raise ConfigError("scene object count range is invalid")
        if not 1 <= self.min_size <= self.max_size <= min(self.height, self.width):
            raise ConfigError("scene object size range is invalid")
        if len(self.emissivity) != len(CLASS_NAMES) or len(self.colors) != len(CLASS_NAMES):
            raise ConfigError("scene.emissivity and scene.colors need one entry per class")


def scene_layout(spec: SceneSpec) -> list[Shape]:
    """Seeded object geometry; later shapes occlude earlier ones."""
    rng = Rng(spec.seed).child("layout")
    n = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    shapes = []
    for _ in range(n):
        cls = int(rng.integers(1, len(CLASS_NAMES)))
        kind = "rect" if rng.uniform() < 0.5 else "ellipse"
        h = int(rng.integers(spec.min_size, spec.max_size + 1))
        w = int(rng.integers(spec.min_size, spec.max_size + 1))
        top = int(rng.integers(0, spec.height - h + 1))
        left = int(rng.integers(0, spec.width - w + 1))
        shapes.append(Shape(kind, cls, top, left, h, w))
    return shapes


def render_labels(shapes: list[Shape], height: int, width: int) -> np.ndarray:
    labels = np.zeros((height, width), dtype=np.uint8)
    yy, xx = np.mgrid[0:height, 0:width] + 0.5
    for s in shapes:
        if s.kind == "rect":
            inside = (yy >= s.top) & (yy < s.top + s.height) & (xx >= s.left) & (xx < s.left + s.width)
        else:
            cy, cx = s.top + s.height / 2, s.left + s.width / 2
            inside = ((yy - cy) / (s.height / 2)) ** 2 + ((xx - cx) / (s.width / 2)) ** 2 <= 1.0
        labels[inside] = s.cls
    return labels


def generate_scene(spec: SceneSpec, name: str = "") -> SegmentationSample:
    """Render one synthetic scene. At night RGB contrast drops to 10% and RGB noise rises."""
    spec.validate()
    labels = render_labels(scene_layout(spec), spec.height, spec.width)
    rng = Rng(spec.seed).child("pixels")
    colors = np.asarray(spec.colors, dtype=np.float64)
    emissivity = np.asarray(spec.emissivity, dtype=np.float64)

    rgb = colors[labels].transpose(2, 0, 1)
    if spec.illumination == "night":
        rgb = NIGHT_LEVEL + NIGHT_CONTRAST * rgb
        rgb_noise = spec.night_noise
    else:
        rgb_noise = spec.noise
    rgb = rgb + rng.normal(0.0, rgb_noise, size=rgb.shape)
    thermal = emissivity[labels][None] + rng.normal(0.0, spec.thermal_noise, size=(1,) + labels.shape)
    return SegmentationSample(np.clip(rgb, 0.0, 1.0), np.clip(thermal, 0.0, 1.0), labels, name)


def channel_contrast(img: np.ndarray, labels: np.ndarray) -> float:
    """Mean over present foreground classes of |class mean - background mean|, averaged over channels."""
    bg = labels == 0
    if not bg.any():
        return 0.0
    diffs = []
    for c in range(1, len(CLASS_NAMES)):
        m = labels == c
        if m.any():
            diffs.append(np.abs(img[:, m].mean(axis=1) - img[:, bg].mean(axis=1)).mean())
    return float(np.mean(diffs)) if diffs else 0.0


def _to_u8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8)


def write_dataset(samples, root: str | Path, split: str = "train") -> Path:
    """Write samples in the loader's layout and (over)write ``<split>.txt``."""
    root = Path(root)
    try:
        for sub in SUBDIRS:
            (root / sub).mkdir(parents=True, exist_ok=True)
        names = []
        for s in samples:
            if not s.name:
                raise DataError("samples need a name to be written")
            Image.fromarray(_to_u8(s.rgb.transpose(1, 2, 0)), mode="RGB").save(root / "rgb" / f"{s.name}.png")
            Image.fromarray(_to_u8(s.thermal[0]), mode="L").save(root / "thermal" / f"{s.name}.png")
            Image.fromarray(s.labels.astype(np.uint8), mode="L").save(root / "labels" / f"{s.name}.png")
            names.append(s.name)
        (root / f"{split}.txt").write_text("".join(f"{n}\n" for n in names), encoding="utf-8")
    except OSError as e:
        raise DataError(f"writing dataset under {root}: {e}") from e
    return root


def _read_png(path: Path, mode: str, name: str, sub: str) -> np.ndarray:
    if not path.is_file():
        raise DataError(f"{name}: missing {sub}/{name}.png")
    with Image.open(path) as im:
        if im.mode != mode:
            im = im.convert(mode)
        return np.asarray(im)


def load_sample(root: str | Path, name: str) -> SegmentationSample:
    root = Path(root)
    rgb = _read_png(root / "rgb" / f"{name}.png", "RGB", name, "rgb")
    thr = _read_png(root / "thermal" / f"{name}.png", "L", name, "thermal")
    lab = _read_png(root / "labels" / f"{name}.png", "L", name, "labels")
    return SegmentationSample(
        rgb.transpose(2, 0, 1).astype(np.float64) / 255.0,
        thr[None].astype(np.float64) / 255.0,
        lab.astype(np.uint8),
        name,
    )


def read_split(root: str | Path, split: str) -> list[str]:
    path = Path(root) / f"{split}.txt"
    if not path.is_file():
        raise DataError(f"split file {path} not found")
    return [line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def load_dataset(root: str | Path, split: str) -> list[SegmentationSample]:
    """Samples listed in ``root/<split>.txt``, in file order."""
    return [load_sample(root, name) for name in read_split(root, split)]
