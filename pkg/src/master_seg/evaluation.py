"""Confusion matrices, per-class IoU, mIoU and Table-1 style reports.

IoU is computed from counts summed over all images first; per-image IoUs are
never averaged. Classes whose IoU is 0/0 are undefined and left out of the mean.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .dataio import CLASS_NAMES, IGNORE_INDEX
from .errors import DataError

RULES = {"all9": tuple(range(9)), "all_9": tuple(range(9)), "fg8": tuple(range(1, 9)), "foreground_8": tuple(range(1, 9))}
DISPLAY_CLASSES = tuple(range(1, 9))
DISPLAY_NAMES = ("Car", "Person", "Bike", "Curve", "Stop", "Guardrail", "Cone", "Bump")


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[gt, pred] pixel tallies plus the number of ignored pixels."""

    n: int = 9
    counts: np.ndarray = None
    pixels_ignored: int = 0

    def __post_init__(self):
        if self.counts is None:
            object.__setattr__(self, "counts", np.zeros((self.n, self.n), dtype=np.int64))

    def accumulate(self, labels, preds, ignore_index: int = IGNORE_INDEX) -> "ConfusionMatrix":
        labels = np.asarray(labels).astype(np.int64)
        preds = np.asarray(preds).astype(np.int64)
        if labels.shape != preds.shape:
            raise DataError(f"labels {labels.shape} and predictions {preds.shape} differ in shape")
        keep = labels != ignore_index
        if ((preds < 0) | (preds >= self.n)).any():
            bad = np.argwhere((preds < 0) | (preds >= self.n))[0]
            raise DataError(f"invalid prediction id {int(preds[tuple(bad)])} at {tuple(int(i) for i in bad)}")
        if ((labels[keep] < 0) | (labels[keep] >= self.n)).any():
            raise DataError("label ids outside the class range")
        idx = labels[keep] * self.n + preds[keep]
        add = np.bincount(idx, minlength=self.n * self.n).reshape(self.n, self.n)
        return ConfusionMatrix(self.n, self.counts + add, self.pixels_ignored + int((~keep).sum()))

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.n != self.n:
            raise DataError("cannot merge confusion matrices of different sizes")
        return ConfusionMatrix(self.n, self.counts + other.counts, self.pixels_ignored + other.pixels_ignored)

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.pixels_ignored


def iou(cm: ConfusionMatrix) -> np.ndarray:
    """Per-class TP / (TP + FP + FN); NaN where the denominator is zero."""
    c = cm.counts
    tp = np.diag(c).astype(np.float64)
    fp = c.sum(axis=0) - np.diag(c)
    fn = c.sum(axis=1) - np.diag(c)
    denom = tp + fp + fn
    out = np.full(cm.n, np.nan)
    ok = denom > 0
    out[ok] = tp[ok] / denom[ok]
    return out


def miou(cm: ConfusionMatrix, rule: str = "all9") -> float | None:
    """Mean of the defined IoUs over the rule's classes; None when none is defined."""
    if rule not in RULES:
        raise ValueError(f"unknown mIoU rule {rule!r}; use all9 or fg8")
    vals = iou(cm)[list(RULES[rule])]
    vals = vals[~np.isnan(vals)]
    if vals.size == 0:
        return None
    return float(vals.mean())


@dataclass
class IoUReport:
    per_class: list  # n_class values in [0, 1] or None
    miou: float | None
    rule: str = "all9"
    counts: list | None = None

    @classmethod
    def from_matrix(cls, cm: ConfusionMatrix, rule: str = "all9", with_counts: bool = False) -> "IoUReport":
        per = [None if np.isnan(v) else float(v) for v in iou(cm)]
        return cls(per, miou(cm, rule), rule, cm.counts.tolist() if with_counts else None)

    def to_dict(self, method: str = "") -> dict:
        out = {
            "method": method,
            "rule": self.rule,
            "per_class": {name: v for name, v in zip(CLASS_NAMES, self.per_class)},
            "miou": self.miou,
        }
        if self.counts is not None:
            out["counts"] = self.counts
        return out


def reference_reports() -> list[tuple[str, IoUReport]]:
    """Literature rows of the MFNet comparison table (percent values / 100). Not targets."""
    raw = json.loads(resources.files("master_seg").joinpath("data/table1_reference.json").read_text(encoding="utf-8"))
    rows = []
    for row in raw["rows"]:
        per = [None] + [v / 100.0 for v in row["iou"]]
        rows.append((row["method"], IoUReport(per, row["miou"] / 100.0, "reported")))
    return rows


def _cells(report: IoUReport) -> list[float | None]:
    vals = [report.per_class[i] for i in DISPLAY_CLASSES] + [report.miou]
    return [None if v is None else round(v * 100.0, 1) for v in vals]


def top3(reports) -> list[set[int]]:
    """Per column, the row indices whose displayed value is among the three highest distinct values."""
    table = [_cells(r) for _, r in reports]
    marks = []
    for col in range(len(DISPLAY_NAMES) + 1):
        vals = [row[col] for row in table if row[col] is not None]
        best = sorted(set(vals), reverse=True)[:3]
        marks.append({i for i, row in enumerate(table) if row[col] is not None and row[col] in best})
    return marks


def format_report(reports) -> str:
    """Aligned text table; the top three values of each column are wrapped in ``**``."""
    if not reports:
        raise ValueError("nothing to report")
    marks = top3(reports)
    header = ["Method"] + list(DISPLAY_NAMES) + ["mIoU"]
    rows = []
    for i, (name, rep) in enumerate(reports):
        cells = []
        for col, v in enumerate(_cells(rep)):
            s = "-" if v is None else f"{v:.1f}"
            cells.append(f"**{s}**" if i in marks[col] else s)
        rows.append([name] + cells)
    widths = [max(len(r[c]) for r in [header] + rows) for c in range(len(header))]
    lines = ["  ".join(h.ljust(w) if c == 0 else h.rjust(w) for c, (h, w) in enumerate(zip(r, widths)))
             for r in [header] + rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def report_csv(reports) -> str:
    marks = top3(reports)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method"] + list(DISPLAY_NAMES) + ["mIoU", "top3"])
    for i, (name, rep) in enumerate(reports):
        cells = ["" if v is None else f"{v:.1f}" for v in _cells(rep)]
        top = ";".join(h for col, h in enumerate(list(DISPLAY_NAMES) + ["mIoU"]) if i in marks[col])
        w.writerow([name] + cells + [top])
    return buf.getvalue()


def report_json(reports) -> str:
    return json.dumps([rep.to_dict(name) for name, rep in reports], indent=2)


def write_reports(reports, out_dir: str | Path, stem: str = "report") -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"txt": out / f"{stem}.txt", "csv": out / f"{stem}.csv", "json": out / f"{stem}.json"}
    paths["txt"].write_text(format_report(reports), encoding="utf-8")
    paths["csv"].write_text(report_csv(reports), encoding="utf-8")
    paths["json"].write_text(report_json(reports), encoding="utf-8")
    return paths
