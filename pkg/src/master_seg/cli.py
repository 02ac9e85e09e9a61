"""Command-line front end: ``gen-data``, ``train``, ``eval``, ``predict``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image

from . import dataio
from .config import RunConfig, load_config
from .dataio import CLASS_NAMES, SceneSpec, generate_scene, load_dataset, write_dataset
from .errors import ConfigError, DataError, NumericError, ShapeError
from .evaluation import ConfusionMatrix, IoUReport, format_report, write_reports
from .fusion import tokenize
from .numerics import Rng
from .training import TrainConfig, fit, load_checkpoint, predict_sample, save_checkpoint, write_loss_csv

log = logging.getLogger("master_seg")

RULE_NAMES = {"all9": "all9", "fg8": "fg8"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _overrides(args) -> dict:
    out = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    if getattr(args, "seed", None) is not None:
        out["seed"] = str(args.seed)
    if getattr(args, "prompt", None) is not None:
        out["prompt"] = args.prompt
    return out


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config, _overrides(args))
    cfg.validate()
    return cfg


def scene_seed(seed: int, index: int) -> int:
    return int(Rng(seed).child("scene").child(index).integers(0, 2**31 - 1))


def cmd_gen_data(args) -> int:
    cfg = _run_config(args)
    if args.count < 0 or not 0.0 <= args.ratio <= 1.0:
        raise ConfigError("--count must be >= 0 and --ratio within [0, 1]")
    out = Path(args.out)
    tag = "N" if cfg.scene.illumination == "night" else "D"
    samples = []
    for i in range(args.count):
        spec = SceneSpec(**{**cfg.scene.__dict__, "seed": scene_seed(cfg.scene.seed, i)})
        samples.append(generate_scene(spec, f"{i:05d}{tag}"))
    n_train = int(round(args.count * args.ratio))
    write_dataset(samples[:n_train], out, "train")
    write_dataset(samples[n_train:], out, "val")
    print(f"wrote {n_train} train / {args.count - n_train} val scenes to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    if args.steps is not None:
        cfg.train.steps = args.steps
    data_dir = args.data or cfg.data_dir
    if not data_dir:
        raise ConfigError("data_dir: pass --data or set data_dir in the config")
    data = load_dataset(data_dir, args.split)
    if not data:
        raise DataError(f"split {args.split!r} under {data_dir} is empty")
    for s in data:
        if s.labels.shape != (cfg.encoder.height, cfg.encoder.width):
            raise DataError(f"{s.name}: size {s.labels.shape} does not match encoder {cfg.encoder.height}x{cfg.encoder.width}")
    out = Path(args.out)
    t0 = time.time()

    def progress(step, loss):
        if step % max(1, args.log_every) == 0:
            log.info("step %d loss %.5f (%.1fs)", step, loss, time.time() - t0)

    state, history = fit(cfg.model, cfg.train, data, cfg.text_ids(), checkpoint_path=out,
                         config_echo=cfg.to_dict(), on_step=progress)
    save_checkpoint(out, state, cfg.to_dict())
    log_path = Path(args.log) if args.log else out.with_suffix(".loss.csv")
    write_loss_csv(history, log_path)
    final = f"{history[-1][1]:.5f}" if history else "n/a"
    print(f"trained {len(history)} steps in {time.time() - t0:.1f}s, final loss {final}; checkpoint {out}, log {log_path}")
    return 0


def _load_model(path, prompt: str | None):
    state, echo = load_checkpoint(path)
    cfg = RunConfig.from_dict(echo)
    if prompt is not None:
        cfg.prompt = prompt
    if cfg.decoder.n_class != len(CLASS_NAMES):
        raise DataError(f"checkpoint predicts {cfg.decoder.n_class} classes, dataset has {len(CLASS_NAMES)}")
    cfg.model.validate(len(cfg.text_ids()))
    return state.params, cfg


def cmd_eval(args) -> int:
    params, cfg = _load_model(args.checkpoint, args.prompt)
    data_dir = args.data or cfg.data_dir
    ids = cfg.text_ids()
    cm = ConfusionMatrix(len(CLASS_NAMES))
    for name in dataio.read_split(data_dir, args.split):
        s = dataio.load_sample(data_dir, name)
        if args.oracle_pred:
            pred = np.where(s.labels == dataio.IGNORE_INDEX, 0, s.labels)
        else:
            rgb = np.zeros_like(s.rgb) if args.zero_rgb else s.rgb
            thr = np.zeros_like(s.thermal) if args.zero_thermal else s.thermal
            pred = predict_sample(params, cfg.model, rgb, thr, ids)
        cm = cm.accumulate(s.labels, pred)
    report = IoUReport.from_matrix(cm, args.miou_rule, with_counts=args.counts)
    rows = [(args.name, report)]
    print(format_report(rows), end="")
    shown = "undefined" if report.miou is None else f"{100 * report.miou:.1f}"
    print(f"mIoU ({args.miou_rule}) = {shown}")
    if args.out:
        paths = write_reports(rows, args.out)
        print(f"reports written to {paths['txt'].parent}")
    return 0


def _read_raster(path, mode: str) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{p} not found")
    with Image.open(p) as im:
        return np.asarray(im.convert(mode))


def cmd_predict(args) -> int:
    params, cfg = _load_model(args.checkpoint, args.prompt)
    rgb = _read_raster(args.rgb, "RGB").transpose(2, 0, 1) / 255.0
    thr = _read_raster(args.thermal, "L")[None] / 255.0
    if rgb.shape[1:] != thr.shape[1:]:
        raise DataError(f"rgb {rgb.shape[1:]} and thermal {thr.shape[1:]} sizes differ")
    if rgb.shape[1:] != (cfg.encoder.height, cfg.encoder.width):
        raise DataError(f"input size {rgb.shape[1:]} does not match model {cfg.encoder.height}x{cfg.encoder.width}")
    pred = predict_sample(params, cfg.model, rgb, thr, cfg.text_ids())
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pred.astype(np.uint8), mode="L").save(out)
    counts = np.bincount(pred.ravel(), minlength=len(CLASS_NAMES))
    for name, n in zip(CLASS_NAMES, counts):
        print(f"{name}\t{int(n)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="master-seg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def shared(p, out_help):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--prompt")
        p.add_argument("--out", help=out_help)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")

    g = sub.add_parser("gen-data", help="write a synthetic RGB-T dataset")
    shared(g, "output dataset directory")
    g.add_argument("--count", type=int, default=10)
    g.add_argument("--ratio", type=float, default=0.8, help="fraction of scenes in train.txt")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train and write a checkpoint + loss CSV")
    shared(t, "checkpoint path")
    t.add_argument("--data")
    t.add_argument("--split", default="train")
    t.add_argument("--steps", type=int)
    t.add_argument("--log", help="loss CSV path (default: <out>.loss.csv)")
    t.add_argument("--log-every", type=int, default=100)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    shared(e, "directory for report.txt/.csv/.json")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data")
    e.add_argument("--split", default="val")
    e.add_argument("--zero-thermal", action="store_true")
    e.add_argument("--zero-rgb", action="store_true")
    e.add_argument("--miou-rule", choices=sorted(RULE_NAMES), default="all9")
    e.add_argument("--oracle-pred", action="store_true", help="debug: predictions equal labels")
    e.add_argument("--counts", action="store_true", help="include the confusion matrix in JSON")
    e.add_argument("--name", default="MASTER-toy", help="method name in the report")
    e.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict a label raster for one RGB/thermal pair")
    shared(p, "output label PNG")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--rgb", required=True)
    p.add_argument("--thermal", required=True)
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command in ("predict", "train", "gen-data") and not args.out:
        parser.exit(1, f"master-seg {args.command}: error: --out is required\n")
    try:
        return args.func(args)
    except (ConfigError, DataError, NumericError) as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except ShapeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
