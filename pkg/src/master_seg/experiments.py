"""Desk-scale experiments shared by ``scripts/`` and the acceptance tests."""
from __future__ import annotations

import json
import time
from pathlib import Path

from .cli import main as cli_main
from .config import RunConfig
from .dataio import SceneSpec, generate_scene
from .evaluation import iou, miou
from .training import TrainConfig, evaluate, fit

LEARN_IMAGES = 8
COMPLEMENT_SEEDS = (0, 1, 2)


def learnability(seed: int = 0, steps: int = 2000, n_images: int = LEARN_IMAGES, on_step=None) -> dict:
    """Overfit ``n_images`` day scenes with the default config and score the train split."""
    cfg = RunConfig()
    data = [generate_scene(SceneSpec(seed=seed + i), f"s{i}") for i in range(n_images)]
    ids = cfg.text_ids()
    t0 = time.perf_counter()
    state, history = fit(cfg.model, TrainConfig(steps=steps, seed=seed), data, ids, on_step=on_step)
    seconds = time.perf_counter() - t0
    cm = evaluate(state.params, cfg.model, data, ids)
    return {"miou": miou(cm), "per_class": [float(x) for x in iou(cm)], "seconds": seconds,
            "steps": steps, "final_loss": history[-1][1] if history else None,
            "state": state, "data": data, "config": cfg}


def _eval_miou(args: list[str], out: Path) -> float | None:
    code = cli_main(args + ["--out", str(out)])
    if code != 0:
        raise RuntimeError(f"eval exited with {code}")
    return json.loads((out / "report.json").read_text())[0]["miou"]


def complementarity(seed: int, workdir: str | Path, steps: int = 400, count: int = 12,
                    ratio: float = 2 / 3) -> dict:
    """Night-mode run through the CLI: val mIoU unablated, without thermal, without RGB."""
    work = Path(workdir) / f"seed{seed}"
    data, ckpt = work / "data", work / "model.ckpt"
    night = ["--set", "scene.illumination=night"]
    steps_arg = ["--steps", str(steps)]
    if cli_main(["gen-data", "--seed", str(seed), "--count", str(count), "--ratio", str(ratio),
                 "--out", str(data), *night]) != 0:
        raise RuntimeError("gen-data failed")
    if cli_main(["train", "--seed", str(seed), "--data", str(data), "--out", str(ckpt), *night, *steps_arg]) != 0:
        raise RuntimeError("train failed")
    base = ["eval", "--checkpoint", str(ckpt), "--data", str(data), "--split", "val"]
    return {
        "seed": seed,
        "unablated": _eval_miou(base, work / "eval_full"),
        "zero_thermal": _eval_miou(base + ["--zero-thermal"], work / "eval_zero_thermal"),
        "zero_rgb": _eval_miou(base + ["--zero-rgb"], work / "eval_zero_rgb"),
    }


def ordered(result: dict) -> bool:
    """Thermal ablation must hurt more than both the full model and the RGB ablation."""
    z = result["zero_thermal"]
    return z is not None and z < result["unablated"] and z < result["zero_rgb"]
