"""Overfit 8 synthetic day scenes with the default config and report train mIoU and wall time.

    python scripts/learnability.py [--seed 0] [--steps 2000]
"""
import argparse
import logging

from master_seg.dataio import CLASS_NAMES
from master_seg.experiments import learnability

log = logging.getLogger("learnability")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--log-every", type=int, default=200)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    def progress(step, loss):
        if step % args.log_every == 0:
            log.info("step %5d  loss %.4f", step, loss)

    r = learnability(seed=args.seed, steps=args.steps, on_step=progress)
    for name, v in zip(CLASS_NAMES, r["per_class"]):
        print(f"{name:>10s}  {100 * v:5.1f}")
    print(f"train mIoU {100 * r['miou']:.2f} after {r['steps']} steps in {r['seconds']:.1f}s")


if __name__ == "__main__":
    main()
