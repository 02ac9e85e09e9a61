"""Night-mode modality ablation through the CLI: full model vs zeroed thermal vs zeroed RGB.

    python scripts/complementarity.py [--seeds 0 1 2] [--steps 400] [--work runs/night]
"""
import argparse
import contextlib
import io

from master_seg.experiments import COMPLEMENT_SEEDS, complementarity, ordered


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=list(COMPLEMENT_SEEDS))
    ap.add_argument("--steps", type=int, default=400)
    ap.add_argument("--count", type=int, default=12)
    ap.add_argument("--work", default="runs/night")
    args = ap.parse_args()
    print(f"{'seed':>4}  {'full':>6}  {'-thermal':>8}  {'-rgb':>6}  ordered")
    for seed in args.seeds:
        with contextlib.redirect_stdout(io.StringIO()):
            r = complementarity(seed, args.work, steps=args.steps, count=args.count)
        cells = [r[k] for k in ("unablated", "zero_thermal", "zero_rgb")]
        shown = ["  -   " if c is None else f"{100 * c:6.1f}" for c in cells]
        print(f"{seed:>4}  {shown[0]}  {shown[1]:>8}  {shown[2]}  {ordered(r)}")


if __name__ == "__main__":
    main()
