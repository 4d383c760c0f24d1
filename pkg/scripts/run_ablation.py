"""Sweep the injection hyperparameters on one content/style pair.

Needs a trained checkpoint (see run_pipeline.py). Writes one CSV per sweep:
the style scaling factor lambda, the injection window start, and the fusion
mode, each scored with content preservation and style affinity.
"""

import argparse
import sys

from restyle.cli import run


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--content", required=True)
    p.add_argument("--style", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default="runs/ablation")
    args = p.parse_args()

    base = ["ablate", "--content", args.content, "--style", args.style,
            "--checkpoint", args.checkpoint]
    sweeps = {
        "lambda": ["--grid", "lambda=0,0.6,1.0,1.2"],
        "window": ["--grid", "start=0,5,10"],
        "mode": ["--grid", "mode=none,naive_cross,simple_addition,rearranged"],
    }
    for name, grid in sweeps.items():
        argv = base + grid + ["--out", f"{args.out}/{name}"]
        print("== restyle", " ".join(argv))
        rc = run(argv)
        if rc != 0:
            sys.exit(rc)


if __name__ == "__main__":
    main()
