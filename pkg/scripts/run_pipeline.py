"""End-to-end demo: generate data, train the toy denoiser, run one transfer.

Everything lands under --out (default ./runs/pipeline). Expect roughly half an
hour on a laptop CPU for the default training budget; pass --max-steps 200 for
a quick smoke run with a weak model.
"""

import argparse
import sys
from pathlib import Path

from restyle.cli import run


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="runs/pipeline")
    p.add_argument("--count", type=int, default=1000, help="images per family")
    p.add_argument("--max-steps", type=int, default=3000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    out = Path(args.out)

    steps = [
        ["gen-data", "--out", str(out / "data"), "--count", str(args.count),
         "--seed", str(args.seed)],
        ["train", "--data", str(out / "data"), "--out", str(out / "model"),
         "--epochs", "200", "--batch-size", "32", "--lr", "2e-4",
         "--max-steps", str(args.max_steps), "--seed", str(args.seed)],
        ["transfer",
         "--content", str(out / "data" / "content_00000.png"),
         "--style", str(out / "data" / "style_00000.png"),
         "--checkpoint", str(out / "model" / "checkpoint"),
         "--out", str(out / "transfer")],
        ["analyze",
         "--output", str(out / "transfer" / "stylized.png"),
         "--content", str(out / "data" / "content_00000.png"),
         "--style", str(out / "data" / "style_00000.png"),
         "--checkpoint", str(out / "model" / "checkpoint"),
         "--out", str(out / "transfer")],
    ]
    for argv in steps:
        print("== restyle", " ".join(argv))
        rc = run(argv)
        if rc != 0:
            sys.exit(rc)


if __name__ == "__main__":
    main()
