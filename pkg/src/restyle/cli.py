"""Command-line surface: every toy-scale experiment is one subcommand.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, data, denoiser, diffusion, stylize, verify
from .attention import RegionControl
from .numerics import SeededRng
from .tensorio import load_tensor, save_tensor


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get("ZSTR_OUT", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_window(text):
    try:
        a, b = text.split(":")
        return int(a), int(b)
    except Exception:
        raise ValidationError(f"bad window {text!r}, expected start:end")


def _parse_region(text):
    h = w = 32
    mask = np.zeros((h, w), dtype=bool)
    if text == "right-half":
        mask[:, w // 2:] = True
        return RegionControl(mode="hard", mask=mask)
    if text == "left-half":
        mask[:, : w // 2] = True
        return RegionControl(mode="hard", mask=mask)
    if text == "gradient-x":
        return RegionControl(mode="linear_gradient", axis="x", span=(0.0, 1.0))
    if text == "gradient-y":
        return RegionControl(mode="linear_gradient", axis="y", span=(0.0, 1.0))
    raise ValidationError(f"unknown region {text!r}")


def build_parser():
    p = _Parser(prog="restyle", description="toy dual-path diffusion style transfer")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate the synthetic content/style corpus")
    g.add_argument("--out", default=None)
    g.add_argument("--count", type=int, default=8000, help="images per family")
    g.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="train the toy denoiser")
    t.add_argument("--data", required=True)
    t.add_argument("--out", default=None)
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--batch-size", type=int, default=64)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--max-steps", type=int, default=None)

    i = sub.add_parser("invert", help="DDIM-invert an image to its noise latent")
    i.add_argument("--image", required=True)
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--steps", type=int, default=30)
    i.add_argument("--out", default=None)
    i.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("sample", help="denoise a latent (or fresh noise) to an image")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--steps", type=int, default=30)
    s.add_argument("--latent", default=None, help="ZSTR latent; random if absent")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=None)

    tr = sub.add_parser("transfer", help="dual-path style transfer")
    tr.add_argument("--content", required=True)
    tr.add_argument("--style", action="append", required=True)
    tr.add_argument("--checkpoint", required=True)
    tr.add_argument("--mode", default="rearranged", choices=stylize.MODES)
    tr.add_argument("--lambda", dest="lambda_style", type=float, default=1.2)
    tr.add_argument("--lambda-mix", type=float, default=0.5)
    tr.add_argument("--steps", type=int, default=30)
    tr.add_argument("--window", default="5:30", help="half-open denoising-step window a:b")
    tr.add_argument("--layers", default="4,5")
    tr.add_argument("--content-source", default="running", choices=["running", "trajectory"])
    tr.add_argument("--region", default=None,
                    help="right-half | left-half | gradient-x | gradient-y")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--out", default=None)

    ab = sub.add_parser("ablate", help="sweep injection configs and write a CSV")
    ab.add_argument("--content", required=True)
    ab.add_argument("--style", required=True)
    ab.add_argument("--checkpoint", required=True)
    ab.add_argument("--steps", type=int, default=30)
    ab.add_argument("--grid", action="append", required=True,
                    help="e.g. lambda_style=0,0.6,1.0,1.2 or start=0,5,10 or mode=rearranged,naive_cross")
    ab.add_argument("--seed", type=int, default=0)
    ab.add_argument("--out", default=None)

    v = sub.add_parser("verify", help="run the algebraic invariant suite")
    v.add_argument("--out", default=None)
    v.add_argument("--seed", type=int, default=0)

    an = sub.add_parser("analyze", help="score a stylized output")
    an.add_argument("--output", required=True)
    an.add_argument("--content", required=True)
    an.add_argument("--style", required=True)
    an.add_argument("--checkpoint", required=True)
    an.add_argument("--seed", type=int, default=0)
    an.add_argument("--out", default=None)

    return p


def _load_config_json(argv):
    # --config FILE expands to flags from a JSON document (key: value pairs)
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    path = argv[idx + 1]
    cfg = json.loads(Path(path).read_text())
    extra = []
    for key, val in cfg.items():
        flag = "--" + key.replace("_", "-")
        if isinstance(val, list):
            for item in val:
                extra += [flag, str(item)]
        elif isinstance(val, bool):
            if val:
                extra.append(flag)
        else:
            extra += [flag, str(val)]
    return argv[:idx] + extra + argv[idx + 2:]


def _cmd_gen_data(args):
    out = _out_dir(args)
    spec = data.DatasetSpec(count=args.count, seed=args.seed)
    manifest = data.generate(spec, out)
    print(f"wrote {2 * spec.count} images to {out}")
    return 0


def _cmd_train(args):
    out = _out_dir(args)
    dataset = data.load_dataset(args.data)
    model = denoiser.build_toy_unet(args.seed)
    cfg = denoiser.TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                               lr=args.lr, seed=args.seed, max_steps=args.max_steps)
    model, losses = denoiser.train(model, cfg, dataset)
    denoiser.save_checkpoint(model, out / "checkpoint")
    (out / "loss_curve.json").write_text(json.dumps(losses))
    print(f"trained {len(losses)} steps, final loss {losses[-1]:.4f}; checkpoint at {out/'checkpoint'}")
    return 0


def _cmd_invert(args):
    out = _out_dir(args)
    model = denoiser.load_checkpoint(args.checkpoint)
    schedule = diffusion.make_linear_schedule(args.steps)
    x0 = data.load_image(args.image)
    traj = diffusion.ddim_invert(x0, schedule, model.as_denoiser())
    save_tensor(out / "latent.zstr", traj.latents[-1])
    (out / "latent_manifest.json").write_text(json.dumps(
        {"T": args.steps, "provenance": traj.provenance, "source": str(args.image)}))
    print(f"wrote {out/'latent.zstr'}")
    return 0


def _cmd_sample(args):
    out = _out_dir(args)
    model = denoiser.load_checkpoint(args.checkpoint)
    schedule = diffusion.make_linear_schedule(args.steps)
    if args.latent:
        x_T = load_tensor(args.latent)
    else:
        x_T = SeededRng(args.seed).normal((3, 32, 32))
    img = diffusion.ddim_sample(x_T, schedule, model.as_denoiser())
    data.save_image(out / "sample.png", np.clip(img, -1, 1))
    print(f"wrote {out/'sample.png'}")
    return 0


def _cmd_transfer(args):
    out = _out_dir(args)
    model = denoiser.load_checkpoint(args.checkpoint)
    schedule = diffusion.make_linear_schedule(args.steps)
    content = data.load_image(args.content)
    styles = [data.load_image(s) for s in args.style]
    cfg = stylize.InjectionConfig(
        mode=args.mode,
        lambda_style=args.lambda_style,
        lambda_mix=args.lambda_mix,
        layers=tuple(int(x) for x in args.layers.split(",")),
        window=_parse_window(args.window),
        steps=args.steps,
        control=_parse_region(args.region) if args.region else None,
        content_source=args.content_source,
    )
    result = stylize.dual_path_transfer(content, styles, model, schedule, cfg)
    data.save_image(out / "stylized.png", np.clip(result.image, -1, 1))
    diag = {
        f"{step}:{layer}": {"mean_style_mass": float(np.mean(rec["style_mass"]))}
        for (step, layer), rec in result.diagnostics.items()
    }
    report = analysis.metric_report(result.image, content, styles[0], model, result.diagnostics)
    (out / "diagnostics.json").write_text(json.dumps(
        {"config": {"mode": cfg.mode, "lambda_style": cfg.lambda_style,
                    "window": list(cfg.window), "layers": list(cfg.layers),
                    "steps": cfg.steps, "content_source": cfg.content_source},
         "metrics": report.as_dict(), "per_step_layer": diag,
         "seconds": result.seconds}, indent=2))
    print(f"wrote {out/'stylized.png'} and diagnostics.json")
    return 0


def _parse_grid(items):
    grid = {}
    for item in items:
        if "=" not in item:
            raise ValidationError(f"bad grid entry {item!r}")
        key, vals = item.split("=", 1)
        key = {"lambda": "lambda_style"}.get(key, key)
        parsed = []
        for v in vals.split(","):
            if key in ("start", "end"):
                parsed.append(int(v))
            elif key in ("lambda_style", "lambda_mix"):
                parsed.append(float(v))
            elif key == "layers":
                parsed.append(tuple(int(x) for x in v.split("+")))
            else:
                parsed.append(v)
        grid[key] = parsed
    return grid


def _cmd_ablate(args):
    out = _out_dir(args)
    model = denoiser.load_checkpoint(args.checkpoint)
    schedule = diffusion.make_linear_schedule(args.steps)
    content = data.load_image(args.content)
    style = data.load_image(args.style)
    grid = _parse_grid(args.grid)

    def score(result):
        return {
            "content_preservation": analysis.content_preservation_score(result.image, content),
            "style_affinity": analysis.style_affinity_score(result.image, style, model),
        }

    rows = stylize.ablation_sweep(content, style, model, schedule, grid, score)
    csv_path = out / "ablation.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=sorted({k for r in rows for k in r}))
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {csv_path} ({len(rows)} cells)")
    return 0


def _cmd_verify(args):
    results = verify.run_all(verbose=True)
    failed = [name for name, ok, _ in results if not ok]
    if args.out:
        out = _out_dir(args)
        (out / "verify.json").write_text(json.dumps(
            [{"check": n, "pass": bool(ok), "detail": d} for n, ok, d in results], indent=2))
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return 2
    print(f"all {len(results)} checks passed")
    return 0


def _cmd_analyze(args):
    out = _out_dir(args)
    model = denoiser.load_checkpoint(args.checkpoint)
    report = analysis.metric_report(
        data.load_image(args.output), data.load_image(args.content),
        data.load_image(args.style), model)
    (out / "metrics.json").write_text(json.dumps(report.as_dict(), indent=2))
    print(json.dumps(report.as_dict(), indent=2))
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "invert": _cmd_invert,
    "sample": _cmd_sample,
    "transfer": _cmd_transfer,
    "ablate": _cmd_ablate,
    "verify": _cmd_verify,
    "analyze": _cmd_analyze,
}


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _load_config_json(argv)
        args = build_parser().parse_args(argv)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (ValidationError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
