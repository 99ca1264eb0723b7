"""Command-line surface: train, render, superres, eval, synth.

Every subcommand is deterministic given identical arguments and seeds.
Datasets come either from a manifest directory/file (``--scene``) or
from the built-in analytic scene (``--synthetic``, with ``--resolution``
``--views`` and ``--seed`` knobs).

Configuration files are JSON with up to four sections:

```
{
  "train":     { TrainConfig fields, e.g. "n_ll": 16, "levels": 3, ... },
  "superres":  { SrConfig fields, e.g. "lr_steps": 6000, ... },
  "synthetic": { make_synthetic fields, e.g. "resolution": 64, ... },
  "scene":     "path/to/manifest",
  "out_dir":   "runs/example"
}
```

``train`` section values override the chosen ``--preset``; command-line
flags override both. ``eval`` prints a per-view PSNR/SSIM table as CSV,
computed on 8-bit-style sRGB values by default (``--linear`` switches to
the linear domain).
"""
import argparse
import json
import sys
from pathlib import Path

import numpy as np


def _load_config(path):
    try:
        with open(path) as f:
            cfg = json.load(f)
    except (OSError, ValueError) as e:
        raise SystemExit(f"cannot read config {path}: {e}")
    if not isinstance(cfg, dict):
        raise SystemExit(f"config {path} must hold a JSON object")
    known = {"train", "superres", "synthetic", "scene", "out_dir"}
    unknown = set(cfg) - known
    if unknown:
        raise SystemExit(f"config {path} has unknown sections "
                         f"{sorted(unknown)}; expected {sorted(known)}")
    return cfg


def _make_dataset(args, cfg, need_scene=False):
    """Dataset plus (for synthetic sources) the analytic scene object."""
    from .datasets import load_scene, make_synthetic

    scene_path = getattr(args, "scene", None) or cfg.get("scene")
    if scene_path and not getattr(args, "synthetic", False):
        if need_scene:
            raise SystemExit("this command needs the analytic scene; use "
                             "--synthetic instead of --scene")
        return load_scene(scene_path), None
    kw = dict(cfg.get("synthetic", {}))
    if getattr(args, "resolution", None):
        kw["resolution"] = args.resolution
    if getattr(args, "views", None):
        kw["n_train"] = args.views
    if getattr(args, "seed", None) is not None:
        kw["seed"] = args.seed
    scene = make_synthetic(**kw)
    return scene.dataset(), scene


def _train_config(args, cfg):
    from ..trainer import TrainConfig, config_from_preset

    section = dict(cfg.get("train", {}))
    if "c2f_schedule" in section and section["c2f_schedule"] is not None:
        section["c2f_schedule"] = tuple(
            (int(s), int(d)) for s, d in section["c2f_schedule"])
    if getattr(args, "seed", None) is not None:
        section["seed"] = args.seed
    if getattr(args, "steps", None):
        section["total_steps"] = args.steps
    if args.preset:
        return config_from_preset(args.preset, **section)
    if not section:
        raise SystemExit("need --preset or a 'train' config section")
    return TrainConfig(**section)


def _split_views(dataset, split):
    try:
        return dataset.views(split)
    except ValueError as e:
        raise SystemExit(f"{e}; no views to process")


def _out_dir(args, cfg, default):
    out = getattr(args, "out", None) or cfg.get("out_dir") or default
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _cmd_train(args):
    from ..trainer import train

    cfg = _load_config(args.config) if args.config else {}
    tc = _train_config(args, cfg)
    dataset, _ = _make_dataset(args, cfg)
    out = _out_dir(args, cfg, "runs/train")
    result = train(tc, dataset, out_dir=out, log=print)
    print(f"final checkpoint: {out / 'final.ckpt'}")
    print(f"best validation psnr: {result.best_val_psnr:.2f} dB at step "
          f"{result.best_val_step}")
    return 0


def _cmd_render(args):
    from .checkpoint import load_checkpoint
    from .images import save_png
    from ..renderer import RenderOpts, render_image

    cfg = _load_config(args.config) if args.config else {}
    model, _ = load_checkpoint(args.checkpoint)
    dataset, _ = _make_dataset(args, cfg)
    views = _split_views(dataset, args.split)
    out = _out_dir(args, cfg, "runs/render")
    opts = RenderOpts(samples_per_ray=args.samples, depth=args.depth)
    for i, (_, cam) in enumerate(views):
        img = render_image(model, cam, opts)
        save_png(out / f"r_{i}.png", img)
    print(f"wrote {len(views)} images to {out}")
    return 0


def _metric_domain(img, linear):
    from .images import linear_to_srgb

    img = np.clip(np.asarray(img, np.float64), 0.0, 1.0)
    return img if linear else linear_to_srgb(img)


def _cmd_eval(args):
    from .checkpoint import load_checkpoint
    from .metrics import ssim
    from ..renderer import RenderOpts, render_image
    from ..trainer import psnr

    cfg = _load_config(args.config) if args.config else {}
    model, _ = load_checkpoint(args.checkpoint)
    dataset, _ = _make_dataset(args, cfg)
    views = _split_views(dataset, args.split)
    opts = RenderOpts(samples_per_ray=args.samples, depth=args.depth)
    print("view,psnr,ssim")
    psnrs, ssims = [], []
    for i, (gt, cam) in enumerate(views):
        pred = _metric_domain(render_image(model, cam, opts), args.linear)
        ref = _metric_domain(gt, args.linear)
        p = psnr(pred, ref)
        s = ssim(pred, ref)
        psnrs.append(p)
        ssims.append(s)
        print(f"{i},{p:.4f},{s:.6f}")
    print(f"mean,{np.mean(psnrs):.4f},{np.mean(ssims):.6f}")
    return 0


def _make_refiner(spec, scene, sr):
    from ..superres import DiffusionRefiner, IdentityRefiner, OracleRefiner

    if spec == "identity":
        return IdentityRefiner()
    if spec == "oracle":
        if scene is None:
            raise SystemExit("the oracle refiner needs the analytic "
                             "scene; use a synthetic source")
        n = len(scene.poses["train"])
        return OracleRefiner({i: scene.image("train", i, sr.hr_size)
                              for i in range(n)})
    if spec.startswith("external:"):
        return DiffusionRefiner(spec[len("external:"):])
    raise SystemExit(f"unknown refiner {spec!r}; expected oracle, "
                     "identity, or external:<endpoint>")


def _cmd_superres(args):
    from ..superres import SrConfig, sr_train

    cfg = _load_config(args.config)
    sr = SrConfig(**cfg.get("superres", {}))
    tc = _train_config(args, cfg)
    dataset, scene = _make_dataset(args, cfg, need_scene=False)
    out = _out_dir(args, cfg, "runs/superres")
    refiner = _make_refiner(args.refiner, scene, sr)
    try:
        sr_train(sr, tc, dataset, refiner, out_dir=out, log=print)
    finally:
        refiner.close()
    print(f"final checkpoint: {out / 'final.ckpt'}")
    return 0


def _cmd_synth(args):
    from .datasets import make_synthetic, save_scene

    scene = make_synthetic(resolution=args.resolution,
                           n_train=args.views, n_val=args.val_views,
                           n_test=args.test_views, seed=args.seed)
    out = _out_dir(args, {}, "runs/synth")
    save_scene(scene.dataset(), out, fmt=args.format)
    print(f"wrote {args.views}/{args.val_views}/{args.test_views} "
          f"train/val/test views to {out}")
    return 0


def _add_dataset_flags(p):
    p.add_argument("--scene", help="manifest file or directory")
    p.add_argument("--synthetic", action="store_true",
                   help="use the built-in analytic scene")
    p.add_argument("--resolution", type=int,
                   help="synthetic image side")
    p.add_argument("--views", type=int, help="synthetic training views")
    p.add_argument("--seed", type=int, help="override the seed")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="waveplane",
        description="Wavelet-triplane radiance fields: train, render, "
                    "super-resolve, evaluate, and generate scenes.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="optimize a model on a scene")
    p.add_argument("--preset",
                   choices=["small", "base-light", "base", "large",
                            "micro"],
                   help="named configuration")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--steps", type=int, help="override total steps")
    p.add_argument("--out", help="output directory")
    _add_dataset_flags(p)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("render", help="render dataset views from a "
                                      "checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--split", default="test")
    p.add_argument("--samples", type=int, default=64,
                   help="samples per ray")
    p.add_argument("--depth", type=int, help="pyramid depth to render at")
    p.add_argument("--out", help="output directory")
    _add_dataset_flags(p)
    p.set_defaults(fn=_cmd_render)

    p = sub.add_parser("superres", help="train with refined HR targets")
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--refiner", required=True,
                   help="oracle, identity, or external:<endpoint>")
    p.add_argument("--preset",
                   choices=["small", "base-light", "base", "large",
                            "micro"])
    p.add_argument("--out", help="output directory")
    _add_dataset_flags(p)
    p.set_defaults(fn=_cmd_superres)

    p = sub.add_parser("eval", help="PSNR/SSIM table for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--split", default="test")
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--depth", type=int)
    p.add_argument("--linear", action="store_true",
                   help="compute metrics on linear instead of sRGB "
                        "values")
    _add_dataset_flags(p)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("synth", help="write a synthetic scene to disk")
    p.add_argument("--out", help="output directory")
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--views", type=int, default=20)
    p.add_argument("--val-views", type=int, default=3)
    p.add_argument("--test-views", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=["png", "raw"], default="png")
    p.set_defaults(fn=_cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
