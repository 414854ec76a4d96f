"""Command-line entry points: synth, train, render, eval, ablate, serve, convert-colmap."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .evalsuite import (evaluate_views, format_ablation_table, load_benchmark,
                        render_trajectory, run_ablation)
from .field import RadianceField
from .geometry import Intrinsics
from .pointcloud import convert_colmap_points
from .scene import load_bundle, load_depth_maps, save_bundle
from .synthscene import AnalyticScene, arc_trajectory, generate_dataset
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)


def _write_manifest(out_dir: Path, command: str, outputs: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(
        json.dumps({"command": command, "outputs": outputs}, indent=2))


def _load_train_config(args) -> TrainConfig:
    cfg = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    overrides = {}
    for name in ("iterations", "k_unobserved", "n_color", "n_depth_ob", "n_depth_nv",
                 "regen_interval", "lambda_d", "lambda_kl", "lambda_s", "sigma_kl",
                 "n_samples", "lr", "grad_clip", "seed", "checkpoint_every", "dtype"):
        value = getattr(args, name.replace("-", "_"), None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "bounds", None) is not None:
        overrides["bounds"] = tuple(args.bounds)
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _add_train_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file mirroring TrainConfig")
    p.add_argument("--iterations", type=int)
    p.add_argument("--k-unobserved", dest="k_unobserved", type=int)
    p.add_argument("--n-color", dest="n_color", type=int)
    p.add_argument("--n-depth-ob", dest="n_depth_ob", type=int)
    p.add_argument("--n-depth-nv", dest="n_depth_nv", type=int)
    p.add_argument("--regen-interval", dest="regen_interval", type=int)
    p.add_argument("--lambda-d", dest="lambda_d", type=float)
    p.add_argument("--lambda-kl", dest="lambda_kl", type=float)
    p.add_argument("--lambda-s", dest="lambda_s", type=float)
    p.add_argument("--sigma-kl", dest="sigma_kl", type=float)
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--grad-clip", dest="grad_clip", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--dtype", choices=("float32", "float64"))
    p.add_argument("--bounds", type=float, nargs=2, metavar=("NEAR", "FAR"))


def cmd_synth(args) -> int:
    scene = AnalyticScene(
        surface=args.surface, radius=args.radius, bend_radius=args.bend_radius,
        texture_frequency=args.texture_frequency, shell_thickness=args.shell_thickness,
        shell_sigma=args.shell_sigma)
    f = args.image_size / (2.0 * np.tan(np.radians(args.fov_deg) / 2.0))
    intr = Intrinsics(f, f, args.image_size / 2.0, args.image_size / 2.0,
                      args.image_size, args.image_size)
    trajectory = arc_trajectory(scene, args.views)
    bundle, depths = generate_dataset(scene, trajectory, intr, args.points,
                                      seed=args.seed, noise_std=args.noise)
    out = Path(args.out)
    save_bundle(bundle, out, depth_maps=depths)
    _write_manifest(out, "synth", {"views": bundle.n_views, "points": len(bundle.cloud)})
    print(f"wrote {bundle.n_views} views, {len(bundle.cloud)} points to {out}")
    return 0


def cmd_train(args) -> int:
    bundle = load_bundle(args.scene, max_points=args.max_points or 0)
    cfg = _load_train_config(args)
    out = Path(args.out)
    _, records, _ = train(bundle, cfg, run_dir=out)
    final = records[-1]["total"] if records else float("nan")
    _write_manifest(out, "train", {"checkpoint": "checkpoint_final.snrf",
                                   "log": "train_log.jsonl", "final_total_loss": final})
    print(f"trained {cfg.iterations} iterations; final total loss {final:.6g}")
    return 0


def cmd_render(args) -> int:
    intr = None
    if args.width:
        f = args.width / (2.0 * np.tan(np.radians(args.fov_deg) / 2.0))
        intr = Intrinsics(f, f, args.width / 2.0, args.width / 2.0, args.width, args.width)
    frames = render_trajectory(args.checkpoint, args.trajectory, args.out, intr=intr,
                               n_samples=args.samples)
    _write_manifest(Path(args.out), "render", {"frames": len(frames)})
    print(f"rendered {len(frames)} frames to {args.out}")
    return 0


def cmd_eval(args) -> int:
    bundle = load_bundle(args.scene)
    field_, extras = RadianceField.load(args.checkpoint)
    gt = None
    if (Path(args.scene) / "depth").exists():
        gt = load_depth_maps(args.scene, bundle.n_views)
    per_view, means = evaluate_views(field_, tuple(extras["bounds"]), bundle, gt,
                                     n_samples=args.samples)
    table = {"sequence": bundle.name, "per_view": per_view, "mean": means}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.json").write_text(json.dumps(table, indent=2))
    _write_manifest(out, "eval", {"table": "eval.json", **means})
    print(json.dumps(means, indent=2))
    return 0


def cmd_ablate(args) -> int:
    bench = load_benchmark(args.benchmark)
    out = Path(args.out)
    table = run_ablation(bench["train"], bench["test"], bench["gt_depths"],
                         bench["config"], seeds=bench["seeds"],
                         eval_samples=bench["eval_samples"], run_dir=out)
    _write_manifest(out, "ablate", {"table": "ablation.json"})
    print(format_ablation_table(table))
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    serve(args.checkpoint, host=args.host, port=args.port,
          max_concurrent=args.max_concurrent)
    return 0


def cmd_convert_colmap(args) -> int:
    n = convert_colmap_points(args.points3d, args.out, images_path=args.images)
    print(f"converted {n} points to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scopenerf",
                                 description="geometry-supervised radiance field toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic interior dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--surface", choices=("sphere-interior", "tube"), default="sphere-interior")
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--bend-radius", dest="bend_radius", type=float, default=1.0)
    p.add_argument("--views", type=int, default=30)
    p.add_argument("--image-size", dest="image_size", type=int, default=64)
    p.add_argument("--fov-deg", dest="fov_deg", type=float, default=70.0)
    p.add_argument("--points", type=int, default=5000)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--texture-frequency", dest="texture_frequency", type=float, default=6.0)
    p.add_argument("--shell-thickness", dest="shell_thickness", type=float, default=0.02)
    p.add_argument("--shell-sigma", dest="shell_sigma", type=float, default=2000.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a field on a scene directory")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-points", dest="max_points", type=int,
                   help="subsample the cloud for speed")
    _add_train_overrides(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render a trajectory from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--trajectory", required=True, help="JSON list of poses")
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--width", type=int)
    p.add_argument("--fov-deg", dest="fov_deg", type=float, default=70.0)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="score a checkpoint against a test scene")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=128)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the loss ablation on a benchmark spec")
    p.add_argument("--benchmark", required=True, help="benchmark JSON spec")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("serve", help="serve a checkpoint over HTTP")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--max-concurrent", dest="max_concurrent", type=int, default=2)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("convert-colmap", help="convert COLMAP points3D.txt")
    p.add_argument("--points3d", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--images", help="COLMAP images.txt for image-id mapping")
    p.set_defaults(func=cmd_convert_colmap)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
