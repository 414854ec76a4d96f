"""Scripted experiments: held-out view evaluation, loss ablation, trajectory rendering."""

from __future__ import annotations

import dataclasses
import json
import logging
from pathlib import Path

import numpy as np

from .field import RadianceField
from .geometry import CameraPose, Intrinsics
from .metrics import psnr_capped, ssim
from .renderer import render_view
from .scene import SceneBundle, save_image, save_pfm
from .synthscene import AnalyticScene, arc_trajectory, bundle_subset, generate_dataset
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)


def depth_rmse(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Root-mean-square depth error over pixels with ground truth (all, for closed scenes)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if mask is None:
        mask = np.isfinite(gt)
    diff = (pred - gt)[mask]
    return float(np.sqrt(np.mean(diff * diff)))


def evaluate_views(field: RadianceField, bounds, test_bundle: SceneBundle,
                   gt_depths=None, n_samples: int = 128):
    """Render every held-out view deterministically and score it.

    Returns (per-view list, means dict) with capped PSNR, SSIM, and depth RMSE
    when ground-truth depth maps are supplied.
    """
    per_view = []
    for vi in range(test_bundle.n_views):
        rgb, depth = render_view(field, test_bundle.poses[vi], test_bundle.intrinsics,
                                 bounds, n_samples)
        row = {
            "view": vi,
            "psnr": psnr_capped(rgb, test_bundle.images[vi]),
            "ssim": ssim(rgb, test_bundle.images[vi]),
        }
        if gt_depths is not None:
            row["depth_rmse"] = depth_rmse(depth, gt_depths[vi])
        per_view.append(row)
    keys = [k for k in ("psnr", "ssim", "depth_rmse") if per_view and k in per_view[0]]
    means = {k: float(np.mean([r[k] for r in per_view])) for k in keys}
    return per_view, means


ABLATION_ROWS = ("color-only", "obs-depth", "full")


def _row_config(base: TrainConfig, row: str, seed: int) -> TrainConfig:
    cfg = dataclasses.replace(base, seed=seed)
    if row == "color-only":
        cfg = dataclasses.replace(cfg, lambda_d=0.0, lambda_kl=0.0, lambda_s=0.0,
                                  k_unobserved=0)
    elif row == "obs-depth":
        cfg = dataclasses.replace(cfg, k_unobserved=0)
    elif row != "full":
        raise ValueError(f"unknown ablation row {row!r}")
    return cfg


def run_ablation(train_bundle: SceneBundle, test_bundle: SceneBundle, gt_depths,
                 base_config: TrainConfig, seeds=(0,), eval_samples: int = 128,
                 run_dir=None):
    """Train the three loss configurations and score each on the held-out views.

    Rows: color loss only; plus observed-view geometry; plus unobserved-view
    geometry. A failing row records its error and the remaining rows still run.
    Returns {"rows": [...], "seeds": [...]} with per-seed and mean metrics.
    """
    run_dir = Path(run_dir) if run_dir is not None else None
    rows = []
    for row_name in ABLATION_ROWS:
        row = {"row": row_name, "per_seed": [], "error": None}
        for seed in seeds:
            cfg = _row_config(base_config, row_name, seed)
            sub_dir = run_dir / f"{row_name}-seed{seed}" if run_dir is not None else None
            try:
                field_, _, extras = train(train_bundle, cfg, run_dir=sub_dir)
                bounds = tuple(extras["bounds"])
                _, means = evaluate_views(field_.astype(np.float64), bounds, test_bundle,
                                          gt_depths, n_samples=eval_samples)
                row["per_seed"].append({"seed": seed, **means})
                log.info("ablation %s seed %d: %s", row_name, seed, means)
            except Exception as exc:  # keep remaining rows alive
                log.exception("ablation row %s seed %d failed", row_name, seed)
                row["error"] = f"{type(exc).__name__}: {exc}"
                break
        if row["per_seed"]:
            keys = [k for k in row["per_seed"][0] if k != "seed"]
            row["mean"] = {k: float(np.mean([s[k] for s in row["per_seed"]])) for k in keys}
        rows.append(row)
    table = {"rows": rows, "seeds": list(seeds)}
    if run_dir is not None:
        (run_dir / "ablation.json").write_text(json.dumps(table, indent=2))
        (run_dir / "ablation.txt").write_text(format_ablation_table(table))
    return table


def format_ablation_table(table: dict) -> str:
    lines = [f"{'configuration':<14} {'PSNR':>8} {'SSIM':>8} {'depth RMSE':>12}"]
    for row in table["rows"]:
        if row.get("error"):
            lines.append(f"{row['row']:<14} failed: {row['error']}")
            continue
        m = row["mean"]
        rmse = f"{m.get('depth_rmse', float('nan')):>12.4f}"
        lines.append(f"{row['row']:<14} {m['psnr']:>8.2f} {m['ssim']:>8.4f} {rmse}")
    return "\n".join(lines) + "\n"


def load_trajectory(path) -> list[CameraPose]:
    """Read a trajectory file: JSON list of {position, orientation} records."""
    data = json.loads(Path(path).read_text())
    return [CameraPose.from_dict(d) for d in data]


def colorize_depth(depth: np.ndarray, bounds=None) -> np.ndarray:
    """Map a depth map to RGB for previews: near = warm, far = dark blue."""
    d = np.asarray(depth, dtype=np.float64)
    lo, hi = (float(np.min(d)), float(np.max(d))) if bounds is None else bounds
    span = max(hi - lo, 1e-12)
    x = np.clip((d - lo) / span, 0.0, 1.0)
    return np.stack([1.0 - 0.9 * x, 0.7 * (1.0 - x) + 0.1, 0.25 + 0.7 * x], axis=-1)


def render_trajectory(checkpoint_path, trajectory, out_dir, intr: Intrinsics | None = None,
                      n_samples: int = 256) -> list[dict]:
    """Render RGB + depth for each pose of a trajectory into an output directory.

    `trajectory` is a pose list or a JSON trajectory file. Depth goes out as
    PFM plus a colorized PNG preview. Returns the written file manifest.
    """
    field_, extras = RadianceField.load(checkpoint_path)
    bounds = tuple(extras["bounds"])
    if intr is None:
        intr = Intrinsics.from_dict(extras["intrinsics"])
    if not isinstance(trajectory, (list, tuple)):
        trajectory = load_trajectory(trajectory)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for i, pose in enumerate(trajectory):
        rgb, depth = render_view(field_, pose, intr, bounds, n_samples)
        save_image(rgb, out_dir / f"rgb_{i:04d}.png")
        save_pfm(depth, out_dir / f"depth_{i:04d}.pfm")
        save_image(colorize_depth(depth, bounds), out_dir / f"depth_{i:04d}.png")
        written.append({"pose": pose.to_dict(),
                        "rgb": f"rgb_{i:04d}.png", "depth": f"depth_{i:04d}.pfm"})
    (out_dir / "frames.json").write_text(json.dumps(written, indent=2))
    return written


def build_benchmark(spec: dict):
    """Materialize a benchmark: analytic scene, train/test bundles, test depth maps.

    The spec dict mirrors benchmarks/*.json: scene parameters, an interleaved
    train/test trajectory (every (ratio+1)-th view held out), intrinsics, and
    the point budget.
    """
    scene = AnalyticScene(**spec.get("scene", {}))
    intr = Intrinsics.from_dict(spec["intrinsics"])
    n_train = int(spec.get("n_train", 20))
    n_test = int(spec.get("n_test", 10))
    total = n_train + n_test
    stride = max(2, round(total / max(1, n_test)))
    trajectory = arc_trajectory(scene, total, **spec.get("trajectory", {}))
    bundle, depths = generate_dataset(scene, trajectory, intr,
                                      point_budget=int(spec.get("point_budget", 5000)),
                                      seed=int(spec.get("seed", 0)),
                                      noise_std=float(spec.get("noise_std", 0.0)))
    test_idx = list(range(stride - 1, total, stride))[:n_test]
    train_idx = [i for i in range(total) if i not in set(test_idx)][:n_train]
    train_bundle = bundle_subset(bundle, train_idx, "train")
    test_bundle = bundle_subset(bundle, test_idx, "test")
    gt_depths = [depths[i] for i in test_idx]
    return scene, train_bundle, test_bundle, gt_depths


def load_benchmark(path):
    spec = json.loads(Path(path).read_text())
    base_config = TrainConfig(**spec.get("train", {}))
    seeds = spec.get("seeds", [0])
    scene, train_b, test_b, gt = build_benchmark(spec)
    return {"spec": spec, "scene": scene, "train": train_b, "test": test_b,
            "gt_depths": gt, "config": base_config, "seeds": seeds,
            "eval_samples": int(spec.get("eval_samples", 128))}
