"""The optimization loop: batching, rendering, backprop, and view regeneration."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field as dc_field, asdict
from pathlib import Path

import numpy as np

from .field import FieldConfig, RadianceField, GradientTape
from .geometry import generate_unobserved_poses
from .losses import LossWeights, SetRender, total_loss
from .pointcloud import sparse_depth_for_view
from .rays import (PatchSet, build_depth_pool, build_unobserved_pool, sample_ray_batch,
                   scene_bounds)
from .renderer import composite, eval_field_samples, stratified_batch, upstream_to_samples
from .scene import SceneBundle

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Raised when a loss turns non-finite; carries the offending iteration details."""

    def __init__(self, message: str, detail: dict):
        super().__init__(message)
        self.detail = detail


@dataclass
class TrainConfig:
    """Everything the training loop needs; JSON-serializable, CLI-overridable."""

    iterations: int = 25000
    k_unobserved: int = 2
    n_color: int = 8192
    n_depth_ob: int = 4096
    n_depth_nv: int = 4096
    regen_interval: int = 2000
    lambda_d: float = 10.0
    lambda_kl: float = 0.1
    lambda_s: float = 10.0
    sigma_kl: float = 0.0  # 0 -> 3x the average sample spacing
    n_samples: int = 128
    lr: float = 5e-4
    lr_final: float = 5e-6
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 10.0
    seed: int = 0
    checkpoint_every: int = 5000
    dtype: str = "float64"
    chunk: int = 16384
    bounds: tuple[float, float] | None = None
    field: FieldConfig = dc_field(default_factory=FieldConfig)

    def __post_init__(self):
        if isinstance(self.field, dict):
            self.field = FieldConfig(**self.field)
        if self.bounds is not None:
            self.bounds = (float(self.bounds[0]), float(self.bounds[1]))
        for name in ("iterations", "k_unobserved", "n_color", "n_depth_ob", "n_depth_nv"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.regen_interval < 1:
            raise ValueError("regen_interval must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def loss_weights(self, bounds) -> LossWeights:
        sigma = self.sigma_kl
        if sigma <= 0:
            sigma = 3.0 * (bounds[1] - bounds[0]) / self.n_samples
        return LossWeights(self.lambda_d, self.lambda_kl, self.lambda_s, sigma)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        return cls(**json.loads(Path(path).read_text()))


class Adam:
    """Adaptive-moment optimizer over one flat parameter array."""

    def __init__(self, n: int, dtype, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(n, dtype=dtype)
        self.v = np.zeros(n, dtype=dtype)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0

    def step(self, theta: np.ndarray, grad: np.ndarray, lr: float) -> None:
        self.step_count += 1
        self.m += (1.0 - self.beta1) * (grad - self.m)
        self.v += (1.0 - self.beta2) * (grad * grad - self.v)
        m_hat = self.m / (1.0 - self.beta1 ** self.step_count)
        v_hat = self.v / (1.0 - self.beta2 ** self.step_count)
        theta -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def cosine_lr(i: int, cfg: TrainConfig) -> float:
    if cfg.iterations <= 1:
        return cfg.lr
    progress = i / (cfg.iterations - 1)
    return cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1.0 + np.cos(np.pi * progress))


def regenerate_unobserved(scene: SceneBundle, k: int, rng, bounds=None):
    """Fresh interpolated views between consecutive observed pairs, with depth samples.

    The previous set is discarded wholesale by the caller; each view's samples
    come from the union of its two parents' visible points.
    """
    pairs = scene.consecutive_pairs()
    if not pairs:
        raise ValueError("need at least two observed views")
    poses = generate_unobserved_poses(pairs, k, rng) if k > 0 else []
    out = []
    for idx, pose in enumerate(poses):
        b = idx // k
        samples = sparse_depth_for_view(scene.cloud, (b, b + 1), pose, scene.intrinsics,
                                        bounds=bounds)
        out.append((pose, samples))
    return out


@dataclass
class _RayBlock:
    """One rectangular block of rays plus what backprop needs to revisit it.

    `cache` is kept when the whole block fit in a single forward chunk;
    otherwise backprop recomputes the forward pass chunk by chunk.
    """

    origins: np.ndarray
    dirs: np.ndarray
    t: np.ndarray
    want_color: bool
    cache: dict | None = None


@dataclass
class _SetAux:
    center: _RayBlock | None = None
    neighbors_samples: object = None  # RaySamples for the 2P neighbor rays
    neighbors: _RayBlock | None = None


def _eval_block(field_, origins, dirs, t, want_color: bool, chunk: int) -> tuple:
    r, n = t.shape
    pos = (origins[:, None, :] + t[..., None] * dirs[:, None, :]).reshape(r * n, 3)
    dir_flat = np.repeat(dirs, n, axis=0) if want_color else None
    block = _RayBlock(origins, dirs, t, want_color)
    if r * n <= chunk:
        sigma, color, cache = field_.query(pos, dir_flat, want_color=want_color,
                                           want_cache=True)
        block.cache = cache
        return sigma.reshape(r, n), color.reshape(r, n, 3) if want_color else None, block
    sigma, color = eval_field_samples(field_, origins, dirs, t, want_color, chunk)
    return sigma, color, block


def _render_set(field_, pset: PatchSet, n_samples: int, rng, want_color: bool,
                want_neighbors: bool, chunk: int):
    if len(pset) == 0:
        return None, _SetAux()
    p = len(pset)
    far = np.full(p, pset.t_far)
    t_c = stratified_batch(np.full(p, pset.t_near), far, n_samples, rng)
    sigma, color, block_c = _eval_block(field_, pset.origins[0], pset.dirs[0], t_c,
                                        want_color, chunk)
    c, d, samp_c = composite(sigma, color, t_c, far)

    aux = _SetAux(center=block_c)
    neighbor_depth = None
    if want_neighbors:
        o_n = pset.origins[1:].reshape(-1, 3)
        d_n = pset.dirs[1:].reshape(-1, 3)
        far2 = np.full(2 * p, pset.t_far)
        t_n = stratified_batch(np.full(2 * p, pset.t_near), far2, n_samples, rng)
        sig_n, _, block_n = _eval_block(field_, o_n, d_n, t_n, False, chunk)
        _, dn, samp_n = composite(sig_n, None, t_n, far2)
        neighbor_depth = dn.reshape(2, p)
        aux.neighbors_samples = samp_n
        aux.neighbors = block_n

    render = SetRender(pset, samp_c, d, center_color=c, neighbor_depth=neighbor_depth)
    return render, aux


def _accumulate_grads(field_, block: _RayBlock, d_sigma, d_rgb, tape: GradientTape,
                      chunk: int) -> None:
    """Push upstream sample gradients to the tape, reusing the forward cache if kept."""
    r, n = block.t.shape
    ds_flat = d_sigma.reshape(r * n)
    dc_flat = d_rgb.reshape(r * n, 3) if d_rgb is not None else None
    if block.cache is not None:
        field_.backward(block.cache, ds_flat, dc_flat, tape)
        return
    pos = (block.origins[:, None, :] + block.t[..., None]
           * block.dirs[:, None, :]).reshape(r * n, 3)
    dir_flat = np.repeat(block.dirs, n, axis=0) if dc_flat is not None else None
    for lo in range(0, r * n, chunk):
        hi = min(lo + chunk, r * n)
        _, _, cache = field_.query(pos[lo:hi],
                                   dir_flat[lo:hi] if dir_flat is not None else None,
                                   want_color=dc_flat is not None, want_cache=True)
        field_.backward(cache, ds_flat[lo:hi],
                        dc_flat[lo:hi] if dc_flat is not None else None, tape)


def _backprop_set(field_, pset: PatchSet, render, aux: _SetAux, up, tape, chunk: int):
    if render is None or up is None:
        return
    d_sigma, d_rgb = upstream_to_samples(render.center, up.d_center_color,
                                         up.d_center_depth, up.d_center_weights)
    _accumulate_grads(field_, aux.center, d_sigma, d_rgb, tape, chunk)
    if up.d_neighbor_depth is not None and aux.neighbors is not None:
        d_sigma_n, _ = upstream_to_samples(aux.neighbors_samples,
                                           d_depth=up.d_neighbor_depth.reshape(-1))
        _accumulate_grads(field_, aux.neighbors, d_sigma_n, None, tape, chunk)


def train(scene: SceneBundle, config: TrainConfig, run_dir=None):
    """Run the optimization; returns (field, log records, checkpoint extras).

    Every `regen_interval` iterations the unobserved views are regenerated and
    replace the previous set. A non-finite loss aborts with a diagnostic dump.
    """
    if scene.n_views < 2:
        raise ValueError("training needs at least two observed views")
    if not scene.cloud:
        log.warning("scene has no point cloud: depth supervision disabled, color-only training")

    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.json").write_text(config.to_json())

    dtype = np.dtype(config.dtype)
    ss = np.random.SeedSequence(config.seed)
    seeds = ss.spawn(4)
    rng_batch = np.random.default_rng(seeds[0])
    rng_jitter = np.random.default_rng(seeds[1])
    rng_alpha = np.random.default_rng(seeds[2])
    init_seed = int(seeds[3].generate_state(1)[0])

    field_ = RadianceField(config.field, seed=init_seed, dtype=dtype)
    tape = field_.new_tape()
    opt = Adam(field_.n_params, dtype, config.beta1, config.beta2, config.adam_eps)

    cloud_pts = np.stack([p.position for p in scene.cloud]) if scene.cloud else np.zeros((0, 3))
    cam_pts = np.stack([p.position for p in scene.poses])
    bounds = scene_bounds(cloud_pts, cam_pts, override=config.bounds)
    weights = config.loss_weights(bounds)
    images_array = np.stack(scene.images)
    depth_pool_ob = build_depth_pool(scene, bounds)

    extras = {
        "bounds": list(bounds),
        "intrinsics": scene.intrinsics.to_dict(),
        "observed_trajectory": [p.to_dict() for p in scene.poses],
        "scene_name": scene.name,
        "sigma_kl": weights.sigma_kl,
        "iteration": 0,
    }

    use_depth = bool(scene.cloud) and (config.lambda_d > 0 or config.lambda_kl > 0
                                       or config.lambda_s > 0)
    want_smooth = config.lambda_s > 0
    unobserved = []
    nv_pool = None
    records = []
    log_file = open(run_dir / "train_log.jsonl", "w") if run_dir is not None else None

    try:
        for i in range(config.iterations):
            if config.k_unobserved > 0 and i % config.regen_interval == 0:
                unobserved = regenerate_unobserved(scene, config.k_unobserved, rng_alpha,
                                                   bounds=bounds)
                nv_pool = build_unobserved_pool(unobserved)

            sizes = (config.n_color,
                     config.n_depth_ob if use_depth else 0,
                     config.n_depth_nv if use_depth else 0)
            color_set, ob_set, nv_set = sample_ray_batch(
                scene, unobserved, sizes, rng_batch, bounds=bounds,
                images_array=images_array, depth_pool_ob=depth_pool_ob,
                depth_pool_nv=nv_pool)

            color_r, color_aux = _render_set(field_, color_set, config.n_samples, rng_jitter,
                                             True, want_smooth, config.chunk)
            ob_r, ob_aux = _render_set(field_, ob_set, config.n_samples, rng_jitter,
                                       False, want_smooth, config.chunk)
            nv_r, nv_aux = _render_set(field_, nv_set, config.n_samples, rng_jitter,
                                       False, want_smooth, config.chunk)

            report, ups = total_loss(color_r, ob_r, nv_r, weights)
            if not np.isfinite(report.total):
                detail = {"iteration": i, "report": report.to_dict(),
                          "sizes": {"color": len(color_set), "depth_ob": len(ob_set),
                                    "depth_nv": len(nv_set)}}
                detail["term"] = next((k for k, v in report.to_dict().items()
                                       if not np.isfinite(v)), "total")
                if run_dir is not None:
                    (run_dir / "divergence.json").write_text(json.dumps(detail, indent=2))
                raise TrainingDiverged(f"non-finite loss at iteration {i}", detail)

            tape.zero()
            _backprop_set(field_, color_set, color_r, color_aux, ups.get("color"), tape,
                          config.chunk)
            _backprop_set(field_, ob_set, ob_r, ob_aux, ups.get("ob"), tape, config.chunk)
            _backprop_set(field_, nv_set, nv_r, nv_aux, ups.get("nv"), tape, config.chunk)

            if config.grad_clip > 0:
                gn = float(np.linalg.norm(tape.flat))
                if gn > config.grad_clip:
                    tape.flat *= config.grad_clip / gn

            lr = float(cosine_lr(i, config))
            opt.step(field_.theta, tape.flat, lr)

            rec = {"iter": i, **report.to_dict(), "lr": lr, "n_unobserved": len(unobserved)}
            records.append(rec)
            if log_file is not None:
                log_file.write(json.dumps(rec) + "\n")

            if run_dir is not None and config.checkpoint_every > 0 \
                    and (i + 1) % config.checkpoint_every == 0 \
                    and (i + 1) != config.iterations:
                extras["iteration"] = i + 1
                field_.save(run_dir / f"checkpoint_{i + 1:06d}.snrf", extras)
    finally:
        if log_file is not None:
            log_file.close()

    extras["iteration"] = config.iterations
    if run_dir is not None:
        field_.save(run_dir / "checkpoint_final.snrf", extras)
    return field_, records, extras
