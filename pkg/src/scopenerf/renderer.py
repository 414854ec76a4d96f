"""Volume rendering of color and depth along rays, with gradients through the weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rays import Ray

WEIGHT_EPS = 1e-9


@dataclass
class RaySamples:
    """Per-sample states for a batch of rays, all arrays (R, n) unless noted.

    weights[i] is the probability the ray terminates in bin i; trans[i] is the
    transmittance accumulated before sample i (trans[:, 0] == 1).
    """

    t: np.ndarray
    delta: np.ndarray
    sigma: np.ndarray
    color: np.ndarray | None  # (R, n, 3), None for depth-only renders
    alpha: np.ndarray
    trans: np.ndarray
    weights: np.ndarray
    t_far: np.ndarray  # (R,)


def stratified_sample(t_near: float, t_far: float, n: int, rng=None) -> np.ndarray:
    """Sample distances along one ray: one draw per uniform bin, or midpoints if rng is None."""
    return stratified_batch(np.array([t_near]), np.array([t_far]), n, rng)[0]


def stratified_batch(t_near: np.ndarray, t_far: np.ndarray, n: int, rng=None) -> np.ndarray:
    """Batched stratified distances, shape (R, n). rng=None gives deterministic bin midpoints."""
    if n < 2:
        raise ValueError("need at least two samples per ray")
    t_near = np.asarray(t_near, dtype=np.float64).reshape(-1)
    t_far = np.asarray(t_far, dtype=np.float64).reshape(-1)
    width = (t_far - t_near) / n
    edges = np.arange(n)[None, :] * width[:, None] + t_near[:, None]
    if rng is None:
        u = 0.5
    else:
        u = rng.random((t_near.shape[0], n))
    return edges + u * width[:, None]


def composite(sigma: np.ndarray, color: np.ndarray | None, t: np.ndarray, t_far: np.ndarray):
    """Alpha-composite per-sample fields into per-ray color and depth.

    Discretization: alpha_i = 1 - exp(-sigma_i * delta_i) with delta the
    inter-sample spacing and the final delta closing the interval to t_far.
    Depth is sum(w_i * t_i), deliberately not normalized by sum(w_i): rays
    that hit nothing report depth near zero.
    """
    t = np.asarray(t)
    t_far = np.asarray(t_far).reshape(-1)
    delta = np.concatenate([np.diff(t, axis=1), (t_far[:, None] - t[:, -1:])], axis=1)
    delta = delta.astype(sigma.dtype)
    tt = t.astype(sigma.dtype)

    alpha = -np.expm1(-sigma * delta)
    keep = 1.0 - alpha
    trans = np.cumprod(np.concatenate([np.ones_like(keep[:, :1]), keep[:, :-1]], axis=1), axis=1)
    weights = trans * alpha

    depth = np.sum(weights * tt, axis=1)
    out_color = None
    if color is not None:
        out_color = np.einsum("rn,rnc->rc", weights, color)
    samples = RaySamples(tt, delta, sigma, color, alpha, trans, weights, t_far.astype(sigma.dtype))
    return out_color, depth, samples


def render_rays(field, origins, dirs, t_near, t_far, n: int, rng=None,
                want_color: bool = True, chunk: int = 65536):
    """Forward render a batch of rays: returns (color (R,3) or None, depth (R,), RaySamples)."""
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    r = origins.shape[0]
    t = stratified_batch(np.broadcast_to(np.asarray(t_near, dtype=np.float64), (r,)),
                         np.broadcast_to(np.asarray(t_far, dtype=np.float64), (r,)), n, rng)
    sigma, color = eval_field_samples(field, origins, dirs, t, want_color, chunk)
    return composite(sigma, color, t, np.broadcast_to(np.asarray(t_far, dtype=np.float64), (r,)))


def eval_field_samples(field, origins, dirs, t, want_color: bool, chunk: int = 65536):
    """Evaluate the field at every (ray, sample) position, chunked over flattened samples."""
    r, n = t.shape
    pos = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    pos = pos.reshape(r * n, 3)
    dir_flat = np.repeat(dirs, n, axis=0) if want_color else None
    sigma = np.empty(r * n, dtype=field.dtype)
    color = np.empty((r * n, 3), dtype=field.dtype) if want_color else None
    for lo in range(0, r * n, chunk):
        hi = min(lo + chunk, r * n)
        s, c, _ = field.query(pos[lo:hi], dir_flat[lo:hi] if want_color else None,
                              want_color=want_color)
        sigma[lo:hi] = s
        if want_color:
            color[lo:hi] = c
    return sigma.reshape(r, n), color.reshape(r, n, 3) if want_color else None


def render_color(field, ray: Ray, n: int, rng=None):
    """Render one ray's color; returns (rgb (3,), RaySamples with R=1)."""
    color, _, samples = render_rays(field, ray.origin[None], ray.direction[None],
                                    ray.t_near, ray.t_far, n, rng)
    return color[0], samples


def render_depth(field, ray: Ray, n: int, rng=None):
    """Render one ray's depth; returns (depth scalar, RaySamples with R=1)."""
    _, depth, samples = render_rays(field, ray.origin[None], ray.direction[None],
                                    ray.t_near, ray.t_far, n, rng, want_color=False)
    return float(depth[0]), samples


def backward_weights(samples: RaySamples, d_weights: np.ndarray) -> np.ndarray:
    """Map dL/dw_i to dL/dsigma_i through the compositing recurrence.

    dw_i/dsigma_i = T_i (1-alpha_i) delta_i, and raising sigma_j steals mass
    from every later bin: dw_i/dsigma_j = -delta_j w_i for j < i.
    """
    uw = d_weights * samples.weights
    # suffix[:, j] = sum_{i > j} d_weights_i * w_i
    suffix = np.flip(np.cumsum(np.flip(uw, axis=1), axis=1), axis=1) - uw
    own = d_weights * samples.trans * (1.0 - samples.alpha)
    return samples.delta * (own - suffix)


def upstream_to_samples(samples: RaySamples, d_color=None, d_depth=None, d_weights=None):
    """Combine per-ray loss gradients into per-sample (d_sigma, d_rgb).

    d_color: (R,3) gradient wrt rendered color; d_depth: (R,) wrt rendered
    depth; d_weights: (R,n) direct gradient wrt the weights (distribution
    losses). Any of them may be None.
    """
    r, n = samples.weights.shape
    dw = np.zeros_like(samples.weights)
    d_rgb = None
    if d_color is not None:
        d_color = np.asarray(d_color, dtype=samples.weights.dtype).reshape(r, 3)
        dw += np.einsum("rnc,rc->rn", samples.color, d_color)
        d_rgb = samples.weights[..., None] * d_color[:, None, :]
    if d_depth is not None:
        dw += np.asarray(d_depth, dtype=samples.weights.dtype).reshape(r, 1) * samples.t
    if d_weights is not None:
        dw += d_weights
    return backward_weights(samples, dw), d_rgb


def render_view(field, pose, intr, bounds, n: int, rng=None, chunk_rays: int = 2048):
    """Render a full image and depth map from one pose; rays chunked to bound memory."""
    from .rays import pixel_grid_rays

    h, w = intr.height, intr.width
    t_near, t_far = bounds
    rgb = np.empty((h, w, 3), dtype=np.float64)
    depth = np.empty((h, w), dtype=np.float64)
    origins, dirs = pixel_grid_rays(pose, intr)
    total = h * w
    for lo in range(0, total, chunk_rays):
        hi = min(lo + chunk_rays, total)
        c, d, _ = render_rays(field, origins[lo:hi], dirs[lo:hi], t_near, t_far, n, rng)
        rgb.reshape(-1, 3)[lo:hi] = c
        depth.reshape(-1)[lo:hi] = d
    return np.clip(rgb, 0.0, 1.0), depth
