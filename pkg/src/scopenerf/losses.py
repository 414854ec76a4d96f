"""Training loss terms over the three ray sets, with gradients wrt rendered quantities."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rays import PatchSet
from .renderer import RaySamples

KL_EPS = 1e-9


@dataclass
class LossWeights:
    """Scale factors for the geometry terms and the width of the KL target Gaussian."""

    lambda_d: float = 10.0
    lambda_kl: float = 0.1
    lambda_s: float = 10.0
    sigma_kl: float = 0.05

    def __post_init__(self):
        if min(self.lambda_d, self.lambda_kl, self.lambda_s) < 0 or self.sigma_kl < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossReport:
    """Per-iteration loss values; total is exactly the sum of the three components."""

    color_ob: float = 0.0
    depth_ob: float = 0.0
    depth_nv: float = 0.0
    total: float = 0.0
    breakdown: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {"color_ob": self.color_ob, "depth_ob": self.depth_ob,
             "depth_nv": self.depth_nv, "total": self.total}
        d.update(self.breakdown)
        return d


def color_loss(rendered: np.ndarray, reference: np.ndarray):
    """Summed squared color error over a batch; returns (value, dL/drendered)."""
    rendered = np.asarray(rendered).reshape(-1, 3)
    reference = np.asarray(reference, dtype=rendered.dtype).reshape(-1, 3)
    if rendered.shape != reference.shape:
        raise ValueError("rendered and reference batches must have equal length")
    diff = rendered - reference
    return float(np.sum(diff * diff)), 2.0 * diff


def depth_l2(rendered_depth, ref_depth):
    """Squared depth error, elementwise; returns (value, dL/drendered_depth)."""
    d = np.asarray(rendered_depth, dtype=np.float64)
    r = np.asarray(ref_depth, dtype=np.float64)
    diff = d - r
    loss = diff * diff
    grad = 2.0 * diff
    if loss.ndim == 0:
        return float(loss), float(grad)
    return loss, grad


def smoothness_loss(depths):
    """Absolute forward differences of depth over a patch.

    `depths` is (center, right, down), scalars or aligned arrays; returns
    (value, (d_center, d_right, d_down)) with zero subgradient at ties.
    """
    dc, dr, dd = (np.asarray(v, dtype=np.float64) for v in depths)
    du = dr - dc
    dv = dd - dc
    loss = np.abs(du) + np.abs(dv)
    su, sv = np.sign(du), np.sign(dv)
    grads = (-su - sv, su, sv)
    if loss.ndim == 0:
        return float(loss), tuple(float(g) for g in grads)
    return loss, grads


def _kl_target(t: np.ndarray, delta: np.ndarray, ref_depth: np.ndarray,
               sigma_kl: float) -> np.ndarray:
    """Normalized Gaussian mass around the reference depth: sum(g * delta) == 1."""
    a = -((t - ref_depth[:, None]) ** 2) / (2.0 * sigma_kl * sigma_kl)
    e = np.exp(a - a.max(axis=1, keepdims=True))  # shift-invariant, avoids underflow to 0/0
    z = np.sum(e * delta, axis=1, keepdims=True)
    return e / z


def kl_unimodal_loss(samples: RaySamples, ref_depth, sigma_kl: float):
    """Push each ray's termination mass toward its reference depth.

    Gaussian-reweighted negative log of the termination weights:
    sum_i g_i * (-log(w_i + eps)) * delta_i, with g normalized so that
    sum_i g_i * delta_i = 1. Returns (per-ray loss (R,), dL/dw (R, n)).
    """
    if sigma_kl <= 0:
        raise ValueError("sigma_kl must be positive")
    r, _ = samples.weights.shape
    ref = np.asarray(ref_depth, dtype=np.float64).reshape(r)
    t64 = samples.t.astype(np.float64)
    delta64 = samples.delta.astype(np.float64)
    g = _kl_target(t64, delta64, ref, sigma_kl)
    w = samples.weights.astype(np.float64)
    loss = np.sum(g * (-np.log(w + KL_EPS)) * delta64, axis=1)
    d_w = (-(g * delta64) / (w + KL_EPS)).astype(samples.weights.dtype)
    return loss, d_w


@dataclass
class SetRender:
    """Rendered results for one PatchSet: centers always, neighbors when smoothing."""

    pset: PatchSet
    center: RaySamples
    center_depth: np.ndarray  # (P,)
    center_color: np.ndarray | None = None  # (P, 3), color set only
    neighbor_depth: np.ndarray | None = None  # (2, P)


@dataclass
class SetUpstream:
    """Gradients of the total loss wrt one set's rendered quantities."""

    d_center_color: np.ndarray | None
    d_center_depth: np.ndarray
    d_center_weights: np.ndarray | None
    d_neighbor_depth: np.ndarray | None


def _smoothness_terms(render: SetRender, scale: float):
    if scale == 0.0 or render.neighbor_depth is None or len(render.pset) == 0:
        return 0.0, None, None
    dc = render.center_depth
    dr, dd = render.neighbor_depth[0], render.neighbor_depth[1]
    ls, (gc, gr, gd) = smoothness_loss((dc, dr, dd))
    return float(np.sum(ls)), scale * gc, scale * np.stack([gr, gd])


def _depth_set_terms(render: SetRender, weights: LossWeights):
    """l_d + l_KL on centers plus l_s over the set's patches."""
    p = len(render.pset)
    if p == 0:
        return 0.0, {"ld": 0.0, "lkl": 0.0, "ls": 0.0}, None
    ref = render.pset.ref_depth
    ld, d_ld = depth_l2(render.center_depth.astype(np.float64), ref)
    lkl, d_w = kl_unimodal_loss(render.center, ref, weights.sigma_kl)
    ls_sum, d_dc_s, d_dn = _smoothness_terms(render, weights.lambda_s)

    ld_sum = float(np.sum(ld))
    lkl_sum = float(np.sum(lkl))
    value = weights.lambda_d * ld_sum + weights.lambda_kl * lkl_sum + weights.lambda_s * ls_sum

    d_center_depth = weights.lambda_d * d_ld
    if d_dc_s is not None:
        d_center_depth = d_center_depth + d_dc_s
    up = SetUpstream(
        d_center_color=None,
        d_center_depth=d_center_depth,
        d_center_weights=weights.lambda_kl * d_w if weights.lambda_kl != 0.0 else None,
        d_neighbor_depth=d_dn,
    )
    return value, {"ld": ld_sum, "lkl": lkl_sum, "ls": ls_sum}, up


def total_loss(color_render: SetRender | None, ob_render: SetRender | None,
               nv_render: SetRender | None, weights: LossWeights):
    """Assemble the full training loss and every upstream gradient.

    Components: summed color error over observed color rays; depth + KL over
    observed depth rays plus smoothness over color and observed-depth patches;
    and the same depth/KL/smoothness group over unobserved-view depth rays.
    Returns (LossReport, {"color"|"ob"|"nv": SetUpstream}).
    """
    ups: dict[str, SetUpstream] = {}
    color_val = 0.0
    ls_color = 0.0

    if color_render is not None and len(color_render.pset) > 0:
        ref = color_render.pset.ref_color[0]  # member 0 = centers
        color_val, d_c = color_loss(color_render.center_color, ref)
        ls_c_sum, d_dc_s, d_dn = _smoothness_terms(color_render, weights.lambda_s)
        ls_color = ls_c_sum
        ups["color"] = SetUpstream(
            d_center_color=d_c,
            d_center_depth=d_dc_s if d_dc_s is not None
            else np.zeros_like(color_render.center_depth),
            d_center_weights=None,
            d_neighbor_depth=d_dn,
        )

    ob_val, ob_terms, ob_up = _depth_set_terms(ob_render, weights) if ob_render is not None \
        else (0.0, {"ld": 0.0, "lkl": 0.0, "ls": 0.0}, None)
    nv_val, nv_terms, nv_up = _depth_set_terms(nv_render, weights) if nv_render is not None \
        else (0.0, {"ld": 0.0, "lkl": 0.0, "ls": 0.0}, None)
    if ob_up is not None:
        ups["ob"] = ob_up
    if nv_up is not None:
        ups["nv"] = nv_up

    depth_ob = ob_val + weights.lambda_s * ls_color  # smoothness over color rays counts here
    report = LossReport(
        color_ob=color_val,
        depth_ob=depth_ob,
        depth_nv=nv_val,
        total=color_val + depth_ob + nv_val,
        breakdown={
            "ld_ob": ob_terms["ld"], "lkl_ob": ob_terms["lkl"],
            "ls_ob": ob_terms["ls"] + ls_color,
            "ld_nv": nv_terms["ld"], "lkl_nv": nv_terms["lkl"], "ls_nv": nv_terms["ls"],
        },
    )
    return report, ups
