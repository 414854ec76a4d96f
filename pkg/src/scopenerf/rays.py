"""Ray construction and per-iteration sampling of color and depth ray batches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraPose, Intrinsics

ROLE_COLOR_OB = "color-observed"
ROLE_DEPTH_OB = "depth-observed"
ROLE_DEPTH_NV = "depth-unobserved"

DIR_TOL = 1e-9


@dataclass
class Ray:
    """One camera ray with its supervision reference, if any."""

    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float
    role: str
    pixel: np.ndarray
    view_tag: tuple[str, int]
    ref_color: np.ndarray | None = None
    ref_depth: float | None = None

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.direction = np.asarray(self.direction, dtype=np.float64).reshape(3)
        self.pixel = np.asarray(self.pixel, dtype=np.float64).reshape(2)
        if abs(float(np.linalg.norm(self.direction)) - 1.0) > DIR_TOL:
            raise ValueError("ray direction must be unit length")
        if not 0.0 < self.t_near < self.t_far:
            raise ValueError("need 0 < t_near < t_far")
        if self.ref_color is not None:
            self.ref_color = np.asarray(self.ref_color, dtype=np.float64).reshape(3)


@dataclass
class RayPatch:
    """A supervised center ray plus its +1-pixel neighbors for depth derivatives."""

    center: Ray
    right_neighbor: Ray
    down_neighbor: Ray


def validate_ray(ray: Ray, strict_refs: bool = True) -> None:
    """Check the full ray contract; neighbors may skip the role/ref coupling."""
    if ray.role not in (ROLE_COLOR_OB, ROLE_DEPTH_OB, ROLE_DEPTH_NV):
        raise ValueError(f"unknown ray role {ray.role!r}")
    if not strict_refs:
        return
    if ray.role == ROLE_COLOR_OB:
        if ray.ref_color is None:
            raise ValueError("color rays need a reference color")
    else:
        if ray.ref_depth is None:
            raise ValueError("depth rays need a reference depth")
        if not ray.t_near < ray.ref_depth < ray.t_far:
            raise ValueError("reference depth must lie inside the ray bounds")


def _pixel_dirs_world(pose: CameraPose, intr: Intrinsics, pixels: np.ndarray) -> np.ndarray:
    """World-frame unit directions through continuous pixel coords (N,2)."""
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    d_cam = np.stack(
        [
            (px[:, 0] + 0.5 - intr.cx) / intr.fx,
            (px[:, 1] + 0.5 - intr.cy) / intr.fy,
            np.ones(px.shape[0]),
        ],
        axis=1,
    )
    d_world = d_cam @ pose.rotation().T
    return d_world / np.linalg.norm(d_world, axis=1, keepdims=True)


def pixel_to_ray(pose: CameraPose, intr: Intrinsics, pixel, bounds,
                 role: str = ROLE_COLOR_OB, ref_color=None, ref_depth=None,
                 view_tag: tuple[str, int] = ("ob", 0)) -> Ray:
    """Cast the ray through a pixel center (continuous coords, +0.5 convention).

    `ref_color` defaults to black for bare geometric color rays so the returned
    ray always satisfies its contract.
    """
    pixel = np.asarray(pixel, dtype=np.float64).reshape(2)
    if not (0 <= pixel[0] < intr.width and 0 <= pixel[1] < intr.height):
        raise ValueError(f"pixel {pixel} outside [0,{intr.width})x[0,{intr.height})")
    direction = _pixel_dirs_world(pose, intr, pixel[None])[0]
    if role == ROLE_COLOR_OB and ref_color is None:
        ref_color = np.zeros(3)
    return Ray(pose.position.copy(), direction, float(bounds[0]), float(bounds[1]),
               role, pixel, view_tag, ref_color, ref_depth)


def pixel_grid_rays(pose: CameraPose, intr: Intrinsics):
    """Origins and directions for every pixel center, row-major (H*W, 3)."""
    u, v = np.meshgrid(np.arange(intr.width), np.arange(intr.height))
    pixels = np.stack([u.ravel(), v.ravel()], axis=1).astype(np.float64)
    dirs = _pixel_dirs_world(pose, intr, pixels)
    origins = np.broadcast_to(pose.position, dirs.shape).copy()
    return origins, dirs


def scene_bounds(cloud_positions: np.ndarray, camera_positions: np.ndarray,
                 override=None) -> tuple[float, float]:
    """Global ray bounds: (0.5x min, 2x max) camera-to-point distance.

    Without a cloud, falls back to the camera spread; `override` wins outright.
    """
    if override is not None:
        near, far = float(override[0]), float(override[1])
        if not 0 < near < far:
            raise ValueError("bounds override must satisfy 0 < near < far")
        return near, far
    cams = np.asarray(camera_positions, dtype=np.float64).reshape(-1, 3)
    pts = np.asarray(cloud_positions, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        spread = 0.0
        if cams.shape[0] > 1:
            spread = max(np.linalg.norm(cams[i] - cams[j])
                         for i in range(len(cams)) for j in range(i + 1, len(cams)))
        spread = max(spread, 1.0)
        return 0.05 * spread, 4.0 * spread
    d = np.linalg.norm(cams[:, None, :] - pts[None, :, :], axis=2)
    return 0.5 * float(d.min()), 2.0 * float(d.max())


def _fold_neighbors(px: np.ndarray, axis: int, limit: float) -> np.ndarray:
    """+1-pixel neighbor along one axis, folded to -1 at the image edge."""
    out = px.copy()
    step = np.where(px[:, axis] + 1.0 <= limit - 1.0, 1.0, -1.0)
    out[:, axis] = px[:, axis] + step
    return out


class PatchSet:
    """A batch of ray patches stored as arrays, member-major (center, right, down)."""

    def __init__(self, role: str, kind: str, origins, dirs, pixels, view_index,
                 bounds, ref_color=None, ref_depth=None):
        self.role = role
        self.kind = kind
        self.origins = origins  # (3, P, 3)
        self.dirs = dirs  # (3, P, 3)
        self.pixels = pixels  # (3, P, 2)
        self.view_index = view_index  # (P,)
        self.t_near, self.t_far = float(bounds[0]), float(bounds[1])
        self.ref_color = ref_color  # (3, P, 3) or None
        self.ref_depth = ref_depth  # (P,) or None

    def __len__(self) -> int:
        return self.view_index.shape[0]

    @property
    def n_rays(self) -> int:
        return 3 * len(self)

    def flat_origins(self) -> np.ndarray:
        return self.origins.reshape(-1, 3)

    def flat_dirs(self) -> np.ndarray:
        return self.dirs.reshape(-1, 3)

    def _ray(self, member: int, i: int) -> Ray:
        ref_c = self.ref_color[member, i] if self.ref_color is not None else None
        ref_d = float(self.ref_depth[i]) if (self.ref_depth is not None and member == 0) else None
        return Ray(self.origins[member, i], self.dirs[member, i], self.t_near, self.t_far,
                   self.role, self.pixels[member, i], (self.kind, int(self.view_index[i])),
                   ref_c, ref_d)

    def patch(self, i: int) -> RayPatch:
        return RayPatch(self._ray(0, i), self._ray(1, i), self._ray(2, i))

    def __iter__(self):
        return (self.patch(i) for i in range(len(self)))

    @classmethod
    def empty(cls, role: str, kind: str, bounds) -> "PatchSet":
        z = np.zeros
        return cls(role, kind, z((3, 0, 3)), z((3, 0, 3)), z((3, 0, 2)),
                   z(0, dtype=np.int64), bounds)


def _build_patchset(role, kind, poses, intr, center_px, view_idx, bounds,
                    images=None, ref_depth=None) -> PatchSet:
    """Assemble a PatchSet from center pixels; neighbors fold at the far edges."""
    p = center_px.shape[0]
    members = np.stack([
        center_px,
        _fold_neighbors(center_px, 0, intr.width),
        _fold_neighbors(center_px, 1, intr.height),
    ])  # (3, P, 2)

    origins = np.zeros((3, p, 3))
    dirs = np.zeros((3, p, 3))
    for vi in np.unique(view_idx):
        mask = view_idx == vi
        pose = poses[vi]
        origins[:, mask, :] = pose.position
        for m in range(3):
            dirs[m, mask, :] = _pixel_dirs_world(pose, intr, members[m, mask])

    ref_color = None
    if images is not None:
        ui = members[..., 0].astype(np.int64)
        vi_ = members[..., 1].astype(np.int64)
        ref_color = images[view_idx[None, :], vi_, ui]  # (3, P, 3)

    return PatchSet(role, kind, origins, dirs, members, view_idx.astype(np.int64),
                    bounds, ref_color, ref_depth)


def build_unobserved_pool(unobserved):
    """Flatten regenerated unobserved views' depth samples into pool arrays."""
    px, depth, view = [], [], []
    for uvi, (_, samples) in enumerate(unobserved):
        for s in samples:
            px.append(s.pixel)
            depth.append(s.depth)
            view.append(uvi)
    if not px:
        return np.zeros((0, 2)), np.zeros(0), np.zeros(0, dtype=np.int64)
    return np.asarray(px), np.asarray(depth), np.asarray(view, dtype=np.int64)


def sample_ray_batch(scene, unobserved, sizes, rng, bounds=None, images_array=None,
                     depth_pool_ob=None, depth_pool_nv=None):
    """Draw the three per-iteration ray sets as (color, depth-observed, depth-unobserved).

    `unobserved` is a list of (CameraPose, depth sample list) pairs, regenerated
    on the caller's schedule. `depth_pool_ob`/`depth_pool_nv` may carry
    precomputed depth-sample pools (pixels, depths, view indices) so the hot
    loop never reprojects. Depth sets sample with replacement only when a pool
    is smaller than requested. Deterministic given the seed or generator state.
    """
    n_color, n_depth_ob, n_depth_nv = sizes
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    intr = scene.intrinsics
    if bounds is None:
        pts = np.stack([p.position for p in scene.cloud]) if scene.cloud else np.zeros((0, 3))
        bounds = scene_bounds(pts, np.stack([p.position for p in scene.poses]))
    if images_array is None:
        images_array = np.stack(scene.images)

    # color rays: uniform over (view, integer pixel)
    if n_color > 0:
        view_idx = rng.integers(0, scene.n_views, size=n_color)
        px = np.stack([
            rng.integers(0, intr.width, size=n_color),
            rng.integers(0, intr.height, size=n_color),
        ], axis=1).astype(np.float64)
        color_set = _build_patchset(ROLE_COLOR_OB, "ob", scene.poses, intr, px, view_idx,
                                    bounds, images=images_array)
    else:
        color_set = PatchSet.empty(ROLE_COLOR_OB, "ob", bounds)

    # observed depth rays: uniform over the precomputed reference-depth pool
    if depth_pool_ob is None:
        depth_pool_ob = build_depth_pool(scene, bounds)
    pool_px, pool_depth, pool_view = depth_pool_ob
    if n_depth_ob > 0 and pool_px.shape[0] > 0:
        idx = rng.choice(pool_px.shape[0], size=n_depth_ob,
                         replace=pool_px.shape[0] < n_depth_ob)
        ob_set = _build_patchset(ROLE_DEPTH_OB, "ob", scene.poses, intr, pool_px[idx],
                                 pool_view[idx], bounds, ref_depth=pool_depth[idx])
    else:
        ob_set = PatchSet.empty(ROLE_DEPTH_OB, "ob", bounds)

    # unobserved depth rays: same, over the regenerated views' samples
    nv_poses = [p for p, _ in unobserved]
    if depth_pool_nv is None:
        depth_pool_nv = build_unobserved_pool(unobserved)
    nv_px, nv_depth, nv_view = depth_pool_nv
    if n_depth_nv > 0 and nv_px.shape[0] > 0:
        idx = rng.choice(nv_px.shape[0], size=n_depth_nv, replace=nv_px.shape[0] < n_depth_nv)
        nv_set = _build_patchset(ROLE_DEPTH_NV, "nv", nv_poses, intr, nv_px[idx],
                                 nv_view[idx], bounds, ref_depth=nv_depth[idx])
    else:
        nv_set = PatchSet.empty(ROLE_DEPTH_NV, "nv", bounds)

    return color_set, ob_set, nv_set


def build_depth_pool(scene, bounds):
    """Project every cloud point into every view it is visible in, once."""
    from .pointcloud import sparse_depth_for_view

    px, depth, view = [], [], []
    for vi in range(scene.n_views):
        for s in sparse_depth_for_view(scene.cloud, vi, scene.poses[vi], scene.intrinsics,
                                       bounds=bounds):
            px.append(s.pixel)
            depth.append(s.depth)
            view.append(vi)
    if not px:
        return np.zeros((0, 2)), np.zeros(0), np.zeros(0, dtype=np.int64)
    return np.asarray(px), np.asarray(depth), np.asarray(view, dtype=np.int64)
