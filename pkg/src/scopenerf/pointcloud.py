"""Sparse SfM point cloud: ingestion, projection, and reference depths for depth rays."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import CameraPose, Intrinsics

BEHIND_EPS = 1e-6


@dataclass
class SparsePoint:
    """One reconstructed 3D point with the observed views it was seen from."""

    position: np.ndarray
    visible_in: list[int]
    color: np.ndarray | None = None

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        if not self.visible_in:
            raise ValueError("a sparse point must be visible in at least one view")
        if self.color is not None:
            self.color = np.asarray(self.color, dtype=np.float64).reshape(3)


@dataclass
class SparseDepthSample:
    """Reference depth for one depth ray: view, continuous pixel, travel distance."""

    view_index: int
    pixel: np.ndarray
    depth: float
    point_index: int = -1

    def __post_init__(self):
        self.pixel = np.asarray(self.pixel, dtype=np.float64).reshape(2)
        if self.depth <= 0:
            raise ValueError("depth must be positive")


def project_point(point, pose: CameraPose, intr: Intrinsics):
    """Project a world point to (pixel, depth), or None when at/behind the camera.

    `pixel` follows the pixel-center convention used by ray casting: integer
    coordinates address pixel centers, so the round trip through a cast ray
    marched by `depth` recovers the point. `depth` is the Euclidean distance
    from the camera origin (the ray parameter t, not camera-frame z).
    """
    p_cam = pose.world_to_camera(np.asarray(point, dtype=np.float64))
    z = float(p_cam[2])
    if z <= BEHIND_EPS:
        return None
    u = intr.fx * p_cam[0] / z + intr.cx - 0.5
    v = intr.fy * p_cam[1] / z + intr.cy - 0.5
    depth = float(np.linalg.norm(p_cam))
    return np.array([u, v]), depth


def project_points(points: np.ndarray, pose: CameraPose, intr: Intrinsics):
    """Vectorized projection: (N,3) world points -> pixels (N,2), depths (N,), front mask (N,)."""
    p_cam = pose.world_to_camera(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    z = p_cam[:, 2]
    front = z > BEHIND_EPS
    z_safe = np.where(front, z, 1.0)
    u = intr.fx * p_cam[:, 0] / z_safe + intr.cx - 0.5
    v = intr.fy * p_cam[:, 1] / z_safe + intr.cy - 0.5
    depths = np.linalg.norm(p_cam, axis=1)
    return np.stack([u, v], axis=1), depths, front


def _in_bounds_mask(pixels: np.ndarray, intr: Intrinsics) -> np.ndarray:
    # accept only pixels whose +1 neighborhood stays meaningful: the center grid span
    u, v = pixels[:, 0], pixels[:, 1]
    return (u >= 0.0) & (u <= intr.width - 1.0) & (v >= 0.0) & (v <= intr.height - 1.0)


def sparse_depth_for_view(
    cloud: list[SparsePoint],
    view,
    pose: CameraPose,
    intr: Intrinsics,
    bounds: tuple[float, float] | None = None,
) -> list[SparseDepthSample]:
    """Reference depth samples for one view.

    `view` is either an observed view index, or a parent pair (b, b+1) for an
    interpolated unobserved view; unobserved views use the union of the two
    parents' visible point sets. Points behind the camera, projecting outside
    the image, or (if `bounds` given) outside (near, far) are dropped.
    """
    if isinstance(view, tuple):
        wanted = set(view)
        candidates = [i for i, p in enumerate(cloud) if wanted.intersection(p.visible_in)]
        tag = -1
    else:
        candidates = [i for i, p in enumerate(cloud) if view in p.visible_in]
        tag = int(view)
    if not candidates:
        return []

    pts = np.stack([cloud[i].position for i in candidates])
    pixels, depths, front = project_points(pts, pose, intr)
    keep = front & _in_bounds_mask(pixels, intr)
    if bounds is not None:
        near, far = bounds
        keep &= (depths > near) & (depths < far)

    return [
        SparseDepthSample(tag, pixels[j], float(depths[j]), point_index=candidates[j])
        for j in np.nonzero(keep)[0]
    ]


def save_pointcloud(cloud: list[SparsePoint], path) -> None:
    """Write the text format: `x y z r g b n v1 ... vn` per line, zero-based views."""
    with open(path, "w") as f:
        for p in cloud:
            color = p.color if p.color is not None else np.array([0.5, 0.5, 0.5])
            views = " ".join(str(int(v)) for v in p.visible_in)
            f.write(
                f"{p.position[0]:.10g} {p.position[1]:.10g} {p.position[2]:.10g} "
                f"{color[0]:.6g} {color[1]:.6g} {color[2]:.6g} "
                f"{len(p.visible_in)} {views}\n"
            )


def load_pointcloud(path) -> list[SparsePoint]:
    cloud = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 8:
                raise ValueError(f"{path}:{lineno}: expected at least 8 fields")
            x, y, z, r, g, b = (float(t) for t in parts[:6])
            n = int(parts[6])
            views = [int(t) for t in parts[7 : 7 + n]]
            if len(views) != n:
                raise ValueError(f"{path}:{lineno}: visibility count mismatch")
            cloud.append(SparsePoint(np.array([x, y, z]), views, np.array([r, g, b])))
    return cloud


def subsample_cloud(cloud: list[SparsePoint], max_points: int, seed: int = 0) -> list[SparsePoint]:
    """Deterministic uniform subsample, for speed only."""
    if max_points <= 0 or len(cloud) <= max_points:
        return cloud
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(cloud), size=max_points, replace=False)
    return [cloud[i] for i in sorted(idx)]


def visibility_index(cloud: list[SparsePoint], n_views: int) -> list[np.ndarray]:
    """Per-view arrays of point indices, for batch projection."""
    per_view: list[list[int]] = [[] for _ in range(n_views)]
    for i, p in enumerate(cloud):
        for v in p.visible_in:
            if not 0 <= v < n_views:
                raise ValueError(f"point {i} visible in unknown view {v}")
            per_view[v].append(i)
    return [np.array(v, dtype=np.int64) for v in per_view]


def convert_colmap_points(points3d_path, out_path, images_path=None) -> int:
    """Convert a COLMAP points3D.txt into the line-per-point text format.

    COLMAP columns: POINT3D_ID X Y Z R G B ERROR TRACK[] with TRACK pairs of
    (IMAGE_ID, POINT2D_IDX). Image ids map to zero-based view indices via
    images.txt order (sorted by name) when given, else via `image_id - 1`.
    """
    id_map = None
    if images_path is not None:
        entries = []
        with open(images_path) as f:
            lines = [ln.strip() for ln in f if ln.strip() and not ln.startswith("#")]
        # images.txt alternates pose lines and 2D-point lines; keep the pose lines
        for ln in lines[::2]:
            parts = ln.split()
            entries.append((parts[9], int(parts[0])))  # (name, image_id)
        entries.sort()
        id_map = {image_id: idx for idx, (_, image_id) in enumerate(entries)}

    count = 0
    with open(points3d_path) as f, open(out_path, "w") as out:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            x, y, z = (float(t) for t in parts[1:4])
            r, g, b = (int(t) / 255.0 for t in parts[4:7])
            track = parts[8:]
            image_ids = sorted({int(t) for t in track[0::2]})
            if id_map is not None:
                views = sorted({id_map[i] for i in image_ids if i in id_map})
            else:
                views = [i - 1 for i in image_ids]
            if not views:
                continue
            vs = " ".join(str(v) for v in views)
            out.write(f"{x:.10g} {y:.10g} {z:.10g} {r:.6g} {g:.6g} {b:.6g} {len(views)} {vs}\n")
            count += 1
    return count
