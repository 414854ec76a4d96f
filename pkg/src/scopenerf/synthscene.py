"""Synthetic posed-image datasets with analytic geometry, standing in for captured sequences."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .geometry import CameraPose, Intrinsics, quat_from_matrix
from .pointcloud import SparsePoint, project_points
from .rays import pixel_grid_rays
from .scene import SceneBundle

_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _hash01(ix, iy, iz, seed: int) -> np.ndarray:
    """Uniform [0,1) lattice hash, splitmix-style mixing on uint64."""
    with np.errstate(over="ignore"):
        h = (ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
             ^ iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
             ^ iz.astype(np.uint64) * np.uint64(0x165667B19E3779F9)
             ^ np.uint64(seed) * np.uint64(0x27D4EB2F165667C5))
        h ^= h >> np.uint64(30)
        h *= _MIX1
        h ^= h >> np.uint64(27)
        h *= _MIX2
        h ^= h >> np.uint64(31)
    return (h >> np.uint64(40)).astype(np.float64) / float(1 << 24)


def value_noise(points: np.ndarray, frequency: float, seed: int) -> np.ndarray:
    """Trilinear value noise in [0,1] at world points (N,3)."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3) * frequency + 1000.0
    base = np.floor(p).astype(np.int64)
    f = p - base
    f = f * f * (3.0 - 2.0 * f)  # smoothstep
    out = np.zeros(p.shape[0])
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                w = (f[:, 0] if dx else 1.0 - f[:, 0]) \
                    * (f[:, 1] if dy else 1.0 - f[:, 1]) \
                    * (f[:, 2] if dz else 1.0 - f[:, 2])
                out += w * _hash01(base[:, 0] + dx, base[:, 1] + dy, base[:, 2] + dz, seed)
    return out


@dataclass
class AnalyticScene:
    """An interior surface (sphere shell or bent tube) with a procedural texture.

    The emission model renders the texture on a hard shell of the given
    thickness and density, so an ideal radiance field reproduces the analytic
    depth exactly up to the shell thickness.
    """

    surface: str = "sphere-interior"
    radius: float = 1.0
    center: np.ndarray = dc_field(default_factory=lambda: np.zeros(3))
    bend_radius: float = 1.0  # tube only: radius of the center circle
    texture_frequency: float = 6.0
    texture_octaves: int = 3
    texture_seed: int = 7
    texture_contrast: float = 1.0
    shell_thickness: float = 0.02
    shell_sigma: float = 2000.0
    palette_lo: np.ndarray = dc_field(default_factory=lambda: np.array([0.55, 0.18, 0.12]))
    palette_hi: np.ndarray = dc_field(default_factory=lambda: np.array([0.95, 0.72, 0.55]))

    def __post_init__(self):
        if self.surface not in ("sphere-interior", "tube"):
            raise ValueError("surface must be 'sphere-interior' or 'tube'")
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.palette_lo = np.asarray(self.palette_lo, dtype=np.float64)
        self.palette_hi = np.asarray(self.palette_hi, dtype=np.float64)

    # -- geometry --

    def contains(self, points: np.ndarray) -> np.ndarray:
        """True where a point lies strictly inside the surface."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return self.signed_distance(p) < -1e-9

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        """Negative inside the cavity, zero on the surface."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3) - self.center
        if self.surface == "sphere-interior":
            return np.linalg.norm(p, axis=1) - self.radius
        ring = np.sqrt(p[:, 0] ** 2 + p[:, 2] ** 2) - self.bend_radius
        return np.sqrt(ring * ring + p[:, 1] ** 2) - self.radius

    def surface_projection(self, points: np.ndarray) -> np.ndarray:
        """Closest surface point, used to texture off-surface field queries."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3) - self.center
        if self.surface == "sphere-interior":
            n = np.linalg.norm(p, axis=1, keepdims=True)
            n = np.where(n < 1e-12, 1.0, n)
            return self.center + self.radius * p / n
        ring_r = np.sqrt(p[:, 0] ** 2 + p[:, 2] ** 2)
        ring_r = np.where(ring_r < 1e-12, 1e-12, ring_r)
        ring = np.stack([p[:, 0] * self.bend_radius / ring_r,
                         np.zeros(p.shape[0]),
                         p[:, 2] * self.bend_radius / ring_r], axis=1)
        off = p - ring
        n = np.linalg.norm(off, axis=1, keepdims=True)
        n = np.where(n < 1e-12, 1.0, n)
        return self.center + ring + self.radius * off / n

    def ray_surface_distance(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """First-hit distance along unit rays starting inside the surface."""
        o = np.asarray(origins, dtype=np.float64).reshape(-1, 3) - self.center
        d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
        if self.surface == "sphere-interior":
            b = np.sum(o * d, axis=1)
            disc = b * b - (np.sum(o * o, axis=1) - self.radius ** 2)
            return -b + np.sqrt(np.maximum(disc, 0.0))
        return self._torus_first_hit(o, d)

    def _torus_first_hit(self, o: np.ndarray, d: np.ndarray) -> np.ndarray:
        big, small = self.bend_radius, self.radius
        beta = 2.0 * np.sum(o * d, axis=1)
        gamma = np.sum(o * o, axis=1) + big * big - small * small
        qa = d[:, 0] ** 2 + d[:, 2] ** 2
        qb = 2.0 * (o[:, 0] * d[:, 0] + o[:, 2] * d[:, 2])
        qc = o[:, 0] ** 2 + o[:, 2] ** 2
        four_b2 = 4.0 * big * big
        # quartic t^4 + c3 t^3 + c2 t^2 + c1 t + c0 via companion-matrix eigenvalues
        c3 = 2.0 * beta
        c2 = beta * beta + 2.0 * gamma - four_b2 * qa
        c1 = 2.0 * beta * gamma - four_b2 * qb
        c0 = gamma * gamma - four_b2 * qc
        n = o.shape[0]
        comp = np.zeros((n, 4, 4))
        comp[:, 1, 0] = comp[:, 2, 1] = comp[:, 3, 2] = 1.0
        comp[:, 0, 3] = -c0
        comp[:, 1, 3] = -c1
        comp[:, 2, 3] = -c2
        comp[:, 3, 3] = -c3
        roots = np.linalg.eigvals(comp)
        real = np.abs(roots.imag) < 1e-7 * np.maximum(1.0, np.abs(roots.real))
        positive = roots.real > 1e-9
        cand = np.where(real & positive, roots.real, np.inf)
        return cand.min(axis=1)

    # -- appearance --

    def texture(self, points: np.ndarray) -> np.ndarray:
        """Surface color (N,3) from multi-octave value noise between two palette anchors."""
        p = self.surface_projection(points)
        rgb = np.zeros((p.shape[0], 3))
        for ch in range(3):
            v = np.zeros(p.shape[0])
            amp_total = 0.0
            for octave in range(self.texture_octaves):
                amp = 0.5 ** octave
                v += amp * value_noise(p, self.texture_frequency * (2.0 ** octave),
                                       self.texture_seed + 97 * ch + octave)
                amp_total += amp
            v = 0.5 + self.texture_contrast * (v / amp_total - 0.5)
            rgb[:, ch] = self.palette_lo[ch] + (self.palette_hi[ch] - self.palette_lo[ch]) \
                * np.clip(v, 0.0, 1.0)
        return rgb

    def density(self, points: np.ndarray) -> np.ndarray:
        sd = np.abs(self.signed_distance(points))
        return np.where(sd <= 0.5 * self.shell_thickness, self.shell_sigma, 0.0)

    def oracle_field(self, dtype=np.float64) -> "OracleField":
        return OracleField(self, dtype)


class OracleField:
    """Ground-truth stand-in exposing the radiance-field query interface."""

    def __init__(self, scene: AnalyticScene, dtype=np.float64):
        self.scene = scene
        self.dtype = np.dtype(dtype)

    def query(self, x, d=None, want_color: bool = True, want_cache: bool = False):
        x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
        sigma = self.scene.density(x).astype(self.dtype)
        color = self.scene.texture(x).astype(self.dtype) if want_color else None
        return sigma, color, None


def look_at_pose(position, target, up=(0.0, 1.0, 0.0)) -> CameraPose:
    """Camera pose at `position` with +z toward `target` (x-right, y-down frame)."""
    position = np.asarray(position, dtype=np.float64).reshape(3)
    fwd = np.asarray(target, dtype=np.float64).reshape(3) - position
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise ValueError("look-at target coincides with the camera position")
    fwd = fwd / n
    up = np.asarray(up, dtype=np.float64)
    down = -up + fwd * float(np.dot(up, fwd))
    if np.linalg.norm(down) < 1e-9:  # forward parallel to up: pick another hint
        alt = np.array([1.0, 0.0, 0.0])
        down = -alt + fwd * float(np.dot(alt, fwd))
    down = down / np.linalg.norm(down)
    right = np.cross(down, fwd)
    rot = np.stack([right, down, fwd], axis=1)
    return CameraPose(position, quat_from_matrix(rot))


def arc_trajectory(scene: AnalyticScene, n_views: int, orbit_radius: float | None = None,
                   sweep: float = 1.5 * np.pi, tilt: float = 0.25) -> list[CameraPose]:
    """Poses along an interior arc, each looking outward at the wall.

    For the sphere the cameras orbit the center; for the tube they follow the
    bend. The look target sits on the far wall so views overlap like a probe
    sweeping an interior.
    """
    poses = []
    if scene.surface == "sphere-interior":
        a = orbit_radius if orbit_radius is not None else 0.45 * scene.radius
        for i in range(n_views):
            ang = sweep * (i / max(1, n_views - 1))
            pos = scene.center + a * np.array([np.cos(ang), tilt * np.sin(2 * ang),
                                               np.sin(ang)])
            target = scene.center + scene.radius * np.array(
                [np.cos(ang + 0.6), 0.2 * np.sin(ang), np.sin(ang + 0.6)])
            poses.append(look_at_pose(pos, target))
    else:
        for i in range(n_views):
            ang = sweep * (i / max(1, n_views - 1))
            pos = scene.center + np.array([scene.bend_radius * np.cos(ang),
                                           0.0,
                                           scene.bend_radius * np.sin(ang)])
            ahead = ang + 0.4
            target = scene.center + np.array([scene.bend_radius * np.cos(ahead),
                                              0.3 * scene.radius,
                                              scene.bend_radius * np.sin(ahead)])
            poses.append(look_at_pose(pos, target))
    if not np.all(scene.contains(np.stack([p.position for p in poses]))):
        raise ValueError("trajectory leaves the surface interior")
    return poses


def generate_dataset(scene: AnalyticScene, trajectory: list[CameraPose], intr: Intrinsics,
                     point_budget: int, seed: int = 0, noise_std: float = 0.0):
    """Render ground-truth views and build a synthetic SfM bundle.

    Returns (SceneBundle, depth_maps). Point visibility is the analytic
    unoccluded in-bounds test per view; optional Gaussian noise perturbs the
    stored point positions (never the visibility or the ground truth) to
    emulate reconstruction error.
    """
    if not trajectory:
        raise ValueError("trajectory must contain at least one pose")
    positions = np.stack([p.position for p in trajectory])
    if not np.all(scene.contains(positions)):
        raise ValueError("every camera must lie strictly inside the surface")

    images, depths = [], []
    for pose in trajectory:
        origins, dirs = pixel_grid_rays(pose, intr)
        dist = scene.ray_surface_distance(origins, dirs)
        hit = origins + dist[:, None] * dirs
        img = scene.texture(hit).reshape(intr.height, intr.width, 3)
        images.append(np.clip(img, 0.0, 1.0))
        depths.append(dist.reshape(intr.height, intr.width))

    rng = np.random.default_rng(seed)
    cloud: list[SparsePoint] = []
    if point_budget > 0:
        pts = _sample_surface_points(scene, point_budget, rng)
        visible = np.zeros((point_budget, len(trajectory)), dtype=bool)
        for vi, pose in enumerate(trajectory):
            px, depth, front = project_points(pts, pose, intr)
            inb = front & (px[:, 0] >= 0) & (px[:, 0] <= intr.width - 1.0) \
                & (px[:, 1] >= 0) & (px[:, 1] <= intr.height - 1.0)
            idx = np.nonzero(inb)[0]
            if idx.size:
                rays_d = pts[idx] - pose.position
                dist = np.linalg.norm(rays_d, axis=1)
                first = scene.ray_surface_distance(
                    np.broadcast_to(pose.position, (idx.size, 3)), rays_d / dist[:, None])
                visible[idx[np.abs(first - dist) < 1e-5 * np.maximum(1.0, dist)], vi] = True
        colors = scene.texture(pts)
        stored = pts + rng.normal(0.0, noise_std, size=pts.shape) if noise_std > 0 else pts
        for i in range(point_budget):
            views = np.nonzero(visible[i])[0]
            if views.size:
                cloud.append(SparsePoint(stored[i], [int(v) for v in views], colors[i]))

    bundle = SceneBundle(intr, list(trajectory), images, cloud, name=scene.surface)
    return bundle, depths


def _sample_surface_points(scene: AnalyticScene, n: int, rng) -> np.ndarray:
    if scene.surface == "sphere-interior":
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return scene.center + scene.radius * v
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
    ring = np.stack([scene.bend_radius * np.cos(theta), np.zeros(n),
                     scene.bend_radius * np.sin(theta)], axis=1)
    normal = np.stack([np.cos(theta) * np.cos(phi), np.sin(phi),
                       np.sin(theta) * np.cos(phi)], axis=1)
    return scene.center + ring + scene.radius * normal


def split_indices(n_frames: int, divisor: int, alternate: bool):
    """Frame-rate reduction then alternation: kept every `divisor`-th, even kept go to test."""
    if divisor < 1:
        raise ValueError("divisor must be >= 1")
    kept = list(range(0, n_frames, divisor))
    if len(kept) < 2:
        raise ValueError("fewer than 2 frames survive the frame-rate reduction")
    if not alternate:
        return kept, []
    return kept[1::2], kept[0::2]


def _restrict_cloud(cloud, view_map: dict[int, int]) -> list[SparsePoint]:
    out = []
    for p in cloud:
        views = sorted(view_map[v] for v in p.visible_in if v in view_map)
        if views:
            out.append(SparsePoint(p.position.copy(), views,
                                   None if p.color is None else p.color.copy()))
    return out


def bundle_subset(bundle: SceneBundle, indices, suffix: str) -> SceneBundle:
    """A new bundle over the chosen views, with point visibility remapped."""
    view_map = {orig: new for new, orig in enumerate(indices)}
    return SceneBundle(
        bundle.intrinsics,
        [bundle.poses[i] for i in indices],
        [bundle.images[i] for i in indices],
        _restrict_cloud(bundle.cloud, view_map),
        name=f"{bundle.name}-{suffix}",
    )


def train_test_split(bundle: SceneBundle, frame_rate_divisor: int, alternate: bool = True):
    """Split a bundle into (train, test) by frame-rate reduction plus alternation."""
    train_idx, test_idx = split_indices(bundle.n_views, frame_rate_divisor, alternate)
    return bundle_subset(bundle, train_idx, "train"), bundle_subset(bundle, test_idx, "test")
