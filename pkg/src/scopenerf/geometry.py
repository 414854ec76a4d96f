"""Camera pose algebra: quaternions, rigid transforms, and trajectory interpolation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UNIT_TOL = 1e-6
# dot(qa, qb) above this -> quaternions nearly parallel, slerp falls back to nlerp
NLERP_DOT = 1.0 - 1e-9


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = float(np.linalg.norm(q))
    if n < 1e-12:
        raise ValueError("cannot normalize near-zero quaternion")
    return q / n


def quat_mul(qa, qb) -> np.ndarray:
    """Hamilton product, scalar-first (w, x, y, z)."""
    w1, x1, y1, z1 = qa
    w2, x2, y2, z2 = qb
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        dtype=np.float64,
    )


def quat_conjugate(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    n = float(np.linalg.norm(axis))
    if n < 1e-12:
        return np.array([1.0, 0.0, 0.0, 0.0])
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis / n])


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix of a unit quaternion (w, x, y, z)."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ],
        dtype=np.float64,
    )


def quat_rotate(q, v) -> np.ndarray:
    return quat_to_matrix(q) @ np.asarray(v, dtype=np.float64)


def quat_angle_between(qa, qb) -> float:
    """Geodesic rotation angle between two unit quaternions, in [0, pi]."""
    d = abs(float(np.dot(qa, qb)))
    return 2.0 * np.arccos(min(d, 1.0))


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) of a rotation matrix, w >= 0."""
    m = np.asarray(m, dtype=np.float64)
    k = np.array(
        [
            [m[0, 0] - m[1, 1] - m[2, 2], 0.0, 0.0, 0.0],
            [m[1, 0] + m[0, 1], m[1, 1] - m[0, 0] - m[2, 2], 0.0, 0.0],
            [m[2, 0] + m[0, 2], m[2, 1] + m[1, 2], m[2, 2] - m[0, 0] - m[1, 1], 0.0],
            [m[1, 2] - m[2, 1], m[2, 0] - m[0, 2], m[0, 1] - m[1, 0],
             m[0, 0] + m[1, 1] + m[2, 2]],
        ]
    ) / 3.0
    eigvals, eigvecs = np.linalg.eigh(k)
    q = eigvecs[[3, 0, 1, 2], np.argmax(eigvals)]
    if q[0] < 0:
        q = -q
    return quat_normalize(q)


def _require_unit(q, name: str) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (4,):
        raise ValueError(f"{name} must be a 4-vector quaternion, got shape {q.shape}")
    if abs(float(np.linalg.norm(q)) - 1.0) > UNIT_TOL:
        raise ValueError(f"{name} must be a unit quaternion (|q|=1 within {UNIT_TOL})")
    return q


def quat_slerp(qa, qb, alpha: float) -> np.ndarray:
    """Spherical interpolation from qa to qb along the shorter geodesic arc.

    Constant angular velocity in alpha; result renormalized. Near-parallel
    inputs fall back to normalized lerp to avoid dividing by sin(0).
    """
    qa = _require_unit(qa, "qa")
    qb = _require_unit(qb, "qb")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")

    dot = float(np.dot(qa, qb))
    if dot < 0.0:
        qb = -qb
        dot = -dot
    if dot > NLERP_DOT:
        return quat_normalize((1.0 - alpha) * qa + alpha * qb)

    theta = np.arccos(min(dot, 1.0))
    s = np.sin(theta)
    wa = np.sin((1.0 - alpha) * theta) / s
    wb = np.sin(alpha * theta) / s
    return quat_normalize(wa * qa + wb * qb)


@dataclass
class Intrinsics:
    """Pinhole camera intrinsics in pixel units."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Intrinsics":
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], int(d["width"]), int(d["height"]))


@dataclass
class CameraPose:
    """Rigid camera-to-world transform: world position plus unit quaternion.

    Convention: scalar-first (w, x, y, z); the quaternion rotates camera-frame
    vectors into the world frame. Camera frame is x-right, y-down, z-forward.
    """

    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        q = np.asarray(self.orientation, dtype=np.float64).reshape(4)
        if abs(float(np.linalg.norm(q)) - 1.0) > UNIT_TOL:
            raise ValueError("orientation must be a unit quaternion")
        self.orientation = quat_normalize(q)

    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def forward_axis(self) -> np.ndarray:
        return self.rotation()[:, 2]

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        """Map world points (..., 3) into the camera frame."""
        pts = np.asarray(points, dtype=np.float64)
        return (pts - self.position) @ self.rotation()

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation().T + self.position

    def inverse(self) -> "CameraPose":
        q_inv = quat_conjugate(self.orientation)
        return CameraPose(-quat_rotate(q_inv, self.position), q_inv)

    def compose(self, other: "CameraPose") -> "CameraPose":
        """self ∘ other: apply `other`, then `self`."""
        return CameraPose(
            self.position + quat_rotate(self.orientation, other.position),
            quat_normalize(quat_mul(self.orientation, other.orientation)),
        )

    def to_dict(self) -> dict:
        return {
            "position": [float(v) for v in self.position],
            "orientation": [float(v) for v in self.orientation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        return cls(np.array(d["position"]), np.array(d["orientation"]))


def interpolate_pose(pa: CameraPose, pb: CameraPose, alpha: float) -> CameraPose:
    """Blend two poses: linear in position, spherical in orientation."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    pos = (1.0 - alpha) * pa.position + alpha * pb.position
    return CameraPose(pos, quat_slerp(pa.orientation, pb.orientation, alpha))


def generate_unobserved_poses(pairs, k: int, rng) -> list[CameraPose]:
    """Draw k interpolated poses per consecutive pose pair, alpha ~ U(0, 1) open.

    `rng` is an int seed or a numpy Generator. Alphas are drawn independently
    per pair, in pair order, so the result is deterministic given the seed.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    if k == 0:
        return []
    pairs = list(pairs)
    if not pairs:
        raise ValueError("pairs must be non-empty")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    out = []
    for pa, pb in pairs:
        for _ in range(k):
            alpha = float(rng.uniform(0.0, 1.0))
            while alpha == 0.0 or alpha == 1.0:  # open interval: never clone an endpoint
                alpha = float(rng.uniform(0.0, 1.0))
            out.append(interpolate_pose(pa, pb, alpha))
    return out
