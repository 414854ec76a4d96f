"""Scene bundles (images + poses + intrinsics + point cloud) and their on-disk layout."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import CameraPose, Intrinsics
from .pointcloud import SparsePoint, load_pointcloud, save_pointcloud


@dataclass
class SceneBundle:
    """Posed training data: one image + pose per observed view, plus the sparse cloud."""

    intrinsics: Intrinsics
    poses: list[CameraPose]
    images: list[np.ndarray]  # (H, W, 3) float64 in [0, 1]
    cloud: list[SparsePoint] = field(default_factory=list)
    name: str = "scene"

    def __post_init__(self):
        if len(self.poses) != len(self.images):
            raise ValueError("poses and images must align")

    @property
    def n_views(self) -> int:
        return len(self.poses)

    def consecutive_pairs(self) -> list[tuple[CameraPose, CameraPose]]:
        return [(self.poses[i], self.poses[i + 1]) for i in range(len(self.poses) - 1)]


def save_image(img: np.ndarray, path) -> None:
    """Write a [0,1] float image as 8-bit RGB PNG."""
    arr = np.clip(np.asarray(img), 0.0, 1.0)
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8), mode="RGB").save(path)


def load_image(path) -> np.ndarray:
    """Read an 8-bit image to [0,1] float64, clamped and finite by construction."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr


def save_pfm(depth: np.ndarray, path) -> None:
    """Write a single-channel float32 PFM (little-endian, bottom-up rows)."""
    d = np.asarray(depth, dtype=np.float32)
    if d.ndim != 2:
        raise ValueError("PFM writer expects a 2D depth map")
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{d.shape[1]} {d.shape[0]}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.flipud(d).tobytes())


def load_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header != b"Pf":
            raise ValueError("only single-channel 'Pf' PFM files are supported")
        w, h = (int(t) for t in f.readline().split())
        scale = float(f.readline())
        data = np.frombuffer(f.read(), dtype="<f4" if scale < 0 else ">f4", count=w * h)
    return np.flipud(data.reshape(h, w)).astype(np.float32)


def save_bundle(bundle: SceneBundle, root, depth_maps: list[np.ndarray] | None = None) -> None:
    """Write the layout consumed by the trainer.

    root/
      scene.json    intrinsics + ordered poses (position, quaternion)
      images/NNNN.png
      points.txt    sparse cloud with per-view visibility
      depth/NNNN.pfm   ground-truth depth, only when depth_maps is given
    """
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    meta = {
        "name": bundle.name,
        "intrinsics": bundle.intrinsics.to_dict(),
        "poses": [p.to_dict() for p in bundle.poses],
    }
    (root / "scene.json").write_text(json.dumps(meta, indent=2))
    for i, img in enumerate(bundle.images):
        save_image(img, root / "images" / f"{i:04d}.png")
    save_pointcloud(bundle.cloud, root / "points.txt")
    if depth_maps is not None:
        (root / "depth").mkdir(exist_ok=True)
        for i, d in enumerate(depth_maps):
            save_pfm(d, root / "depth" / f"{i:04d}.pfm")


def load_bundle(root, max_points: int = 0, seed: int = 0) -> SceneBundle:
    root = Path(root)
    meta = json.loads((root / "scene.json").read_text())
    intr = Intrinsics.from_dict(meta["intrinsics"])
    poses = [CameraPose.from_dict(d) for d in meta["poses"]]
    images = [load_image(root / "images" / f"{i:04d}.png") for i in range(len(poses))]
    cloud = []
    points_path = root / "points.txt"
    if points_path.exists():
        cloud = load_pointcloud(points_path)
        if max_points:
            from .pointcloud import subsample_cloud

            cloud = subsample_cloud(cloud, max_points, seed)
    return SceneBundle(intr, poses, images, cloud, name=meta.get("name", root.name))


def load_depth_maps(root, n_views: int) -> list[np.ndarray]:
    root = Path(root)
    return [load_pfm(root / "depth" / f"{i:04d}.pfm") for i in range(n_views)]
