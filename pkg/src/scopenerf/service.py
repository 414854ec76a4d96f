"""HTTP render service: expose a trained field for interactive free-viewpoint rendering."""

from __future__ import annotations

import hashlib
import io
import logging
import threading
import time
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response

from .field import RadianceField
from .geometry import CameraPose, Intrinsics
from .renderer import render_view

log = logging.getLogger(__name__)

QUAT_NORM_TOL = 1e-3
MAX_IMAGE_SIDE = 1024


class RenderRequestError(ValueError):
    pass


def _parse_render_request(body: dict, defaults: Intrinsics):
    if not isinstance(body, dict):
        raise RenderRequestError("request body must be a JSON object")
    try:
        position = np.asarray(body["position"], dtype=np.float64).reshape(3)
        orientation = np.asarray(body["orientation"], dtype=np.float64).reshape(4)
    except (KeyError, TypeError, ValueError):
        raise RenderRequestError("need 'position' [x,y,z] and 'orientation' [w,x,y,z]")
    if not (np.all(np.isfinite(position)) and np.all(np.isfinite(orientation))):
        raise RenderRequestError("pose contains non-finite values")
    norm = float(np.linalg.norm(orientation))
    if abs(norm - 1.0) > QUAT_NORM_TOL:
        raise RenderRequestError(f"orientation norm {norm:.6f} too far from 1")
    pose = CameraPose(position, orientation / norm)

    width = int(body.get("width", 128))
    height = int(body.get("height", 128))
    if not (8 <= width <= MAX_IMAGE_SIDE and 8 <= height <= MAX_IMAGE_SIDE):
        raise RenderRequestError(f"width/height must be within [8, {MAX_IMAGE_SIDE}]")
    default_fov = np.degrees(2.0 * np.arctan(defaults.width / (2.0 * defaults.fx)))
    fov = float(body.get("fov_deg", default_fov))
    if not 5.0 <= fov <= 175.0:
        raise RenderRequestError("fov_deg must be within [5, 175]")
    samples = int(body.get("samples", 64))
    if not 2 <= samples <= 1024:
        raise RenderRequestError("samples must be within [2, 1024]")
    output = body.get("output", "rgb")
    if output not in ("rgb", "depth"):
        raise RenderRequestError("output must be 'rgb' or 'depth'")

    f = width / (2.0 * np.tan(np.radians(fov) / 2.0))
    intr = Intrinsics(f, f, width / 2.0, height / 2.0, width, height)
    return pose, intr, samples, output


def _png_bytes(img: np.ndarray) -> bytes:
    from PIL import Image

    arr = np.clip(np.asarray(img), 0.0, 1.0)
    buf = io.BytesIO()
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def _pfm_bytes(depth: np.ndarray) -> bytes:
    d = np.asarray(depth, dtype=np.float32)
    head = f"Pf\n{d.shape[1]} {d.shape[0]}\n-1.0\n".encode()
    return head + np.flipud(d).tobytes()


def create_app(checkpoint, max_concurrent: int = 2) -> FastAPI:
    """Build the service app around one checkpoint (path, or (field, extras))."""
    if isinstance(checkpoint, (str, Path)):
        field, extras = RadianceField.load(checkpoint)
        checkpoint_id = hashlib.sha256(Path(checkpoint).read_bytes()).hexdigest()[:16]
    else:
        field, extras = checkpoint
        checkpoint_id = f"inmem-{hashlib.sha256(field.theta.tobytes()).hexdigest()[:16]}"

    bounds = tuple(extras["bounds"])
    intr_default = Intrinsics.from_dict(extras["intrinsics"])
    trajectory = extras.get("observed_trajectory", [])
    start_pose = trajectory[0] if trajectory else CameraPose(np.zeros(3)).to_dict()
    gate = threading.Semaphore(max_concurrent)

    app = FastAPI(title="scopenerf render service")

    @app.get("/info")
    def info():
        return {
            "checkpoint_id": checkpoint_id,
            "bounds": list(bounds),
            "intrinsics": intr_default.to_dict(),
            "start_pose": start_pose,
            "n_observed": len(trajectory),
            "iteration": extras.get("iteration"),
            "scene": extras.get("scene_name"),
        }

    @app.get("/trajectory/observed")
    def observed():
        return trajectory

    @app.post("/render")
    async def render(request: Request):
        try:
            body = await request.json()
        except Exception:
            return JSONResponse({"error": "body must be valid JSON"}, status_code=400)
        try:
            pose, intr, samples, output = _parse_render_request(body, intr_default)
        except RenderRequestError as exc:
            return JSONResponse({"error": str(exc)}, status_code=400)

        if not gate.acquire(blocking=False):
            return JSONResponse({"error": "render capacity exhausted, retry later"},
                                status_code=429)
        try:
            t0 = time.monotonic()
            rgb, depth = render_view(field, pose, intr, bounds, samples)
            log.info("render %dx%d@%d %s in %.3fs", intr.width, intr.height, samples,
                     output, time.monotonic() - t0)
        finally:
            gate.release()

        if output == "depth":
            return Response(_pfm_bytes(depth), media_type="application/x-pfm")
        return Response(_png_bytes(rgb), media_type="image/png")

    return app


def serve(checkpoint_path, host: str = "127.0.0.1", port: int = 8008,
          max_concurrent: int = 2) -> None:
    """Run the service until interrupted."""
    import uvicorn

    app = create_app(checkpoint_path, max_concurrent=max_concurrent)
    uvicorn.run(app, host=host, port=port, log_level="info")
