"""Top-level render entry points and PNG IO."""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import Camera
from .geometry import DEFAULT_NEAR, project_gaussians


@dataclass
class RenderOptions:
    tile_size: int = 16
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    term_threshold: float = 1e-4   # <= 0 disables early termination
    near: float = DEFAULT_NEAR


def render_gaussians(positions, scales, quats, opacities, colors, camera: Camera,
                     options: RenderOptions | None = None) -> np.ndarray:
    """Render a Gaussian set to an (H, W, 3) float image in [0, 1]."""
    from . import composite_tiled  # resolved backend

    opts = options or RenderOptions()
    splats = project_gaussians(positions, scales, quats, opacities, colors,
                               camera, near=opts.near)
    bg = np.asarray(opts.background, dtype=np.float64)
    if len(splats) == 0:
        return np.broadcast_to(bg, (camera.height, camera.width, 3)).copy()
    return composite_tiled(splats.center, splats.conic, splats.opacity,
                           splats.color, splats.bbox, camera.width, camera.height,
                           opts.tile_size, bg, opts.term_threshold)


def image_to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def image_to_png_bytes(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(image_to_uint8(image)).save(buf, format="PNG")
    return buf.getvalue()


def save_png(image: np.ndarray, path: str | Path) -> None:
    Path(path).write_bytes(image_to_png_bytes(image))


def load_png(path: str | Path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
    return arr / 255.0
