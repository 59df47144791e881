"""Reference splatting rasterizer: project 3D Gaussians, composite front-to-back.

The per-pixel compositing loop is the hot kernel; a compiled Cython
implementation is used when available and a numpy twin otherwise. Check
`ACTIVE_KERNEL` to see which one was selected.
"""

from __future__ import annotations

from . import reference
from .camera import Camera, camera_ring, default_camera, look_at
from .geometry import (COV2D_FLOOR, DEFAULT_NEAR, FOOTPRINT_MAHALANOBIS_SQ,
                       SplatBatch, covariance3d, project_gaussians, quat_to_rotmat)
from .oracle import composite_full, composite_pixel

try:
    from . import _kernel  # compiled extension
    composite_tiled = _kernel.composite_tiled
    ACTIVE_KERNEL = "cython"
except ImportError:
    composite_tiled = reference.composite_tiled
    ACTIVE_KERNEL = "python"

from .render import RenderOptions, image_to_png_bytes, render_gaussians, save_png

__all__ = [
    "ACTIVE_KERNEL", "COV2D_FLOOR", "DEFAULT_NEAR", "FOOTPRINT_MAHALANOBIS_SQ",
    "Camera", "RenderOptions", "SplatBatch", "camera_ring", "composite_full",
    "composite_pixel", "composite_tiled", "covariance3d", "default_camera",
    "image_to_png_bytes", "look_at", "project_gaussians", "quat_to_rotmat",
    "render_gaussians", "save_png",
]
