"""Naive full-compositing oracle for the tiled renderer.

No tiles, no bounding boxes, no early termination: every splat is evaluated at
every pixel in depth order. Kept deliberately simple; this is the reference
the fast paths are judged against.
"""

from __future__ import annotations

import numpy as np

from .geometry import FOOTPRINT_MAHALANOBIS_SQ, SplatBatch


def composite_pixel(splats: SplatBatch, pixel: tuple[float, float],
                    background=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Front-to-back compositing of depth-sorted splats at one pixel location."""
    px, py = pixel
    color = np.zeros(3)
    transmittance = 1.0
    for s in range(len(splats)):
        dx = px - splats.center[s, 0]
        dy = py - splats.center[s, 1]
        a, b, c = splats.conic[s]
        m = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
        if m > FOOTPRINT_MAHALANOBIS_SQ:
            continue
        alpha = splats.opacity[s] * np.exp(-0.5 * m)
        color += transmittance * alpha * splats.color[s]
        transmittance *= 1.0 - alpha
    return color + transmittance * np.asarray(background, dtype=np.float64)


def composite_full(splats: SplatBatch, width: int, height: int,
                   background=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Full-image naive compositing (vectorized over pixels, loop over splats)."""
    xs = np.arange(width) + 0.5
    ys = np.arange(height) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    img = np.zeros((height, width, 3))
    trans = np.ones((height, width))
    for s in range(len(splats)):
        dx = gx - splats.center[s, 0]
        dy = gy - splats.center[s, 1]
        a, b, c = splats.conic[s]
        m = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
        w = np.where(m <= FOOTPRINT_MAHALANOBIS_SQ, np.exp(-0.5 * m), 0.0)
        alpha = splats.opacity[s] * w
        img += (trans * alpha)[..., None] * splats.color[s]
        trans *= 1.0 - alpha
    return img + trans[..., None] * np.asarray(background, dtype=np.float64)
