"""Pure-numpy twin of the compiled compositing kernel.

Same math, same per-pixel contribution order, same early-termination rule (a
contribution applies only while the pixel's transmittance is still at or above
the threshold), so it can stand in for the compiled kernel bit-for-bit up to
libm differences in exp().
"""

from __future__ import annotations

import numpy as np

from .geometry import FOOTPRINT_MAHALANOBIS_SQ


def composite_tiled(center: np.ndarray, conic: np.ndarray, opacity: np.ndarray,
                    color: np.ndarray, bbox: np.ndarray, width: int, height: int,
                    tile_size: int, background: np.ndarray,
                    term_threshold: float) -> np.ndarray:
    """Composite depth-sorted splats; vectorized per splat over its bbox.

    `tile_size` is accepted for interface parity with the compiled kernel; the
    result does not depend on the tiling, so this path composites splat-major.
    """
    img = np.zeros((height, width, 3))
    trans = np.ones((height, width))
    n = len(opacity)
    for s in range(n):
        x0, x1, y0, y1 = bbox[s]
        if x0 >= x1 or y0 >= y1:
            continue
        xs = np.arange(x0, x1) + 0.5 - center[s, 0]
        ys = np.arange(y0, y1) + 0.5 - center[s, 1]
        dx, dy = np.meshgrid(xs, ys)
        a, b, c = conic[s]
        m = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
        contrib = m <= FOOTPRINT_MAHALANOBIS_SQ
        if term_threshold > 0.0:
            contrib &= trans[y0:y1, x0:x1] >= term_threshold
        if not contrib.any():
            continue
        alpha = np.where(contrib, opacity[s] * np.exp(-0.5 * np.where(contrib, m, 0.0)), 0.0)
        t_slice = trans[y0:y1, x0:x1]
        img[y0:y1, x0:x1] += (t_slice * alpha)[..., None] * color[s]
        trans[y0:y1, x0:x1] = t_slice * (1.0 - alpha)
    img += trans[..., None] * np.asarray(background, dtype=np.float64)
    return img
