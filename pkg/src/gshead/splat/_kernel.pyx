# Tile-based front-to-back splat compositing. The pure-Python twin lives in
# reference.py; both must produce identical images for identical inputs.

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()

DEF MAX_M = 9.0  # 3-sigma footprint in squared Mahalanobis distance


def composite_tiled(cnp.float64_t[:, ::1] center,
                    cnp.float64_t[:, ::1] conic,
                    cnp.float64_t[::1] opacity,
                    cnp.float64_t[:, ::1] color,
                    cnp.int64_t[:, ::1] bbox,
                    int width, int height, int tile_size,
                    cnp.float64_t[::1] background,
                    double term_threshold):
    cdef int n = center.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out = np.empty((height, width, 3))
    cdef cnp.float64_t[:, :, ::1] img = out
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cand_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] cand = cand_arr

    cdef int tx, ty, x0, y0, x1, y1, ncand, i, s, px, py
    cdef double cxp, cyp, dx, dy, m, alpha, T, r, g, b, w
    cdef double bg0 = background[0], bg1 = background[1], bg2 = background[2]

    if tile_size <= 0:
        tile_size = width if width > height else height
        if tile_size == 0:
            tile_size = 1

    for ty in range(0, height, tile_size):
        y1 = ty + tile_size
        if y1 > height:
            y1 = height
        for tx in range(0, width, tile_size):
            x1 = tx + tile_size
            if x1 > width:
                x1 = width
            # depth-ordered candidates whose bbox intersects this tile
            ncand = 0
            for i in range(n):
                if bbox[i, 0] < x1 and bbox[i, 1] > tx and bbox[i, 2] < y1 and bbox[i, 3] > ty:
                    cand[ncand] = i
                    ncand += 1
            for py in range(ty, y1):
                cyp = py + 0.5
                for px in range(tx, x1):
                    cxp = px + 0.5
                    T = 1.0
                    r = 0.0
                    g = 0.0
                    b = 0.0
                    for i in range(ncand):
                        s = cand[i]
                        if px < bbox[s, 0] or px >= bbox[s, 1] or py < bbox[s, 2] or py >= bbox[s, 3]:
                            continue
                        if term_threshold > 0.0 and T < term_threshold:
                            break
                        dx = cxp - center[s, 0]
                        dy = cyp - center[s, 1]
                        m = conic[s, 0] * dx * dx + 2.0 * conic[s, 1] * dx * dy + conic[s, 2] * dy * dy
                        if m > MAX_M:
                            continue
                        w = exp(-0.5 * m)
                        alpha = opacity[s] * w
                        r += T * alpha * color[s, 0]
                        g += T * alpha * color[s, 1]
                        b += T * alpha * color[s, 2]
                        T *= 1.0 - alpha
                    img[py, px, 0] = r + T * bg0
                    img[py, px, 1] = g + T * bg1
                    img[py, px, 2] = b + T * bg2
    return out
