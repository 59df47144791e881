"""Projection of 3D Gaussians to screen-space splats (numpy, vectorized).

The 2D covariance uses the affine approximation J W Sigma W^T J^T with the
projection Jacobian evaluated at the Gaussian mean, then a 0.3 px^2 isotropic
floor to keep splats invertible. A splat's footprint is the 3-sigma ellipse
(squared Mahalanobis distance <= 9); outside it the contribution is exactly
zero, which every compositing path shares.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Camera

COV2D_FLOOR = 0.3       # px^2 isotropic regularization
FOOTPRINT_MAHALANOBIS_SQ = 9.0  # 3-sigma cutoff
DEFAULT_NEAR = 0.01


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Unit quaternions (..., 4) in (w, x, y, z) order to rotation matrices."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def covariance3d(scales: np.ndarray, quats: np.ndarray) -> np.ndarray:
    """World-space covariance R S S^T R^T for each Gaussian."""
    R = quat_to_rotmat(quats)
    S = np.asarray(scales, dtype=np.float64)
    RS = R * S[..., None, :]
    return RS @ np.swapaxes(RS, -1, -2)


@dataclass
class SplatBatch:
    """Projected splats in camera-depth order (ascending, ties by index)."""

    center: np.ndarray    # (M, 2) pixel coords
    cov2d: np.ndarray     # (M, 2, 2) regularized screen-space covariance
    conic: np.ndarray     # (M, 3) packed inverse covariance (a, b, c)
    depth: np.ndarray     # (M,) camera-z distance, > near
    opacity: np.ndarray   # (M,)
    color: np.ndarray     # (M, 3)
    bbox: np.ndarray      # (M, 4) int pixel bounds x0, x1, y0, y1 (half-open)

    def __len__(self) -> int:
        return len(self.depth)


def project_gaussians(positions: np.ndarray, scales: np.ndarray, quats: np.ndarray,
                      opacities: np.ndarray, colors: np.ndarray, camera: Camera,
                      near: float = DEFAULT_NEAR) -> SplatBatch:
    """Project Gaussians to 2D splats; Gaussians behind the near plane are culled."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    n = len(positions)
    if n == 0:
        return _empty_batch()
    cam_pts = camera.world_to_camera(positions)
    depth = -cam_pts[:, 2]
    keep = depth > near
    if not np.any(keep):
        return _empty_batch()

    cam_pts = cam_pts[keep]
    depth = depth[keep]
    xc, yc = cam_pts[:, 0], cam_pts[:, 1]
    u = camera.cx + camera.fx * xc / depth
    v = camera.cy - camera.fy * yc / depth
    center = np.stack([u, v], axis=1)

    # projection Jacobian at the mean: du/d(cam xyz), dv/d(cam xyz)
    m = len(depth)
    J = np.zeros((m, 2, 3))
    J[:, 0, 0] = camera.fx / depth
    J[:, 0, 2] = camera.fx * xc / depth**2
    J[:, 1, 1] = -camera.fy / depth
    J[:, 1, 2] = -camera.fy * yc / depth**2

    W = camera.rotation
    sigma_world = covariance3d(np.asarray(scales)[keep], np.asarray(quats)[keep])
    sigma_cam = W[None] @ sigma_world @ W.T[None]
    cov2d = J @ sigma_cam @ np.swapaxes(J, 1, 2)
    cov2d[:, 0, 0] += COV2D_FLOOR
    cov2d[:, 1, 1] += COV2D_FLOOR

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)

    rx = 3.0 * np.sqrt(a)
    ry = 3.0 * np.sqrt(c)
    x0 = np.clip(np.floor(u - rx), 0, camera.width).astype(np.int64)
    x1 = np.clip(np.ceil(u + rx) + 1, 0, camera.width).astype(np.int64)
    y0 = np.clip(np.floor(v - ry), 0, camera.height).astype(np.int64)
    y1 = np.clip(np.ceil(v + ry) + 1, 0, camera.height).astype(np.int64)
    bbox = np.stack([x0, x1, y0, y1], axis=1)

    order = np.argsort(depth, kind="stable")
    opac = np.asarray(opacities, dtype=np.float64)[keep]
    cols = np.asarray(colors, dtype=np.float64).reshape(-1, 3)[keep]
    return SplatBatch(
        center=np.ascontiguousarray(center[order]),
        cov2d=np.ascontiguousarray(cov2d[order]),
        conic=np.ascontiguousarray(conic[order]),
        depth=np.ascontiguousarray(depth[order]),
        opacity=np.ascontiguousarray(opac[order]),
        color=np.ascontiguousarray(cols[order]),
        bbox=np.ascontiguousarray(bbox[order]),
    )


def _empty_batch() -> SplatBatch:
    return SplatBatch(
        center=np.zeros((0, 2)), cov2d=np.zeros((0, 2, 2)), conic=np.zeros((0, 3)),
        depth=np.zeros(0), opacity=np.zeros(0), color=np.zeros((0, 3)),
        bbox=np.zeros((0, 4), dtype=np.int64),
    )
