"""Differentiable splat rendering in torch, for photometric optimization.

Mirrors the reference math (same projection, 0.3 px^2 covariance floor,
3-sigma footprint, front-to-back compositing) with no early termination, so
its forward pass agrees with the reference renderer at threshold 0 and its
backward pass drives rig and decoder training.
"""

from __future__ import annotations

import numpy as np
import torch

from .camera import Camera
from .geometry import COV2D_FLOOR, DEFAULT_NEAR, FOOTPRINT_MAHALANOBIS_SQ


def quat_to_rotmat_torch(q: torch.Tensor) -> torch.Tensor:
    w, x, y, z = q.unbind(-1)
    row0 = torch.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1)
    row1 = torch.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1)
    row2 = torch.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1)
    return torch.stack([row0, row1, row2], -2)


def render_torch(positions: torch.Tensor, scales: torch.Tensor, quats: torch.Tensor,
                 opacities: torch.Tensor, colors: torch.Tensor, camera: Camera,
                 background=(0.0, 0.0, 0.0), near: float = DEFAULT_NEAR) -> torch.Tensor:
    """Render to an (H, W, 3) tensor; differentiable w.r.t. every input."""
    dtype = positions.dtype
    R_w2c = torch.as_tensor(camera.rotation, dtype=dtype)
    t_w2c = torch.as_tensor(camera.translation, dtype=dtype)
    bg = torch.as_tensor(np.asarray(background), dtype=dtype)

    cam = positions @ R_w2c.T + t_w2c
    depth_all = -cam[:, 2]
    keep = depth_all > near
    if not bool(keep.any()):
        return bg.expand(camera.height, camera.width, 3).clone()

    cam = cam[keep]
    depth = depth_all[keep]
    xc, yc = cam[:, 0], cam[:, 1]
    u = camera.cx + camera.fx * xc / depth
    v = camera.cy - camera.fy * yc / depth

    zeros = torch.zeros_like(depth)
    J = torch.stack([
        torch.stack([camera.fx / depth, zeros, camera.fx * xc / depth**2], -1),
        torch.stack([zeros, -camera.fy / depth, -camera.fy * yc / depth**2], -1),
    ], -2)

    Rq = quat_to_rotmat_torch(quats[keep])
    RS = Rq * scales[keep].unsqueeze(-2)
    sigma_world = RS @ RS.transpose(-1, -2)
    sigma_cam = R_w2c @ sigma_world @ R_w2c.T
    cov2d = J @ sigma_cam @ J.transpose(-1, -2)
    floor = torch.eye(2, dtype=dtype) * COV2D_FLOOR
    cov2d = cov2d + floor

    a = cov2d[:, 0, 0]
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1]
    det = a * c - b * b
    ca, cb, cc = c / det, -b / det, a / det

    order = torch.argsort(depth.detach(), stable=True)
    u, v = u[order], v[order]
    ca, cb, cc = ca[order], cb[order], cc[order]
    opac = opacities[keep][order]
    cols = colors[keep][order]

    ys = torch.arange(camera.height, dtype=dtype) + 0.5
    xs = torch.arange(camera.width, dtype=dtype) + 0.5
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    dx = gx.unsqueeze(0) - u.view(-1, 1, 1)
    dy = gy.unsqueeze(0) - v.view(-1, 1, 1)
    m = (ca.view(-1, 1, 1) * dx * dx + 2.0 * cb.view(-1, 1, 1) * dx * dy
         + cc.view(-1, 1, 1) * dy * dy)
    w = torch.where(m <= FOOTPRINT_MAHALANOBIS_SQ, torch.exp(-0.5 * m),
                    torch.zeros((), dtype=dtype))
    alpha = opac.view(-1, 1, 1) * w

    one = torch.ones((1, camera.height, camera.width), dtype=dtype)
    trans = torch.cumprod(torch.cat([one, 1.0 - alpha], dim=0), dim=0)
    img = (alpha * trans[:-1]).unsqueeze(-1) * cols.view(-1, 1, 1, 3)
    return img.sum(dim=0) + trans[-1].unsqueeze(-1) * bg
