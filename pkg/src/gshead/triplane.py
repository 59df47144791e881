"""Triplane color field: three orthogonal feature grids + a small MLP decoder.

Replaces per-Gaussian spherical harmonics for appearance. A query position is
normalized into the bounding box, bilinearly sampled on the XY / XZ / YZ
planes, and the concatenated features are decoded to RGB through a sigmoid.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn


class AxisAlignedBounds:
    """Axis-aligned box used to normalize query positions into [0, 1]^3."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        if self.lo.shape != (3,) or self.hi.shape != (3,):
            raise ValueError("bounds must be 3-vectors")
        if np.any(self.hi <= self.lo):
            raise ValueError(f"degenerate bounds: lo={self.lo}, hi={self.hi}")

    @classmethod
    def around(cls, points: np.ndarray, margin: float = 0.05) -> "AxisAlignedBounds":
        lo = points.min(axis=0)
        hi = points.max(axis=0)
        pad = (hi - lo) * margin + 1e-9
        return cls(lo - pad, hi + pad)

    def normalize(self, positions: torch.Tensor) -> torch.Tensor:
        lo = torch.as_tensor(self.lo, dtype=positions.dtype)
        hi = torch.as_tensor(self.hi, dtype=positions.dtype)
        return ((positions - lo) / (hi - lo)).clamp(0.0, 1.0)


def bilinear_sample(grid: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
    """Sample an (H, W, C) grid at (N, 2) coordinates in [0, 1]^2.

    Align-corners convention: coordinate 0 hits texel 0, coordinate 1 hits the
    last texel. Differentiable in both grid and coordinates.
    """
    h, w, _ = grid.shape
    gx = coords[:, 0] * (w - 1)
    gy = coords[:, 1] * (h - 1)
    x0 = gx.floor().clamp(0, w - 2).long() if w > 1 else torch.zeros_like(gx).long()
    y0 = gy.floor().clamp(0, h - 2).long() if h > 1 else torch.zeros_like(gy).long()
    fx = (gx - x0).unsqueeze(-1)
    fy = (gy - y0).unsqueeze(-1)
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)
    g00 = grid[y0, x0]
    g01 = grid[y0, x1]
    g10 = grid[y1, x0]
    g11 = grid[y1, x1]
    top = g00 * (1 - fx) + g01 * fx
    bot = g10 * (1 - fx) + g11 * fx
    return top * (1 - fy) + bot * fy


class Triplane(nn.Module):
    """Three (H, W, C) feature planes and a two-layer RGB decoder."""

    def __init__(self, resolution: int = 64, channels: int = 16, hidden: int = 64,
                 init_scale: float = 0.1, dtype: torch.dtype = torch.float64):
        super().__init__()
        shape = (resolution, resolution, channels)
        self.plane_xy = nn.Parameter(torch.randn(shape, dtype=dtype) * init_scale)
        self.plane_xz = nn.Parameter(torch.randn(shape, dtype=dtype) * init_scale)
        self.plane_yz = nn.Parameter(torch.randn(shape, dtype=dtype) * init_scale)
        self.decoder = nn.Sequential(
            nn.Linear(3 * channels, hidden, dtype=dtype),
            nn.ReLU(),
            nn.Linear(hidden, 3, dtype=dtype),
        )

    @property
    def dtype(self) -> torch.dtype:
        return self.plane_xy.dtype

    def features(self, positions: torch.Tensor, bounds: AxisAlignedBounds) -> torch.Tensor:
        p = bounds.normalize(positions)
        f_xy = bilinear_sample(self.plane_xy, p[:, (0, 1)])
        f_xz = bilinear_sample(self.plane_xz, p[:, (0, 2)])
        f_yz = bilinear_sample(self.plane_yz, p[:, (1, 2)])
        return torch.cat([f_xy, f_xz, f_yz], dim=-1)

    def forward(self, positions: torch.Tensor, bounds: AxisAlignedBounds) -> torch.Tensor:
        return torch.sigmoid(self.decoder(self.features(positions, bounds)))


def triplane_color(tp: Triplane, positions: np.ndarray,
                   bounds: AxisAlignedBounds) -> np.ndarray:
    """Decode RGB colors for world positions (numpy in, numpy out)."""
    pts = torch.as_tensor(np.asarray(positions, dtype=np.float64).reshape(-1, 3),
                          dtype=tp.dtype)
    with torch.no_grad():
        rgb = tp(pts, bounds)
    return rgb.numpy()
