"""Canonical Gaussian head rig.

Facial Gaussians are bound 1:1 to template-mesh vertices; non-facial (hair,
clothing) points are driven structurally through an anchor binding and never
optimized during animation. Opacity is stored in logit form so the (0, 1)
invariant is structural; colors are baked from the triplane once the canonical
stage is done.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np
import torch
from torch import nn

from .mesh import TemplateMesh
from .splat.camera import Camera
from .splat.geometry import covariance3d, quat_to_rotmat
from .splat.render import RenderOptions, render_gaussians
from .splat.torch_render import render_torch
from .tensorio import load_tensors, save_tensors
from .triplane import AxisAlignedBounds, Triplane, triplane_color

QUAT_NORM_TOL = 1e-6


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def quat_multiply(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Hamilton product, (w, x, y, z) convention, broadcasting over leading dims."""
    w1, x1, y1, z1 = np.moveaxis(np.asarray(q1, dtype=np.float64), -1, 0)
    w2, x2, y2, z2 = np.moveaxis(np.asarray(q2, dtype=np.float64), -1, 0)
    return np.stack([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ], axis=-1)


def axis_angle_to_quat(rotvec: np.ndarray) -> np.ndarray:
    """Axis-angle vectors (..., 3) to unit quaternions; exact identity at zero."""
    rotvec = np.asarray(rotvec, dtype=np.float64)
    angle = np.linalg.norm(rotvec, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(x)/x, safe at zero
    small = angle < 1e-12
    k = np.where(small, 0.5, np.sin(half) / np.where(small, 1.0, angle))
    return np.concatenate([np.cos(half), rotvec * k], axis=-1)


@dataclass(frozen=True)
class Gaussian:
    """One primitive: position, axis scales, rotation, opacity, color."""

    position: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray  # unit quaternion (w, x, y, z)
    opacity: float
    color: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64)
        scl = np.asarray(self.scale, dtype=np.float64)
        rot = np.asarray(self.rotation, dtype=np.float64)
        col = np.asarray(self.color, dtype=np.float64)
        if pos.shape != (3,) or scl.shape != (3,) or rot.shape != (4,) or col.shape != (3,):
            raise ValueError("bad Gaussian field shapes")
        if np.any(scl <= 0):
            raise ValueError("scale components must be positive")
        if abs(np.linalg.norm(rot) - 1.0) > QUAT_NORM_TOL:
            raise ValueError("rotation quaternion must be unit norm")
        if not (0.0 < self.opacity < 1.0):
            raise ValueError("opacity must lie strictly inside (0, 1)")
        if col.min() < 0.0 or col.max() > 1.0:
            raise ValueError("color must lie in [0, 1]^3")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "scale", scl)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "color", col)

    def covariance(self) -> np.ndarray:
        return covariance(self.scale, self.rotation)


def covariance(scale: np.ndarray, rotation: np.ndarray) -> np.ndarray:
    """3x3 covariance R S S^T R^T; eigenvalues are the squared scales."""
    return covariance3d(np.asarray(scale, dtype=np.float64)[None],
                        np.asarray(rotation, dtype=np.float64)[None])[0]


def density(g: Gaussian, x: np.ndarray) -> float:
    """Unnormalized Gaussian density, 1 at the mean."""
    d = np.asarray(x, dtype=np.float64) - g.position
    sigma_inv = np.linalg.inv(g.covariance())
    return float(np.exp(-0.5 * d @ sigma_inv @ d))


@dataclass
class GaussianRig:
    """Facial (mesh-bound) + non-facial (OTF) Gaussians with anchor binding."""

    positions: np.ndarray        # (N, 3)
    scales: np.ndarray           # (N, 3), > 0
    quats: np.ndarray            # (N, 4), unit
    logit_opacities: np.ndarray  # (N,)
    colors: np.ndarray           # (N, 3) in [0, 1]
    facial_count: int
    binding_indices: np.ndarray  # (N - facial_count, k) into the facial set
    binding_weights: np.ndarray  # (N - facial_count, k), rows sum to 1

    def __post_init__(self):
        n = len(self.positions)
        if not (0 <= self.facial_count <= n):
            raise ValueError("facial_count out of range")
        nf = n - self.facial_count
        if len(self.binding_indices) != nf or len(self.binding_weights) != nf:
            raise ValueError("binding tables must cover every non-facial point")
        if nf and not np.allclose(self.binding_weights.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("binding weights must sum to 1 per point")
        norms = np.linalg.norm(self.quats, axis=1)
        if len(norms) and np.max(np.abs(norms - 1.0)) > QUAT_NORM_TOL:
            raise ValueError("rig quaternions must be unit norm")
        if np.any(self.scales <= 0):
            raise ValueError("rig scales must be positive")

    @property
    def count(self) -> int:
        return len(self.positions)

    @property
    def nonfacial_count(self) -> int:
        return self.count - self.facial_count

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.logit_opacities)

    def facial_positions(self) -> np.ndarray:
        return self.positions[:self.facial_count]

    def nonfacial_hash(self) -> str:
        """Digest of every non-facial parameter, for freeze checks."""
        h = hashlib.sha256()
        sl = slice(self.facial_count, None)
        for arr in (self.positions[sl], self.scales[sl], self.quats[sl],
                    self.logit_opacities[sl], self.colors[sl],
                    self.binding_indices, self.binding_weights):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def build_binding(facial_positions: np.ndarray, nonfacial_positions: np.ndarray,
                  k: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """k-nearest facial anchors with normalized inverse-distance weights."""
    nf = len(nonfacial_positions)
    k = min(k, len(facial_positions))
    if nf == 0 or k == 0:
        return (np.zeros((nf, max(k, 1)), dtype=np.int64),
                np.full((nf, max(k, 1)), 1.0 / max(k, 1)))
    d = np.linalg.norm(nonfacial_positions[:, None] - facial_positions[None], axis=2)
    idx = np.argsort(d, axis=1)[:, :k]
    dist = np.take_along_axis(d, idx, axis=1)
    w = 1.0 / (dist + 1e-9)
    w /= w.sum(axis=1, keepdims=True)
    return idx.astype(np.int64), w


def drive_nonfacial(rig: GaussianRig, facial_offsets: np.ndarray) -> np.ndarray:
    """Offsets for non-facial points: binding-weighted average of anchor offsets."""
    facial_offsets = np.asarray(facial_offsets, dtype=np.float64)
    if facial_offsets.shape != (rig.facial_count, 3):
        raise ValueError(f"expected ({rig.facial_count}, 3) offsets, got {facial_offsets.shape}")
    if rig.nonfacial_count == 0:
        return np.zeros((0, 3))
    anchors = facial_offsets[rig.binding_indices]          # (M, k, 3)
    return (rig.binding_weights[..., None] * anchors).sum(axis=1)


def bake_colors(rig: GaussianRig, tp: Triplane, bounds: AxisAlignedBounds) -> GaussianRig:
    """Replace every Gaussian's color with the triplane decode at its position."""
    if rig.count == 0:
        return replace(rig, colors=rig.colors.copy())
    return replace(rig, colors=triplane_color(tp, rig.positions, bounds))


def assemble_frame(rig: GaussianRig, facial_offsets: np.ndarray,
                   facial_quats: np.ndarray | None = None,
                   facial_opacities: np.ndarray | None = None):
    """Full per-frame Gaussian arrays for rendering one animated frame.

    Facial points take the given offsets/rotations/opacities; non-facial points
    are driven structurally and keep frozen rotation, scale, opacity, color.
    Returns (positions, scales, quats, opacities, colors) without mutating the rig.
    """
    v = rig.facial_count
    positions = rig.positions.copy()
    positions[:v] += facial_offsets
    positions[v:] += drive_nonfacial(rig, facial_offsets)
    quats = rig.quats.copy()
    if facial_quats is not None:
        quats[:v] = facial_quats
    opac = rig.opacities
    if facial_opacities is not None:
        opac = opac.copy()
        opac[:v] = facial_opacities
    return positions, rig.scales, quats, opac, rig.colors


def render_rig(rig: GaussianRig, camera: Camera,
               options: RenderOptions | None = None) -> np.ndarray:
    return render_gaussians(rig.positions, rig.scales, rig.quats, rig.opacities,
                            rig.colors, camera, options)


RIG_FIELDS = ("positions", "scales", "quats", "logit_opacities", "colors",
              "binding_indices", "binding_weights")


def save_rig(path, rig: GaussianRig) -> None:
    arrays = {name: getattr(rig, name) for name in RIG_FIELDS}
    save_tensors(path, arrays, {
        "kind": "gaussian_rig",
        "field_order": list(RIG_FIELDS),
        "facial_count": rig.facial_count,
    })


def load_rig(path) -> GaussianRig:
    arrays, meta = load_tensors(path)
    if meta.get("kind") != "gaussian_rig":
        raise ValueError(f"{path}: not a rig archive")
    if tuple(meta.get("field_order", ())) != RIG_FIELDS:
        raise ValueError(f"{path}: unexpected field order {meta.get('field_order')}")
    return GaussianRig(facial_count=int(meta["facial_count"]),
                       **{name: arrays[name] for name in RIG_FIELDS})


def init_rig_from_mesh(mesh: TemplateMesh, nonfacial_count: int = 2000,
                       scale: float | None = None, opacity: float = 0.85,
                       seed: int = 0) -> GaussianRig:
    """Canonical rig: one Gaussian per mesh vertex + an OTF shell for hair/torso."""
    rng = np.random.default_rng(seed)
    v = mesh.vertices
    n_facial = len(v)
    if scale is None:
        # comparable to the typical vertex spacing
        scale = 0.35 * mesh.bbox_diagonal() / max(np.sqrt(n_facial), 1.0)

    normals = mesh.vertex_normals()
    back = normals[:, 2] < 0.1
    shell_idx = rng.choice(np.flatnonzero(back), size=nonfacial_count, replace=True) \
        if back.any() and nonfacial_count else np.zeros(0, dtype=np.int64)
    shell = v[shell_idx] + normals[shell_idx] * rng.uniform(0.02, 0.12, (len(shell_idx), 1))
    shell += rng.normal(0.0, 0.01, shell.shape)

    positions = np.concatenate([v, shell], axis=0)
    n = len(positions)
    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    scales = np.full((n, 3), scale)
    logit_op = np.full(n, float(logit(opacity)))
    colors = np.full((n, 3), 0.5)
    idx, w = build_binding(v, shell)
    return GaussianRig(positions, scales, quats, logit_op, colors,
                       facial_count=n_facial, binding_indices=idx, binding_weights=w)


# ---------------------------------------------------------------------------
# photometric reconstruction


def gaussian_window(size: int = 11, sigma: float = 1.5,
                    dtype: torch.dtype = torch.float64) -> torch.Tensor:
    ax = torch.arange(size, dtype=dtype) - (size - 1) / 2.0
    g = torch.exp(-0.5 * (ax / sigma) ** 2)
    g = g / g.sum()
    return torch.outer(g, g)


def ssim_index(img_a: torch.Tensor, img_b: torch.Tensor, window_size: int = 11,
               sigma: float = 1.5) -> torch.Tensor:
    """Mean SSIM over an (H, W, 3) pair in [0, 1], 11x11 Gaussian window."""
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    a = img_a.permute(2, 0, 1).unsqueeze(0)
    b = img_b.permute(2, 0, 1).unsqueeze(0)
    win = gaussian_window(window_size, sigma, a.dtype).expand(3, 1, window_size, window_size)
    mu_a = nn.functional.conv2d(a, win, groups=3)
    mu_b = nn.functional.conv2d(b, win, groups=3)
    var_a = nn.functional.conv2d(a * a, win, groups=3) - mu_a ** 2
    var_b = nn.functional.conv2d(b * b, win, groups=3) - mu_b ** 2
    cov = nn.functional.conv2d(a * b, win, groups=3) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return (num / den).mean()


def reconstruction_loss(render: torch.Tensor | np.ndarray, gt: torch.Tensor | np.ndarray,
                        lambda_ssim: float = 0.2) -> torch.Tensor:
    """(1 - w) L1 + w (1 - SSIM); zero iff the images are identical."""
    render = torch.as_tensor(render, dtype=torch.float64) \
        if not torch.is_tensor(render) else render
    gt = torch.as_tensor(gt, dtype=render.dtype) if not torch.is_tensor(gt) else gt
    if render.shape != gt.shape:
        raise ValueError(f"image shape mismatch: {render.shape} vs {gt.shape}")
    l1 = (render - gt).abs().mean()
    if lambda_ssim == 0.0:
        return l1
    l_ssim = 1.0 - ssim_index(render, gt)
    return (1.0 - lambda_ssim) * l1 + lambda_ssim * l_ssim


class RigParameters(nn.Module):
    """Optimizable view of a rig: free positions, log-scales, quats, logit-opacities."""

    def __init__(self, rig: GaussianRig):
        super().__init__()
        self.facial_count = rig.facial_count
        self.binding_indices = rig.binding_indices
        self.binding_weights = rig.binding_weights
        self.positions = nn.Parameter(torch.tensor(rig.positions))
        self.log_scales = nn.Parameter(torch.tensor(np.log(rig.scales)))
        self.quats = nn.Parameter(torch.tensor(rig.quats))
        self.logit_opacities = nn.Parameter(torch.tensor(rig.logit_opacities))

    def unit_quats(self) -> torch.Tensor:
        return self.quats / self.quats.norm(dim=1, keepdim=True)

    def render(self, colors: torch.Tensor, camera: Camera, background=(0.0, 0.0, 0.0)):
        return render_torch(self.positions, self.log_scales.exp(), self.unit_quats(),
                            torch.sigmoid(self.logit_opacities), colors, camera,
                            background=background)

    def to_rig(self, colors: np.ndarray) -> GaussianRig:
        with torch.no_grad():
            quats = self.unit_quats().numpy()
        return GaussianRig(
            positions=self.positions.detach().numpy().copy(),
            scales=self.log_scales.detach().exp().numpy(),
            quats=quats.copy(),
            logit_opacities=self.logit_opacities.detach().numpy().copy(),
            colors=np.asarray(colors, dtype=np.float64).copy(),
            facial_count=self.facial_count,
            binding_indices=self.binding_indices,
            binding_weights=self.binding_weights,
        )


def fit_rig_photometric(rig: GaussianRig, views: list[tuple[Camera, np.ndarray]],
                        steps: int = 500, lr: float = 5e-3, lambda_ssim: float = 0.2,
                        views_per_step: int = 2, triplane: Triplane | None = None,
                        bounds: AxisAlignedBounds | None = None, seed: int = 0,
                        background=(0.0, 0.0, 0.0)) -> tuple[GaussianRig, Triplane, list[float]]:
    """Photometric rig fit against posed ground-truth images.

    Optimizes Gaussian geometry/opacity plus the triplane color field, then
    bakes decoded colors into the returned rig. Returns (rig, triplane, loss curve).
    """
    params = RigParameters(rig)
    if bounds is None:
        bounds = AxisAlignedBounds.around(rig.positions)
    tp = triplane if triplane is not None else Triplane(resolution=32, channels=8)
    opt = torch.optim.Adam([
        {"params": params.parameters(), "lr": lr},
        {"params": tp.parameters(), "lr": lr * 4},
    ])
    rng = np.random.default_rng(seed)
    gts = [torch.tensor(np.asarray(img, dtype=np.float64)) for _, img in views]
    curve: list[float] = []
    for _ in range(steps):
        opt.zero_grad()
        pick = rng.choice(len(views), size=min(views_per_step, len(views)), replace=False)
        loss = torch.zeros((), dtype=torch.float64)
        for i in pick:
            cam = views[i][0]
            colors = tp(params.positions, bounds)
            image = params.render(colors, cam, background)
            loss = loss + reconstruction_loss(image, gts[i], lambda_ssim)
        loss = loss / len(pick)
        loss.backward()
        opt.step()
        curve.append(float(loss.detach()))
    fitted = params.to_rig(colors=np.zeros((rig.count, 3)))
    fitted = bake_colors(fitted, tp, bounds)
    return fitted, tp, curve
