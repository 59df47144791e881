"""Verification suites behind `gshead eval`: gradients, rasterizer oracle, ablation."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import torch

from ..decoders import distance_loss, featureline_reg, opcmotion_loss
from ..diffusion import (GeometryWeights, GRUDenoiser, NoiseSchedule,
                         TransformerDenoiser, deform_loss, lip_loss, motion_loss,
                         neighbor_mean_matrix, sample, train_motion_diffusion,
                         vertex_loss)
from ..rig import reconstruction_loss
from ..speech2au import audio_loss, regression_loss, temporal_loss
from ..splat import composite_full, composite_tiled, project_gaussians
from ..splat.camera import default_camera
from ..text2au import focal_bce, infonce
from .config import PipelineConfig
from .stages import _denoiser_config, _geometry_weights
from .synthetic import ScenarioSpec, SyntheticScenario


@dataclass
class CheckResult:
    name: str
    value: float
    bound: float

    @property
    def passed(self) -> bool:
        return self.value < self.bound

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.value:.3e} (bound {self.bound:.0e})"


def _fd_grad(fn, x: torch.Tensor, h: float = 1e-6) -> np.ndarray:
    flat = x.detach().clone().reshape(-1)
    grad = np.zeros(flat.numel())
    for i in range(flat.numel()):
        step = h * max(1.0, abs(float(flat[i])))
        orig = float(flat[i])
        flat[i] = orig + step
        hi = float(fn(flat.reshape(x.shape)))
        flat[i] = orig - step
        lo = float(fn(flat.reshape(x.shape)))
        flat[i] = orig
        grad[i] = (hi - lo) / (2.0 * step)
    return grad.reshape(x.shape)


def _grad_deviation(fn, x: torch.Tensor) -> float:
    """Max relative deviation between autograd and central differences."""
    xp = x.detach().clone().requires_grad_(True)
    fn(xp).backward()
    auto = xp.grad.detach().numpy()
    fd = _fd_grad(fn, x)
    scale = np.maximum(np.abs(fd), np.maximum(np.abs(auto), 1e-6))
    return float(np.max(np.abs(auto - fd) / scale))


def gradient_suite(seed: int = 0, rel_bound: float = 1e-4) -> list[CheckResult]:
    """Every differentiable loss vs central finite differences at 64-bit."""
    rng = np.random.default_rng(seed)
    t64 = lambda a: torch.tensor(np.asarray(a, dtype=np.float64))
    results = []

    gt_au = t64(rng.uniform(1, 4, (4, 17)))
    pred_au = t64(rng.uniform(1, 4, (4, 17)))
    results.append(CheckResult("audio regression", _grad_deviation(
        lambda p: regression_loss(p, gt_au), pred_au), rel_bound))
    results.append(CheckResult("audio temporal", _grad_deviation(
        temporal_loss, pred_au), rel_bound))
    results.append(CheckResult("audio combined", _grad_deviation(
        lambda p: audio_loss(p, gt_au), pred_au), rel_bound))

    gt_m = t64(rng.normal(0, 0.3, (3, 8, 3)))
    pred_m = t64(rng.normal(0, 0.3, (3, 8, 3)))
    ring = [np.array([(i + 1) % 8, (i + 7) % 8]) for i in range(8)]
    nm = neighbor_mean_matrix(ring)
    lv, lt = np.array([0, 3, 5]), np.array([0, 2])
    results.append(CheckResult("vertex", _grad_deviation(
        lambda p: vertex_loss(p, gt_m), pred_m), rel_bound))
    results.append(CheckResult("motion (vel+acc)", _grad_deviation(
        lambda p: motion_loss(p, gt_m), pred_m), rel_bound))
    results.append(CheckResult("deform (+laplacian)", _grad_deviation(
        lambda p: deform_loss(p, nm, 0.7), pred_m), rel_bound))
    results.append(CheckResult("lip", _grad_deviation(
        lambda p: lip_loss(p, gt_m, lv, lt), pred_m), rel_bound))

    dalpha = t64(rng.normal(0, 1, 6))
    dmu = t64(rng.normal(0, 0.5, (6, 3)))
    results.append(CheckResult("opcmotion", _grad_deviation(
        lambda m: opcmotion_loss(m, dalpha, gamma=1.3), dmu), rel_bound))
    bank = t64(rng.normal(0, 0.5, (17, 4, 16)))
    results.append(CheckResult("featureline reg", _grad_deviation(
        featureline_reg, bank), rel_bound))
    dmu2 = t64(rng.normal(0, 1.0, (6, 3)))
    norms = np.linalg.norm(dmu2.numpy(), axis=-1)
    tau = float((norms.min() + norms.max()) / 2)  # away from every kink
    results.append(CheckResult("distance", _grad_deviation(
        lambda m: distance_loss(m, tau), dmu2), rel_bound))

    gt_img = t64(rng.uniform(0, 1, (16, 16, 3)))
    pred_img = t64(rng.uniform(0, 1, (16, 16, 3)))
    results.append(CheckResult("reconstruction (L1+SSIM)", _grad_deviation(
        lambda p: reconstruction_loss(p, gt_img), pred_img), rel_bound))

    labels = t64(rng.integers(0, 2, 17).astype(np.float64))
    logits = t64(rng.normal(0, 1, 17))
    results.append(CheckResult("focal BCE", _grad_deviation(
        lambda z: focal_bce(torch.sigmoid(z), labels), logits), rel_bound))

    def nce(a):
        an = a / a.norm()
        return infonce(an, pos_n, neg_n)
    pos_n = t64(rng.normal(0, 1, 8))
    pos_n = pos_n / pos_n.norm()
    neg_n = t64(rng.normal(0, 1, (3, 8)))
    neg_n = neg_n / neg_n.norm(dim=1, keepdim=True)
    anchor = t64(rng.normal(0, 1, 8))
    results.append(CheckResult("InfoNCE", _grad_deviation(nce, anchor), rel_bound))
    return results


def oracle_suite(scenes: int = 50, max_gaussians: int = 200, size: int = 128,
                 seed: int = 0, bound: float = 1e-6) -> list[CheckResult]:
    """Tiled renderer vs naive full-compositing oracle on random scenes."""
    rng = np.random.default_rng(seed)
    cam = default_camera(size, size)
    results = []
    for k in range(scenes):
        n = int(rng.integers(20, max_gaussians + 1))
        pos = rng.normal(0, 0.5, (n, 3))
        scales = rng.uniform(0.02, 0.2, (n, 3))
        quats = rng.normal(0, 1, (n, 4))
        quats /= np.linalg.norm(quats, axis=1, keepdims=True)
        opac = rng.uniform(0.05, 0.98, n)
        colors = rng.uniform(0, 1, (n, 3))
        splats = project_gaussians(pos, scales, quats, opac, colors, cam)
        tiled = composite_tiled(splats.center, splats.conic, splats.opacity,
                                splats.color, splats.bbox, cam.width, cam.height,
                                16, np.zeros(3), 0.0)
        naive = composite_full(splats, cam.width, cam.height)
        results.append(CheckResult(f"scene {k:02d} (n={n})",
                                   float(np.abs(tiled - naive).max()), bound))
    return results


@dataclass
class AblationRow:
    name: str
    vertex: float
    motion: float
    geometry: float

    def line(self) -> str:
        return (f"{self.name:<16} vertex {self.vertex:.5f}  "
                f"motion {self.motion:.5f}  geometry {self.geometry:.5f}")


def evaluate_denoiser(denoiser, schedule, scenario: SyntheticScenario,
                      sequences: list[int], seed: int = 0) -> AblationRow:
    """Sampled-motion losses vs scenario ground truth on held-out sequences."""
    mesh = scenario.mesh
    nm = neighbor_mean_matrix(mesh.adjacency())
    lv = scenario.lip_vertices
    tmpl = torch.tensor(mesh.vertices)
    v_losses, m_losses, g_losses = [], [], []
    for i in sequences:
        s = scenario.sequence(i)
        pred = sample(denoiser, schedule, tmpl, torch.tensor(s.au),
                      torch.tensor(s.audio), frames=s.au.shape[0], seed=seed + i)
        gt = torch.tensor(s.offsets)
        v_losses.append(float(vertex_loss(pred, gt)))
        m_losses.append(float(motion_loss(pred, gt)))
        from ..diffusion import geometry_loss
        g_losses.append(float(geometry_loss(pred, gt, nm, lv,
                                            np.arange(s.au.shape[0]),
                                            GeometryWeights())))
    return AblationRow(name="", vertex=float(np.mean(v_losses)),
                       motion=float(np.mean(m_losses)),
                       geometry=float(np.mean(g_losses)))


def ablation_suite(config: PipelineConfig | None = None, steps: int = 300,
                   scenario: SyntheticScenario | None = None,
                   eval_sequences: list[int] | None = None,
                   seed: int = 0) -> list[AblationRow]:
    """Train FULL / no-AU-conditioning / GRU variants and report the table."""
    config = config or PipelineConfig()
    scenario = scenario or SyntheticScenario(ScenarioSpec(sequences=8))
    eval_sequences = eval_sequences or [100, 101, 102]
    mesh = scenario.mesh
    corpus = scenario.corpus()
    nm = neighbor_mean_matrix(mesh.adjacency())
    schedule = NoiseSchedule.cosine(config.diffusion.num_steps)
    weights = _geometry_weights(config)

    rows = []
    variants = [
        ("FULL", TransformerDenoiser, dict()),
        ("w/o Codes4P", TransformerDenoiser, dict(use_au=False)),
        ("w/o Diffusion", GRUDenoiser, dict()),
    ]
    for name, cls, overrides in variants:
        torch.manual_seed(seed)
        cfg = _denoiser_config(config)
        for key, val in overrides.items():
            setattr(cfg, key, val)
        model = cls(vertex_count=mesh.vertex_count, config=cfg,
                    num_steps=config.diffusion.num_steps)
        t0 = time.time()
        train_motion_diffusion(model, schedule, corpus, mesh.vertices, nm,
                               scenario.lip_vertices, steps=steps,
                               lr=config.diffusion.lr,
                               batch_size=config.diffusion.batch_size,
                               weights=weights, seed=seed)
        row = evaluate_denoiser(model, schedule, scenario, eval_sequences, seed)
        row.name = name
        rows.append(row)
        print(f"{row.line()}  [{time.time() - t0:.0f}s train]")
    return rows
