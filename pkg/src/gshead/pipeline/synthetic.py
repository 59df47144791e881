"""Synthetic training scenario: the desk-scale stand-in for real captures.

Everything derives deterministically from one seed: a template head mesh, an
analytic AU-to-offset map (each action unit deforms a fixed vertex region
along a stored direction field, scaled by intensity/5), smooth random AU
trajectories, audio features correlated with the AU codes plus noise, a
ground-truth rig for photometric supervision, and a camera ring.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..aucode import NUM_AUS
from ..audio_features import FEATURE_DIM
from ..diffusion import MotionSample
from ..mesh import TemplateMesh, head_template, lip_vertices
from ..rig import GaussianRig, init_rig_from_mesh
from ..splat.camera import Camera, camera_ring
from ..tensorio import (save_au_truth_json, save_audio_features, save_motion)


@dataclass
class ScenarioSpec:
    seed: int = 0
    frames: int = 32
    sequences: int = 12
    nonfacial_count: int = 120
    camera_count: int = 8
    camera_radius: float = 3.0
    image_size: int = 64
    audio_noise: float = 0.3
    max_offset_fraction: float = 0.05   # of the template bbox diagonal (tau)


class SyntheticScenario:
    """Deterministic AU-driven head-motion world keyed by a single seed."""

    def __init__(self, spec: ScenarioSpec | None = None):
        self.spec = spec or ScenarioSpec()
        self.mesh: TemplateMesh = head_template()
        self.lip_vertices = lip_vertices(self.mesh)
        rng = np.random.default_rng(self.spec.seed)
        self.tau = self.spec.max_offset_fraction * self.mesh.bbox_diagonal()
        self._build_au_basis(rng)
        self.audio_projection = rng.normal(
            0.0, 1.0 / np.sqrt(NUM_AUS), (NUM_AUS, FEATURE_DIM))
        self._noise_seed = int(rng.integers(2**31))

    # -- structure ----------------------------------------------------------

    def _build_au_basis(self, rng: np.random.Generator):
        """Per-AU vertex region + direction field; total offset bounded by tau."""
        v = self.mesh.vertices
        normals = self.mesh.vertex_normals()
        n = len(v)
        basis = np.zeros((NUM_AUS, n, 3))
        radius = 0.35 * self.mesh.bbox_diagonal() / 2.0
        front = v[:, 2] > -0.1
        centers = rng.choice(np.flatnonzero(front), size=NUM_AUS, replace=False)
        for k, c in enumerate(centers):
            dist = np.linalg.norm(v - v[c], axis=1)
            weight = np.exp(-(dist / radius) ** 2)
            weight[weight < 0.05] = 0.0
            direction = normals + 0.3 * rng.normal(0, 1, 3)
            direction /= np.linalg.norm(direction, axis=1, keepdims=True)
            basis[k] = weight[:, None] * direction
        # bound: all AUs at intensity 5 displace every vertex by at most tau
        worst = np.linalg.norm(basis, axis=2).sum(axis=0).max()
        basis *= self.tau / worst
        self.au_basis = basis

    def offsets_from_codes(self, codes: np.ndarray) -> np.ndarray:
        """Analytic AU -> offset map: (T, 17) intensities to (T, V, 3) offsets."""
        codes = np.asarray(codes, dtype=np.float64)
        return np.einsum("tk,kvc->tvc", codes / 5.0, self.au_basis)

    # -- trajectories ---------------------------------------------------------

    def au_trajectory(self, frames: int, sequence_seed: int) -> np.ndarray:
        """Smooth random walk per AU in [0, 5], reflected at the bounds."""
        rng = np.random.default_rng((self.spec.seed, sequence_seed, 101))
        steps = rng.normal(0.0, 0.35, (frames, NUM_AUS))
        kernel = np.hanning(7)
        kernel /= kernel.sum()
        smooth = np.apply_along_axis(
            lambda s: np.convolve(s, kernel, mode="same"), 0, steps)
        walk = np.cumsum(smooth, axis=0) + rng.uniform(1.0, 4.0, NUM_AUS)
        return np.abs((walk - 0.0) % 10.0 - 5.0)  # reflect into [0, 5]

    def audio_from_codes(self, codes: np.ndarray, sequence_seed: int) -> np.ndarray:
        """AU-correlated features plus noise: conditioning carries information
        beyond what audio determines, which keeps the AU-ablation direction causal."""
        rng = np.random.default_rng((self.spec.seed, sequence_seed, 202))
        clean = (codes / 5.0 - 0.5) @ self.audio_projection * 2.0
        return clean + self.spec.audio_noise * rng.normal(0, 1, clean.shape)

    def sequence(self, sequence_seed: int,
                 frames: int | None = None) -> MotionSample:
        frames = frames or self.spec.frames
        au = self.au_trajectory(frames, sequence_seed)
        return MotionSample(au=au, audio=self.audio_from_codes(au, sequence_seed),
                            offsets=self.offsets_from_codes(au))

    def corpus(self) -> list[MotionSample]:
        return [self.sequence(i) for i in range(self.spec.sequences)]

    # -- appearance ------------------------------------------------------------

    def ground_truth_rig(self) -> GaussianRig:
        """The 'true' canonical rig whose renders act as captured images."""
        rig = init_rig_from_mesh(self.mesh, nonfacial_count=self.spec.nonfacial_count,
                                 seed=self.spec.seed + 1)
        rng = np.random.default_rng((self.spec.seed, 303))
        v = self.mesh.vertices
        lo, hi = v.min(axis=0), v.max(axis=0)
        t = (rig.positions - lo) / (hi - lo + 1e-9)
        colors = np.stack([
            0.35 + 0.5 * t[:, 1],
            0.3 + 0.35 * t[:, 0],
            0.35 + 0.4 * (1.0 - t[:, 2]),
        ], axis=1)
        rig.colors[:] = np.clip(colors + rng.normal(0, 0.02, colors.shape), 0, 1)
        return rig

    def cameras(self) -> list[Camera]:
        return camera_ring(self.spec.camera_count, radius=self.spec.camera_radius,
                           width=self.spec.image_size,
                           image_height=self.spec.image_size, span_deg=180.0)


def write_corpus(scenario: SyntheticScenario, out_dir: str | Path) -> Path:
    """Directory of (audio-features, AU-gt, motion) triples + a JSON manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    template_hash = scenario.mesh.content_hash()
    records = []
    for i, sample in enumerate(scenario.corpus()):
        stem = f"seq{i:03d}"
        save_audio_features(out_dir / f"{stem}_audio.npz", sample.audio, fps=25.0)
        save_au_truth_json(out_dir / f"{stem}_au.json", sample.au)
        save_motion(out_dir / f"{stem}_motion.npz", sample.offsets, template_hash)
        records.append({"id": stem, "audio": f"{stem}_audio.npz",
                        "au": f"{stem}_au.json", "motion": f"{stem}_motion.npz"})
    manifest = {"template_hash": template_hash, "frames": scenario.spec.frames,
                "sequences": records}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return out_dir / "manifest.json"


def load_corpus(manifest_path: str | Path) -> list[MotionSample]:
    from ..tensorio import load_au_truth, load_audio_features, load_motion
    manifest_path = Path(manifest_path)
    doc = json.loads(manifest_path.read_text())
    root = manifest_path.parent
    samples = []
    for rec in doc["sequences"]:
        audio, _ = load_audio_features(root / rec["audio"])
        au = load_au_truth(root / rec["au"])
        offsets, template_hash = load_motion(root / rec["motion"])
        if template_hash != doc["template_hash"]:
            raise ValueError(f"{rec['id']}: template hash mismatch")
        samples.append(MotionSample(au=au, audio=audio, offsets=offsets))
    return samples
