"""End-to-end inference: audio (+ optional text prompt) to rendered frames."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..aucode import (AUCode, AUActivationMask, ModulationParams, codes_to_array,
                      codes_to_json, sequence_modulate)
from ..audio_features import AudioFeatureSequence
from ..decoders import decode_frame
from ..diffusion import sample
from ..rig import assemble_frame
from ..speech2au import encode_with_model, frame_pool
from ..splat.camera import Camera
from ..splat.render import RenderOptions, render_gaussians, save_png
from ..text2au import predict_mask
from .config import PipelineConfig
from .stages import (load_stage0, load_stage1, load_stage2, load_stage3,
                     load_stage4)
from .synthetic import SyntheticScenario


@dataclass
class PipelineBundle:
    """Every trained component, loaded once and treated as read-only."""

    config: PipelineConfig
    rig: "GaussianRig"
    triplane: "Triplane"
    bounds: "AxisAlignedBounds"
    encoder: "SpeechToAUEncoder"
    denoiser: torch.nn.Module
    schedule: "NoiseSchedule"
    featureline: "FeatureLine"
    rotnet: "RotNet"
    opcnet: "OPCNet"
    controller: "TextToAUController"
    cameras: list[Camera]
    template: np.ndarray

    @classmethod
    def load(cls, workdir: str | Path, config: PipelineConfig) -> "PipelineBundle":
        workdir = Path(workdir)
        rig, tp, bounds = load_stage0(workdir)
        encoder = load_stage1(workdir)
        denoiser, schedule = load_stage2(workdir)
        fl, rotnet, opcnet = load_stage3(workdir)
        controller = load_stage4(workdir)
        scenario = SyntheticScenario()
        return cls(config=config, rig=rig, triplane=tp, bounds=bounds,
                   encoder=encoder, denoiser=denoiser, schedule=schedule,
                   featureline=fl, rotnet=rotnet, opcnet=opcnet,
                   controller=controller, cameras=scenario.cameras(),
                   template=rig.positions[:rig.facial_count].copy())

    def render_options(self) -> RenderOptions:
        r = self.config.render
        return RenderOptions(tile_size=r.tile_size, background=tuple(r.background),
                             term_threshold=r.term_threshold, near=r.near)


@dataclass
class AnimationResult:
    frames: list[np.ndarray]
    au_trace: list[AUCode]
    modulated_trace: list[AUCode]
    mask: AUActivationMask | None = None
    offsets: np.ndarray | None = None

    def trace_json(self) -> str:
        doc = json.loads(codes_to_json(self.au_trace))
        doc["modulated"] = [c.values.tolist() for c in self.modulated_trace]
        if self.mask is not None:
            doc["mask"] = self.mask.flags.tolist()
        return json.dumps(doc)


def animate(bundle: PipelineBundle, audio: AudioFeatureSequence,
            prompt: str | None, camera: Camera, frames: int,
            seed: int = 0) -> AnimationResult:
    """encode -> (optional text2au + modulate) -> diffusion -> decoders -> render."""
    if frames == 0:
        return AnimationResult(frames=[], au_trace=[], modulated_trace=[])

    codes = encode_with_model(bundle.encoder, audio)
    mask = None
    modulated = codes
    if prompt:
        mask, _ = predict_mask(prompt, bundle.controller,
                               threshold=bundle.config.text2au.threshold)
        params = ModulationParams(enhance=bundle.config.aucode.enhance,
                                  suppress=bundle.config.aucode.suppress)
        modulated = sequence_modulate(codes, mask, params)

    video_fps = bundle.encoder.config.video_fps
    feats = torch.tensor(audio.frames, dtype=torch.float64)
    if audio.frame_rate != video_fps:
        feats = frame_pool(feats, audio.frame_rate, video_fps)

    count = min(frames, len(modulated)) if frames > 0 else len(modulated)
    au_tensor = torch.tensor(codes_to_array(modulated[:count]))
    offsets = sample(bundle.denoiser, bundle.schedule,
                     torch.tensor(bundle.template), au_tensor,
                     feats[:count], frames=count, seed=seed).numpy()

    opts = bundle.render_options()
    images = []
    for t in range(count):
        attrs = decode_frame(bundle.rig, offsets[t], modulated[t],
                             bundle.featureline, bundle.rotnet, bundle.opcnet)
        arrays = assemble_frame(bundle.rig, offsets[t], attrs.rotations,
                                attrs.opacities)
        images.append(render_gaussians(*arrays, camera, opts))
    return AnimationResult(frames=images, au_trace=codes[:count],
                           modulated_trace=modulated[:count], mask=mask,
                           offsets=offsets)


def render_au_code(bundle: PipelineBundle, code: AUCode, camera: Camera,
                   frame: int = 0) -> np.ndarray:
    """One deterministic frame for a single AU code (the editor's render path).

    An all-zero code is the FACS rest face and maps to the canonical rig
    exactly; anything else runs single-frame diffusion + decoders, seeded by
    the frame index so identical requests are byte-stable.
    """
    opts = bundle.render_options()
    if not np.any(code.values):
        return render_gaussians(bundle.rig.positions, bundle.rig.scales,
                                bundle.rig.quats, bundle.rig.opacities,
                                bundle.rig.colors, camera, opts)
    au_tensor = torch.tensor(code.values[None])
    offsets = sample(bundle.denoiser, bundle.schedule,
                     torch.tensor(bundle.template), au_tensor, None,
                     frames=1, seed=frame).numpy()[0]
    attrs = decode_frame(bundle.rig, offsets, code, bundle.featureline,
                         bundle.rotnet, bundle.opcnet)
    arrays = assemble_frame(bundle.rig, offsets, attrs.rotations, attrs.opacities)
    return render_gaussians(*arrays, camera, opts)


def write_session(out_dir: str | Path, result: AnimationResult) -> None:
    """Persist frames + AU trace; readable back through the HTTP trace endpoint."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for t, image in enumerate(result.frames):
        save_png(image, out_dir / f"frame{t:04d}.png")
    (out_dir / "trace.json").write_text(result.trace_json())
