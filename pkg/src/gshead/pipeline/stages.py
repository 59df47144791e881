"""Four-stage training orchestration over the synthetic scenario.

Stage 0 reconstructs the canonical rig photometrically (precursor the later
stages freeze), then: 1 speech-to-AU encoder, 2 motion diffusion, 3 appearance
decoders, 4 text-to-AU controller. Later stages never mutate earlier
checkpoints; frozen-file hashes are checked before and after every run.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..aucode import AUCode
from ..decoders import (FeatureLine, OPCNet, RotNet, decode_frame_torch,
                        default_tau, distance_loss, featureline_reg,
                        opcmotion_loss)
from ..diffusion import (DenoiserConfig, GeometryWeights, GRUDenoiser,
                         NoiseSchedule, TransformerDenoiser,
                         neighbor_mean_matrix, train_motion_diffusion)
from ..mesh import lip_vertices
from ..rig import (GaussianRig, drive_nonfacial, fit_rig_photometric, load_rig,
                   reconstruction_loss, render_rig, save_rig)
from ..speech2au import EncoderConfig, SpeechToAUEncoder, train_speech2au
from ..splat.render import RenderOptions
from ..splat.torch_render import render_torch
from ..text2au import (ControllerConfig, TextAUEntry, TextToAUController,
                       build_seed_dataset, train_controller)
from ..triplane import AxisAlignedBounds, Triplane
from .config import PipelineConfig
from .synthetic import SyntheticScenario

STAGE_NAMES = {
    0: "canonical_rig",
    1: "speech2au",
    2: "motion_diffusion",
    3: "appearance_decoders",
    4: "text2au_controller",
}

# files a stage requires (and must leave untouched)
UPSTREAM_FILES = {
    0: (),
    1: (),
    2: ("stage1.pt",),
    3: ("rig.npz", "stage0.pt", "stage2.pt"),
    4: (),
}

OUTPUT_FILES = {
    0: ("rig.npz", "stage0.pt"),
    1: ("stage1.pt",),
    2: ("stage2.pt",),
    3: ("stage3.pt",),
    4: ("stage4.pt",),
}


class MissingCheckpointError(FileNotFoundError):
    pass


@dataclass
class StagePlan:
    stage: int
    optimize: tuple[str, ...]
    frozen_files: tuple[str, ...]
    batch_size: int
    steps: int
    lr: float
    seed: int

    def __post_init__(self):
        if self.stage not in STAGE_NAMES:
            raise ValueError(f"stage must be one of {sorted(STAGE_NAMES)}")


@dataclass
class StageResult:
    plan: StagePlan
    checkpoint: Path
    loss_curve: list[float] = field(default_factory=list)
    frozen_hashes: dict[str, str] = field(default_factory=dict)

    @property
    def final_loss(self) -> float | None:
        return self.loss_curve[-1] if self.loss_curve else None


def build_stage_plan(stage: int, config: PipelineConfig,
                     steps: int | None = None) -> StagePlan:
    if stage not in STAGE_NAMES:
        raise ValueError(f"stage must be one of {sorted(STAGE_NAMES)}, got {stage}")
    sections = {0: config.rig, 1: config.speech2au, 2: config.diffusion,
                3: config.decoders, 4: config.text2au}
    sec = sections[stage]
    stage_steps = steps if steps is not None else \
        (sec.epochs if stage == 4 else sec.steps)
    return StagePlan(
        stage=stage,
        optimize=(STAGE_NAMES[stage],),
        frozen_files=UPSTREAM_FILES[stage],
        batch_size=sec.batch_size,
        steps=stage_steps,
        lr=sec.lr,
        seed=config.training.seed * 1000 + stage,
    )


def file_sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_stage(plan: StagePlan, config: PipelineConfig, workdir: str | Path,
              scenario: SyntheticScenario | None = None,
              dataset: list[TextAUEntry] | None = None,
              resume: bool = False) -> StageResult:
    """Train one stage; writes its checkpoint + loss curve under workdir."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    for name in plan.frozen_files:
        if not (workdir / name).exists():
            raise MissingCheckpointError(
                f"stage {plan.stage} requires {name}; run the upstream stage first")
    if plan.stage == 4 and dataset is None:
        dataset_path = workdir / "text_au_dataset.json"
        if dataset_path.exists():
            from ..text2au import validate_dataset_file
            dataset = validate_dataset_file(dataset_path)
        else:
            dataset = build_seed_dataset()

    before = {name: file_sha256(workdir / name) for name in plan.frozen_files}
    scenario = scenario or SyntheticScenario()
    torch.manual_seed(plan.seed)
    np.random.seed(plan.seed % (2**31))

    runner = {0: _run_stage0, 1: _run_stage1, 2: _run_stage2,
              3: _run_stage3, 4: _run_stage4}[plan.stage]
    curve = runner(plan, config, workdir, scenario, dataset, resume)

    after = {name: file_sha256(workdir / name) for name in plan.frozen_files}
    changed = [n for n in before if before[n] != after[n]]
    if changed:
        raise RuntimeError(f"stage {plan.stage} mutated frozen checkpoints: {changed}")

    checkpoint = workdir / OUTPUT_FILES[plan.stage][-1]
    (workdir / f"stage{plan.stage}_curve.json").write_text(json.dumps(curve))
    return StageResult(plan=plan, checkpoint=checkpoint, loss_curve=curve,
                       frozen_hashes=after)


# -- stage bodies -------------------------------------------------------------


def _run_stage0(plan, config, workdir, scenario, dataset, resume):
    gt = scenario.ground_truth_rig()
    cams = scenario.cameras()
    views = [(cam, render_rig(gt, cam, RenderOptions(term_threshold=0.0)))
             for cam in cams]
    init = scenario.ground_truth_rig()
    rng = np.random.default_rng(plan.seed)
    init.positions = init.positions + rng.normal(0, 0.01, init.positions.shape)
    init.colors = np.full_like(init.colors, 0.5)
    tp = Triplane(resolution=config.rig.triplane_resolution,
                  channels=config.rig.triplane_channels,
                  hidden=config.rig.triplane_hidden)
    bounds = AxisAlignedBounds.around(init.positions)
    fitted, tp, curve = fit_rig_photometric(
        init, views, steps=plan.steps, lr=plan.lr,
        lambda_ssim=config.rig.lambda_ssim, views_per_step=plan.batch_size,
        triplane=tp, bounds=bounds, seed=plan.seed)
    save_rig(workdir / "rig.npz", fitted)
    torch.save({"triplane": tp.state_dict(),
                "bounds_lo": bounds.lo, "bounds_hi": bounds.hi,
                "triplane_kwargs": {
                    "resolution": config.rig.triplane_resolution,
                    "channels": config.rig.triplane_channels,
                    "hidden": config.rig.triplane_hidden}},
               workdir / "stage0.pt")
    return curve


def _encoder_config(config) -> EncoderConfig:
    s = config.speech2au
    return EncoderConfig(layer_count=s.layer_count, head_count=s.head_count,
                         hidden_dim=s.hidden_dim,
                         lower_layer_window=s.lower_layer_window,
                         audio_fps=s.audio_fps, video_fps=s.video_fps)


def _run_stage1(plan, config, workdir, scenario, dataset, resume):
    model = SpeechToAUEncoder(_encoder_config(config))
    path = workdir / "stage1.pt"
    if resume and path.exists():
        model.load_state_dict(torch.load(path, weights_only=False)["state"])
    corpus = scenario.corpus()
    # scenario audio features are already at the video rate
    model.config.audio_fps = model.config.video_fps
    curve = train_speech2au(model, [s.audio for s in corpus],
                            [s.au for s in corpus], steps=plan.steps,
                            lr=plan.lr, batch_size=plan.batch_size,
                            lambda_reg=config.speech2au.lambda_reg,
                            lambda_temp=config.speech2au.lambda_temp,
                            seed=plan.seed)
    torch.save({"config": model.config.__dict__, "state": model.state_dict()}, path)
    return curve


def _denoiser_config(config) -> DenoiserConfig:
    d = config.diffusion
    return DenoiserConfig(d_model=d.d_model, layers=d.layers, heads=d.heads,
                          feedforward=d.feedforward, window=d.window,
                          overlap=d.overlap, use_au=d.use_au,
                          use_audio=d.use_audio)


def _geometry_weights(config) -> GeometryWeights:
    d = config.diffusion
    return GeometryWeights(vertex=d.lambda_vertex, motion=d.lambda_motion_geom,
                           deform=d.lambda_deform, lip=d.lambda_lip,
                           lambda_lap=d.lambda_lap)


def _run_stage2(plan, config, workdir, scenario, dataset, resume,
                denoiser_cls=TransformerDenoiser, name="stage2.pt"):
    mesh = scenario.mesh
    model = denoiser_cls(vertex_count=mesh.vertex_count,
                         config=_denoiser_config(config),
                         num_steps=config.diffusion.num_steps)
    path = workdir / name
    if resume and path.exists():
        model.load_state_dict(torch.load(path, weights_only=False)["state"])
    schedule = NoiseSchedule.cosine(config.diffusion.num_steps)
    curve = train_motion_diffusion(
        model, schedule, scenario.corpus(), mesh.vertices,
        neighbor_mean_matrix(mesh.adjacency()), lip_vertices(mesh),
        steps=plan.steps, lr=plan.lr, batch_size=plan.batch_size,
        weights=_geometry_weights(config), grad_clip=config.training.grad_clip,
        seed=plan.seed, cosine_anneal=config.training.cosine_anneal)
    torch.save({"config": model.config.__dict__, "state": model.state_dict(),
                "kind": denoiser_cls.__name__,
                "num_steps": config.diffusion.num_steps,
                "vertex_count": mesh.vertex_count}, path)
    return curve


def _run_stage3(plan, config, workdir, scenario, dataset, resume):
    rig = load_rig(workdir / "rig.npz")
    v = rig.facial_count
    fl = FeatureLine(gaussian_count=v, seed=plan.seed)
    rotnet = RotNet(hidden=config.decoders.hidden)
    opcnet = OPCNet(hidden=config.decoders.hidden)
    path = workdir / "stage3.pt"
    if resume and path.exists():
        payload = torch.load(path, weights_only=False)
        fl.load_state_dict(payload["featureline"])
        rotnet.load_state_dict(payload["rotnet"])
        opcnet.load_state_dict(payload["opcnet"])

    corpus = scenario.corpus()
    cams = scenario.cameras()
    tau = default_tau(scenario.mesh.bbox_diagonal())
    dec = config.decoders
    canon_quats = torch.tensor(rig.quats[:v])
    canon_logit = torch.tensor(rig.logit_opacities[:v])
    canon_pos = torch.tensor(rig.positions[:v])
    nf_scales = torch.tensor(rig.scales)
    colors = torch.tensor(rig.colors)

    params = list(fl.parameters()) + list(rotnet.parameters()) + list(opcnet.parameters())
    opt = torch.optim.AdamW(params, lr=plan.lr, weight_decay=0.01)
    rng = np.random.default_rng(plan.seed)
    curve = []
    for _ in range(plan.steps):
        loss = torch.zeros((), dtype=torch.float64)
        for _ in range(plan.batch_size):
            s = corpus[int(rng.integers(len(corpus)))]
            t = int(rng.integers(s.offsets.shape[0]))
            cam = cams[int(rng.integers(len(cams)))]
            offsets = s.offsets[t]
            target = _frame_target(scenario, rig, offsets, cam)
            code = AUCode.from_clamped(s.au[t])

            pos, quats, opac = decode_frame_torch(
                canon_quats, canon_logit, canon_pos,
                torch.tensor(offsets), code, fl, rotnet, opcnet)
            full_pos = torch.cat([pos, torch.tensor(
                rig.positions[v:] + drive_nonfacial(rig, offsets))])
            full_quats = torch.cat([quats, torch.tensor(rig.quats[v:])])
            full_opac = torch.cat([opac, torch.tensor(rig.opacities[v:])])
            image = render_torch(full_pos, nf_scales, full_quats, full_opac,
                                 colors, cam)
            delta_mu = pos - canon_pos
            delta_alpha = opac - torch.sigmoid(canon_logit)
            loss = loss + reconstruction_loss(image, torch.tensor(target),
                                              config.rig.lambda_ssim) \
                + featureline_reg(fl, dec.lambda_sparse, dec.lambda_smooth) \
                + opcmotion_loss(delta_mu, delta_alpha, dec.gamma,
                                 dec.lambda_opcmotion) \
                + distance_loss(delta_mu, tau, dec.lambda_move)
        loss = loss / plan.batch_size
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(params, config.training.grad_clip)
        opt.step()
        curve.append(float(loss.detach()))

    torch.save({"featureline": fl.state_dict(), "rotnet": rotnet.state_dict(),
                "opcnet": opcnet.state_dict(), "hidden": config.decoders.hidden,
                "gaussian_count": v}, path)
    return curve


def _frame_target(scenario, rig: GaussianRig, offsets: np.ndarray, cam) -> np.ndarray:
    from ..rig import assemble_frame
    from ..splat.render import render_gaussians
    arrays = assemble_frame(rig, offsets)
    return render_gaussians(*arrays, cam, RenderOptions(term_threshold=0.0))


def _run_stage4(plan, config, workdir, scenario, dataset, resume):
    t = config.text2au
    controller_config = ControllerConfig(
        focal_alpha=t.focal_alpha, focal_gamma=t.focal_gamma,
        infonce_temperature=t.infonce_temperature, lambda_bce=t.lambda_bce,
        lambda_infonce=t.lambda_infonce, lr=t.lr, weight_decay=t.weight_decay,
        batch_size=t.batch_size, epochs=plan.steps)
    model = TextToAUController(controller_config)
    path = workdir / "stage4.pt"
    if resume and path.exists():
        model.load_state_dict(torch.load(path, weights_only=False)["state"])
    curve = train_controller(model, dataset, epochs=plan.steps, seed=plan.seed)
    torch.save({"config": controller_config.__dict__, "state": model.state_dict()},
               path)
    return curve


# -- checkpoint loading --------------------------------------------------------


def load_stage0(workdir: Path) -> tuple[GaussianRig, Triplane, AxisAlignedBounds]:
    rig = load_rig(Path(workdir) / "rig.npz")
    payload = torch.load(Path(workdir) / "stage0.pt", weights_only=False)
    tp = Triplane(**payload["triplane_kwargs"])
    tp.load_state_dict(payload["triplane"])
    bounds = AxisAlignedBounds(payload["bounds_lo"], payload["bounds_hi"])
    return rig, tp, bounds


def load_stage1(workdir: Path) -> SpeechToAUEncoder:
    payload = torch.load(Path(workdir) / "stage1.pt", weights_only=False)
    model = SpeechToAUEncoder(EncoderConfig(**payload["config"]))
    model.load_state_dict(payload["state"])
    return model


def load_stage2(workdir: Path, name: str = "stage2.pt"):
    payload = torch.load(Path(workdir) / name, weights_only=False)
    cls = {"TransformerDenoiser": TransformerDenoiser,
           "GRUDenoiser": GRUDenoiser}[payload["kind"]]
    model = cls(vertex_count=payload["vertex_count"],
                config=DenoiserConfig(**payload["config"]),
                num_steps=payload["num_steps"])
    model.load_state_dict(payload["state"])
    schedule = NoiseSchedule.cosine(payload["num_steps"])
    return model, schedule


def load_stage3(workdir: Path) -> tuple[FeatureLine, RotNet, OPCNet]:
    payload = torch.load(Path(workdir) / "stage3.pt", weights_only=False)
    fl = FeatureLine(gaussian_count=payload["gaussian_count"])
    fl.load_state_dict(payload["featureline"])
    rotnet = RotNet(hidden=payload["hidden"])
    rotnet.load_state_dict(payload["rotnet"])
    opcnet = OPCNet(hidden=payload["hidden"])
    opcnet.load_state_dict(payload["opcnet"])
    return fl, rotnet, opcnet


def load_stage4(workdir: Path) -> TextToAUController:
    payload = torch.load(Path(workdir) / "stage4.pt", weights_only=False)
    cfg = dict(payload["config"])
    cfg["betas"] = tuple(cfg["betas"])
    model = TextToAUController(ControllerConfig(**cfg))
    model.load_state_dict(payload["state"])
    return model
