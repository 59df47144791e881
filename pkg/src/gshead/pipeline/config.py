"""TOML configuration: one section per module, round-trip safe.

The writer emits a stable canonical form so serialize -> parse -> serialize is
a fixed point, which the config tests pin.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib


@dataclass
class AUCodeSection:
    enhance: float = 0.5          # amplification for activated units
    suppress: float = 0.3         # attenuation for suppressed units
    epsilon: float = 1e-6         # aggregation-weight denominator guard


@dataclass
class Speech2AUSection:
    layer_count: int = 4
    head_count: int = 4
    hidden_dim: int = 256
    lower_layer_window: int = 5
    audio_fps: float = 50.0
    video_fps: float = 25.0
    lambda_reg: float = 1.0
    lambda_temp: float = 0.1
    lr: float = 1e-4
    batch_size: int = 8
    steps: int = 300


@dataclass
class RigSection:
    nonfacial_count: int = 2000
    canonical_frame: int = 0      # which capture frame is the speech-free moment
    triplane_resolution: int = 64
    triplane_channels: int = 16
    triplane_hidden: int = 64
    lambda_ssim: float = 0.2
    image_size: int = 512
    steps: int = 500
    lr: float = 5e-3
    batch_size: int = 4
    densify: bool = True          # densify/prune only during this stage


@dataclass
class DiffusionSection:
    num_steps: int = 50
    d_model: int = 256
    layers: int = 4
    heads: int = 4
    feedforward: int = 512
    window: int = 32
    overlap: int = 8
    lambda_vertex: float = 1.0
    lambda_motion_geom: float = 0.5
    lambda_deform: float = 0.1
    lambda_lip: float = 0.8
    lambda_lap: float = 1.0
    lr: float = 1e-4
    batch_size: int = 8
    steps: int = 400
    use_au: bool = True
    use_audio: bool = True


@dataclass
class DecoderSection:
    hidden: int = 64
    gamma: float = 1.0            # motion/opacity balance, normalized scene units
    lambda_opcmotion: float = 0.001
    lambda_sparse: float = 0.01
    lambda_smooth: float = 0.001
    lambda_move: float = 0.1
    tau_fraction: float = 0.05    # of the template bbox diagonal
    lr: float = 1e-4
    batch_size: int = 4
    steps: int = 200


@dataclass
class Text2AUSection:
    focal_alpha: float = 0.35
    focal_gamma: float = 3.0
    infonce_temperature: float = 0.07
    lambda_bce: float = 1.0
    lambda_infonce: float = 0.005
    lr: float = 1e-4
    weight_decay: float = 0.01
    epochs: int = 300
    batch_size: int = 16          # controller batch within the stage plan
    threshold: float = 0.5


@dataclass
class RenderSection:
    tile_size: int = 16
    background: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    term_threshold: float = 1e-4
    near: float = 0.01
    width: int = 128
    height: int = 128


@dataclass
class TrainingSection:
    seed: int = 0
    grad_clip: float = 1.0
    warmup_steps: int = 100
    cosine_anneal: bool = True


@dataclass
class PipelineConfig:
    aucode: AUCodeSection = field(default_factory=AUCodeSection)
    speech2au: Speech2AUSection = field(default_factory=Speech2AUSection)
    rig: RigSection = field(default_factory=RigSection)
    diffusion: DiffusionSection = field(default_factory=DiffusionSection)
    decoders: DecoderSection = field(default_factory=DecoderSection)
    text2au: Text2AUSection = field(default_factory=Text2AUSection)
    render: RenderSection = field(default_factory=RenderSection)
    training: TrainingSection = field(default_factory=TrainingSection)


_SECTIONS = {
    "aucode": AUCodeSection,
    "speech2au": Speech2AUSection,
    "rig": RigSection,
    "diffusion": DiffusionSection,
    "decoders": DecoderSection,
    "text2au": Text2AUSection,
    "render": RenderSection,
    "training": TrainingSection,
}


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, str):
        return f'"{value}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    raise TypeError(f"unsupported config value type: {type(value)}")


def dumps(config: PipelineConfig) -> str:
    lines = []
    for section_name in _SECTIONS:
        section = getattr(config, section_name)
        lines.append(f"[{section_name}]")
        for key, value in asdict(section).items():
            lines.append(f"{key} = {_format_value(value)}")
        lines.append("")
    return "\n".join(lines)


def loads(text: str) -> PipelineConfig:
    doc = tomllib.loads(text)
    kwargs = {}
    for section_name, section_cls in _SECTIONS.items():
        data = doc.get(section_name, {})
        known = {f.name for f in fields(section_cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown keys in [{section_name}]: {sorted(unknown)}")
        kwargs[section_name] = section_cls(**data)
    return PipelineConfig(**kwargs)


def save_config(path: str | Path, config: PipelineConfig) -> None:
    Path(path).write_text(dumps(config))


def load_config(path: str | Path) -> PipelineConfig:
    return loads(Path(path).read_text())
