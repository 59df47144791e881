"""Training orchestration, synthetic data, configuration, CLI and HTTP service."""

from .animate import AnimationResult, PipelineBundle, animate, render_au_code, write_session
from .config import PipelineConfig, load_config, save_config
from .stages import (MissingCheckpointError, StagePlan, StageResult,
                     build_stage_plan, run_stage)
from .synthetic import ScenarioSpec, SyntheticScenario, load_corpus, write_corpus

__all__ = [
    "AnimationResult", "MissingCheckpointError", "PipelineBundle",
    "PipelineConfig", "ScenarioSpec", "StagePlan", "StageResult",
    "SyntheticScenario", "animate", "build_stage_plan", "load_config",
    "load_corpus", "render_au_code", "run_stage", "save_config",
    "write_corpus", "write_session",
]
