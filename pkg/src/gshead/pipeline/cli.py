"""Command-line interface: train / animate / eval / serve / synth."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import PipelineConfig, load_config, save_config


def _load_cfg(args) -> PipelineConfig:
    if args.config and Path(args.config).exists():
        return load_config(args.config)
    return PipelineConfig()


def cmd_train(args) -> int:
    from .stages import build_stage_plan, run_stage
    config = _load_cfg(args)
    plan = build_stage_plan(args.stage, config, steps=args.steps)
    result = run_stage(plan, config, args.workdir, resume=args.resume)
    final = f"{result.final_loss:.6f}" if result.final_loss is not None else "n/a"
    print(f"stage {args.stage} done: checkpoint {result.checkpoint}, "
          f"final loss {final}")
    return 0


def cmd_animate(args) -> int:
    from ..audio_features import load_features
    from .animate import PipelineBundle, animate, write_session
    config = _load_cfg(args)
    bundle = PipelineBundle.load(args.workdir, config)
    audio = load_features(args.audio)
    camera = bundle.cameras[args.camera % len(bundle.cameras)]
    frames = args.frames if args.frames is not None else -1
    result = animate(bundle, audio, args.prompt, camera,
                     frames=frames, seed=config.training.seed)
    write_session(args.out, result)
    print(f"wrote {len(result.frames)} frames + trace to {args.out}")
    return 0


def cmd_eval(args) -> int:
    from .suites import ablation_suite, gradient_suite, oracle_suite
    if args.suite == "gradients":
        results = gradient_suite()
    elif args.suite == "oracle":
        results = oracle_suite(scenes=args.scenes)
    else:
        rows = ablation_suite(_load_cfg(args), steps=args.steps)
        print(f"{'variant':<16} {'vertex':>10} {'motion':>10} {'geometry':>10}")
        for row in rows:
            print(f"{row.name:<16} {row.vertex:>10.5f} {row.motion:>10.5f} "
                  f"{row.geometry:>10.5f}")
        return 0
    failed = 0
    for res in results:
        print(res.line())
        failed += not res.passed
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def cmd_serve(args) -> int:
    from .animate import PipelineBundle
    from .service import serve
    config = _load_cfg(args)
    bundle = PipelineBundle.load(args.workdir, config)
    sessions = Path(args.workdir) / "sessions"
    serve(bundle, port=args.port, sessions_dir=sessions, host=args.host)
    return 0


def cmd_synth(args) -> int:
    from ..text2au import save_seed_dataset
    from .synthetic import ScenarioSpec, SyntheticScenario, write_corpus
    out = Path(args.out)
    scenario = SyntheticScenario(ScenarioSpec(seed=args.seed))
    manifest = write_corpus(scenario, out / "corpus")
    save_seed_dataset(out / "text_au_dataset.json")
    save_config(out / "config.toml", PipelineConfig())
    for i, cam in enumerate(scenario.cameras()):
        cam.save(out / f"camera{i}.json")
    print(f"scenario written under {out} (manifest: {manifest})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gshead",
        description="Emotion-editable Gaussian talking head pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--stage", type=int, required=True, choices=range(0, 5),
                   help="0 canonical rig, 1 speech2au, 2 diffusion, "
                        "3 decoders, 4 text2au")
    p.add_argument("--config", default=None)
    p.add_argument("--workdir", default="workdir")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("animate", help="drive the head with audio (+ prompt)")
    p.add_argument("--audio", required=True, help=".wav or .npz feature container")
    p.add_argument("--prompt", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--workdir", default="workdir")
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--camera", type=int, default=0)
    p.set_defaults(fn=cmd_animate)

    p = sub.add_parser("eval", help="verification suites")
    p.add_argument("--suite", required=True,
                   choices=("gradients", "oracle", "ablation"))
    p.add_argument("--config", default=None)
    p.add_argument("--scenes", type=int, default=50)
    p.add_argument("--steps", type=int, default=300)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("serve", help="HTTP inference service")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--config", default=None)
    p.add_argument("--workdir", default="workdir")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("synth", help="generate the synthetic scenario + seed data")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
