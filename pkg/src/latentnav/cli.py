"""Command line entry points: train, eval, plot, render, gen-scenes."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="YAML run config")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")


def _load_config(args):
    import dataclasses

    from .config import apply_ablation, load_run_config

    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "ablation", None):
        cfg = apply_ablation(cfg, args.ablation)
    return cfg


def _cmd_train(args) -> int:
    from .config import save_run_config
    from .training import Trainer

    cfg = _load_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_run_config(cfg, out_dir / "config.yaml")
    trainer = Trainer(
        cfg.sim, cfg.scenario, cfg.camera, cfg.reward, cfg.termination,
        cfg.nets, cfg.trainer, cfg.seed, out_dir,
    )
    summary = trainer.run()
    print(
        "training finished: "
        f"{summary['steps']} steps, {summary['episodes']} episodes, "
        f"{summary['rounds']} rounds, {summary['updates']} updates, "
        f"{summary['incidents']} incidents"
        + (f", best eval success {summary['best_success']:.2f}"
           if summary["best_success"] >= 0 else "")
    )
    return 0


def _cmd_eval(args) -> int:
    from .evaluation import evaluate, write_report
    from .nets import load_checkpoint
    from .scenario import read_scene_set

    cfg = _load_config(args)
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        print(f"error: checkpoint not found: {ckpt}", file=sys.stderr)
        return 1
    model, extra = load_checkpoint(ckpt)
    scenes = read_scene_set(args.scenes)
    seed = cfg.seed if args.seed is None else args.seed
    report = evaluate(
        model, scenes, cfg.sim, cfg.camera, cfg.reward, cfg.termination,
        seed=seed,
        record_dir=Path(args.out) / "recordings" if args.record else None,
        record_limit=args.record,
    )
    write_report(report, args.out)
    print("\n".join(report.summary_lines()))
    return 0


def _cmd_gen_scenes(args) -> int:
    from .scenario import generate_valid_scene, write_scene_set

    cfg = _load_config(args)
    seed = cfg.seed if args.seed is None else args.seed
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    scenes = [
        generate_valid_scene(rng, cfg.scenario, cfg.sim.robot_radius)
        for _ in range(args.count)
    ]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_scene_set(scenes, out)
    print(f"wrote {len(scenes)} scenes to {out}")
    return 0


def _cmd_plot(args) -> int:
    from .plots import plot_training_curves

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.runs:
        missing = [d for d in args.runs if not (Path(d) / "episodes.jsonl").exists()]
        if missing:
            print(f"error: no episodes.jsonl under: {missing}", file=sys.stderr)
            return 1
        plot_training_curves(args.runs, out / "training_curves.png", window=args.window)
        print(f"wrote {out / 'training_curves.png'}")
    if args.recon_checkpoint:
        code = _plot_reconstruction(args, out)
        if code != 0:
            return code
    if not args.runs and not args.recon_checkpoint:
        print("error: nothing to plot (pass --runs and/or --recon-checkpoint)", file=sys.stderr)
        return 1
    return 0


def _plot_reconstruction(args, out: Path) -> int:
    from .episodes import EnvSession
    from .episodes import run_episode
    from .evaluation import reconstruct_episode
    from .nets import load_checkpoint
    from .plots import plot_reconstruction
    from .scenario import read_scene_set
    from .training import WorldModelPolicy

    cfg = _load_config(args)
    ckpt = Path(args.recon_checkpoint)
    if not ckpt.exists():
        print(f"error: checkpoint not found: {ckpt}", file=sys.stderr)
        return 1
    if not args.scenes:
        print("error: --recon-checkpoint needs --scenes", file=sys.stderr)
        return 1
    model, _ = load_checkpoint(ckpt)
    scenes = read_scene_set(args.scenes)
    idx = args.scene_index
    if not (0 <= idx < len(scenes)):
        print(f"error: scene index {idx} out of range", file=sys.stderr)
        return 1
    seed = cfg.seed if args.seed is None else args.seed
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(idx,)))
    session = EnvSession(scenes[idx], cfg.sim, cfg.camera, cfg.reward, cfg.termination, rng)
    policy = WorldModelPolicy(model, num_envs=1, stochastic=False)
    episode, stats = run_episode(session, policy)
    recon = reconstruct_episode(model, episode)
    rmse = plot_reconstruction(recon, out / "reconstruction.png")
    print(f"wrote {out / 'reconstruction.png'} (episode outcome: {stats['outcome']})")
    for label, value in rmse.items():
        print(f"  rmse {label:9s} {value:.5f}")
    return 0


def _cmd_render(args) -> int:
    from .observation import read_seg_log, save_strip

    path = Path(args.episode)
    if not path.exists():
        print(f"error: image log not found: {path}", file=sys.stderr)
        return 1
    frames = read_seg_log(path)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_strip(frames, out, max_frames=args.frames, scale=args.scale)
    print(f"wrote {out} ({frames.shape[0]} frames in log)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentnav",
        description="Latent world-model navigation: training, evaluation, and tooling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a training session")
    _add_config_args(p_train)
    p_train.add_argument("--out", required=True, help="output directory for logs/checkpoints")
    p_train.add_argument(
        "--ablation", choices=["none", "no_nonvisual", "no_term_predictor"], default="none"
    )
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a frozen scene set")
    _add_config_args(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--scenes", required=True, help="scene set file")
    p_eval.add_argument("--out", required=True, help="report output directory")
    p_eval.add_argument(
        "--record", type=int, default=0, metavar="N",
        help="record step logs and image logs for the first N episodes",
    )
    p_eval.set_defaults(func=_cmd_eval, ablation=None)

    p_gen = sub.add_parser("gen-scenes", help="sample a reachable scene set")
    _add_config_args(p_gen)
    p_gen.add_argument("--count", type=int, default=100)
    p_gen.add_argument("--out", required=True, help="scene set file to write")
    p_gen.set_defaults(func=_cmd_gen_scenes, ablation=None)

    p_plot = sub.add_parser("plot", help="training curves and reconstruction overlays")
    _add_config_args(p_plot)
    p_plot.add_argument("--runs", nargs="*", default=[], help="training run directories")
    p_plot.add_argument("--window", type=int, default=100)
    p_plot.add_argument("--out", required=True, help="figure output directory")
    p_plot.add_argument("--recon-checkpoint", default=None, help="checkpoint for a reconstruction overlay")
    p_plot.add_argument("--scenes", default=None, help="scene set for the reconstruction episode")
    p_plot.add_argument("--scene-index", type=int, default=0)
    p_plot.set_defaults(func=_cmd_plot, ablation=None)

    p_render = sub.add_parser("render", help="convert an episode image log to a PNG strip")
    p_render.add_argument("--episode", required=True, help="path to a .seg image log")
    p_render.add_argument("--out", required=True, help="PNG path to write")
    p_render.add_argument("--frames", type=int, default=12, help="max frames in the strip")
    p_render.add_argument("--scale", type=int, default=4, help="pixel upscaling factor")
    p_render.set_defaults(func=_cmd_render)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
