#!/usr/bin/env python3
"""Produce the training artifacts that the acceptance suite checks.

Runs nine training sessions back to back (three seeds each of the standard
model, the terminal-indicator ablation, and the proprioception ablation),
then evaluates each run's
best checkpoint on the frozen scene set with the same evaluation seed the
trainer used for its in-loop checks, and finally renders training curves and
a reconstruction overlay. Every stage is detected by its output artifact and
skipped when already present, so the script resumes cleanly after an
interruption. Expect a few hours of wall time on one CPU core.

Usage, from the repository root:

    python3 scripts/run_acceptance.py
"""
from __future__ import annotations

import json
import subprocess
import sys
import time
from pathlib import Path

CONFIG = Path("configs/smoke.yaml")
SCENES = Path("configs/eval_scenes.json")
OUT = Path("runs/acceptance")
SEEDS = (0, 1, 2)
EVAL_SEED_OFFSET = 90_000  # must match the trainer's in-loop evaluation seed
VARIANTS = (("full", None), ("noterm", "no_term_predictor"), ("nonvis", "no_nonvisual"))


def run(argv: list[str]) -> None:
    t0 = time.time()
    print(f"[{time.strftime('%H:%M:%S')}] $ {' '.join(argv)}", flush=True)
    subprocess.run(argv, check=True)
    print(f"[{time.strftime('%H:%M:%S')}] done in {time.time() - t0:.0f}s", flush=True)


def best_checkpoint(run_dir: Path) -> Path:
    best = run_dir / "ckpt_best.pt"
    return best if best.exists() else run_dir / "ckpt_final.pt"


def main() -> int:
    if not CONFIG.exists():
        print(f"error: {CONFIG} not found; run from the repository root", file=sys.stderr)
        return 1
    if not SCENES.exists():
        run([sys.executable, "-m", "latentnav", "gen-scenes", "--config", str(CONFIG),
             "--seed", "424242", "--count", "50", "--out", str(SCENES)])

    summary: dict[str, dict] = {}
    for tag, ablation in VARIANTS:
        for seed in SEEDS:
            run_dir = OUT / f"{tag}_s{seed}"
            if not (run_dir / "ckpt_final.pt").exists():
                argv = [sys.executable, "-m", "latentnav", "train",
                        "--config", str(CONFIG), "--seed", str(seed),
                        "--out", str(run_dir)]
                if ablation:
                    argv += ["--ablation", ablation]
                run(argv)
            else:
                print(f"skip train {run_dir} (ckpt_final.pt exists)", flush=True)

            eval_dir = OUT / f"eval_{tag}_s{seed}"
            if not (eval_dir / "report.jsonl").exists():
                run([sys.executable, "-m", "latentnav", "eval",
                     "--config", str(CONFIG),
                     "--checkpoint", str(best_checkpoint(run_dir)),
                     "--scenes", str(SCENES),
                     "--out", str(eval_dir),
                     "--seed", str(seed + EVAL_SEED_OFFSET),
                     "--record", "2"])
            else:
                print(f"skip eval {eval_dir} (report.jsonl exists)", flush=True)

            episodes = [json.loads(line)
                        for line in (eval_dir / "report.jsonl").read_text().splitlines()]
            successes = sum(e["outcome"] == "success" for e in episodes)
            summary[f"{tag}_s{seed}"] = {
                "success_rate": successes / len(episodes),
                "episodes": len(episodes),
            }

    figures = OUT / "figures"
    if not (figures / "reconstruction.png").exists():
        run_dirs = [str(OUT / f"{tag}_s{seed}") for tag, _ in VARIANTS for seed in SEEDS]
        run([sys.executable, "-m", "latentnav", "plot",
             "--runs", *run_dirs,
             "--out", str(figures),
             "--recon-checkpoint", str(best_checkpoint(OUT / "full_s0")),
             "--scenes", str(SCENES)])
    else:
        print(f"skip plot ({figures / 'reconstruction.png'} exists)", flush=True)

    with open(OUT / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
