"""Deterministic policy evaluation over frozen scene sets."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .episodes import EnvSession, JsonlWriter, run_episode
from .nets import LatentState, WorldModel
from .observation import CameraConfig, write_seg_log
from .rewards import RewardConfig, TerminationConfig
from .sim import Scene, SimConfig

ABLATIONS = ("none", "no_nonvisual", "no_term_predictor")


@dataclass(frozen=True)
class EvalReport:
    """Aggregate metrics over one scene set.

    mean_return is the per-episode sum of step rewards averaged over scenes;
    mean_length counts environment steps (time limit caps it at the episode
    step budget).
    """

    success_rate: float
    mean_return: float
    mean_length: float
    episodes: tuple[dict, ...]
    seed: int
    checkpoint_steps: int | None = None

    def summary_lines(self) -> list[str]:
        n = len(self.episodes)
        outcomes = [e["outcome"] for e in self.episodes]
        near = sum(e["near_miss_steps"] > 0 for e in self.episodes)
        return [
            f"scenes evaluated      {n}",
            f"success rate          {self.success_rate:.3f}",
            f"mean episode reward   {self.mean_return:.3f}",
            f"mean episode length   {self.mean_length:.2f}",
            f"failures (falls)      {outcomes.count('failure')}",
            f"timeouts              {outcomes.count('timeout')}",
            f"episodes with contact {near}",
            f"eval seed             {self.seed}",
        ]


def evaluate(
    model: WorldModel,
    scenes: list[Scene],
    sim_cfg: SimConfig,
    cam_cfg: CameraConfig,
    reward_cfg: RewardConfig,
    term_cfg: TerminationConfig,
    seed: int,
    record_dir=None,
    record_limit: int = 0,
) -> EvalReport:
    """Run the deterministic policy once per scene and aggregate outcomes.

    Each scene gets an rng stream derived from (seed, scene index), so the
    report is reproducible regardless of evaluation order. With record_dir
    set, the first record_limit episodes are written out as JSONL step logs
    plus binary segmentation-image logs.
    """
    from .training import WorldModelPolicy

    if cam_cfg.width != model.cfg.image_size or cam_cfg.height != model.cfg.image_size:
        raise ValueError("camera resolution does not match the checkpoint's image size")
    model.eval()
    policy = WorldModelPolicy(model, num_envs=1, stochastic=False)
    records = []
    if record_dir is not None:
        record_dir = Path(record_dir)
        record_dir.mkdir(parents=True, exist_ok=True)

    for idx, scene in enumerate(scenes):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(idx,)))
        session = EnvSession(scene, sim_cfg, cam_cfg, reward_cfg, term_cfg, rng)
        writer = None
        frames_out = None
        if record_dir is not None and idx < record_limit:
            writer = JsonlWriter(record_dir / f"ep_{idx:03d}.jsonl")
            frames_out = record_dir / f"ep_{idx:03d}.seg"
        episode, stats = run_episode(
            session, policy, step_writer=writer.write if writer else None
        )
        if writer is not None:
            writer.close()
            write_seg_log(frames_out, episode.images)
        records.append(
            {
                "scene": idx,
                "outcome": stats["outcome"],
                "return": round(stats["return"], 6),
                "steps": stats["steps"],
                "near_miss_steps": stats["near_miss_steps"],
            }
        )

    n = len(records)
    if n == 0:
        raise ValueError("no scenes to evaluate")
    return EvalReport(
        success_rate=sum(r["outcome"] == "success" for r in records) / n,
        mean_return=float(np.mean([r["return"] for r in records])),
        mean_length=float(np.mean([r["steps"] for r in records])),
        episodes=tuple(records),
        seed=seed,
    )


def write_report(report: EvalReport, out_dir) -> None:
    """Write the human-readable summary and the per-scene JSONL records."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.txt", "w") as fh:
        fh.write("\n".join(report.summary_lines()) + "\n")
    with JsonlWriter(out_dir / "report.jsonl") as writer:
        writer.write(
            {
                "success_rate": report.success_rate,
                "mean_return": round(report.mean_return, 6),
                "mean_length": round(report.mean_length, 3),
                "seed": report.seed,
            }
        )
        for rec in report.episodes:
            writer.write(rec)


@torch.no_grad()
def reconstruct_episode(model: WorldModel, episode) -> dict[str, np.ndarray]:
    """Filter a recorded episode and decode each posterior state.

    Uses posterior means (no sampling), so the output is deterministic. Both
    the proprioception decoder and the reward head are read out per step.
    """
    p = next(model.parameters())
    obs = torch.as_tensor(episode.images)[None]
    nonvis = torch.as_tensor(episode.nonvisual, dtype=p.dtype)[None]
    actions = torch.as_tensor(episode.actions, dtype=p.dtype)[None]
    embeds = model.encode_image(obs)
    state = model.rssm.initial_state(1, p)
    nonvis_hat, reward_hat, term_hat = [], [], []
    for t in range(obs.shape[1]):
        deter, _, _ = model.rssm.prior_step(state, actions[:, t])
        post_in = nonvis[:, t] if model.cfg.posterior_uses_nonvisual else None
        mean, _ = model.rssm.posterior(deter, embeds[:, t], post_in)
        state = LatentState(deter, mean)
        dec = model.decode(state.feature)
        nonvis_hat.append(dec.nonvisual_mean[0])
        reward_hat.append(dec.reward_mean.reshape(()))
        term_hat.append(dec.term_mean[0])
    return {
        "nonvisual_pred": torch.stack(nonvis_hat).numpy(),
        "reward_pred": torch.stack(reward_hat).numpy(),
        "term_pred": torch.stack(term_hat).numpy(),
        "nonvisual_true": episode.nonvisual.copy(),
        "reward_true": episode.rewards.copy(),
        "indicators_true": episode.indicators.copy(),
    }
