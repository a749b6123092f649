"""Episode execution: stepping one environment and recording transitions."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .buffer import Episode, Transition
from .observation import CameraConfig, nonvisual_observation, render
from .rewards import (
    RewardBreakdown,
    RewardConfig,
    TerminationConfig,
    compute_reward,
    termination_indicators,
)
from .sim import (
    RobotState,
    Scene,
    SimConfig,
    closest_obstacle_distance,
    spawn_state,
    step,
    terminal_status,
)


@dataclass
class StepResult:
    """Everything produced by one environment step."""

    image: np.ndarray
    nonvisual: np.ndarray
    action: np.ndarray          # increment command clipped to the per-step bounds
    reward: float
    breakdown: RewardBreakdown
    f_success: float
    f_failure: float
    status: str                 # "none" | "success" | "failure" | "timeout"
    near_miss: bool


class EnvSession:
    """One scene bound to a simulator state, renderer, and reward evaluator.

    Rewards and indicator values are evaluated at the post-action state, so a
    terminal step records the triggered indicator at exactly 1.
    """

    def __init__(
        self,
        scene: Scene,
        sim_cfg: SimConfig,
        cam_cfg: CameraConfig,
        reward_cfg: RewardConfig,
        term_cfg: TerminationConfig,
        rng: np.random.Generator,
    ):
        self.scene = scene
        self.sim_cfg = sim_cfg
        self.cam_cfg = cam_cfg
        self.reward_cfg = reward_cfg
        self.term_cfg = term_cfg
        self.rng = rng
        self.state = spawn_state()
        self.steps = 0
        self.done = False

    def observe(self) -> tuple[np.ndarray, np.ndarray]:
        """Render the current image and proprioceptive vector."""
        image = render(self.state, self.scene, self.cam_cfg)
        nonvis = nonvisual_observation(self.state, self.scene, self.sim_cfg)
        return image, nonvis

    def initial_transition(self) -> Transition:
        image, nonvis = self.observe()
        f_s, f_f = termination_indicators(self.state, self.scene, self.term_cfg, self.sim_cfg)
        zeros = np.zeros(4, dtype=np.float32)
        return Transition(image, nonvis, zeros, 0.0, f_s, f_f)

    def apply(self, action: np.ndarray) -> StepResult:
        """Advance one control period and score the resulting state."""
        if self.done:
            raise RuntimeError("episode already finished")
        self.state = step(self.state, action, self.sim_cfg, self.rng)
        self.steps += 1

        clipped = np.asarray(action, dtype=float).copy()
        clipped[:3] = np.clip(clipped[:3], -self.sim_cfg.dv_limit, self.sim_cfg.dv_limit)
        clipped[3] = np.clip(clipped[3], -self.sim_cfg.dh_limit, self.sim_cfg.dh_limit)

        image = render(self.state, self.scene, self.cam_cfg)
        nonvis = nonvisual_observation(self.state, self.scene, self.sim_cfg)
        breakdown = compute_reward(
            self.state, self.scene, clipped, image, self.reward_cfg, self.sim_cfg
        )
        f_s, f_f = termination_indicators(self.state, self.scene, self.term_cfg, self.sim_cfg)

        status = terminal_status(self.state, self.scene, self.sim_cfg)
        if status == "none" and self.steps >= self.sim_cfg.max_steps:
            status = "timeout"
        self.done = status != "none"

        rho = closest_obstacle_distance(self.state, self.scene, self.sim_cfg)
        near_miss = rho < 0.0 and status != "failure"

        return StepResult(
            image=image,
            nonvisual=nonvis,
            action=clipped,
            reward=breakdown.total,
            breakdown=breakdown,
            f_success=f_s,
            f_failure=f_f,
            status=status,
            near_miss=near_miss,
        )


def run_episode(
    session: EnvSession,
    policy,
    step_writer=None,
) -> tuple[Episode, dict]:
    """Roll a policy through one episode.

    policy maps (image, nonvisual) to an action and may be stateful; it is
    reset() first when it has a reset method. step_writer, if given, receives
    one dict per record for JSONL logging. Returns the recorded episode and
    summary stats.
    """
    if session.done:
        raise ValueError("session has already finished its episode")
    if hasattr(policy, "reset"):
        policy.reset()
    transitions = [session.initial_transition()]
    frames = [transitions[0].image]
    near_misses = 0
    if step_writer is not None:
        first = transitions[0]
        step_writer(
            {
                "step": 0,
                "action": [0.0, 0.0, 0.0, 0.0],
                "reward": 0.0,
                "breakdown": None,
                "f_success": first.f_success,
                "f_failure": first.f_failure,
                "nonvisual": [float(v) for v in first.nonvisual],
                "status": "none",
            }
        )
    image, nonvis = transitions[0].image, transitions[0].nonvisual
    while not session.done:
        action = policy.act(image, nonvis)
        result = session.apply(action)
        transitions.append(
            Transition(
                result.image,
                result.nonvisual,
                result.action.astype(np.float32),
                result.reward,
                result.f_success,
                result.f_failure,
            )
        )
        frames.append(result.image)
        near_misses += int(result.near_miss)
        if step_writer is not None:
            step_writer(
                {
                    "step": session.steps,
                    "action": [float(v) for v in result.action],
                    "reward": result.reward,
                    "breakdown": result.breakdown.as_dict(),
                    "f_success": result.f_success,
                    "f_failure": result.f_failure,
                    "nonvisual": [float(v) for v in result.nonvisual],
                    "status": result.status,
                }
            )
        image, nonvis = result.image, result.nonvisual
        status = result.status
    episode = Episode.from_transitions(transitions, status)
    stats = {
        "steps": episode.steps,
        "return": episode.total_reward,
        "outcome": episode.outcome,
        "near_miss_steps": near_misses,
    }
    return episode, stats


class JsonlWriter:
    """Append-only JSONL file writer with deterministic formatting."""

    def __init__(self, path):
        self._fh = open(path, "w")

    def write(self, record: dict) -> None:
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")

    def flush(self) -> None:
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
