"""Dense navigation reward, visual attention shaping, and terminal indicators.

The per-step reward is a weighted sum of seven bounded terms: progress toward
the target, facing it, keeping it centered in view, head-motion and head-
deflection penalties, obstacle clearance, and a gait-speed penalty. Terminal
events are additionally scored by smooth likelihood-style indicators that
reach exactly 1 when the corresponding terminal condition holds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .observation import CLASS_TARGET, relative_target_polar
from .sim import RobotState, Scene, SimConfig, closest_obstacle_distance


@dataclass(frozen=True)
class RewardConfig:
    """Weights and shaping constants of the step reward."""

    weight_distance: float = 1.0
    weight_bearing: float = 0.2
    weight_attention: float = 0.2
    weight_head_action: float = 0.08
    weight_head_position: float = 0.08
    weight_clearance: float = 0.2
    weight_velocity: float = 0.35
    speed_sigmoid_gain: float = 8.0     # slope of the gait-speed penalty sigmoid
    speed_sigmoid_offset: float = -3.0  # shifts the sigmoid knee toward higher speeds


@dataclass(frozen=True)
class TerminationConfig:
    """Terminal indicator decay rates and their weights in the actor objective."""

    decay_success: float = 1.5      # [1/m] fall-off of the arrival indicator
    decay_failure: float = 5.0      # [1/rad] fall-off of the fall indicator
    lambda_success: float = -1150.0
    lambda_failure: float = 3250.0
    swap_lambdas: bool = False      # exchange the two weights without editing both

    def resolved_lambdas(self) -> tuple[float, float]:
        """Weights actually applied to (success, failure) indicator means."""
        if self.swap_lambdas:
            return self.lambda_failure, self.lambda_success
        return self.lambda_success, self.lambda_failure


@dataclass(frozen=True)
class RewardBreakdown:
    """Individual reward terms (unweighted) plus the weighted total."""

    distance: float
    bearing: float
    attention: float
    head_action: float
    head_position: float
    clearance: float
    velocity: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return {
            "distance": self.distance,
            "bearing": self.bearing,
            "attention": self.attention,
            "head_action": self.head_action,
            "head_position": self.head_position,
            "clearance": self.clearance,
            "velocity": self.velocity,
            "total": self.total,
        }


@lru_cache(maxsize=8)
def _importance_map_cached(height: int, width: int) -> np.ndarray:
    v = np.linspace(-1.0, 1.0, height) if height > 1 else np.zeros(1)
    u = np.linspace(-1.0, 1.0, width) if width > 1 else np.zeros(1)
    m = 1.0 - u[None, :] ** 2 - v[:, None] ** 2
    m = np.clip(m, 0.0, 1.0)
    m.setflags(write=False)
    return m


def importance_map(height: int, width: int) -> np.ndarray:
    """Pixel importance of shape (height, width): 1 at the center, falling
    quadratically to exactly 0 on the border midpoints, clipped to [0, 1]."""
    return _importance_map_cached(int(height), int(width))


def attention_reward(seg_image: np.ndarray) -> float:
    """Importance-weighted fraction of the view occupied by the target class.

    Zero when the target is not visible at all.
    """
    mask = np.asarray(seg_image) == CLASS_TARGET
    total = float(mask.sum())
    if total == 0.0:
        return 0.0
    imp = importance_map(*mask.shape)
    return float(imp[mask].sum() / total)


def compute_reward(
    state: RobotState,
    scene: Scene,
    action: np.ndarray,
    seg_image: np.ndarray,
    cfg: RewardConfig,
    sim_cfg: SimConfig,
) -> RewardBreakdown:
    """Evaluate the step reward at a post-action state.

    action is the increment command that produced the state; its head
    component is normalized by the per-step bound for the head-motion
    penalty. All terms are bounded; every term except the speed penalty lies
    in [-1, 1].
    """
    action = np.asarray(action, dtype=float).reshape(-1)
    d, bearing = relative_target_polar(state, scene.target)

    r_distance = 1.0 - d / scene.d0
    r_bearing = -abs(bearing) / math.pi
    r_attention = attention_reward(seg_image)

    dh_norm = float(np.clip(action[3] / sim_cfg.dh_limit, -1.0, 1.0))
    r_head_action = -(dh_norm ** 2)
    h_norm = state.head_yaw / sim_cfg.head_yaw_limit
    r_head_position = -(h_norm ** 2)

    rho = closest_obstacle_distance(state, scene, sim_cfg)
    r_clearance = float(np.clip(-(1.0 - rho), -1.0, 0.0)) if math.isfinite(rho) else 0.0

    speed = float(np.linalg.norm(state.velocity))
    k = 1.0 / (1.0 + math.exp(-cfg.speed_sigmoid_gain * speed - cfg.speed_sigmoid_offset))
    r_velocity = 1.0 - k

    total = (
        cfg.weight_distance * r_distance
        + cfg.weight_bearing * r_bearing
        + cfg.weight_attention * r_attention
        + cfg.weight_head_action * r_head_action
        + cfg.weight_head_position * r_head_position
        + cfg.weight_clearance * r_clearance
        + cfg.weight_velocity * r_velocity
    )
    return RewardBreakdown(
        distance=r_distance,
        bearing=r_bearing,
        attention=r_attention,
        head_action=r_head_action,
        head_position=r_head_position,
        clearance=r_clearance,
        velocity=r_velocity,
        total=total,
    )


def termination_indicators(state: RobotState, scene: Scene, term_cfg: TerminationConfig, sim_cfg: SimConfig) -> tuple[float, float]:
    """Smooth indicators (f_success, f_failure), each in (0, 1].

    f_success is exactly 1 when the robot has reached the target
    (distance <= success threshold) and decays exponentially with the
    remaining gap; f_failure is exactly 1 at or beyond the tilt failure limit
    and decays with the remaining tilt margin.
    """
    d = float(np.linalg.norm(scene.target - state.position))
    gap = max(0.0, d - sim_cfg.success_distance)
    f_success = math.exp(-term_cfg.decay_success * gap)

    margin = max(0.0, sim_cfg.tilt_limit - float(np.abs(state.tilt).sum()))
    f_failure = math.exp(-term_cfg.decay_failure * margin)
    return f_success, f_failure
