"""2D kinematic simulator for a gait-velocity-controlled walking robot.

The robot is a disc moving in the plane. Actions are per-step increments of
the commanded gait velocity (vx, vy, wz in the body frame) and of the camera
head yaw. Body tilt (roll, pitch) follows a damped stochastic process driven
by the magnitude of the applied velocity change; a large accumulated tilt is
the failure condition, reaching the target ball is the success condition.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap an angle to the interval (-pi, pi]."""
    wrapped = math.remainder(theta, TWO_PI)
    if wrapped <= -math.pi:
        wrapped += TWO_PI
    return wrapped


@dataclass(frozen=True)
class SimConfig:
    """Physical constants and limits of the simulated robot."""

    dt: float = 0.1
    dv_limit: float = 0.06          # per-step velocity increment bound, each component
    dh_limit: float = 0.012         # per-step head yaw increment bound [rad]
    v_limit_xy: float = 0.4         # translational gait speed bound [m/s]
    v_limit_w: float = 0.8          # rotational gait speed bound [rad/s]
    head_yaw_limit: float = 0.6     # mechanical head yaw range [rad]
    robot_radius: float = 0.25
    success_distance: float = 0.3   # center distance to target that counts as arrival [m]
    tilt_limit: float = 0.6         # |roll| + |pitch| at or above this is a fall [rad]
    tilt_damping: float = 0.1       # per-step mean reversion of tilt toward upright
    tilt_gain: float = 1.0          # tilt noise per unit applied velocity change
    max_time: float = 60.0

    @property
    def max_steps(self) -> int:
        return int(round(self.max_time / self.dt))


@dataclass(frozen=True)
class RobotState:
    """Ground-truth simulator state. Instances are immutable; step() returns new ones."""

    position: np.ndarray            # (2,) world frame [m]
    heading: float                  # yaw, wrapped to (-pi, pi] [rad]
    head_yaw: float                 # camera head yaw relative to the body [rad]
    velocity: np.ndarray            # (3,) commanded gait velocity [vx, vy, wz]
    tilt: np.ndarray                # (2,) [roll, pitch] [rad]
    time: float = 0.0               # [s]


@dataclass(frozen=True)
class Obstacle:
    """Static plan-view obstacle, either a disc or an axis-aligned box.

    size is (radius,) for circles and (half_x, half_y) for boxes. velocity, if
    set, makes the obstacle drift linearly over time; the scene generator never
    emits moving obstacles, they exist for hand-built evaluation scenes.
    """

    kind: str                       # "circle" | "box"
    center: np.ndarray              # (2,)
    size: np.ndarray                # circle: (r,); box: (hx, hy)
    velocity: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("circle", "box"):
            raise ValueError(f"unknown obstacle kind {self.kind!r}")
        n = 1 if self.kind == "circle" else 2
        if np.asarray(self.size).shape != (n,) or np.any(np.asarray(self.size) <= 0):
            raise ValueError(f"{self.kind} obstacle needs {n} positive size value(s)")

    def center_at(self, time: float) -> np.ndarray:
        if self.velocity is None:
            return self.center
        return self.center + self.velocity * time


@dataclass(frozen=True)
class Scene:
    """One navigation task: obstacles, a target ball position, and arena bounds."""

    obstacles: tuple[Obstacle, ...]
    target: np.ndarray              # (2,)
    bounds: tuple[float, float, float, float]   # xmin, ymin, xmax, ymax
    d0: float = field(default=0.0)  # spawn-to-target distance; filled when 0

    def __post_init__(self) -> None:
        xmin, ymin, xmax, ymax = self.bounds
        tx, ty = float(self.target[0]), float(self.target[1])
        if not (xmin <= tx <= xmax and ymin <= ty <= ymax):
            raise ValueError("target lies outside the scene bounds")
        if self.d0 == 0.0:
            object.__setattr__(self, "d0", float(np.linalg.norm(self.target)))
        if self.d0 <= 0:
            raise ValueError("spawn-to-target distance must be positive")


def spawn_state() -> RobotState:
    """Initial robot state: origin, zero heading, at rest and upright."""
    return RobotState(
        position=np.zeros(2),
        heading=0.0,
        head_yaw=0.0,
        velocity=np.zeros(3),
        tilt=np.zeros(2),
        time=0.0,
    )


def step(state: RobotState, action: np.ndarray, cfg: SimConfig, rng: np.random.Generator) -> RobotState:
    """Advance the robot one control period.

    action is [dvx, dvy, dwz, dh]. Increments are clipped to the per-step
    bounds, the commanded velocity and head yaw are clipped to their limits,
    and the pose is integrated by explicit Euler in the body frame over dt.
    Tilt decays toward upright and picks up noise proportional to the applied
    velocity change. Raises ValueError on malformed or non-finite actions.
    """
    action = np.asarray(action, dtype=float).reshape(-1)
    if action.shape != (4,):
        raise ValueError(f"action must have 4 components, got shape {action.shape}")
    if not np.all(np.isfinite(action)):
        raise ValueError("action contains non-finite values")

    dv = np.clip(action[:3], -cfg.dv_limit, cfg.dv_limit)
    dh = float(np.clip(action[3], -cfg.dh_limit, cfg.dh_limit))

    v_limits = np.array([cfg.v_limit_xy, cfg.v_limit_xy, cfg.v_limit_w])
    velocity = np.clip(state.velocity + dv, -v_limits, v_limits)
    head_yaw = float(np.clip(state.head_yaw + dh, -cfg.head_yaw_limit, cfg.head_yaw_limit))
    applied_dv = velocity - state.velocity

    c, s = math.cos(state.heading), math.sin(state.heading)
    vx, vy, wz = velocity
    position = state.position + cfg.dt * np.array([c * vx - s * vy, s * vx + c * vy])
    heading = wrap_angle(state.heading + wz * cfg.dt)

    # Noise is drawn every step so rng stream position does not depend on the action.
    noise = rng.standard_normal(2)
    kick = cfg.tilt_gain * float(np.linalg.norm(applied_dv))
    tilt = (1.0 - cfg.tilt_damping) * state.tilt + kick * noise

    return RobotState(
        position=position,
        heading=heading,
        head_yaw=head_yaw,
        velocity=velocity,
        tilt=tilt,
        time=state.time + cfg.dt,
    )


def obstacle_signed_distance(point: np.ndarray, obstacle: Obstacle, time: float = 0.0) -> float:
    """Signed plan-view distance from a point to the obstacle boundary (negative inside)."""
    p = np.asarray(point, dtype=float) - obstacle.center_at(time)
    if obstacle.kind == "circle":
        return float(np.linalg.norm(p) - obstacle.size[0])
    q = np.abs(p) - obstacle.size
    outside = float(np.linalg.norm(np.maximum(q, 0.0)))
    inside = float(min(max(q[0], q[1]), 0.0))
    return outside + inside


def closest_obstacle_distance(state: RobotState, scene: Scene, cfg: SimConfig) -> float:
    """Clearance between the robot disc and the nearest obstacle boundary.

    Negative values mean penetration. Returns +inf for obstacle-free scenes.
    """
    if not scene.obstacles:
        return math.inf
    dists = [
        obstacle_signed_distance(state.position, ob, state.time) for ob in scene.obstacles
    ]
    return min(dists) - cfg.robot_radius


def terminal_status(state: RobotState, scene: Scene, cfg: SimConfig) -> str:
    """Return "failure", "success" or "none" for the given state.

    A fall (|roll| + |pitch| at or above the tilt limit) takes precedence over
    reaching the target in the same step. Time limits are handled by episode
    drivers, not here.
    """
    if float(np.abs(state.tilt).sum()) >= cfg.tilt_limit:
        return "failure"
    d = float(np.linalg.norm(scene.target - state.position))
    if d <= cfg.success_distance:
        return "success"
    return "none"
