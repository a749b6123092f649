import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from latentnav.sim import (
    Obstacle,
    RobotState,
    Scene,
    SimConfig,
    closest_obstacle_distance,
    obstacle_signed_distance,
    spawn_state,
    step,
    terminal_status,
    wrap_angle,
)

CFG = SimConfig()


def make_scene(obstacles=(), target=(3.0, 0.0)):
    return Scene(obstacles=tuple(obstacles), target=np.array(target, dtype=float),
                 bounds=(-6.0, -6.0, 6.0, 6.0))


def quiet_cfg(**overrides):
    """Config with the tilt noise silenced so kinematics are exact."""
    return SimConfig(tilt_gain=0.0, **overrides)


def test_zero_action_keeps_pose():
    state = spawn_state()
    out = step(state, np.zeros(4), quiet_cfg(), np.random.default_rng(0))
    assert np.allclose(out.position, 0.0)
    assert out.heading == 0.0
    assert out.head_yaw == 0.0
    assert np.allclose(out.velocity, 0.0)
    assert np.allclose(out.tilt, 0.0)
    assert out.time == pytest.approx(CFG.dt)


def test_forward_euler_translation():
    state = RobotState(
        position=np.zeros(2), heading=0.0, head_yaw=0.0,
        velocity=np.array([0.1, 0.0, 0.0]), tilt=np.zeros(2),
    )
    out = step(state, np.zeros(4), quiet_cfg(), np.random.default_rng(0))
    assert out.position[0] == pytest.approx(0.01)
    assert out.position[1] == pytest.approx(0.0)


def test_body_frame_translation_rotated_heading():
    state = RobotState(
        position=np.zeros(2), heading=math.pi / 2, head_yaw=0.0,
        velocity=np.array([0.1, 0.0, 0.0]), tilt=np.zeros(2),
    )
    out = step(state, np.zeros(4), quiet_cfg(), np.random.default_rng(0))
    # facing +y, body-forward motion moves along world +y
    assert out.position[0] == pytest.approx(0.0, abs=1e-12)
    assert out.position[1] == pytest.approx(0.01)


def test_velocity_increment_clipped():
    state = spawn_state()
    out = step(state, np.array([0.1, -0.5, 0.02, 0.0]), quiet_cfg(), np.random.default_rng(0))
    assert out.velocity[0] == pytest.approx(0.06)
    assert out.velocity[1] == pytest.approx(-0.06)
    assert out.velocity[2] == pytest.approx(0.02)


def test_velocity_limit_clipping_is_idempotent():
    cfg = quiet_cfg()
    state = RobotState(
        position=np.zeros(2), heading=0.0, head_yaw=0.0,
        velocity=np.array([cfg.v_limit_xy, 0.0, cfg.v_limit_w]), tilt=np.zeros(2),
    )
    out = step(state, np.array([0.06, 0.0, 0.06, 0.0]), cfg, np.random.default_rng(0))
    assert out.velocity[0] == pytest.approx(cfg.v_limit_xy)
    assert out.velocity[2] == pytest.approx(cfg.v_limit_w)
    again = step(out, np.array([0.06, 0.0, 0.06, 0.0]), cfg, np.random.default_rng(0))
    assert again.velocity[0] == pytest.approx(cfg.v_limit_xy)


def test_head_yaw_respects_mechanical_range():
    cfg = quiet_cfg()
    state = spawn_state()
    for _ in range(200):
        state = step(state, np.array([0.0, 0.0, 0.0, 1.0]), cfg, np.random.default_rng(0))
    assert state.head_yaw == pytest.approx(cfg.head_yaw_limit)


def test_non_finite_action_rejected():
    state = spawn_state()
    with pytest.raises(ValueError):
        step(state, np.array([np.nan, 0, 0, 0]), CFG, np.random.default_rng(0))
    with pytest.raises(ValueError):
        step(state, np.array([0.0, np.inf, 0, 0]), CFG, np.random.default_rng(0))
    with pytest.raises(ValueError):
        step(state, np.zeros(3), CFG, np.random.default_rng(0))


@given(st.floats(min_value=-100.0, max_value=100.0))
def test_wrap_angle_range_and_equivalence(theta):
    wrapped = wrap_angle(theta)
    assert -math.pi < wrapped <= math.pi
    assert math.isclose(
        math.cos(wrapped), math.cos(theta), abs_tol=1e-9
    ) and math.isclose(math.sin(wrapped), math.sin(theta), abs_tol=1e-9)


def test_heading_stays_wrapped_under_max_spin():
    cfg = quiet_cfg()
    state = spawn_state()
    rng = np.random.default_rng(0)
    for _ in range(300):
        state = step(state, np.array([0.0, 0.0, 0.06, 0.0]), cfg, rng)
        assert -math.pi < state.heading <= math.pi


def test_tilt_decays_without_commands():
    cfg = quiet_cfg()
    state = RobotState(
        position=np.zeros(2), heading=0.0, head_yaw=0.0,
        velocity=np.zeros(3), tilt=np.array([0.3, -0.2]),
    )
    prev = np.abs(state.tilt)
    for _ in range(50):
        state = step(state, np.zeros(4), cfg, np.random.default_rng(0))
        cur = np.abs(state.tilt)
        assert np.all(cur <= prev + 1e-15)
        prev = cur
    assert np.abs(state.tilt).sum() < 0.01


def test_max_rate_reversals_reach_failure_within_seconds():
    # sustained full-bound velocity reversals must topple the robot quickly
    cfg = SimConfig()
    passages = []
    for seed in range(40):
        rng = np.random.default_rng(seed)
        state = spawn_state()
        sign = 1.0
        for k in range(1, 401):
            state = step(state, sign * np.array([0.06, 0.06, 0.06, 0.0]), cfg, rng)
            sign = -sign
            if np.abs(state.tilt).sum() >= cfg.tilt_limit:
                passages.append(k)
                break
        else:
            passages.append(401)
    assert np.median(passages) <= 40, f"median first passage {np.median(passages)} steps"


def test_step_determinism_bitwise():
    cfg = SimConfig()
    actions = np.random.default_rng(7).uniform(-0.06, 0.06, size=(100, 4))

    def rollout():
        rng = np.random.default_rng(42)
        state = spawn_state()
        states = []
        for a in actions:
            state = step(state, a, cfg, rng)
            states.append((state.position.tobytes(), state.heading, state.head_yaw,
                           state.velocity.tobytes(), state.tilt.tobytes()))
        return states

    assert rollout() == rollout()


def test_clearance_simple_circle():
    scene = make_scene([Obstacle("circle", np.array([1.0, 0.0]), np.array([0.3]))])
    state = spawn_state()
    assert closest_obstacle_distance(state, scene, CFG) == pytest.approx(
        1.0 - 0.3 - CFG.robot_radius
    )


def test_clearance_negative_when_overlapping():
    scene = make_scene([Obstacle("circle", np.array([0.0, 0.0]), np.array([0.5]))])
    assert closest_obstacle_distance(spawn_state(), scene, CFG) < 0


def test_clearance_empty_scene_infinite():
    assert closest_obstacle_distance(spawn_state(), make_scene(), CFG) == math.inf


def test_clearance_matches_boundary_sampling():
    # oracle: densely sample obstacle boundaries and take the minimum distance
    rng = np.random.default_rng(3)
    for trial in range(20):
        pos = rng.uniform(-3, 3, size=2)
        state = RobotState(position=pos, heading=0.0, head_yaw=0.0,
                           velocity=np.zeros(3), tilt=np.zeros(2))
        obstacles = []
        for _ in range(rng.integers(1, 5)):
            center = rng.uniform(-3, 3, size=2)
            if rng.uniform() < 0.5:
                obstacles.append(Obstacle("circle", center, rng.uniform(0.2, 0.6, size=1)))
            else:
                obstacles.append(Obstacle("box", center, rng.uniform(0.2, 0.6, size=2)))
        scene = make_scene(obstacles)

        best = math.inf
        inside_any = False
        for ob in obstacles:
            theta = np.linspace(0, 2 * math.pi, 20000, endpoint=False)
            if ob.kind == "circle":
                pts = ob.center + ob.size[0] * np.stack([np.cos(theta), np.sin(theta)], axis=1)
            else:
                hx, hy = ob.size
                t = np.linspace(-1, 1, 5000)
                edges = [np.stack([t * hx, np.full_like(t, hy)], axis=1),
                         np.stack([t * hx, np.full_like(t, -hy)], axis=1),
                         np.stack([np.full_like(t, hx), t * hy], axis=1),
                         np.stack([np.full_like(t, -hx), t * hy], axis=1)]
                pts = ob.center + np.concatenate(edges)
            boundary = np.linalg.norm(pts - pos, axis=1).min()
            if obstacle_signed_distance(pos, ob) < 0:
                boundary = -boundary
                inside_any = True
            best = min(best, boundary)
        expected = best - CFG.robot_radius
        got = closest_obstacle_distance(state, scene, CFG)
        assert got == pytest.approx(expected, abs=2e-3), f"trial {trial}"


def test_terminal_success_at_target():
    scene = make_scene(target=(0.2, 0.0))
    assert terminal_status(spawn_state(), scene, CFG) == "success"


def test_terminal_failure_on_tilt():
    scene = make_scene()
    state = RobotState(position=np.zeros(2), heading=0.0, head_yaw=0.0,
                       velocity=np.zeros(3), tilt=np.array([0.4, 0.25]))
    assert terminal_status(state, scene, CFG) == "failure"


def test_terminal_failure_takes_precedence():
    scene = make_scene(target=(0.1, 0.0))
    state = RobotState(position=np.zeros(2), heading=0.0, head_yaw=0.0,
                       velocity=np.zeros(3), tilt=np.array([0.7, 0.0]))
    assert terminal_status(state, scene, CFG) == "failure"


def test_terminal_none_when_upright_and_far():
    assert terminal_status(spawn_state(), make_scene(), CFG) == "none"


def test_moving_obstacle_center_shifts_with_time():
    ob = Obstacle("circle", np.array([2.0, 0.0]), np.array([0.3]),
                  velocity=np.array([-0.5, 0.0]))
    scene = make_scene([ob])
    near = RobotState(position=np.zeros(2), heading=0.0, head_yaw=0.0,
                      velocity=np.zeros(3), tilt=np.zeros(2), time=2.0)
    # after 2 s the obstacle sits at (1, 0)
    assert closest_obstacle_distance(near, scene, CFG) == pytest.approx(1.0 - 0.3 - 0.25)
