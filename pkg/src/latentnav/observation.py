"""Ego-camera segmentation rendering and low-dimensional observations.

The camera is a pinhole mounted above the robot base. Each pixel ray is
intersected analytically with the scene: obstacles are vertical extrusions of
their plan-view footprints (side walls plus a top cap), the target is a small
ball resting on the ground. The nearest hit wins and sets the pixel class.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .sim import RobotState, Scene, SimConfig, wrap_angle

CLASS_BACKGROUND = 0
CLASS_OBSTACLE = 1
CLASS_TARGET = 2
NUM_CLASSES = 3

# RGB palette used for PNG export of segmentation frames.
PALETTE = np.array(
    [[40, 40, 48], [204, 82, 82], [84, 196, 94]], dtype=np.uint8
)

NONVISUAL_DIM = 8


@dataclass(frozen=True)
class CameraConfig:
    """Pinhole camera intrinsics and mounting geometry."""

    width: int = 32
    height: int = 32
    fov_deg: float = 90.0           # horizontal field of view
    mount_height: float = 1.0       # camera height above the ground [m]
    pitch_offset: float = 0.25      # fixed downward pitch of the optical axis [rad]
    tilt_coupling: float = 1.0      # how strongly body tilt moves the camera
    obstacle_height: float = 1.0    # extrusion height of plan-view obstacles [m]
    target_radius: float = 0.11     # target ball radius [m]


def _camera_rotation(yaw: float, pitch_down: float, roll: float) -> np.ndarray:
    """World-from-camera rotation; camera axes are x forward, y left, z up."""
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch_down), math.sin(pitch_down)
    cr, sr = math.cos(roll), math.sin(roll)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


def _ray_grid(cam: CameraConfig) -> np.ndarray:
    """Camera-frame ray directions, shape (H, W, 3), not normalized."""
    tan_h = math.tan(math.radians(cam.fov_deg) / 2.0)
    tan_v = tan_h * cam.height / cam.width
    u = (2.0 * (np.arange(cam.width) + 0.5) / cam.width - 1.0)    # -1 left .. +1 right
    v = (1.0 - 2.0 * (np.arange(cam.height) + 0.5) / cam.height)  # +1 top .. -1 bottom
    dirs = np.empty((cam.height, cam.width, 3))
    dirs[..., 0] = 1.0
    dirs[..., 1] = -u[None, :] * tan_h
    dirs[..., 2] = v[:, None] * tan_v
    return dirs


def render(state: RobotState, scene: Scene, cam: CameraConfig) -> np.ndarray:
    """Render the segmentation image seen from the robot, shape (H, W) uint8.

    Pure: depends only on its arguments, nearer surfaces win per pixel.
    """
    roll, pitch = float(state.tilt[0]), float(state.tilt[1])
    yaw = state.heading + state.head_yaw
    pitch_down = cam.pitch_offset + cam.tilt_coupling * pitch
    rot = _camera_rotation(yaw, pitch_down, cam.tilt_coupling * roll)
    origin = np.array([state.position[0], state.position[1], cam.mount_height])

    dirs = _ray_grid(cam) @ rot.T            # (H, W, 3) world-frame directions
    dx, dy, dz = dirs[..., 0], dirs[..., 1], dirs[..., 2]

    depth = np.full((cam.height, cam.width), np.inf)
    classes = np.full((cam.height, cam.width), CLASS_BACKGROUND, dtype=np.uint8)
    eps = 1e-9

    for ob in scene.obstacles:
        cx, cy = ob.center_at(state.time)
        h = cam.obstacle_height
        if ob.kind == "circle":
            t_side = _ray_cylinder(origin, dx, dy, dz, cx, cy, float(ob.size[0]), h)
        else:
            t_side = _ray_box(origin, dx, dy, dz, cx, cy, float(ob.size[0]), float(ob.size[1]), h)
        hit = t_side < depth
        depth[hit] = t_side[hit]
        classes[hit] = CLASS_OBSTACLE

    t_ball = _ray_sphere(
        origin, dx, dy, dz,
        np.array([scene.target[0], scene.target[1], cam.target_radius]),
        cam.target_radius,
    )
    hit = t_ball < depth
    depth[hit] = t_ball[hit]
    classes[hit] = CLASS_TARGET

    # Guard the degenerate case of rays starting exactly on a surface.
    classes[depth < eps] = CLASS_BACKGROUND
    return classes


def _ray_sphere(origin, dx, dy, dz, center, radius):
    ox, oy, oz = origin - center
    b = ox * dx + oy * dy + oz * dz
    a = dx * dx + dy * dy + dz * dz
    c = ox * ox + oy * oy + oz * oz - radius * radius
    disc = b * b - a * c
    t = np.full(dx.shape, np.inf)
    ok = disc >= 0.0
    root = np.sqrt(np.maximum(disc, 0.0))
    t_near = (-b - root) / a
    t_far = (-b + root) / a
    cand = np.where(t_near > 1e-9, t_near, np.where(t_far > 1e-9, t_far, np.inf))
    t[ok] = cand[ok]
    t[~ok] = np.inf
    return t


def _ray_cylinder(origin, dx, dy, dz, cx, cy, radius, height):
    """Nearest hit with a vertical cylinder z in [0, height] including its top cap."""
    ox, oy, oz = origin[0] - cx, origin[1] - cy, origin[2]
    a = dx * dx + dy * dy
    b = ox * dx + oy * dy
    c = ox * ox + oy * oy - radius * radius
    disc = b * b - a * c
    root = np.sqrt(np.maximum(disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_near = (-b - root) / a
        t_far = (-b + root) / a
    t_side = np.full(dx.shape, np.inf)
    for t_cand in (t_near, t_far):
        z = oz + t_cand * dz
        ok = (disc >= 0.0) & (a > 0.0) & (t_cand > 1e-9) & (z >= 0.0) & (z <= height)
        t_side = np.where(ok & (t_cand < t_side), t_cand, t_side)
    # top cap at z = height
    with np.errstate(divide="ignore", invalid="ignore"):
        t_cap = (height - oz) / dz
    px = ox + t_cap * dx
    py = oy + t_cap * dy
    ok = (t_cap > 1e-9) & (px * px + py * py <= radius * radius)
    return np.where(ok & (t_cap < t_side), t_cap, t_side)


def _ray_box(origin, dx, dy, dz, cx, cy, hx, hy, height):
    """Nearest hit with an axis-aligned box extruded over z in [0, height]."""
    lo = np.array([cx - hx, cy - hy, 0.0])
    hi = np.array([cx + hx, cy + hy, height])
    tmin = np.full(dx.shape, -np.inf)
    tmax = np.full(dx.shape, np.inf)
    for axis, d in enumerate((dx, dy, dz)):
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo[axis] - origin[axis]) / d
            t2 = (hi[axis] - origin[axis]) / d
        near = np.minimum(t1, t2)
        far = np.maximum(t1, t2)
        parallel = d == 0.0
        inside = (origin[axis] >= lo[axis]) & (origin[axis] <= hi[axis])
        near = np.where(parallel, np.where(inside, -np.inf, np.inf), near)
        far = np.where(parallel, np.where(inside, np.inf, -np.inf), far)
        tmin = np.maximum(tmin, near)
        tmax = np.minimum(tmax, far)
    hit = (tmax >= tmin) & (tmax > 1e-9)
    t = np.where(tmin > 1e-9, tmin, tmax)
    return np.where(hit, t, np.inf)


def relative_target_polar(state: RobotState, target: np.ndarray) -> tuple[float, float]:
    """Target distance and bearing in the robot frame.

    Bearing is wrapped to (-pi, pi]; zero means the body faces the target and
    positive values put the target to the robot's left.
    """
    delta = np.asarray(target, dtype=float) - state.position
    d = float(np.linalg.norm(delta))
    bearing = wrap_angle(math.atan2(delta[1], delta[0]) - state.heading)
    return d, bearing


def nonvisual_observation(state: RobotState, scene: Scene, sim_cfg: SimConfig) -> np.ndarray:
    """Proprioceptive vector [vx, vy, wz, head_norm, dist, bearing, roll, pitch]."""
    d, bearing = relative_target_polar(state, scene.target)
    return np.array(
        [
            state.velocity[0],
            state.velocity[1],
            state.velocity[2],
            state.head_yaw / sim_cfg.head_yaw_limit,
            d,
            bearing,
            state.tilt[0],
            state.tilt[1],
        ],
        dtype=np.float64,
    )


SEG_MAGIC = b"LNAVSEG1"


def write_seg_log(path, frames: np.ndarray) -> None:
    """Write segmentation frames (N, H, W) uint8 to a binary log.

    Layout: 8-byte magic, uint16 height, uint16 width, uint8 class count,
    RGB palette bytes, then raw frame bytes back to back.
    """
    frames = np.asarray(frames, dtype=np.uint8)
    if frames.ndim != 3:
        raise ValueError("frames must have shape (N, H, W)")
    n, h, w = frames.shape
    with open(path, "wb") as fh:
        fh.write(SEG_MAGIC)
        fh.write(struct.pack("<HHB", h, w, NUM_CLASSES))
        fh.write(PALETTE.tobytes())
        fh.write(frames.tobytes())


def read_seg_log(path) -> np.ndarray:
    """Read a segmentation log back into an array of shape (N, H, W) uint8."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != SEG_MAGIC:
            raise ValueError(f"not a segmentation log: bad magic {magic!r}")
        h, w, n_classes = struct.unpack("<HHB", fh.read(5))
        fh.read(3 * n_classes)  # palette, fixed by the writer
        raw = fh.read()
    if len(raw) % (h * w) != 0:
        raise ValueError("truncated segmentation log")
    return np.frombuffer(raw, dtype=np.uint8).reshape(-1, h, w)


def seg_to_rgb(frames: np.ndarray) -> np.ndarray:
    """Map class frames (..., H, W) to RGB uint8 (..., H, W, 3)."""
    return PALETTE[np.asarray(frames, dtype=np.uint8)]


def save_strip(frames: np.ndarray, path, max_frames: int = 12, scale: int = 4) -> None:
    """Save an evenly subsampled horizontal strip of frames as one PNG."""
    from PIL import Image

    frames = np.asarray(frames, dtype=np.uint8)
    n = frames.shape[0]
    if n == 0:
        raise ValueError("no frames to render")
    idx = np.linspace(0, n - 1, min(max_frames, n)).round().astype(int)
    rgb = seg_to_rgb(frames[idx])
    rgb = rgb.repeat(scale, axis=1).repeat(scale, axis=2)
    pad = np.full((rgb.shape[1], 2, 3), 255, dtype=np.uint8)
    cols = []
    for k, frame in enumerate(rgb):
        if k:
            cols.append(pad)
        cols.append(frame)
    Image.fromarray(np.concatenate(cols, axis=1)).save(path)
