"""Random navigation scene generation with reachability filtering.

Scenes place a target ball at a uniform bearing and distance from the spawn
(the origin), optionally drop a blocking obstacle on the direct spawn-target
line, scatter further obstacles away from that line, and are accepted only if
a grid A* with an inflated robot footprint finds a path to the target.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .sim import Obstacle, Scene, obstacle_signed_distance


@dataclass(frozen=True)
class ScenarioConfig:
    """Distribution parameters for random scenes."""

    p_block: float = 0.5                        # probability of a line-of-sight blocker
    obstacle_count: tuple[int, int] = (0, 6)    # inclusive range of extra obstacles
    circle_radius: tuple[float, float] = (0.2, 0.6)
    box_half_extent: tuple[float, float] = (0.2, 0.6)
    target_distance: tuple[float, float] = (1.5, 5.0)
    bounds: tuple[float, float, float, float] = (-6.0, -6.0, 6.0, 6.0)
    block_span: tuple[float, float] = (0.2, 0.8)  # blocker position along the spawn-target line
    spawn_clearance: float = 0.5                # no obstacle boundary within this of the spawn
    grid_resolution: float = 0.1                # A* occupancy cell size [m]
    max_retries: int = 1000                     # resamples before generate_valid_scene gives up


def _point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Distance from point p to the segment a-b."""
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return float(np.linalg.norm(p - a))
    t = float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab)))


def segment_intersects(obstacle: Obstacle, a: np.ndarray, b: np.ndarray) -> bool:
    """True if the segment a-b touches the obstacle footprint (at time 0)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if obstacle.kind == "circle":
        return _point_segment_distance(obstacle.center, a, b) <= obstacle.size[0]
    # Liang-Barsky clip of the segment against the box slabs.
    lo = obstacle.center - obstacle.size
    hi = obstacle.center + obstacle.size
    d = b - a
    tmin, tmax = 0.0, 1.0
    for axis in range(2):
        if d[axis] == 0.0:
            if a[axis] < lo[axis] or a[axis] > hi[axis]:
                return False
        else:
            t1 = (lo[axis] - a[axis]) / d[axis]
            t2 = (hi[axis] - a[axis]) / d[axis]
            if t1 > t2:
                t1, t2 = t2, t1
            tmin = max(tmin, t1)
            tmax = min(tmax, t2)
            if tmin > tmax:
                return False
    return True


def _sample_shape(rng: np.random.Generator, center: np.ndarray, cfg: ScenarioConfig) -> Obstacle:
    if rng.uniform() < 0.5:
        r = rng.uniform(*cfg.circle_radius)
        return Obstacle("circle", center, np.array([r]))
    hx = rng.uniform(*cfg.box_half_extent)
    hy = rng.uniform(*cfg.box_half_extent)
    return Obstacle("box", center, np.array([hx, hy]))


def sample_scene(rng: np.random.Generator, cfg: ScenarioConfig) -> Scene:
    """Draw one scene from the configured distribution.

    The blocker coin decides alone whether the spawn-target segment is
    obstructed: when it lands, one obstacle is centered on the middle span of
    the segment; all other obstacles are rejection-sampled to keep clear of
    the segment, so the obstructed fraction of scenes equals p_block.
    """
    spawn = np.zeros(2)
    dist = rng.uniform(*cfg.target_distance)
    angle = rng.uniform(-math.pi, math.pi)
    target = dist * np.array([math.cos(angle), math.sin(angle)])

    n_extra = int(rng.integers(cfg.obstacle_count[0], cfg.obstacle_count[1] + 1))
    blocked = rng.uniform() < cfg.p_block

    obstacles: list[Obstacle] = []
    if blocked:
        for _ in range(10_000):
            s = rng.uniform(*cfg.block_span)
            ob = _sample_shape(rng, s * target, cfg)
            if obstacle_signed_distance(spawn, ob) >= cfg.spawn_clearance:
                obstacles.append(ob)
                break
        else:
            raise RuntimeError("could not place a blocking obstacle")

    xmin, ymin, xmax, ymax = cfg.bounds
    for _ in range(n_extra):
        for _ in range(10_000):
            center = rng.uniform((xmin, ymin), (xmax, ymax))
            ob = _sample_shape(rng, center, cfg)
            if obstacle_signed_distance(spawn, ob) < cfg.spawn_clearance:
                continue
            if segment_intersects(ob, spawn, target):
                continue
            obstacles.append(ob)
            break
        else:
            raise RuntimeError("could not place a non-blocking obstacle")

    return Scene(obstacles=tuple(obstacles), target=target, bounds=cfg.bounds)


def _occupancy(scene: Scene, resolution: float, robot_radius: float):
    """Boolean occupancy grid over the scene bounds, cells tested at their centers."""
    xmin, ymin, xmax, ymax = scene.bounds
    nx = int(round((xmax - xmin) / resolution))
    ny = int(round((ymax - ymin) / resolution))
    xs = xmin + (np.arange(nx) + 0.5) * resolution
    ys = ymin + (np.arange(ny) + 0.5) * resolution
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    occ = np.zeros((nx, ny), dtype=bool)
    for ob in scene.obstacles:
        px = gx - ob.center[0]
        py = gy - ob.center[1]
        if ob.kind == "circle":
            sd = np.hypot(px, py) - ob.size[0]
        else:
            qx = np.abs(px) - ob.size[0]
            qy = np.abs(py) - ob.size[1]
            outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
            inside = np.minimum(np.maximum(qx, qy), 0.0)
            sd = outside + inside
        occ |= sd <= robot_radius
    return occ, xs, ys


def _cell_of(p: np.ndarray, xs: np.ndarray, ys: np.ndarray, resolution: float) -> tuple[int, int]:
    i = int(np.clip(np.floor((p[0] - (xs[0] - 0.5 * resolution)) / resolution), 0, len(xs) - 1))
    j = int(np.clip(np.floor((p[1] - (ys[0] - 0.5 * resolution)) / resolution), 0, len(ys) - 1))
    return i, j


_MOVES = [
    (-1, -1), (-1, 0), (-1, 1),
    (0, -1), (0, 1),
    (1, -1), (1, 0), (1, 1),
]


def astar_cost(scene: Scene, resolution: float, robot_radius: float) -> float | None:
    """Length in meters of the shortest 8-connected grid path spawn->target.

    Cells whose centers are within robot_radius of an obstacle are blocked.
    Returns None when no path exists (or an endpoint cell is blocked). Ties in
    the A* frontier break on smaller path cost, then lexicographic cell index.
    """
    occ, xs, ys = _occupancy(scene, resolution, robot_radius)
    start = _cell_of(np.zeros(2), xs, ys, resolution)
    goal = _cell_of(scene.target, xs, ys, resolution)
    if occ[start] or occ[goal]:
        return None

    nx, ny = occ.shape
    diag = math.sqrt(2.0)

    def heuristic(c: tuple[int, int]) -> float:
        return math.hypot(c[0] - goal[0], c[1] - goal[1])

    g_cost = {start: 0.0}
    frontier = [(heuristic(start), 0.0, start)]
    closed: set[tuple[int, int]] = set()
    while frontier:
        f, g, cell = heapq.heappop(frontier)
        if cell in closed:
            continue
        if cell == goal:
            return g * resolution
        closed.add(cell)
        for di, dj in _MOVES:
            ni, nj = cell[0] + di, cell[1] + dj
            if not (0 <= ni < nx and 0 <= nj < ny) or occ[ni, nj]:
                continue
            step = diag if di != 0 and dj != 0 else 1.0
            cand = g + step
            nxt = (ni, nj)
            if cand < g_cost.get(nxt, math.inf):
                g_cost[nxt] = cand
                heapq.heappush(frontier, (cand + heuristic(nxt), cand, nxt))
    return None


def astar_feasible(scene: Scene, resolution: float, robot_radius: float) -> bool:
    """True if the inflated-grid A* finds a spawn-to-target path."""
    return astar_cost(scene, resolution, robot_radius) is not None


def generate_valid_scene(rng: np.random.Generator, cfg: ScenarioConfig, robot_radius: float) -> Scene:
    """Sample scenes until one passes the A* reachability check."""
    for _ in range(cfg.max_retries):
        scene = sample_scene(rng, cfg)
        if astar_feasible(scene, cfg.grid_resolution, robot_radius):
            return scene
    raise RuntimeError(f"no feasible scene found in {cfg.max_retries} attempts")


def write_scene_set(scenes: list[Scene], path) -> None:
    """Serialize scenes to a plain-text file; floats keep full precision."""
    lines = ["# latentnav scene set v1"]
    for idx, scene in enumerate(scenes):
        lines.append(f"scene {idx}")
        lines.append("bounds " + " ".join(repr(float(v)) for v in scene.bounds))
        lines.append(f"target {float(scene.target[0])!r} {float(scene.target[1])!r}")
        for ob in scene.obstacles:
            vals = [float(ob.center[0]), float(ob.center[1])] + [float(v) for v in ob.size]
            line = ob.kind + " " + " ".join(repr(v) for v in vals)
            if ob.velocity is not None:
                line += " vel " + " ".join(repr(float(v)) for v in ob.velocity)
            lines.append(line)
        lines.append("end")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_scene_set(path) -> list[Scene]:
    """Parse a scene set written by write_scene_set."""
    scenes: list[Scene] = []
    bounds = None
    target = None
    obstacles: list[Obstacle] = []
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tok = line.split()
            if tok[0] == "scene":
                bounds, target, obstacles = None, None, []
            elif tok[0] == "bounds":
                bounds = tuple(float(v) for v in tok[1:5])
            elif tok[0] == "target":
                target = np.array([float(tok[1]), float(tok[2])])
            elif tok[0] in ("circle", "box"):
                n = 1 if tok[0] == "circle" else 2
                center = np.array([float(tok[1]), float(tok[2])])
                size = np.array([float(v) for v in tok[3:3 + n]])
                vel = None
                if len(tok) > 3 + n:
                    if tok[3 + n] != "vel":
                        raise ValueError(f"malformed obstacle line: {line!r}")
                    vel = np.array([float(tok[4 + n]), float(tok[5 + n])])
                obstacles.append(Obstacle(tok[0], center, size, vel))
            elif tok[0] == "end":
                if bounds is None or target is None:
                    raise ValueError("scene block ended before bounds/target")
                scenes.append(Scene(obstacles=tuple(obstacles), target=target, bounds=bounds))
            else:
                raise ValueError(f"unrecognized scene line: {line!r}")
    return scenes
