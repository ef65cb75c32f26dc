"""RRT* on one horizontal slice of the occupancy grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .scene import CellState, OccupancyGrid

_EPS = 1e-9


class PlanningError(RuntimeError):
    pass


class NoPathFound(PlanningError):
    pass


class StartOccupied(PlanningError):
    pass


class GoalOccupied(PlanningError):
    pass


@dataclass(frozen=True)
class PlannerConfig:
    step_size: float = 0.25
    goal_bias: float = 0.1
    rewire_radius: float = 1.0
    max_iterations: int = 5000
    goal_tolerance: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.step_size <= 0 or self.rewire_radius <= 0 or self.goal_tolerance <= 0:
            raise ValueError("step_size, rewire_radius and goal_tolerance must be > 0")
        if not 0.0 <= self.goal_bias <= 1.0:
            raise ValueError("goal_bias must lie in [0, 1]")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True, eq=False)
class Path:
    waypoints: np.ndarray  # (n, 3)
    total_length: float
    cost_history: tuple[float, ...] = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return {"waypoints": self.waypoints.tolist(), "total_length": self.total_length}


def path_length(path: Path | np.ndarray) -> float:
    pts = path.waypoints if isinstance(path, Path) else np.asarray(path, dtype=float)
    if len(pts) < 2:
        return 0.0
    return math.fsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))


class SliceMap:
    """Collision queries against the Free cells of one z-slice.

    Segments are tested against every cell whose closed square they touch,
    so anything reported free is free under any point sampling of the segment.
    """

    def __init__(self, grid: OccupancyGrid, slice_z: int):
        geo = grid.geometry
        if not 0 <= slice_z < geo.dims[2]:
            raise PlanningError(f"slice {slice_z} outside [0, {geo.dims[2]})")
        self.grid = grid
        self.slice_z = slice_z
        self.res = geo.resolution
        self.origin = np.asarray(geo.origin[:2], dtype=float)
        self._ox, self._oy = float(geo.origin[0]), float(geo.origin[1])
        self.z = geo.origin[2] + (slice_z + 0.5) * geo.resolution
        self.free = grid.cells[:, :, slice_z] == CellState.FREE
        self.nx, self.ny = self.free.shape
        # Blocked-cell integral image with a one-cell blocked border.
        blocked = np.pad(~self.free, 1, constant_values=True).astype(np.int64)
        self._sat = np.zeros((self.nx + 3, self.ny + 3), dtype=np.int64)
        self._sat[1:, 1:] = blocked.cumsum(0).cumsum(1)
        self._blocked_padded = blocked.astype(bool)

    @property
    def lower(self) -> np.ndarray:
        return self.origin

    @property
    def upper(self) -> np.ndarray:
        return self.origin + np.array([self.nx, self.ny]) * self.res

    def cell(self, xy) -> tuple[int, int]:
        rel = (np.asarray(xy[:2], dtype=float) - self.origin) / self.res
        return int(math.floor(rel[0])), int(math.floor(rel[1]))

    def point_free(self, xy) -> bool:
        i = math.floor((float(xy[0]) - self._ox) / self.res)
        j = math.floor((float(xy[1]) - self._oy) / self.res)
        return 0 <= i < self.nx and 0 <= j < self.ny and bool(self.free[i, j])

    def _blocked_count(self, i0: int, i1: int, j0: int, j1: int) -> int:
        # Inclusive cell range in unpadded indices, clamped to the padded border.
        i0, j0 = max(i0, -1) + 1, max(j0, -1) + 1
        i1, j1 = min(i1, self.nx) + 1, min(j1, self.ny) + 1
        s = self._sat
        return int(s[i1 + 1, j1 + 1] - s[i0, j1 + 1] - s[i1 + 1, j0] + s[i0, j0])

    def segment_free(self, p, q) -> bool:
        px, py, qx, qy = float(p[0]), float(p[1]), float(q[0]), float(q[1])
        ox, oy, r = self._ox, self._oy, self.res
        i0 = math.floor((min(px, qx) - ox) / r - _EPS)
        i1 = math.floor((max(px, qx) - ox) / r + _EPS)
        j0 = math.floor((min(py, qy) - oy) / r - _EPS)
        j1 = math.floor((max(py, qy) - oy) / r + _EPS)
        if self._blocked_count(i0, i1, j0, j1) == 0:
            return True
        pi0, pj0 = max(i0, -1) + 1, max(j0, -1) + 1
        pi1, pj1 = min(i1, self.nx) + 1, min(j1, self.ny) + 1
        window = self._blocked_padded[pi0:pi1 + 1, pj0:pj1 + 1]
        bi, bj = np.nonzero(window)
        x0 = ox + (bi + pi0 - 1) * r - _EPS
        y0 = oy + (bj + pj0 - 1) * r - _EPS
        hits = _segment_hits_boxes(np.array([px, py]), np.array([qx, qy]), x0, y0, x0 + r + 2 * _EPS, y0 + r + 2 * _EPS)
        return not hits.any()


def _segment_hits_boxes(p, q, x0, y0, x1, y1) -> np.ndarray:
    d = q - p
    tmin = np.zeros(len(x0))
    tmax = np.ones(len(x0))
    hit = np.ones(len(x0), dtype=bool)
    for axis, (lo, hi) in enumerate(((x0, x1), (y0, y1))):
        if abs(d[axis]) < 1e-15:
            hit &= (lo <= p[axis]) & (p[axis] <= hi)
            continue
        t1 = (lo - p[axis]) / d[axis]
        t2 = (hi - p[axis]) / d[axis]
        tmin = np.maximum(tmin, np.minimum(t1, t2))
        tmax = np.minimum(tmax, np.maximum(t1, t2))
    return hit & (tmin <= tmax)


def project_to_slice(grid: OccupancyGrid, slice_z: int, point, radius: float = 1.0) -> np.ndarray:
    """Drop ``point`` onto the slice, moving to the nearest free cell within ``radius``."""
    sm = SliceMap(grid, slice_z)
    xy = np.asarray(point[:2], dtype=float)
    if sm.point_free(xy):
        return np.array([xy[0], xy[1], sm.z])
    fi, fj = np.nonzero(sm.free)
    if fi.size == 0:
        raise GoalOccupied("planning slice has no free cells")
    centers = sm.origin + (np.stack([fi, fj], axis=1) + 0.5) * sm.res
    dist = np.linalg.norm(centers - xy, axis=1)
    best = int(np.argmin(dist))
    if dist[best] > radius:
        raise GoalOccupied(f"no free slice cell within {radius} m of the goal")
    return np.array([centers[best, 0], centers[best, 1], sm.z])


def _densify(points: list[np.ndarray], step: float) -> np.ndarray:
    out = [points[0]]
    for a, b in zip(points, points[1:]):
        n = max(1, math.ceil(np.linalg.norm(b - a) / step - 1e-9))
        for k in range(1, n + 1):
            out.append(a + (b - a) * (k / n))
    return np.asarray(out)


def plan(grid: OccupancyGrid, slice_z: int, start, goal, cfg: PlannerConfig | None = None) -> Path:
    """Plan from ``start`` to ``goal`` (x, y used; z set to the slice height)."""
    cfg = cfg or PlannerConfig()
    sm = SliceMap(grid, slice_z)
    start = np.asarray(start[:2], dtype=float)
    goal = np.asarray(goal[:2], dtype=float)
    if not sm.point_free(start):
        raise StartOccupied(f"start {start.tolist()} is not in a free cell of slice {slice_z}")
    if not sm.point_free(goal):
        raise GoalOccupied(f"goal {goal.tolist()} is not in a free cell of slice {slice_z}")

    def lift(xy_list):
        pts = _densify(xy_list, cfg.step_size)
        return np.column_stack([pts, np.full(len(pts), sm.z)])

    if np.linalg.norm(goal - start) <= cfg.goal_tolerance:
        return Path(lift([start]), 0.0, (0.0,))

    rng = np.random.Generator(np.random.Philox(cfg.seed))
    n_max = cfg.max_iterations + 1
    nodes = np.empty((n_max, 2))
    cost = np.empty(n_max)
    parent = np.full(n_max, -1, dtype=np.int64)
    children: list[list[int]] = [[]]
    nodes[0] = start
    cost[0] = 0.0
    n = 1
    goal_nodes: list[int] = []
    goal_gap: list[float] = []
    best = math.inf
    history = []
    lower, span = sm.lower, sm.upper - sm.lower

    for _ in range(cfg.max_iterations):
        if rng.random() < cfg.goal_bias:
            target = goal
        else:
            target = lower + rng.random(2) * span
        diff = nodes[:n] - target
        d2 = np.einsum("ij,ij->i", diff, diff)
        nearest = int(np.argmin(d2))
        gap = math.sqrt(d2[nearest])
        if gap < _EPS:
            history.append(best)
            continue
        new = target if gap <= cfg.step_size else nodes[nearest] + (target - nodes[nearest]) * (cfg.step_size / gap)
        if not sm.point_free(new) or not sm.segment_free(nodes[nearest], new):
            history.append(best)
            continue

        diff = nodes[:n] - new
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        near = np.flatnonzero(dist <= cfg.rewire_radius)
        via = cost[near] + dist[near]
        best_parent, best_cost = nearest, cost[nearest] + dist[nearest]
        for j in near[np.argsort(via, kind="stable")]:
            c = cost[j] + dist[j]
            if c >= best_cost - 1e-12:
                break
            if sm.segment_free(nodes[j], new):
                best_parent, best_cost = int(j), c
                break

        idx = n
        nodes[idx] = new
        cost[idx] = best_cost
        parent[idx] = best_parent
        children.append([])
        children[best_parent].append(idx)
        n += 1

        improve = near[cost[near] > best_cost + dist[near] + 1e-12]
        for j in improve:
            j = int(j)
            if j == best_parent or not sm.segment_free(new, nodes[j]):
                continue
            children[parent[j]].remove(j)
            parent[j] = idx
            children[idx].append(j)
            delta = best_cost + dist[j] - cost[j]
            stack = [j]
            while stack:
                k = stack.pop()
                cost[k] += delta
                stack.extend(children[k])

        to_goal = float(np.linalg.norm(goal - new))
        if to_goal <= cfg.goal_tolerance and sm.segment_free(new, goal):
            goal_nodes.append(idx)
            goal_gap.append(to_goal)
        if goal_nodes:
            best = float(np.min(cost[goal_nodes] + np.asarray(goal_gap)))
        history.append(best)

    if not goal_nodes:
        raise NoPathFound(f"no path after {cfg.max_iterations} iterations")
    totals = cost[goal_nodes] + np.asarray(goal_gap)
    end = goal_nodes[int(np.argmin(totals))]
    chain = []
    k = end
    while k != -1:
        chain.append(nodes[k].copy())
        k = int(parent[k])
    chain.reverse()
    if np.linalg.norm(chain[-1] - goal) > 0:
        chain.append(goal.copy())
    waypoints = lift(chain)
    return Path(waypoints, path_length(waypoints), tuple(history))
