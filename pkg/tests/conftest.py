from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import pytest

from spatialground.scene import (
    CellState,
    GridGeometry,
    ObjectNode,
    ObserverPose,
    OccupancyGrid,
    OrientedBox,
    Pose,
    SceneGraph,
    load_observer,
    load_scene,
    occupancy_from_boxes,
)

FIXTURES = Path(__file__).parent / "fixtures"


def corridor_grid() -> OccupancyGrid:
    """10 m x 2 m corridor with two staggered baffles (0.1 m cells, one slice)."""
    geo = GridGeometry((0.0, 0.0, 0.0), 0.1, (100, 20, 1))
    cells = np.zeros(geo.dims, dtype=np.uint8)
    cells[33, :13, 0] = CellState.OCCUPIED
    cells[66, 7:, 0] = CellState.OCCUPIED
    return OccupancyGrid(geo, cells)


def walled_grid() -> OccupancyGrid:
    """Two chambers split by a full-height wall."""
    geo = GridGeometry((0.0, 0.0, 0.0), 0.1, (60, 30, 1))
    cells = np.zeros(geo.dims, dtype=np.uint8)
    cells[30, :, 0] = CellState.OCCUPIED
    return OccupancyGrid(geo, cells)


def supersampled_collision_free(grid: OccupancyGrid, slice_z: int, waypoints) -> bool:
    """Independent check: every point at res/2 spacing along the path is in a free cell."""
    geo = grid.geometry
    step = geo.resolution / 2
    pts = np.asarray(waypoints, dtype=float)
    for a, b in zip(pts, pts[1:]):
        n = max(1, math.ceil(np.linalg.norm(b[:2] - a[:2]) / step))
        for t in np.linspace(0.0, 1.0, n + 1):
            x, y = a[:2] + t * (b[:2] - a[:2])
            ix = math.floor((x - geo.origin[0]) / geo.resolution)
            iy = math.floor((y - geo.origin[1]) / geo.resolution)
            if not (0 <= ix < geo.dims[0] and 0 <= iy < geo.dims[1]):
                return False
            if grid.cells[ix, iy, slice_z] != CellState.FREE:
                return False
    return True


def over_tight_scene():
    """A pillar ringed by clutter right at 1 m, so a tight "1 meter from" ring lands mostly on occupied cells."""
    geo = GridGeometry((0.0, 0.0, 0.0), 0.1, (60, 60, 1))
    pos = (3.05, 3.05, 0.05)
    pillar = ObjectNode("pillar_0", "pillar", Pose(pos), OrientedBox(pos, (0.05, 0.05, 0.05)), 0.9)
    cells = occupancy_from_boxes(geo, [pillar.box]).cells.copy()
    r = np.linalg.norm(geo.cell_centers() - np.array(pos), axis=-1)
    cells[(r >= 0.88) & (r <= 1.12)] = CellState.OCCUPIED
    return SceneGraph((pillar,)), OccupancyGrid(geo, cells), ObserverPose((1.05, 1.05, 0.05), 0.0, 0.0)


def load_fixture(name):
    graph, grid = load_scene(FIXTURES / name)
    raw = json.loads((FIXTURES / name).read_text())
    observer = load_observer(raw["observer"]) if "observer" in raw else None
    return graph, grid, observer


@pytest.fixture(scope="session")
def kitchen():
    return load_fixture("kitchen.json")


@pytest.fixture(scope="session")
def occlusion():
    return load_fixture("occlusion.json")


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
    print(ACCEPTANCE_LINES[-1])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
