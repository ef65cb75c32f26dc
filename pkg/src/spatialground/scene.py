"""Scene graph, occupancy grid and frame transforms.

World frame is right-handed, +Z up, meters. Object-local frames use
+X = intrinsic front, +Y = intrinsic left, +Z = up.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

ORTHO_TOL = 1e-6
UNIT_TOL = 1e-9


class SceneError(ValueError):
    """Base class for scene loading and validation problems."""


class SceneFormatError(SceneError):
    """The scene file is not valid JSON or misses required fields."""


class SceneInvariantError(SceneError):
    """A scene structure violates one of its invariants."""

    def __init__(self, message: str, offending: str | None = None):
        super().__init__(message)
        self.offending = offending


class CellState(IntEnum):
    FREE = 0
    OCCUPIED = 1
    UNKNOWN = 2


def as_vec3(value: Iterable[float], name: str = "vector") -> np.ndarray:
    v = np.asarray(list(value) if not isinstance(value, np.ndarray) else value, dtype=float)
    if v.shape != (3,):
        raise SceneInvariantError(f"{name} must have 3 components, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise SceneInvariantError(f"{name} has non-finite components: {v.tolist()}")
    return v


def validate_rotation(matrix, name: str = "rotation") -> np.ndarray:
    r = np.asarray(matrix, dtype=float)
    if r.shape == (9,):
        r = r.reshape(3, 3)
    if r.shape != (3, 3):
        raise SceneInvariantError(f"{name} must be 3x3, got shape {r.shape}")
    if not np.all(np.isfinite(r)):
        raise SceneInvariantError(f"{name} has non-finite entries")
    if np.max(np.abs(r.T @ r - np.eye(3))) > ORTHO_TOL:
        raise SceneInvariantError(f"{name} is not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
        raise SceneInvariantError(f"{name} has determinant {np.linalg.det(r):.6g}, expected +1")
    return r


def yaw_rotation(yaw: float) -> np.ndarray:
    """Rotation about +Z by ``yaw`` radians."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class Pose:
    position: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    known_orientation: bool = True

    def __post_init__(self):
        object.__setattr__(self, "position", as_vec3(self.position, "position"))
        rot = validate_rotation(self.rotation)
        if not self.known_orientation and np.max(np.abs(rot - np.eye(3))) > ORTHO_TOL:
            raise SceneInvariantError("pose with unknown orientation must carry the identity rotation")
        object.__setattr__(self, "rotation", rot)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return (
            np.array_equal(self.position, other.position)
            and np.array_equal(self.rotation, other.rotation)
            and self.known_orientation == other.known_orientation
        )


@dataclass(frozen=True, eq=False)
class OrientedBox:
    center: np.ndarray
    half_extents: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        object.__setattr__(self, "center", as_vec3(self.center, "box center"))
        he = as_vec3(self.half_extents, "half_extents")
        if np.any(he <= 0):
            raise SceneInvariantError(f"half_extents must be strictly positive, got {he.tolist()}")
        object.__setattr__(self, "half_extents", he)
        object.__setattr__(self, "rotation", validate_rotation(self.rotation, "box rotation"))

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask of points strictly inside the box."""
        local = (np.atleast_2d(points) - self.center) @ self.rotation
        return np.all(np.abs(local) < self.half_extents, axis=-1)

    def __eq__(self, other):
        if not isinstance(other, OrientedBox):
            return NotImplemented
        return (
            np.array_equal(self.center, other.center)
            and np.array_equal(self.half_extents, other.half_extents)
            and np.array_equal(self.rotation, other.rotation)
        )


@dataclass(frozen=True)
class ObjectNode:
    id: str
    label: str
    pose: Pose
    box: OrientedBox
    detection_confidence: float = 1.0

    def __post_init__(self):
        if not self.id:
            raise SceneInvariantError("object id must be nonempty")
        label = " ".join(self.label.lower().split())
        if not label:
            raise SceneInvariantError(f"object {self.id!r} has an empty label", self.id)
        object.__setattr__(self, "label", label)
        if not 0.0 <= self.detection_confidence <= 1.0:
            raise SceneInvariantError(
                f"object {self.id!r} confidence {self.detection_confidence} outside [0, 1]", self.id
            )

    @property
    def position(self) -> np.ndarray:
        return self.pose.position


@dataclass(frozen=True)
class SceneGraph:
    """Immutable snapshot of labelled object instances plus relation edges.

    Edges are stored pass-through; grounding never reads them.
    """

    nodes: tuple[ObjectNode, ...]
    edges: tuple[tuple[str, str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(tuple(e) for e in self.edges))
        seen: set[str] = set()
        for node in self.nodes:
            if node.id in seen:
                raise SceneInvariantError(f"duplicate node id {node.id!r}", node.id)
            seen.add(node.id)
        for a, b, _rel in self.edges:
            for end in (a, b):
                if end not in seen:
                    raise SceneInvariantError(f"edge endpoint {end!r} is not a node", end)

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self) -> Iterator[ObjectNode]:
        return iter(self.nodes)

    def __contains__(self, node_id: str) -> bool:
        return any(n.id == node_id for n in self.nodes)

    def get(self, node_id: str) -> ObjectNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def with_node(self, node: ObjectNode) -> "SceneGraph":
        return SceneGraph(self.nodes + (node,), self.edges)


@dataclass(frozen=True)
class GridGeometry:
    """Axis-aligned voxel lattice. Flat index = ix + nx * (iy + ny * iz)."""

    origin: tuple[float, float, float]
    resolution: float
    dims: tuple[int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in as_vec3(self.origin, "grid origin")))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise SceneInvariantError(f"grid dims must be three integers >= 1, got {self.dims}")
        if not (math.isfinite(self.resolution) and self.resolution > 0):
            raise SceneInvariantError(f"grid resolution must be > 0, got {self.resolution}")

    @property
    def size(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.dims, dtype=float) * self.resolution

    def axis_centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.dims[axis]) + 0.5) * self.resolution

    def cell_centers(self) -> np.ndarray:
        """Centers of every cell, shape ``dims + (3,)``."""
        xs, ys, zs = (self.axis_centers(a) for a in range(3))
        return np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1)

    def center_of(self, index: tuple[int, int, int]) -> np.ndarray:
        return np.asarray(self.origin) + (np.asarray(index, dtype=float) + 0.5) * self.resolution

    def cell_of(self, point) -> tuple[int, int, int]:
        """Index of the cell containing ``point``; may lie outside the grid."""
        rel = (np.asarray(point, dtype=float) - np.asarray(self.origin)) / self.resolution
        return tuple(int(v) for v in np.floor(rel))

    def in_bounds(self, index) -> bool:
        return all(0 <= i < d for i, d in zip(index, self.dims))

    def flat_index(self, index) -> int:
        ix, iy, iz = index
        nx, ny, _ = self.dims
        return ix + nx * (iy + ny * iz)

    def unflatten(self, flat: int) -> tuple[int, int, int]:
        nx, ny, _ = self.dims
        return flat % nx, (flat // nx) % ny, flat // (nx * ny)

    def with_resolution(self, resolution: float) -> "GridGeometry":
        """Same spatial extent (rounded up to whole cells) at a new resolution."""
        dims = tuple(max(1, int(math.ceil(e / resolution - 1e-9))) for e in self.extent)
        return GridGeometry(self.origin, resolution, dims)


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    geometry: GridGeometry
    cells: np.ndarray  # uint8 CellState values, shape == geometry.dims

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.uint8)
        if cells.shape != self.geometry.dims:
            raise SceneInvariantError(f"cell array shape {cells.shape} != dims {self.geometry.dims}")
        if cells.size and cells.max() > CellState.UNKNOWN:
            raise SceneInvariantError("cell states must be Free, Occupied or Unknown")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @classmethod
    def from_indices(cls, geometry: GridGeometry, occupied=(), unknown=()) -> "OccupancyGrid":
        flat = np.zeros(geometry.size, dtype=np.uint8)
        for name, idx, state in (("occupied", occupied, CellState.OCCUPIED), ("unknown", unknown, CellState.UNKNOWN)):
            idx = np.asarray(list(idx), dtype=np.int64)
            if idx.size and (idx.min() < 0 or idx.max() >= geometry.size):
                raise SceneInvariantError(f"{name} cell index out of range [0, {geometry.size})")
            flat[idx] = state
        return cls(geometry, flat.reshape(geometry.dims, order="F"))

    @classmethod
    def all_free(cls, geometry: GridGeometry) -> "OccupancyGrid":
        return cls(geometry, np.zeros(geometry.dims, dtype=np.uint8))

    def flat_cells(self) -> np.ndarray:
        return self.cells.ravel(order="F")

    def state_at(self, point) -> CellState:
        """State of the cell containing ``point``; outside the grid counts as Unknown."""
        idx = self.geometry.cell_of(point)
        if not self.geometry.in_bounds(idx):
            return CellState.UNKNOWN
        return CellState(int(self.cells[idx]))

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return self.geometry == other.geometry and np.array_equal(self.cells, other.cells)


@dataclass(frozen=True, eq=False)
class ObserverPose:
    position: np.ndarray
    yaw: float = 0.0
    pitch: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", as_vec3(self.position, "observer position"))
        if not (-math.pi < self.yaw <= math.pi):
            raise SceneInvariantError(f"observer yaw {self.yaw} outside (-pi, pi]")
        if not (-math.pi / 2 <= self.pitch <= math.pi / 2):
            raise SceneInvariantError(f"observer pitch {self.pitch} outside [-pi/2, pi/2]")

    @property
    def facing(self) -> np.ndarray:
        """Unit viewing direction projected to the horizontal plane."""
        return np.array([math.cos(self.yaw), math.sin(self.yaw), 0.0])

    def __eq__(self, other):
        if not isinstance(other, ObserverPose):
            return NotImplemented
        return np.array_equal(self.position, other.position) and (self.yaw, self.pitch) == (other.yaw, other.pitch)


def local_dir_to_world(pose: Pose, d) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    if d.shape != (3,) or abs(np.linalg.norm(d) - 1.0) > UNIT_TOL:
        raise ValueError(f"direction must be a unit 3-vector, got {d.tolist()}")
    return pose.rotation @ d


def free_mask(grid: OccupancyGrid) -> np.ndarray:
    """True where the cell is Free. Unknown cells are not navigable."""
    return grid.cells == CellState.FREE


def occupancy_from_boxes(geometry: GridGeometry, boxes: Iterable[OrientedBox]) -> OccupancyGrid:
    """Mark every cell whose center lies inside one of ``boxes`` as occupied."""
    centers = geometry.cell_centers().reshape(-1, 3)
    occ = np.zeros(len(centers), dtype=bool)
    for box in boxes:
        occ |= box.contains(centers)
    cells = np.where(occ, CellState.OCCUPIED, CellState.FREE).astype(np.uint8)
    return OccupancyGrid(geometry, cells.reshape(geometry.dims))


# --- scene file I/O -------------------------------------------------------

def _node_from_record(rec: Mapping, where: str) -> ObjectNode:
    try:
        node_id = str(rec["id"])
    except KeyError:
        raise SceneFormatError(f"{where}: object record without 'id'") from None
    try:
        rotation = rec.get("rotation", [1, 0, 0, 0, 1, 0, 0, 0, 1])
        known = bool(rec.get("known_orientation", True))
        pose = Pose(rec["position"], rotation, known)
        box = OrientedBox(rec["position"], rec["half_extents"], rotation)
        return ObjectNode(node_id, str(rec["label"]), pose, box, float(rec.get("confidence", 1.0)))
    except KeyError as exc:
        raise SceneFormatError(f"{where}: object {node_id!r} missing field {exc.args[0]!r}") from None
    except SceneInvariantError as exc:
        raise SceneInvariantError(f"object {node_id!r}: {exc}", node_id) from None


def scene_from_dict(data: Mapping, where: str = "<scene>") -> tuple[SceneGraph, OccupancyGrid]:
    if not isinstance(data, Mapping) or "objects" not in data or "grid" not in data:
        raise SceneFormatError(f"{where}: scene must be an object with 'objects' and 'grid'")
    nodes = [_node_from_record(rec, f"{where}: objects[{i}]") for i, rec in enumerate(data["objects"])]
    graph = SceneGraph(tuple(nodes), tuple(tuple(e) for e in data.get("edges", ())))
    g = data["grid"]
    try:
        geometry = GridGeometry(tuple(g["origin"]), float(g["resolution"]), tuple(g["dims"]))
    except KeyError as exc:
        raise SceneFormatError(f"{where}: grid missing field {exc.args[0]!r}") from None
    grid = OccupancyGrid.from_indices(geometry, g.get("occupied", ()), g.get("unknown", ()))
    return graph, grid


def load_scene(path) -> tuple[SceneGraph, OccupancyGrid]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        line = text.splitlines()[exc.lineno - 1] if exc.lineno - 1 < len(text.splitlines()) else ""
        raise SceneFormatError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}\n    {line.strip()}") from None
    return scene_from_dict(data, str(path))


def load_observer(data: Mapping) -> ObserverPose:
    return ObserverPose(data["position"], float(data.get("yaw", 0.0)), float(data.get("pitch", 0.0)))


def scene_to_dict(graph: SceneGraph, grid: OccupancyGrid) -> dict:
    objects = []
    for n in graph.nodes:
        objects.append({
            "id": n.id,
            "label": n.label,
            "position": n.pose.position.tolist(),
            "rotation": n.pose.rotation.reshape(-1).tolist(),
            "known_orientation": n.pose.known_orientation,
            "half_extents": n.box.half_extents.tolist(),
            "confidence": n.detection_confidence,
        })
    flat = grid.flat_cells()
    geo = grid.geometry
    out = {
        "objects": objects,
        "grid": {
            "origin": list(geo.origin),
            "resolution": geo.resolution,
            "dims": list(geo.dims),
            "occupied": np.flatnonzero(flat == CellState.OCCUPIED).tolist(),
            "unknown": np.flatnonzero(flat == CellState.UNKNOWN).tolist(),
        },
    }
    if graph.edges:
        out["edges"] = [list(e) for e in graph.edges]
    return out


def save_scene(path, graph: SceneGraph, grid: OccupancyGrid) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(graph, grid)) + "\n", encoding="utf-8")
