"""Goal density over free space: log-space composition and goal extraction."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .kernels import KernelSet
from .scene import GridGeometry, OccupancyGrid, free_mask


class FieldError(ValueError):
    pass


class EmptyFreeSpace(FieldError):
    pass


class AllMasked(FieldError):
    pass


class ZeroOffset(FieldError):
    pass


@dataclass(frozen=True, eq=False)
class DensityGrid:
    geometry: GridGeometry
    log_values: np.ndarray  # shape == geometry.dims; -inf on masked cells
    normalized: bool = False

    def __post_init__(self):
        if self.log_values.shape != self.geometry.dims:
            raise FieldError(f"log field shape {self.log_values.shape} != dims {self.geometry.dims}")

    def probabilities(self) -> np.ndarray:
        if not self.normalized:
            raise FieldError("density is not normalized")
        return np.exp(self.log_values)

    def flat_log(self) -> np.ndarray:
        return self.log_values.ravel(order="F")


@dataclass(frozen=True, eq=False)
class GoalSample:
    point: np.ndarray
    weight: float
    flat_index: int

    def to_dict(self) -> dict:
        return {"point": [float(v) for v in self.point], "weight": float(self.weight), "cell": int(self.flat_index)}


@dataclass(frozen=True)
class OffsetAngles:
    yaw: float  # degrees, (-180, 180]
    pitch: float  # degrees, [-90, 90]


def rasterize(kernels: KernelSet, geometry: GridGeometry, mask: np.ndarray | None) -> DensityGrid:
    """Sum kernel log densities at cell centers; cells outside ``mask`` get -inf.

    ``mask=None`` evaluates every cell.
    """
    if mask is None:
        mask = np.ones(geometry.dims, dtype=bool)
    if mask.shape != geometry.dims:
        raise FieldError(f"mask shape {mask.shape} does not match geometry dims {geometry.dims}")
    if not mask.any():
        raise EmptyFreeSpace("no free cells to place a goal in")
    log_values = np.full(geometry.dims, -np.inf)
    log_values[mask] = kernels.log_density(geometry.cell_centers()[mask])
    return DensityGrid(geometry, log_values, normalized=False)


def logsumexp(values: np.ndarray) -> float:
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        raise AllMasked("every cell is masked")
    peak = finite.max()
    return float(peak + math.log(np.exp(finite - peak).sum()))


def normalize(g: DensityGrid) -> DensityGrid:
    lse = logsumexp(g.log_values)
    return replace(g, log_values=g.log_values - lse, normalized=True)


def _cell_count(g: DensityGrid) -> int:
    return int(np.isfinite(g.log_values).sum())


def _sample(g: DensityGrid, flat: int, weight: float) -> GoalSample:
    return GoalSample(g.geometry.center_of(g.geometry.unflatten(flat)), weight, flat)


def argmax_goal(g: DensityGrid) -> GoalSample:
    flat_log = g.flat_log()
    if not np.isfinite(flat_log).any():
        raise AllMasked("every cell is masked")
    flat = int(np.argmax(flat_log))  # first maximum, i.e. smallest flat index
    return _sample(g, flat, float(np.exp(flat_log[flat])))


def topk_goals(g: DensityGrid, k: int, nms_radius: float = 0.5) -> list[GoalSample]:
    """Greedy non-maximum suppression over cells with positive probability."""
    if k < 1:
        raise ValueError("k must be >= 1")
    flat_log = g.flat_log()
    weights = np.exp(flat_log)
    candidates = np.flatnonzero(weights > 0)
    if candidates.size == 0:
        return []
    order = candidates[np.lexsort((candidates, -flat_log[candidates]))]
    idx = np.stack(np.unravel_index(order, g.geometry.dims, order="F"), axis=-1)
    centers = np.asarray(g.geometry.origin) + (idx + 0.5) * g.geometry.resolution
    alive = np.ones(len(order), dtype=bool)
    picked: list[GoalSample] = []
    while len(picked) < k and alive.any():
        i = int(np.argmax(alive))
        picked.append(GoalSample(centers[i], float(weights[order[i]]), int(order[i])))
        alive &= np.linalg.norm(centers - centers[i], axis=1) >= nms_radius
    return picked


def importance_sample(g: DensityGrid, n: int, seed: int) -> list[GoalSample]:
    """Draw ``n`` cells with probability proportional to mass (Philox stream)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    weights = np.exp(g.flat_log())
    cdf = np.cumsum(weights)
    if cdf[-1] <= 0:
        raise AllMasked("density has no mass")
    rng = np.random.Generator(np.random.Philox(seed))
    u = rng.random(n) * cdf[-1]
    cells = np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)
    return [_sample(g, int(c), float(weights[c])) for c in cells]


def offset_angles(goal, anchor) -> OffsetAngles:
    v = np.asarray(goal, dtype=float) - np.asarray(anchor, dtype=float)
    if np.linalg.norm(v) < 1e-6:
        raise ZeroOffset("goal coincides with the anchor")
    yaw = math.degrees(math.atan2(v[1], v[0]))
    if yaw <= -180.0:
        yaw = 180.0
    pitch = math.degrees(math.atan2(v[2], math.hypot(v[0], v[1])))
    return OffsetAngles(yaw, pitch)


def free_mass_fraction(unmasked: DensityGrid, mask: np.ndarray) -> float:
    """Share of the unmasked composed density that falls on free cells."""
    p = normalize(unmasked).probabilities()
    return float(p[mask].sum())


def count_modes(g: DensityGrid, rel_threshold: float = 0.5) -> int:
    """Number of separate regions whose mass reaches ``rel_threshold`` of the peak.

    Each such region holds at least one local maximum above the threshold;
    regions are 26-connected components of the superlevel set.
    """
    p = np.exp(g.log_values - np.max(g.log_values))
    _, count = ndimage.label(p >= rel_threshold, structure=np.ones((3, 3, 3)))
    return int(count)


def resample_mask(grid: OccupancyGrid, geometry: GridGeometry) -> np.ndarray:
    """Free mask of ``grid`` looked up at the cell centers of another geometry."""
    src = grid.geometry
    centers = geometry.cell_centers()
    idx = np.floor((centers - np.asarray(src.origin)) / src.resolution).astype(np.int64)
    inside = np.all((idx >= 0) & (idx < np.asarray(src.dims)), axis=-1)
    mask = np.zeros(geometry.dims, dtype=bool)
    free = free_mask(grid)
    sel = idx[inside]
    mask[inside] = free[sel[:, 0], sel[:, 1], sel[:, 2]]
    return mask


# --- export ---------------------------------------------------------------

def write_density_csv(g: DensityGrid, path, threshold: float = 0.0) -> int:
    """Write ``ix,iy,iz,probability`` rows for cells above ``threshold``; returns row count."""
    flat = g.flat_log()
    p = np.exp(flat)
    rows = np.flatnonzero(p > threshold)
    nx, ny, _ = g.geometry.dims
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("ix,iy,iz,probability\n")
        for f in rows:
            fh.write(f"{f % nx},{(f // nx) % ny},{f // (nx * ny)},{p[f]:.12g}\n")
    return int(rows.size)


def slice_pgm(g: DensityGrid, z_index: int) -> str:
    """Plain PGM (P2) of one horizontal slice; top row is the largest y."""
    nx, ny, nz = g.geometry.dims
    if not 0 <= z_index < nz:
        raise FieldError(f"slice index {z_index} outside [0, {nz})")
    p = np.exp(g.log_values[:, :, z_index])
    peak = p.max()
    gray = np.zeros_like(p, dtype=np.int64) if peak <= 0 else np.rint(p / peak * 255).astype(np.int64)
    lines = ["P2", f"{nx} {ny}", "255"]
    for iy in range(ny - 1, -1, -1):
        lines.append(" ".join(str(v) for v in gray[:, iy]))
    return "\n".join(lines) + "\n"


def write_slice_pgm(g: DensityGrid, z_index: int, path) -> None:
    Path(path).write_text(slice_pgm(g, z_index), encoding="utf-8")
