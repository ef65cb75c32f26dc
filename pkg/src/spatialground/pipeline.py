"""End-to-end grounding: parse, resolve, kernelize, compose, verify, select.

Every stage reads and returns a :class:`Ledger`; nothing is shared between
runs, so concurrent runs over one scene snapshot are independent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .config import PipelineConfig
from .field import (
    DensityGrid,
    FieldError,
    GoalSample,
    OffsetAngles,
    ZeroOffset,
    argmax_goal,
    free_mass_fraction,
    importance_sample,
    normalize,
    offset_angles,
    rasterize,
    resample_mask,
    topk_goals,
)
from .kernels import KernelError, KernelSet, clause_to_kernels
from .parser import ParseError, SDCQuery, QueryKind, parse
from .planner import Path, PlanningError, plan, project_to_slice
from .resolver import (
    Belief,
    Decision,
    EmptyGraph,
    SimilarityProvider,
    TableSimilarityProvider,
    decide,
    resolve,
)
from .scene import CellState, GridGeometry, ObjectNode, ObserverPose, OccupancyGrid, SceneGraph, free_mask

log = logging.getLogger(__name__)

STAGES = ("parse", "resolve", "kernelize", "compose", "verify", "select", "plan")


class DuplicateId(ValueError):
    pass


class RetryLimitExceeded(RuntimeError):
    pass


def default_provider(config: PipelineConfig) -> SimilarityProvider:
    if config.similarity_table:
        return TableSimilarityProvider.from_json(config.similarity_table)
    return TableSimilarityProvider.default()


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class VerifierReport:
    checks: tuple[Check, ...]

    @property
    def overall(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in self.checks],
        }


@dataclass(frozen=True, eq=False)
class Ledger:
    scene: SceneGraph
    grid: OccupancyGrid
    observer: ObserverPose
    config: PipelineConfig = field(default_factory=PipelineConfig)
    provider: SimilarityProvider | None = None
    query: SDCQuery | None = None
    beliefs: dict[int, tuple[Belief, ...]] = field(default_factory=dict)
    decisions: dict[int, tuple[Decision, ...]] = field(default_factory=dict)
    anchor_ids: dict[int, tuple[str, ...]] = field(default_factory=dict)
    kernels: dict[int, KernelSet] = field(default_factory=dict)
    density: DensityGrid | None = None
    unmasked: DensityGrid | None = None
    free_mass: float | None = None
    attempts: int = 0
    reports: tuple[VerifierReport, ...] = ()

    def __post_init__(self):
        if self.provider is None:
            object.__setattr__(self, "provider", default_provider(self.config))
        if self.attempts > self.config.retry.limit:
            raise RetryLimitExceeded(f"attempts {self.attempts} exceed retry limit {self.config.retry.limit}")
        n = len(self.query.clauses) if self.query else 0
        for table in (self.beliefs, self.decisions, self.anchor_ids, self.kernels):
            if any(not 0 <= k < n for k in table):
                raise ValueError("ledger entries must be keyed by existing clause indices")

    @property
    def composed(self) -> KernelSet:
        sets = [self.kernels[i] for i in sorted(self.kernels)]
        total = sets[0]
        for ks in sets[1:]:
            total = total + ks
        return total

    def geometry(self) -> GridGeometry:
        res = self.config.density_resolution
        geo = self.grid.geometry
        return geo if res is None or res == geo.resolution else geo.with_resolution(res)

    def mask(self) -> np.ndarray:
        geo = self.geometry()
        return free_mask(self.grid) if geo == self.grid.geometry else resample_mask(self.grid, geo)

    def committed_anchor(self, clause_index: int = 0) -> str | None:
        decisions = self.decisions.get(clause_index)
        return decisions[0].node_id if decisions else None

    def summary(self) -> dict:
        out: dict[str, Any] = {
            "clauses": self.query.canonical() if self.query else [],
            "beliefs": {
                str(i): [dict(sorted(b.entries.items())) for b in bs] for i, bs in sorted(self.beliefs.items())
            },
            "decisions": {str(i): [d.node_id for d in ds] for i, ds in sorted(self.decisions.items())},
            "anchors": {str(i): list(a) for i, a in sorted(self.anchor_ids.items())},
            "attempts": self.attempts,
            "free_mass": self.free_mass,
            "verifier": [r.to_dict() for r in self.reports],
        }
        return out


@dataclass(frozen=True, eq=False)
class WhereOutcome:
    goal: GoalSample
    alternatives: tuple[GoalSample, ...]
    angles: OffsetAngles | None
    anchor_point: np.ndarray
    path: Path | None
    ledger: Ledger
    kind = "where"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "goal": self.goal.to_dict(),
            "alternatives": [g.to_dict() for g in self.alternatives],
            "angles": None if self.angles is None else {"yaw": self.angles.yaw, "pitch": self.angles.pitch},
            "anchor_point": self.anchor_point.tolist(),
            "path": None if self.path is None else self.path.to_dict(),
            "ledger": self.ledger.summary(),
        }


@dataclass(frozen=True, eq=False)
class WhichOutcome:
    ranked: tuple[tuple[str, float], ...]
    ledger: Ledger
    kind = "which"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "ranked": [[node_id, score] for node_id, score in self.ranked],
            "ledger": self.ledger.summary(),
        }


@dataclass(frozen=True, eq=False)
class FailedOutcome:
    stage: str
    reason: str
    ledger: Ledger
    kind = "failed"

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "stage": self.stage, "reason": self.reason, "ledger": self.ledger.summary()}


GroundingOutcome = WhereOutcome | WhichOutcome | FailedOutcome


# --- stages ----------------------------------------------------------------

def parse_stage(ledger: Ledger, text: str) -> Ledger:
    return replace(ledger, query=parse(text))


def resolve_stage(ledger: Ledger) -> Ledger:
    cfg = ledger.config.resolver
    beliefs, decisions, anchors = {}, {}, {}
    for i, clause in enumerate(ledger.query.clauses):
        bs = tuple(resolve(text, ledger.scene, ledger.observer, ledger.provider, cfg) for text in clause.anchors)
        beliefs[i] = bs
        decisions[i] = tuple(decide(b, cfg.commit_threshold) for b in bs)
        anchors[i] = tuple(b.argmax()[0] for b in bs)
    return replace(ledger, beliefs=beliefs, decisions=decisions, anchor_ids=anchors)


def kernelize_stage(ledger: Ledger) -> Ledger:
    params = ledger.config.kernels
    kernels = {}
    for i, clause in enumerate(ledger.query.clauses):
        nodes = [ledger.scene.get(a) for a in ledger.anchor_ids[i]]
        second = nodes[1] if len(nodes) > 1 else None
        kernels[i] = clause_to_kernels(clause, nodes[0], second, ledger.observer, params.frame_policy, params)
    return replace(ledger, kernels=kernels)


def compose_stage(ledger: Ledger) -> Ledger:
    geo = ledger.geometry()
    mask = ledger.mask()
    unmasked = rasterize(ledger.composed, geo, None)
    if not mask.any():
        rasterize(ledger.composed, geo, mask)  # raises EmptyFreeSpace
    masked = DensityGrid(geo, np.where(mask, unmasked.log_values, -np.inf))
    density = normalize(masked)
    return replace(
        ledger,
        density=density,
        unmasked=normalize(unmasked),
        free_mass=free_mass_fraction(unmasked, mask),
    )


def _anchor_box_cells_near(ledger: Ledger, point: np.ndarray) -> list[tuple[int, int, int]]:
    """Occupied cells in the 26-neighbourhood of ``point`` lying inside a committed anchor box."""
    committed = {d.node_id for ds in ledger.decisions.values() for d in ds if d.committed}
    boxes = [ledger.scene.get(i).box for i in sorted(committed)]
    geo = ledger.grid.geometry
    cx, cy, cz = geo.cell_of(point)
    hits = []
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                idx = (cx + dx, cy + dy, cz + dz)
                if not geo.in_bounds(idx) or ledger.grid.cells[idx] != CellState.OCCUPIED:
                    continue
                center = geo.center_of(idx)
                if any(box.contains(center)[0] for box in boxes):
                    hits.append(idx)
    return hits


def verify(ledger: Ledger) -> VerifierReport:
    if ledger.density is None:
        raise ValueError("verify needs a composed density")
    retry = ledger.config.retry
    deferred = [i for i, ds in sorted(ledger.decisions.items()) if not all(d.committed for d in ds)]
    checks = [
        Check(
            "anchors_committed",
            not deferred,
            "all anchors committed" if not deferred else f"deferred clause(s): {', '.join(map(str, deferred))}",
        )
    ]
    mass = ledger.free_mass
    checks.append(Check(
        "free_space_mass",
        mass >= retry.free_mass_threshold,
        f"free-space mass {mass:.4f} vs threshold {retry.free_mass_threshold}",
    ))
    peak = argmax_goal(ledger.density)
    hits = _anchor_box_cells_near(ledger, peak.point)
    checks.append(Check(
        "peak_clear_of_anchor",
        not hits,
        "peak is clear of anchor interiors" if not hits else f"peak touches {len(hits)} anchor-interior cell(s)",
    ))
    return VerifierReport(tuple(checks))


def retry_relax(ledger: Ledger) -> Ledger:
    retry = ledger.config.retry
    if ledger.attempts >= retry.limit:
        raise RetryLimitExceeded(f"retry limit {retry.limit} reached")
    kernels = {i: ks.relaxed(retry.sigma_factor, retry.kappa_factor) for i, ks in ledger.kernels.items()}
    relaxed = replace(ledger, kernels=kernels, attempts=ledger.attempts + 1)
    return compose_stage(relaxed)


def insert_node(ledger: Ledger, node: ObjectNode) -> Ledger:
    """New snapshot including ``node``; beliefs are recomputed, later stages cleared."""
    if node.id in ledger.scene:
        raise DuplicateId(f"node id {node.id!r} already in the scene graph")
    grown = replace(
        ledger,
        scene=ledger.scene.with_node(node),
        beliefs={}, decisions={}, anchor_ids={}, kernels={},
        density=None, unmasked=None, free_mass=None, attempts=0, reports=(),
    )
    return resolve_stage(grown) if grown.query is not None else grown


def _select_where(ledger: Ledger) -> WhereOutcome:
    ext = ledger.config.extraction
    density = ledger.density
    alternatives = tuple(topk_goals(density, ext.top_k, ext.nms_radius))
    if ext.mode == "sample":
        draws = importance_sample(density, ext.num_samples, ext.seed)
        goal = min(draws, key=lambda s: (-s.weight, s.flat_index))
    elif ext.mode == "topk":
        goal = alternatives[0]
    else:
        goal = argmax_goal(density)
    first = [ledger.scene.get(a).position for a in ledger.anchor_ids[0]]
    anchor_point = np.mean(first, axis=0)
    try:
        angles = offset_angles(goal.point, anchor_point)
    except ZeroOffset:
        angles = None
    return WhereOutcome(goal, alternatives, angles, anchor_point, None, ledger)


def _select_which(ledger: Ledger) -> WhichOutcome | FailedOutcome:
    excluded = {a for ids in ledger.anchor_ids.values() for a in ids}
    candidates = [n for n in ledger.scene if n.id not in excluded]
    if not candidates:
        return FailedOutcome("select", "no candidate objects besides the anchors", ledger)
    composed = ledger.composed
    scores = [(n.id, float(composed.log_density(n.position[None, :])[0])) for n in candidates]
    scores.sort(key=lambda s: (-s[1], s[0]))
    return WhichOutcome(tuple(scores), ledger)


def planning_slice(grid: OccupancyGrid, observer: ObserverPose) -> int:
    iz = grid.geometry.cell_of(observer.position)[2]
    return min(max(iz, 0), grid.geometry.dims[2] - 1)


def continue_grounding(ledger: Ledger) -> GroundingOutcome:
    """Run kernelize, compose, verify and selection on a resolved ledger."""
    try:
        ledger = kernelize_stage(ledger)
    except (KernelError, KeyError) as exc:
        return FailedOutcome("kernelize", f"{type(exc).__name__}: {exc}", ledger)
    try:
        ledger = compose_stage(ledger)
    except FieldError as exc:
        return FailedOutcome("compose", f"{type(exc).__name__}: {exc}", ledger)

    while True:
        report = verify(ledger)
        ledger = replace(ledger, reports=ledger.reports + (report,))
        if report.overall:
            break
        log.debug("verifier failed %s on attempt %d", report.failed(), ledger.attempts)
        if "anchors_committed" in report.failed():
            # Relaxing kernels cannot commit an anchor; wait for the map to grow instead.
            return FailedOutcome("verify", f"deferred anchor: {report.checks[0].detail}", ledger)
        try:
            ledger = retry_relax(ledger)
        except RetryLimitExceeded as exc:
            return FailedOutcome("verify", f"RetryLimitExceeded: {exc}; failing checks: {', '.join(report.failed())}", ledger)
        except FieldError as exc:
            return FailedOutcome("compose", f"{type(exc).__name__}: {exc}", ledger)

    if ledger.query.kind is QueryKind.WHICH_OBJECT:
        return _select_which(ledger)
    outcome = _select_where(ledger)
    if not ledger.config.plan_path:
        return outcome
    try:
        slice_z = planning_slice(ledger.grid, ledger.observer)
        goal = project_to_slice(ledger.grid, slice_z, outcome.goal.point)
        path = plan(ledger.grid, slice_z, ledger.observer.position, goal, ledger.config.planner)
    except PlanningError as exc:
        return FailedOutcome("plan", f"{type(exc).__name__}: {exc}", ledger)
    return replace(outcome, path=path)


def ground(text: str, scene: SceneGraph, grid: OccupancyGrid, observer: ObserverPose,
           config: PipelineConfig | None = None, provider: SimilarityProvider | None = None) -> GroundingOutcome:
    """Ground ``text`` in the scene. Errors become :class:`FailedOutcome` values."""
    ledger = Ledger(scene, grid, observer, config or PipelineConfig(), provider)
    try:
        ledger = parse_stage(ledger, text)
    except ParseError as exc:
        return FailedOutcome("parse", f"{type(exc).__name__}: {exc}", ledger)
    try:
        ledger = resolve_stage(ledger)
    except EmptyGraph as exc:
        return FailedOutcome("resolve", f"{type(exc).__name__}: {exc}", ledger)
    return continue_grounding(ledger)
