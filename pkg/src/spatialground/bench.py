"""Benchmark harness: run the pipeline over a JSONL dataset and score it."""

from __future__ import annotations

import csv
import json
import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Protocol

import numpy as np

from .config import PipelineConfig
from .field import ZeroOffset, offset_angles
from .parser import QueryKind
from .pipeline import STAGES, FailedOutcome, WhereOutcome, WhichOutcome, default_provider, ground
from .resolver import normalize_text
from .scene import ObserverPose, SceneError, load_observer, load_scene


class DatasetError(ValueError):
    pass


class LabelMatcher(Protocol):
    def match(self, predicted: str, gt: str) -> bool: ...


class SynonymLabelMatcher:
    """Normalized equality, widened by groups of interchangeable labels."""

    def __init__(self, groups=()):
        self._group_of: dict[str, int] = {}
        for i, group in enumerate(groups):
            for label in group:
                self._group_of[normalize_text(label)] = i

    @classmethod
    def from_json(cls, path) -> "SynonymLabelMatcher":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(data.get("groups", []))

    @classmethod
    def default(cls) -> "SynonymLabelMatcher":
        text = resources.files("spatialground.data").joinpath("label_synonyms.json").read_text(encoding="utf-8")
        return cls(json.loads(text).get("groups", []))

    def match(self, predicted: str, gt: str) -> bool:
        a, b = normalize_text(predicted), normalize_text(gt)
        if a == b:
            return True
        ga, gb = self._group_of.get(a), self._group_of.get(b)
        return ga is not None and ga == gb


@dataclass(frozen=True, eq=False)
class BenchQuery:
    id: str
    scene_path: Path
    text: str
    kind: QueryKind
    gt_anchor_id: str
    observer: ObserverPose
    gt_point: np.ndarray | None = None
    gt_object_id: str | None = None


_REQUIRED = ("id", "scene_path", "text", "kind", "gt_anchor_id", "observer")


def query_from_dict(rec: Any, base_dir: Path) -> BenchQuery:
    if not isinstance(rec, dict):
        raise DatasetError("record is not a JSON object")
    missing = [k for k in _REQUIRED if k not in rec]
    if missing:
        raise DatasetError(f"missing field(s): {', '.join(missing)}")
    try:
        kind = QueryKind(rec["kind"])
    except ValueError:
        raise DatasetError(f"unknown kind {rec['kind']!r}") from None
    has_point, has_obj = rec.get("gt_point") is not None, rec.get("gt_object_id") is not None
    if has_point == has_obj:
        raise DatasetError("exactly one of gt_point / gt_object_id must be given")
    if (kind is QueryKind.WHERE) != has_point:
        raise DatasetError(f"{kind.value} needs {'gt_point' if kind is QueryKind.WHERE else 'gt_object_id'}")
    gt_point = None
    if has_point:
        gt_point = np.asarray(rec["gt_point"], dtype=float)
        if gt_point.shape != (3,) or not np.all(np.isfinite(gt_point)):
            raise DatasetError("gt_point must be three finite numbers")
    try:
        observer = load_observer(rec["observer"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"invalid observer: {exc}") from None
    return BenchQuery(
        id=str(rec["id"]),
        scene_path=(base_dir / rec["scene_path"]).resolve(),
        text=str(rec["text"]),
        kind=kind,
        gt_anchor_id=str(rec["gt_anchor_id"]),
        observer=observer,
        gt_point=gt_point,
        gt_object_id=None if not has_obj else str(rec["gt_object_id"]),
    )


def load_dataset(path) -> tuple[list[BenchQuery], list[dict]]:
    """Parse a JSONL dataset; bad records go to the error list instead of raising."""
    path = Path(path)
    queries, errors = [], []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        rec_id = None
        try:
            rec = json.loads(line)
            rec_id = rec.get("id") if isinstance(rec, dict) else None
            queries.append(query_from_dict(rec, path.parent))
        except json.JSONDecodeError as exc:
            errors.append({"line": lineno, "id": None, "error": f"invalid JSON: {exc.msg}"})
        except DatasetError as exc:
            errors.append({"line": lineno, "id": rec_id, "error": str(exc)})
    return queries, errors


# --- scoring ---------------------------------------------------------------

RECORD_FIELDS = (
    "id", "kind", "status", "failed_stage", "anchor_id", "anchor_pick",
    "d_err_oo", "d_err_ow", "yaw_err", "pitch_err", "obj_sel", "tsr", "traj_len",
)
AGGREGATE_FIELDS = (
    "n", "d_err_oo", "d_err_ow", "yaw_err", "yaw_err_median", "pitch_err", "pitch_err_median",
    "obj_sel_acc", "anchor_pick_sr", "tsr", "avg_traj_len",
)


def _angle_errors(pred, gt, anchor) -> tuple[float | None, float | None]:
    try:
        a, b = offset_angles(pred, anchor), offset_angles(gt, anchor)
    except ZeroOffset:
        return None, None
    dyaw = abs(a.yaw - b.yaw) % 360.0
    return min(dyaw, 360.0 - dyaw), abs(a.pitch - b.pitch)


def score_query(q: BenchQuery, config: PipelineConfig, matcher: LabelMatcher, scene_cache: dict) -> dict:
    graph, grid = scene_cache[q.scene_path]
    outcome = ground(q.text, graph, grid, q.observer, config, default_provider(config))
    anchor_id = outcome.ledger.committed_anchor(0)
    rec: dict[str, Any] = {k: None for k in RECORD_FIELDS}
    rec.update(id=q.id, kind=q.kind.value, status=outcome.kind, anchor_id=anchor_id,
               anchor_pick=anchor_id == q.gt_anchor_id, tsr=False)
    if isinstance(outcome, FailedOutcome):
        rec["failed_stage"] = outcome.stage
        if q.kind is QueryKind.WHICH_OBJECT:
            rec["obj_sel"] = False
        return rec
    if isinstance(outcome, WhereOutcome):
        if q.kind is not QueryKind.WHERE:
            rec["status"] = "kind_mismatch"
            if q.kind is QueryKind.WHICH_OBJECT:
                rec["obj_sel"] = False
            return rec
        anchor = graph.get(q.gt_anchor_id).position
        goal = outcome.goal.point
        rec["d_err_ow"] = float(np.linalg.norm(goal - q.gt_point))
        rec["yaw_err"], rec["pitch_err"] = _angle_errors(goal, q.gt_point, anchor)
        if outcome.path is not None:
            rec["traj_len"] = outcome.path.total_length
        rec["tsr"] = rec["d_err_ow"] <= config.bench.tsr_distance_threshold
        return rec
    assert isinstance(outcome, WhichOutcome)
    if q.kind is not QueryKind.WHICH_OBJECT:
        rec["status"] = "kind_mismatch"
        return rec
    top = graph.get(outcome.ranked[0][0])
    gt = graph.get(q.gt_object_id)
    rec["d_err_oo"] = float(np.linalg.norm(top.position - gt.position))
    considered = outcome.ranked[: 2 if config.bench.top2 else 1]
    rec["obj_sel"] = any(matcher.match(graph.get(i).label, gt.label) for i, _ in considered)
    rec["tsr"] = rec["obj_sel"]
    return rec


def _mean(values) -> float | None:
    vals = [float(v) for v in values if v is not None]
    return math.fsum(vals) / len(vals) if vals else None


def _median(values) -> float | None:
    vals = [float(v) for v in values if v is not None]
    return float(statistics.median(vals)) if vals else None


def aggregate(records: list[dict]) -> dict:
    which = [r for r in records if r["kind"] == QueryKind.WHICH_OBJECT.value]
    col = lambda name, rs=records: [r[name] for r in rs]  # noqa: E731
    return {
        "n": len(records),
        "d_err_oo": _mean(col("d_err_oo")),
        "d_err_ow": _mean(col("d_err_ow")),
        "yaw_err": _mean(col("yaw_err")),
        "yaw_err_median": _median(col("yaw_err")),
        "pitch_err": _mean(col("pitch_err")),
        "pitch_err_median": _median(col("pitch_err")),
        "obj_sel_acc": _mean([float(r["obj_sel"]) for r in which]),
        "anchor_pick_sr": _mean([float(r["anchor_pick"]) for r in records]),
        "tsr": _mean([float(r["tsr"]) for r in records]),
        "avg_traj_len": _mean(col("traj_len")),
    }


@dataclass(frozen=True)
class MetricsReport:
    records: tuple[dict, ...]
    aggregates: dict
    failure_tags: dict
    validation_errors: tuple[dict, ...] = ()
    settings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "settings": dict(self.settings),
            "aggregates": dict(self.aggregates),
            "failure_tags": dict(self.failure_tags),
            "records": [dict(r) for r in self.records],
            "validation_errors": [dict(e) for e in self.validation_errors],
        }


def build_report(records: list[dict], config: PipelineConfig, errors=()) -> MetricsReport:
    records = sorted(records, key=lambda r: r["id"])
    tags = {stage: 0 for stage in STAGES}
    for r in records:
        if r["failed_stage"] is not None:
            tags[r["failed_stage"]] += 1
    settings = {"tsr_distance_threshold": config.bench.tsr_distance_threshold, "top2": config.bench.top2}
    return MetricsReport(tuple(records), aggregate(records), tags, tuple(errors), settings)


def run_bench(dataset, config: PipelineConfig | None = None, workers: int = 1,
              matcher: LabelMatcher | None = None) -> MetricsReport:
    config = config or PipelineConfig()
    if matcher is None:
        matcher = (SynonymLabelMatcher.from_json(config.bench.synonyms) if config.bench.synonyms
                   else SynonymLabelMatcher.default())
    queries, errors = load_dataset(dataset)
    errors = list(errors)
    scenes: dict[Path, tuple] = {}
    valid = []
    for q in queries:
        if q.scene_path not in scenes:
            try:
                scenes[q.scene_path] = load_scene(q.scene_path)
            except (OSError, SceneError) as exc:
                scenes[q.scene_path] = exc
        loaded = scenes[q.scene_path]
        if isinstance(loaded, Exception):
            errors.append({"line": None, "id": q.id, "error": f"scene {q.scene_path.name}: {loaded}"})
            continue
        graph = loaded[0]
        missing = [i for i in (q.gt_anchor_id, q.gt_object_id) if i is not None and i not in graph]
        if missing:
            errors.append({"line": None, "id": q.id, "error": f"unknown id(s) in scene: {', '.join(missing)}"})
            continue
        valid.append(q)
    ids = [q.id for q in valid]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        errors.append({"line": None, "id": None, "error": f"duplicate query id(s): {', '.join(dupes)}"})
        valid = [q for q in valid if q.id not in dupes]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda q: score_query(q, config, matcher, scenes), valid))
    else:
        records = [score_query(q, config, matcher, scenes) for q in valid]
    return build_report(records, config, errors)


# --- export ----------------------------------------------------------------

def report_json(report: MetricsReport) -> str:
    return json.dumps(report.to_dict(), indent=2, allow_nan=False) + "\n"


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def export_report(report: MetricsReport, path, fmt: str = "json") -> None:
    path = Path(path)
    if fmt == "json":
        path.write_text(report_json(report), encoding="utf-8")
        return
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}")
    columns = RECORD_FIELDS + ("n", "yaw_err_median", "pitch_err_median")
    agg = report.aggregates
    agg_row = {
        "id": "aggregate", "anchor_pick": agg["anchor_pick_sr"], "d_err_oo": agg["d_err_oo"],
        "d_err_ow": agg["d_err_ow"], "yaw_err": agg["yaw_err"], "pitch_err": agg["pitch_err"],
        "obj_sel": agg["obj_sel_acc"], "tsr": agg["tsr"], "traj_len": agg["avg_traj_len"],
        "n": agg["n"], "yaw_err_median": agg["yaw_err_median"], "pitch_err_median": agg["pitch_err_median"],
    }
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for r in report.records:
            writer.writerow([_cell(r.get(c)) for c in columns])
        writer.writerow([_cell(agg_row.get(c)) for c in columns])
