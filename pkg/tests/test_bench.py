from __future__ import annotations

import csv
import json
import math
import shutil
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spatialground.bench import (
    AGGREGATE_FIELDS,
    SynonymLabelMatcher,
    _angle_errors,
    export_report,
    load_dataset,
    report_json,
    run_bench,
)
from spatialground.config import PipelineConfig

FIXTURES = Path(__file__).parent / "fixtures"
MINI = FIXTURES / "mini.jsonl"


def mini_oracle():
    """Metrics for the mini dataset, worked out by hand from the scene layout.

    q1: fridge (3.05, 6.05, 0.85) facing +x; 2 m to its right is (3.05, 4.05, 0.85).
        gt (3.35, 4.45, 0.85): error (0.3, 0.4, 0) -> 0.5 m. Predicted yaw -90,
        gt offset (0.3, -1.6, 0) -> yaw atan2(-1.6, 0.3). Pitch 0 on both.
    q2: cabinet (9.05, 9.05, 0.55); 2 m behind is (7.05, 9.05, 0.55), yaw 180.
        gt offset (-3, -0.3, 0.3): yaw atan2(-0.3, -3) ~ -174.3, which wraps to a
        5.7 degree error; pitch atan2(0.3, hypot(3, 0.3)). Error (1, 0.3, -0.3).
    q3: near the sink (8.05, 3.05): couch_0 sits exactly 1 m away and wins;
        gt sofa_0 is a synonym; their centers differ by (0.3, 0.4, 0).
    """
    yaw1 = abs(-90.0 - math.degrees(math.atan2(-1.6, 0.3)))
    yaw2 = 360.0 - abs(180.0 - math.degrees(math.atan2(-0.3, -3.0)))
    pitch2 = math.degrees(math.atan2(0.3, math.hypot(3.0, 0.3)))
    ow1, ow2 = 0.5, math.sqrt(1.0 + 0.09 + 0.09)
    records = {
        "q1": dict(d_err_ow=ow1, yaw_err=yaw1, pitch_err=0.0, tsr=True, anchor_pick=True, anchor_id="fridge_0"),
        "q2": dict(d_err_ow=ow2, yaw_err=yaw2, pitch_err=pitch2, tsr=False, anchor_pick=True, anchor_id="cabinet_0"),
        "q3": dict(d_err_oo=0.5, obj_sel=True, tsr=True, anchor_pick=True, anchor_id="sink_0"),
    }
    aggregates = dict(
        n=3, d_err_oo=0.5, d_err_ow=(ow1 + ow2) / 2, yaw_err=(yaw1 + yaw2) / 2, yaw_err_median=(yaw1 + yaw2) / 2,
        pitch_err=pitch2 / 2, pitch_err_median=pitch2 / 2, obj_sel_acc=1.0, anchor_pick_sr=1.0, tsr=2 / 3,
        avg_traj_len=None,
    )
    return records, aggregates


def _close(a, b):
    if a is None or b is None or isinstance(a, (bool, str)):
        return a == b
    return abs(a - b) <= 1e-6


def test_mini_matches_oracle():
    report = run_bench(MINI)
    records, aggregates = mini_oracle()
    assert [r["id"] for r in report.records] == ["q1", "q2", "q3"]
    for rec in report.records:
        for key, value in records[rec["id"]].items():
            assert _close(rec[key], value), (rec["id"], key, rec[key], value)
    for key, value in aggregates.items():
        assert _close(report.aggregates[key], value), (key, report.aggregates[key], value)
    assert not any(report.failure_tags.values())
    assert report.validation_errors == ()


def _write_dataset(tmp_path, records):
    shutil.copy(FIXTURES / "mini_scene.json", tmp_path / "mini_scene.json")
    path = tmp_path / "data.jsonl"
    path.write_text("".join(json.dumps(r) + "\n" for r in records))
    return path


def _mini_records():
    return [json.loads(line) for line in MINI.read_text().splitlines()]


def test_exact_prediction_has_zero_error(tmp_path):
    rec = _mini_records()[0]
    rec["gt_point"] = [3.05, 4.05, 0.85]
    report = run_bench(_write_dataset(tmp_path, [rec]))
    (r,) = report.records
    assert r["d_err_ow"] == pytest.approx(0.0, abs=1e-12)
    assert r["yaw_err"] == pytest.approx(0.0, abs=1e-9) and r["pitch_err"] == pytest.approx(0.0, abs=1e-9)


def test_all_parse_failures(tmp_path):
    recs = _mini_records()
    for r in recs:
        r["text"] = "Hello world"
    report = run_bench(_write_dataset(tmp_path, recs))
    assert report.aggregates["tsr"] == 0.0
    assert report.failure_tags["parse"] == 3
    assert report.aggregates["d_err_ow"] is None and report.aggregates["obj_sel_acc"] == 0.0


def test_validation_errors_do_not_abort(tmp_path):
    recs = _mini_records()
    bad_kind = dict(recs[0], id="bad1", kind="HowQuery")
    both_gt = dict(recs[0], id="bad2", gt_object_id="sofa_0")
    unknown_id = dict(recs[2], id="bad3", gt_object_id="kettle_9")
    path = _write_dataset(tmp_path, recs + [bad_kind, both_gt, unknown_id])
    with path.open("a") as fh:
        fh.write("{not json\n")
    report = run_bench(path)
    assert [r["id"] for r in report.records] == ["q1", "q2", "q3"]
    assert sorted(str(e["id"]) for e in report.validation_errors) == ["None", "bad1", "bad2", "bad3"]
    queries, errors = load_dataset(path)
    assert len(queries) == 4 and len(errors) == 3


def test_json_roundtrip_and_determinism(tmp_path):
    report = run_bench(MINI)
    out = tmp_path / "r.json"
    export_report(report, out, "json")
    assert json.loads(out.read_text()) == report.to_dict()
    assert report_json(run_bench(MINI)) == out.read_text()
    assert report_json(run_bench(MINI, workers=3)) == out.read_text()


def test_csv_rows(tmp_path):
    report = run_bench(MINI)
    out = tmp_path / "r.csv"
    export_report(report, out, "csv")
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == len(report.records) + 1
    assert rows[-1]["id"] == "aggregate" and rows[-1]["n"] == "3"
    assert float(rows[0]["d_err_ow"]) == pytest.approx(0.5)


def test_empty_dataset(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    report = run_bench(path)
    assert report.aggregates["n"] == 0
    assert all(report.aggregates[k] is None for k in AGGREGATE_FIELDS if k != "n")
    export_report(report, tmp_path / "e.csv", "csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert len(lines) == 2 and lines[1].startswith("aggregate,")
    export_report(report, tmp_path / "e.json", "json")
    assert json.loads((tmp_path / "e.json").read_text())["records"] == []


def test_threshold_monotonic():
    base = PipelineConfig()
    tsr = []
    for thr in (0.1, 0.5, 1.0, 1.5, 5.0):
        cfg = replace(base, bench=replace(base.bench, tsr_distance_threshold=thr))
        tsr.append(run_bench(MINI, cfg).aggregates["tsr"])
    assert tsr == sorted(tsr) and tsr[-1] == 1.0


def test_top2_selection(tmp_path):
    recs = _mini_records()
    recs[2]["gt_object_id"] = "cabinet_0"  # ranked after couch and sofa
    path = _write_dataset(tmp_path, [recs[2]])
    base = PipelineConfig()
    assert run_bench(path).records[0]["obj_sel"] is False
    recs[2]["gt_object_id"] = "sofa_0"
    matcher = SynonymLabelMatcher()  # plain equality: couch != sofa
    path = _write_dataset(tmp_path, [recs[2]])
    assert run_bench(path, matcher=matcher).records[0]["obj_sel"] is False
    cfg = replace(base, bench=replace(base.bench, top2=True))
    assert run_bench(path, cfg, matcher=matcher).records[0]["obj_sel"] is True


def test_label_matcher():
    m = SynonymLabelMatcher.default()
    assert m.match("Sofa", "couch") and m.match("tv", "TV ")
    assert not m.match("couch", "table")


@settings(max_examples=200, deadline=None)
@given(st.floats(-math.pi, math.pi), st.floats(-1.2, 1.2), st.floats(0.2, 4), st.floats(-0.9, 0.9),
       st.floats(0.2, 4))
def test_yaw_error_mirror_symmetry(gt_yaw, delta, r_pred, gt_pitch, r_gt):
    anchor = np.array([1.0, -2.0, 0.5])
    gt = anchor + r_gt * np.array([math.cos(gt_yaw) * math.cos(gt_pitch), math.sin(gt_yaw) * math.cos(gt_pitch),
                                   math.sin(gt_pitch)])
    pred_a = anchor + r_pred * np.array([math.cos(gt_yaw + delta), math.sin(gt_yaw + delta), 0.1])
    pred_b = anchor + r_pred * np.array([math.cos(gt_yaw - delta), math.sin(gt_yaw - delta), 0.1])
    ya, _ = _angle_errors(pred_a, gt, anchor)
    yb, _ = _angle_errors(pred_b, gt, anchor)
    assert abs(ya - yb) <= 1e-6
    assert 0.0 <= ya <= 180.0
