from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import pytest

from spatialground.cli import main

FIXTURES = Path(__file__).parent / "fixtures"
KITCHEN = str(FIXTURES / "kitchen.json")
FRIDGE = "Where is 2 meters to the right of the fridge?"


def default_config_path() -> str:
    return str(resources.files("spatialground.data").joinpath("default_config.json"))


def test_parse_prints_canonical(capsys):
    assert main(["parse", FRIDGE]) == 0
    assert capsys.readouterr().out == "right_of(fridge, 2.000m)\n"


def test_parse_json(capsys):
    assert main(["parse", "--json", "Place the cup near the sink and to the left of the microwave"]) == 0
    assert json.loads(capsys.readouterr().out) == {
        "kind": "WhichObjectQuery", "clauses": ["near(sink)", "left_of(microwave)"]}


def test_parse_error_exit_two(capsys):
    assert main(["parse", "Hello world"]) == 2
    captured = capsys.readouterr()
    assert captured.out == "" and "parse error" in captured.err


def test_no_arguments_is_usage_error(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_rejected(capsys):
    assert main(["parse", "--frobnicate", FRIDGE]) == 2
    assert "usage" in capsys.readouterr().err


def test_ground_text_and_files(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    path_file, density_file = tmp_path / "path.json", tmp_path / "density.csv"
    code = main(["ground", "--scene", KITCHEN, "--query", FRIDGE,
                 "--emit-path", str(path_file), "--emit-density", str(density_file)])
    assert code == 0
    out = capsys.readouterr().out
    assert out.startswith("goal 5.050 8.050 0.850")
    path = json.loads(path_file.read_text())
    assert set(path) == {"waypoints", "total_length"} and len(path["waypoints"][0]) == 3
    assert density_file.read_text().startswith("ix,iy,iz,probability\n")
    assert sorted(p.name for p in tmp_path.iterdir()) == ["density.csv", "path.json"]


def test_ground_json_deterministic(capsys):
    args = ["--seed", "4", "ground", "--scene", KITCHEN, "--query", "Which object is near the sink?", "--json"]
    assert main(args) == 0
    first = capsys.readouterr().out
    assert main(args) == 0
    assert capsys.readouterr().out == first
    assert json.loads(first)["ranked"][0][0] == "fridge_0"


def test_ground_failure_codes(capsys):
    assert main(["ground", "--scene", KITCHEN, "--query", "Hello world"]) == 2
    assert main(["ground", "--scene", KITCHEN, "--query", "Where is 1 cm to the right of the fridge?"]) == 1
    assert main(["ground", "--scene", "missing.json", "--query", FRIDGE]) == 1
    assert main(["ground", "--scene", str(FIXTURES / "mini_scene.json"), "--query", FRIDGE]) == 2  # no observer
    assert main(["ground", "--scene", str(FIXTURES / "mini_scene.json"), "--query", FRIDGE,
                 "--observer", "6,6,1.2,0"]) == 0
    capsys.readouterr()


def test_bad_config(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kernels": {"kapa": 3}}))
    assert main(["ground", "--config", str(cfg), "--scene", KITCHEN, "--query", FRIDGE]) == 1
    assert "kapa" in capsys.readouterr().err


def test_render_density(tmp_path):
    out = tmp_path / "slice.pgm"
    assert main(["render-density", "--scene", KITCHEN, "--query", FRIDGE, "--slice-z", "8", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[:3] == ["P2", "200 200", "255"] and len(lines) == 203
    assert max(int(v) for line in lines[3:] for v in line.split()) == 255
    assert main(["render-density", "--scene", KITCHEN, "--query", FRIDGE, "--slice-z", "99", "--out", str(out)]) == 2


def test_bench_writes_report(tmp_path):
    out = tmp_path / "r.json"
    args = ["bench", "--dataset", str(FIXTURES / "mini.jsonl"), "--config", default_config_path(), "--out", str(out)]
    assert main(args) == 0
    first = out.read_bytes()
    assert json.loads(first)["aggregates"]["n"] == 3
    assert main(args) == 0
    assert out.read_bytes() == first
    csv_out = tmp_path / "r.csv"
    assert main(["bench", "--dataset", str(FIXTURES / "mini.jsonl"), "--out", str(csv_out), "--format", "csv",
                 "--top2"]) == 0
    assert len(csv_out.read_text().splitlines()) == 5


def test_bench_validation_failure_exit_one(tmp_path, capsys):
    data = tmp_path / "d.jsonl"
    data.write_text('{"id": "x"}\n')
    out = tmp_path / "r.json"
    assert main(["bench", "--dataset", str(data), "--out", str(out)]) == 1
    assert out.exists() and "missing field" in capsys.readouterr().err


@pytest.mark.parametrize("flag", ["--help", "--version"])
def test_help_and_version_exit_zero(flag, capsys):
    assert main([flag]) == 0
    capsys.readouterr()
