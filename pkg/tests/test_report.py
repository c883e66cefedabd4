import json
import math
import statistics

import numpy as np
import pytest

from branchlab.milp import DataFormatError
from branchlab.report import (MANIFEST_FORMAT, MANIFEST_VERSION, accuracy_table, aggregate, format_ab,
                              format_values, read_manifest, report_manifest, solve_table)


def test_aggregate_constant():
    a, b = aggregate([10, 10, 10])
    assert a == pytest.approx(10.0, abs=1e-12) and b == pytest.approx(0.0, abs=1e-12)


def test_aggregate_two_points():
    a, b = aggregate([1.0, math.e ** 2])
    assert a == pytest.approx(math.e, abs=1e-12) and b == pytest.approx(100.0, abs=1e-12)


def test_aggregate_vs_recomputation():
    rng = np.random.default_rng(0)
    for _ in range(200):
        vals = rng.lognormal(size=int(rng.integers(1, 30))).tolist()
        logs = [math.log(v) for v in vals]
        a, b = aggregate(vals)
        assert abs(a - math.exp(statistics.fmean(logs))) <= 1e-12 * max(1.0, a)
        assert abs(b - 100 * statistics.pstdev(logs)) <= 1e-12 * max(1.0, b)


def test_aggregate_rejects_bad_input():
    for bad in ([], [0.0], [1.0, -2.0], [math.nan]):
        with pytest.raises(ValueError):
            aggregate(bad)


def test_format_two_points():
    assert format_values([1.0, 4.0]) == "2.00 ± 69%"


def test_format_large_and_floor():
    assert format_ab(1234.4, 12.4) == "1234 ± 12%"
    assert format_values([0.0, 0.0], floor=1e-3) == "0.00 ± 0%"


def _write_manifest(path, rows, **header):
    with open(path, "w") as fh:
        fh.write(json.dumps({"format": MANIFEST_FORMAT, "version": MANIFEST_VERSION, **header}) + "\n")
        for r in rows:
            fh.write(json.dumps(r) + "\n")


ROWS = [
    {"instance_id": "a", "policy": "gnn:mpnn", "status": "ok", "node_count": 4, "solve_time_s": 1.0},
    {"instance_id": "a", "policy": "mostfrac", "status": "ok", "node_count": 9, "solve_time_s": 0.5},
    {"instance_id": "a", "policy": "pseudocost", "status": "ok", "node_count": 3, "solve_time_s": 2.0},
    {"instance_id": "b", "policy": "gnn:mpnn", "status": "ok", "node_count": 16, "solve_time_s": 4.0},
    {"instance_id": "b", "policy": "mostfrac", "status": "limit", "node_count": 9, "solve_time_s": 0.0},
    {"instance_id": "b", "policy": "pseudocost", "status": "ok", "node_count": 3, "solve_time_s": 2.0},
    {"instance_id": "a", "policy": "gnn:fgnn2", "status": "model_oom_guard", "node_count": 0, "solve_time_s": 0.0},
]


def test_solve_table_pairs_models_with_baseline():
    text = solve_table(ROWS, "pseudocost")
    lines = [l for l in text.splitlines()[2:]]
    names = [l.split("  ")[0] for l in lines]
    assert names == ["gnn:fgnn2", "pseudocost (baseline)", "gnn:mpnn", "pseudocost (baseline)", "mostfrac"]
    assert "Model OOM" in lines[0]
    assert "2.00 ± 69%" in lines[2] and "8.00 ± 69%" in lines[2]
    assert "0.02 ± " in lines[4]  # 0 s floored to 1 ms


def test_accuracy_table():
    text = accuracy_table([{"arch": "mpnn", "loss": "rank", "accuracy": 0.5},
                           {"arch": "subgraph", "loss": "scores", "accuracy": 0.25}])
    lines = text.splitlines()
    assert lines[0].split() == ["arch", "scores", "rank"]
    assert lines[2].split() == ["mpnn", "-", "0.500"]
    assert lines[3].split() == ["subgraph", "0.250", "-"]


def test_report_regeneration_is_byte_identical(tmp_path):
    p = tmp_path / "m.jsonl"
    _write_manifest(p, ROWS, baseline="pseudocost", accuracy=[{"arch": "mpnn", "loss": "rank", "accuracy": 0.5}])
    first = report_manifest(p)
    assert first == report_manifest(p)
    assert "Accuracy" in first and "Time / Nodes" in first


def test_read_manifest_errors(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text("")
    with pytest.raises(DataFormatError):
        read_manifest(p)
    p.write_text(json.dumps({"format": "OTHER", "version": 1}) + "\n")
    with pytest.raises(DataFormatError):
        read_manifest(p)
    p.write_text(json.dumps({"format": MANIFEST_FORMAT, "version": MANIFEST_VERSION}) + "\n{broken\n")
    with pytest.raises(DataFormatError):
        read_manifest(p)
