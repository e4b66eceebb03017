import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gpurel.core import DAY
from gpurel.ettr import SweepResult, ettr_sweep
from gpurel.failure_stats import MttfRow, RollingRate
from gpurel.goodput import CascadeRow, GoodputBreakdown
from gpurel.lemon import NodeSignals
from gpurel.report import bar_svg, contour_svg, csv_text, line_svg, marching_squares, provenance, read_csv_rows
from gpurel.workload import StatusRow

SVG_NS = "{http://www.w3.org/2000/svg}"


def sweep20():
    return ettr_sweep(1500, 300.0, 30 * DAY, np.geomspace(5e-4, 1e-2, 20), np.geomspace(1, 600, 20))


def test_contour_has_labelled_levels():
    svg = contour_svg(sweep20(), meta=provenance(seed=1, config_hash="abc"))
    root = ET.fromstring(svg)
    labels = [t.text for t in root.iter(f"{SVG_NS}text") if t.get("class") == "level-label"]
    assert labels == ["ETTR 0.7", "ETTR 0.9", "ETTR 0.99"]
    groups = [g for g in root.iter(f"{SVG_NS}g") if g.get("class") == "level"]
    assert [g.get("data-level") for g in groups] == ["0.7", "0.9", "0.99"]
    assert all(len(list(g)) > 0 for g in groups)
    meta = json.loads(root.find(f"{SVG_NS}metadata").text)
    assert meta["seed"] == 1 and meta["config_hash"] == "abc" and "tool_version" in meta


def test_contour_empty_sweep():
    empty = SweepResult(1, 0.0, 1.0, np.array([]), np.array([]), np.zeros((0, 0)), np.zeros((0, 0)),
                        np.zeros((0, 0), bool), np.zeros((0, 0), bool))
    with pytest.raises(ValueError, match="no cells"):
        contour_svg(empty)


@settings(max_examples=30)
@given(st.integers(0, 10_000), st.floats(0.2, 0.8))
def test_marching_squares_endpoints_lie_on_level(seed, level):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0, 10, 6))
    y = np.sort(rng.uniform(0, 10, 5))
    x += np.arange(6) * 1e-3
    y += np.arange(5) * 1e-3
    a, b, c = rng.uniform(-1, 1, 3)
    z = 0.5 + 0.04 * (a * x[:, None] + b * y[None, :]) + 0.01 * c
    for p, q in marching_squares(x, y, z, level):
        for px, py in (p, q):
            # linear interpolation along cell edges is exact for a planar field
            want = 0.5 + 0.04 * (a * px + b * py) + 0.01 * c
            assert want == pytest.approx(level, abs=1e-9)


def test_marching_squares_no_crossing():
    z = np.ones((3, 3))
    assert marching_squares(np.arange(3.0), np.arange(3.0), z, 0.5) == []


@pytest.mark.parametrize(
    "cls,expected",
    [
        (SweepResult, ("r_f", "w_cp", "dt_cp", "ettr", "valid", "floored")),
        (RollingRate, ("day", "rate_per_1000", "failures", "exposure_node_days")),
        (GoodputBreakdown, ("size_bucket", "first_order_gpu_hours", "second_order_gpu_hours")),
        (CascadeRow, ("logical_run_id", "requeues", "victims", "victim_gpu_hours")),
        (StatusRow, ("state", "job_pct", "gpu_time_pct")),
    ],
)
def test_csv_schemas(cls, expected):
    assert tuple(cls.CSV_COLUMNS) == expected


def test_sweep_csv_matches_schema_exactly():
    s = sweep20()
    text = csv_text(SweepResult.CSV_COLUMNS, s.rows(), provenance(seed=0, config_hash="h"))
    cols, rows = read_csv_rows(text)
    assert tuple(cols) == SweepResult.CSV_COLUMNS
    assert len(rows) == 400
    assert text.startswith("# tool_version:")


def test_mttf_row_columns_match_as_row():
    row = MttfRow(64, 3, 1, 10.0, 10.0, (2.0, 100.0), 12.0)
    assert tuple(row.as_row()) == tuple(MttfRow.CSV_COLUMNS)


def test_node_signal_row_keys():
    assert list(NodeSignals("a").as_row())[0] == "node_id"


def test_csv_writes_only_declared_columns():
    cols, rows = read_csv_rows(csv_text(("a", "c"), [{"a": 1, "b": 2}]))
    assert cols == ["a", "c"]
    assert rows == [{"a": "1", "c": ""}]


def test_line_and_bar_svgs_parse():
    ET.fromstring(line_svg([1, 2, 3], {"rate": [1.0, 2.0, 1.5]}, "t", "x", "y", meta=provenance()))
    ET.fromstring(bar_svg([8, 16], {"first": [1.0, 2.0], "second": [0.5, 0.1]}, "t", "y", meta=provenance()))
