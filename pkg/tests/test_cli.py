import json

import pytest

from gpurel.cli import dispatch
from gpurel.report import read_csv_rows


def run(capsys, *argv):
    code = dispatch(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def last_json(out):
    return json.loads(out.strip().splitlines()[-1])


def test_mttf_prints_1_80_hours(capsys):
    code, out, err = run(capsys, "mttf", "--gpus", "16384", "--rate", "6.5e-3")
    assert code == 0
    assert "MTTF 1.80 h" in out
    assert last_json(out)["mttf_hours"] == pytest.approx(1.80, abs=0.005)
    assert "seed=0" in err and "config_hash=" in err


def test_ettr_daly_young(capsys):
    code, out, _ = run(capsys, "ettr", "--nodes", "1500", "--rate", "1e-3", "--u0", "300", "--wcp", "300", "--policy", "daly-young")
    assert code == 0
    assert last_json(out)["ettr"] == pytest.approx(0.90, abs=0.005)


def test_ettr_with_monte_carlo(capsys):
    code, out, _ = run(capsys, "ettr", "--nodes", "256", "--rate", "6.5e-3", "--monte-carlo", "--trials", "200", "--jobs", "2")
    d = last_json(out)
    assert code == 0 and d["trials"] == 200
    assert d["mc_mean"] == pytest.approx(d["ettr"], rel=0.05)


def test_unknown_flag_is_usage_error(capsys):
    code, _, err = run(capsys, "mttf", "--gpus", "8", "--rate", "1e-3", "--bogus")
    assert code == 2
    assert "--gpus" in err and "--rate" in err


def test_bad_policy_is_usage_error(capsys):
    code, _, _ = run(capsys, "ettr", "--nodes", "8", "--rate", "1e-3", "--policy", "fastest")
    assert code == 2


def test_runtime_error_exit_1(capsys):
    code, _, err = run(capsys, "mttf", "--gpus", "8", "--rate", "0")
    assert code == 1
    assert "infinite MTTF" in err


def test_missing_input_exit_1(tmp_path, capsys):
    code, _, _ = run(capsys, "lemons", "--trace", str(tmp_path / "nope.jsonl"))
    assert code == 1


def test_unsupported_format_is_usage_error(capsys):
    code, _, _ = run(capsys, "sweep", "--format", "png")
    assert code == 2


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "c.toml"
    cfg.write_text(
        "node_count = 48\nbase_failure_rate = 0.03\nlemon_fraction = 0.05\nlemon_multiplier = 10.0\n"
        "horizon = 864000.0\n"
    )
    assert dispatch(["genload", "--count", "600", "--nodes", "48", "--max-gpus", "256", "--seed", "3",
                     "--out", str(d / "w.jsonl")]) == 0
    return d


def test_simulate_is_deterministic(workdir, capsys):
    digests = []
    for name in ("a", "b"):
        code, out, _ = run(capsys, "simulate", "--config", str(workdir / "c.toml"), "--workload", str(workdir / "w.jsonl"),
                           "--seed", "7", "--out", str(workdir / f"{name}.jsonl"))
        assert code == 0
        digests.append(last_json(out)["trace_digest"])
    assert digests[0] == digests[1]
    assert (workdir / "a.jsonl").read_bytes() == (workdir / "b.jsonl").read_bytes()


def test_trace_analyses(workdir, capsys):
    trace = str(workdir / "a.jsonl")
    if not (workdir / "a.jsonl").exists():
        assert dispatch(["simulate", "--config", str(workdir / "c.toml"), "--workload", str(workdir / "w.jsonl"),
                         "--seed", "7", "--out", trace]) == 0
    code, out, _ = run(capsys, "attribute", "--trace", trace, "--min-gpus", "0")
    assert code == 0 and "failures" in last_json(out)
    code, out, _ = run(capsys, "lemons", "--trace", trace, "--window-days", "10", "--out", str(workdir / "sig.csv"))
    assert code == 0
    cols, rows = read_csv_rows((workdir / "sig.csv").read_text())
    assert len(rows) == 48
    for kind in ("mttf", "rolling", "goodput", "status"):
        for fmt in ("csv", "svg"):
            if kind == "status" and fmt == "svg":
                continue
            dest = workdir / f"{kind}.{fmt}"
            code, _, err = run(capsys, "report", "--input", trace, "--kind", kind, "--format", fmt, "--out", str(dest))
            assert code == 0, err
            text = dest.read_text()
            assert "tool_version" in text and "config_hash" in text


def test_sweep_and_contour(tmp_path, capsys):
    csv_path = tmp_path / "s.csv"
    code, _, _ = run(capsys, "sweep", "--out", str(csv_path))
    assert code == 0
    cols, rows = read_csv_rows(csv_path.read_text())
    assert len(rows) == 400
    svg = tmp_path / "s.svg"
    code, _, _ = run(capsys, "report", "--input", str(csv_path), "--kind", "contour", "--format", "svg", "--out", str(svg))
    assert code == 0
    assert "ETTR 0.9" in svg.read_text()


def test_empty_sweep_errors(capsys):
    code, _, err = run(capsys, "sweep", "--rf-steps", "0")
    assert code == 1
    assert "no cells" in err
