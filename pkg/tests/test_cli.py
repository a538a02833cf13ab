import io
import json

import numpy as np
import pytest

from riskcert.cli import emit_boxplot_stats, main


def _run(argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(argv, stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def _body(text):
    return [ln for ln in text.splitlines() if not ln.startswith("#")]


def test_boxplot_stats():
    assert emit_boxplot_stats([3.0] * 5) == {"min": 3.0, "q1": 3.0, "median": 3.0, "q3": 3.0, "max": 3.0, "n": 5}
    s = emit_boxplot_stats(range(1, 101))
    assert s["median"] == 50.5
    rng = np.random.default_rng(0)
    x = rng.normal(size=37)
    s = emit_boxplot_stats(x)
    assert s["q1"] == pytest.approx(np.quantile(x, 0.25))
    assert s["q3"] == pytest.approx(np.quantile(x, 0.75))


def test_usage_errors():
    assert _run(["bogus"])[0] == 64
    assert _run([])[0] == 64
    assert _run(["energy", "--m", "abc"])[0] == 64
    assert _run(["energy", "--jobs", "0"])[0] == 64


def test_energy_row():
    code, out, err = _run(["energy", "--m", "512", "--r", "64", "--R", "128", "--theta", "1.0", "--sigma", "1",
                           "--eps", "0.01"])
    assert code == 0
    assert out.startswith("# riskcert energy")
    header, row = _body(out)
    rec = dict(zip(header.split(","), row.split(",")))
    assert float(rec["bound"]) <= float(rec["opt"]) <= 0.5 * (128**2 - 64**2)
    assert "ratio" in err


def test_linform_reproducible(tmp_path):
    argv = ["linform", "--d", "4", "--n", "6", "--problems", "3", "--seed", "1", "--sigma", "0.05"]
    stats = tmp_path / "s.json"
    code1, out1, _ = _run(argv + ["--stats", str(stats)])
    code2, out2, _ = _run(argv)
    assert code1 in (0, 2) and code2 == code1
    assert _body(out1) == _body(out2)
    assert len(_body(out1)) == 4
    data = json.loads(stats.read_text())
    assert data["exact"]["n"] == 3
    assert data["envelope"]["median"] >= data["exact"]["median"] * (1 - 1e-2)


def test_config_file(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("m = 16\nr = 1\nR = 4  # outer radius\nsigma = 0.5\n")
    code, out, _ = _run(["energy", "--config", str(cfg), "--r", "2"])
    assert code == 0
    rec = dict(zip(*[ln.split(",") for ln in _body(out)]))
    assert (rec["m"], rec["r"], rec["R"]) == ("16", "2.0", "4.0")
    cfg.write_text("nonsense = 3\n")
    assert _run(["energy", "--config", str(cfg)])[0] == 64


def test_out_file_and_lowerbound_json(tmp_path):
    out = tmp_path / "lb.csv"
    js = tmp_path / "lb.json"
    code, stdout, _ = _run(["lowerbound", "--m", "64", "--r", "8", "--R", "16", "--out", str(out), "--json", str(js)])
    assert code == 0 and stdout == ""
    assert _body(out.read_text())[0] == "kind,bound,overlap,epsilon"
    cert = json.loads(js.read_text())
    assert cert["kind"] == "energy_two_point" and cert["bound"] > 0


def test_discrete_command():
    code, out, err = _run(["discrete", "--m", "3", "--I", "1", "--K", "200", "--trials", "50", "--seed", "7"])
    assert code in (0, 2)
    header, row = _body(out)
    rec = dict(zip(header.split(","), row.split(",")))
    assert float(rec["rho_star"]) <= 0.25 + 1e-6


def test_domain_error_exit_code():
    assert _run(["energy", "--r", "5", "--R", "1"])[0] == 1


def test_coverage_command_small():
    code, out, err = _run(["coverage", "--kind", "energy", "--m", "16", "--r", "1", "--R", "4", "--sigma", "0.5",
                           "--trials", "500"])
    assert code == 0, err
    assert "pass" in err
