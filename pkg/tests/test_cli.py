from __future__ import annotations

import json
import time

import numpy as np
import pytest
from numpy.testing import assert_allclose

from helpers import random_instance
from manyboot import Dataset, fit_ols, robust_fit, t_test
from manyboot.bootstrap import BootstrapConfig, wild_bootstrap_test
from manyboot.cli import (
    REPORT_SCHEMA,
    InferenceReport,
    build_designs,
    load_config,
    main,
    parse_ratios,
)
from manyboot.dataio import load_dataset, reference_tables, write_dataset
from manyboot.errors import ConfigError, InputError
from manyboot.simulation import SimulationDesign, draw_design


@pytest.fixture
def design_a_csv(tmp_path):
    data = draw_design(SimulationDesign.preset("A", 0.3), 4)
    path = tmp_path / "a.csv"
    write_dataset(path, data)
    return path, data


def run_infer(capsys, path, *extra):
    code = main(["infer", "--data", str(path), "--y", "y", "--x", "x", *extra])
    return code, capsys.readouterr()


def test_infer_matches_library(tmp_path, capsys, design_a_csv):
    path, data = design_a_csv
    out = tmp_path / "r.json"
    code, _ = run_infer(capsys, path, "--beta0", "1", "--B", "99", "--seed", "7",
                        "--workers", "2", "--out", str(out))
    assert code == 0
    report = InferenceReport.from_json(out.read_text())
    got = {r.method: r for r in report.results}
    for label, scheme in (("Wild-G", "gaussian"), ("Wild-R", "rademacher")):
        lib = wild_bootstrap_test(data, 1.0, BootstrapConfig(B=99, weights=scheme, seed=7))
        assert got[label].p == lib.p_value
        assert_allclose(got[label].t, lib.statistic, rtol=1e-12)
    fit = robust_fit(data)
    for m in ("hc0", "hck", "hca"):
        assert_allclose(got[m.upper()].t, t_test(fit, m, 1.0).t, rtol=1e-12)
    assert report.q == report.q_columns == 30


def test_json_round_trip(tmp_path, capsys, design_a_csv):
    path, _ = design_a_csv
    out = tmp_path / "r.json"
    run_infer(capsys, path, "--B", "19", "--out", str(out))
    text = out.read_text()
    report = InferenceReport.from_json(text)
    assert report.schema == REPORT_SCHEMA
    assert report.to_json() == text
    bad = json.loads(text)
    bad["schema"] = "other/0"
    with pytest.raises(InputError):
        InferenceReport.from_dict(bad)


def test_duplicate_control_reports_effective_rank(tmp_path, capsys):
    data, _ = random_instance(np.random.default_rng(1), n=60, ratio=0.2)
    W = np.column_stack([data.W, data.W[:, 2]])
    path = tmp_path / "dup.csv"
    write_dataset(path, Dataset(data.y, data.x, W))
    out = tmp_path / "r.json"
    code, cap = run_infer(capsys, path, "--methods", "hc0,hca", "--out", str(out))
    assert code == 0
    report = InferenceReport.from_json(out.read_text())
    assert (report.q, report.q_columns) == (data.q, data.q + 1)
    assert len(report.diagnostics["dependent_controls"]) == 1
    assert "linearly dependent controls" in cap.out


def test_hck_fallback_reported(tmp_path, capsys):
    data, _ = random_instance(np.random.default_rng(8), n=100, ratio=0.9)
    path = tmp_path / "k.csv"
    write_dataset(path, data)
    out = tmp_path / "r.json"
    code, cap = run_infer(capsys, path, "--methods", "hc0,hck", "--out", str(out))
    assert code == 0
    hc0, hck = InferenceReport.from_json(out.read_text()).results
    assert hck.fallback and not hc0.fallback
    assert hck.se == hc0.se and hck.t == hc0.t
    assert "HCK unavailable" in cap.out


def test_missing_rows_counted(tmp_path, capsys):
    path = tmp_path / "m.csv"
    rng = np.random.default_rng(2)
    lines = ["y,x,w1,w2"]
    for i in range(40):
        vals = [repr(float(v)) for v in rng.normal(size=4)]
        if i in (3, 17):
            vals[1] = "NA"
        lines.append(",".join(vals))
    path.write_text("\n".join(lines) + "\n")
    loaded = load_dataset(path, "y", "x")
    assert (loaded.rows_read, loaded.rows_dropped, loaded.dataset.n) == (40, 2, 38)
    assert loaded.dropped_rows == (4, 18)
    code, cap = run_infer(capsys, path, "--methods", "hc0")
    assert code == 0 and "rows dropped for missing values: 2" in cap.out


@pytest.mark.parametrize("body, column", [
    ("y,x,w\n1,2,3\n4,5,6\n", "z"),
    ("y,x,w\n1,2,3\n4,five,6\n", "x"),
])
def test_data_errors_exit_2(tmp_path, capsys, body, column):
    path = tmp_path / "e.csv"
    path.write_text(body)
    code = main(["infer", "--data", str(path), "--y", "y", "--x", column, "--methods", "hc0"])
    err = capsys.readouterr().err
    assert code == 2
    assert ("not found" in err) if column == "z" else ("data row 2" in err and "'x'" in err)


def test_leverage_degenerate_exit_3(tmp_path, capsys):
    rng = np.random.default_rng(3)
    n = 30
    W = np.column_stack([np.ones(n), np.zeros(n)])
    W[5, 1] = 1.0  # dummy isolating CSV data row 6
    path = tmp_path / "lev.csv"
    write_dataset(path, Dataset(rng.normal(size=n), rng.normal(size=n), W))
    code = main(["infer", "--data", str(path), "--y", "y", "--x", "x", "--methods", "hca"])
    err = capsys.readouterr().err
    assert code == 3 and "[6]" in err
    # HC0 does not need leverage
    assert main(["infer", "--data", str(path), "--y", "y", "--x", "x", "--methods", "hc0"]) == 0


def test_constraint_errors(tmp_path, capsys, design_a_csv):
    path, _ = design_a_csv
    assert run_infer(capsys, path, "--constraint", "0=1")[0] == 2
    assert run_infer(capsys, path, "--constraint", "1,2=1")[0] == 2
    assert run_infer(capsys, path, "--methods", "hc9")[0] == 2


def test_two_regressors_use_score_bootstrap(tmp_path, capsys):
    data, _ = random_instance(np.random.default_rng(4), n=80, ratio=0.2, d_x=2)
    path = tmp_path / "two.csv"
    write_dataset(path, data)
    out = tmp_path / "r.json"
    code = main(["infer", "--data", str(path), "--y", "y", "--x", "x1,x2", "--constraint", "1,-1=0",
                 "--methods", "hc0,wild-g", "--B", "49", "--out", str(out)])
    capsys.readouterr()
    assert code == 0
    report = InferenceReport.from_json(out.read_text())
    assert report.diagnostics["mode"] == "score"
    assert "mode_note" in report.diagnostics


def test_seed_env_fallback(tmp_path, capsys, design_a_csv, monkeypatch):
    path, _ = design_a_csv
    outs = []
    for extra in (["--seed", "11"], []):
        out = tmp_path / f"r{len(outs)}.json"
        if not extra:
            monkeypatch.setenv("MANYBOOT_SEED", "11")
        run_infer(capsys, path, "--methods", "wild-g", "--B", "49", "--out", str(out), *extra)
        outs.append(InferenceReport.from_json(out.read_text()))
    assert outs[0].results[0].p == outs[1].results[0].p
    assert outs[1].diagnostics["seed"] == 11
    monkeypatch.setenv("MANYBOOT_SEED", "eleven")
    assert run_infer(capsys, path, "--methods", "wild-g", "--B", "9")[0] == 2


@pytest.mark.parametrize("seed", range(3))
def test_csv_round_trip_preserves_estimates(tmp_path, seed):
    data, _ = random_instance(np.random.default_rng(seed), n=50, ratio=0.4)
    path = tmp_path / "rt.csv"
    write_dataset(path, data)
    back = load_dataset(path, "y", "x").dataset
    a, b = robust_fit(data), robust_fit(back)
    assert_allclose(b.beta, a.beta, rtol=1e-12)
    for m in ("hc0", "hck", "hca"):
        assert_allclose(b.variances[m], a.variances[m], rtol=1e-12)
    assert_allclose(fit_ols(back).resid, fit_ols(data).resid, rtol=1e-12, atol=1e-15)


def test_simulate_is_byte_identical_and_fast(tmp_path, capsys):
    args = ["simulate", "--design", "A", "--ratios", "0.1", "--reps", "100", "--B", "199", "--seed", "1"]
    start = time.perf_counter()
    assert main(args + ["--workers", "1", "--out", str(tmp_path / "a")]) == 0
    elapsed = time.perf_counter() - start
    assert main(args + ["--workers", "2", "--out", str(tmp_path / "b")]) == 0
    capsys.readouterr()
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert elapsed < 10.0
    meta = json.loads((tmp_path / "a.json").read_text())["metadata"]
    assert {"seeds", "numpy", "wall_time_s"} <= set(meta)


def test_full_sweep_is_five_by_nine():
    designs = build_designs({"design": "A", "ratios": "0.1..0.9", "reps": 1, "B": 9, "seed": 1})
    assert [d.q for d in designs] == list(range(10, 100, 10))


def test_report_merge_and_compare(tmp_path, capsys):
    for name, ratio in (("one", "0.1"), ("two", "0.9")):
        main(["simulate", "--design", "A", "--ratios", ratio, "--reps", "4", "--B", "9",
              "--methods", "hc0", "--out", str(tmp_path / name)])
    capsys.readouterr()
    paths = [str(tmp_path / "one.csv"), str(tmp_path / "two.csv")]
    before = [open(p).read() for p in paths]
    assert main(["report", *paths]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3
    assert main(["report", "--compare-paper", *paths]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split() == ["design", "ratio_or_G", "method", "ours", "paper", "|diff|", "mc_se"]
    assert lines[1].split()[4] == "0.071" and lines[2].split()[4] == "0.581"
    assert [open(p).read() for p in paths] == before


def test_report_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["report"])
    assert exc.value.code == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    assert main(["report", str(bad)]) == 2
    assert "expected columns" in capsys.readouterr().err


def test_reference_tables_bundled():
    ref = reference_tables()
    assert ref[("A", "0.5", "HCK")] == 0.095
    assert ref[("panel", "50", "Wild-R")] == 0.036
    assert len(ref) == 160


def test_config_file(tmp_path):
    cfg = tmp_path / "sim.ini"
    cfg.write_text("[simulate]\ndesign = B\nratios = 0.1,0.3\nreps = 50\n")
    opts = load_config(cfg)
    assert opts == {"design": "B", "ratios": "0.1,0.3", "reps": 50}
    cfg.write_text("[simulate]\ndesign = B\n\nreps = many\n")
    with pytest.raises(ConfigError, match="line 4"):
        load_config(cfg)
    cfg.write_text("[simulate]\ncolour = red\n")
    with pytest.raises(ConfigError, match="line 2"):
        load_config(cfg)


@pytest.mark.parametrize("text, expected", [
    ("0.1,0.5", [0.1, 0.5]),
    ("0.1..0.9", [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]),
    ("0.1..0.9:0.4", [0.1, 0.5, 0.9]),
])
def test_parse_ratios(text, expected):
    assert_allclose(parse_ratios(text), expected)


def test_bad_ratios():
    with pytest.raises(InputError):
        parse_ratios("0.1..")
