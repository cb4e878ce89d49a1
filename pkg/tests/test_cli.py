"""Command-line workflows: merge, solve, check-derivatives, report."""

import csv
import json

import pytest

from itdopf import testcases as tc
from itdopf.cases import dump_json_case, load_json_case
from itdopf.cli import convergence_order, main, read_trace
from itdopf.exceptions import TraceError


@pytest.fixture
def files(tmp_path):
    paths = {
        "t3": tmp_path / "t3.json",
        "d3": tmp_path / "d3.json",
        "fig1": tmp_path / "fig1.json",
        "case9": tmp_path / "case9.m",
    }
    paths["t3"].write_text(dump_json_case(tc.transmission3()))
    paths["d3"].write_text(dump_json_case(tc.feeder3()))
    paths["fig1"].write_text(dump_json_case(tc.case_itd_fig1()))
    paths["case9"].write_text(tc.bundled_matpower_text())
    return {k: str(v) for k, v in paths.items()} | {"dir": tmp_path}


def test_merge_writes_two_region_case(files, capsys):
    out = str(files["dir"] / "merged.json")
    rc = main([
        "merge", "--transmission", files["t3"],
        "--feeder", f"bus=3,file={files['d3']}",
        "--tie", "r=0.01,x=0.05,smax=1.2",
        "--out", out,
    ])
    assert rc == 0
    assert "2 regions" in capsys.readouterr().out
    merged = load_json_case(open(out).read())
    assert len(merged.regions) == 2
    assert merged == tc.case_itd_fig1()  # same recipe as the bundled fixture


def test_merge_requires_out(files):
    with pytest.raises(SystemExit) as exc:
        main(["merge", "--transmission", files["t3"]])
    assert exc.value.code == 2


def test_merge_matpower_input(files, capsys):
    out = str(files["dir"] / "case9.json")
    rc = main(["merge", "--transmission", files["case9"], "--out", out])
    assert rc == 0
    case = load_json_case(open(out).read())
    assert len(case.regions) == 1
    assert len(case.regions[0][0].buses) == 9


def test_solve_centralized(files, capsys):
    rc = main(["solve", "--case", files["fig1"], "--algo", "centralized"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "status=optimal" in out
    assert "objective=581.79" in out


def test_solve_aladin_with_oracle_and_trace(files, capsys):
    trace = str(files["dir"] / "run.jsonl")
    rc = main([
        "solve", "--case", files["fig1"], "--algo", "aladin-soc",
        "--eps", "1e-6", "--oracle", "--trace", trace,
    ])
    assert rc == 0
    out = capsys.readouterr().out
    for token in ("iterations=", "time=", "x_err=", "gap=", "conic="):
        assert token in out
    records, final = read_trace(trace)
    assert final["status"] == "converged"
    assert records[-1]["gap"] is not None


def test_solve_std_variant_runs_separately(files):
    t1 = str(files["dir"] / "soc.jsonl")
    t2 = str(files["dir"] / "std.jsonl")
    assert main(["solve", "--case", files["fig1"], "--algo", "aladin-soc",
                 "--eps", "1e-6", "--trace", t1]) == 0
    assert main(["solve", "--case", files["fig1"], "--algo", "aladin-std",
                 "--eps", "1e-6", "--trace", t2]) == 0
    rec1, _ = read_trace(t1)
    rec2, _ = read_trace(t2)
    assert all(not r["soc_fired"] for r in rec2)


def test_check_derivatives_passes(files, capsys):
    rc = main(["check-derivatives", "--case", files["fig1"], "--seed", "1"])
    assert rc == 0
    assert "passed" in capsys.readouterr().out


def test_check_derivatives_negative_control(files, monkeypatch, capsys):
    import itdopf.models.bim as bim

    true_grad = bim.BimModel.grad

    def corrupted(self, x):
        g = true_grad(self, x)
        return g + 1e-2
    monkeypatch.setattr(bim.BimModel, "grad", corrupted)
    rc = main(["check-derivatives", "--case", files["fig1"], "--seed", "1"])
    assert rc == 1
    assert "FAILED" in capsys.readouterr().err


def test_report_round_trip_and_counts(files, capsys):
    trace = str(files["dir"] / "run.jsonl")
    main(["solve", "--case", files["fig1"], "--algo", "aladin-soc",
          "--eps", "1e-6", "--trace", trace])
    out_csv = str(files["dir"] / "run.csv")
    capsys.readouterr()
    rc = main(["report", "--trace", trace, "--out", out_csv])
    assert rc == 0
    text = capsys.readouterr().out
    records, _ = read_trace(trace)
    fired = sum(1 for r in records if r["soc_fired"])
    assert f"corrected iterations: {fired}" in text

    # lossless numeric round trip through the CSV
    with open(out_csv) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(records)
    for rec, row in zip(records, rows):
        for key in ("primal_res", "dual_res", "objective", "phi"):
            assert float(row[key]) == rec[key]


def test_report_empty_trace_errors(files, capsys):
    empty = files["dir"] / "empty.jsonl"
    empty.write_text("")
    rc = main(["report", "--trace", str(empty)])
    assert rc == 1
    assert "empty trace" in capsys.readouterr().err


def test_report_malformed_line_has_line_number(files):
    bad = files["dir"] / "bad.jsonl"
    bad.write_text('{"iter": 1}\nnot json\n')
    with pytest.raises(TraceError, match=":2:"):
        read_trace(str(bad))


def test_convergence_order_helper():
    # clean quadratic decay: order near 2
    assert convergence_order([1e-1, 1e-2, 1e-4, 1e-8]) == pytest.approx(2.0, abs=0.01)
    assert convergence_order([1e-2, 1e-2]) is None


def test_determinism_end_to_end(files):
    t1 = str(files["dir"] / "a.jsonl")
    t2 = str(files["dir"] / "b.jsonl")
    args = ["solve", "--case", files["fig1"], "--algo", "aladin-soc",
            "--eps", "1e-6", "--seed", "1"]
    assert main(args + ["--trace", t1]) == 0
    assert main(args + ["--trace", t2]) == 0
    rec1, fin1 = read_trace(t1)
    rec2, fin2 = read_trace(t2)
    skip = {"t_local_max_ms", "t_coord_ms", "t_total_ms"}
    for a, b in zip(rec1 + [fin1], rec2 + [fin2]):
        for k in a:
            if k not in skip:
                assert a[k] == b[k], k
