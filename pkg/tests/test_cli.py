"""CLI surface: exit codes, file round trips, determinism."""
import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from dpsynth.cli import main
from dpsynth.report import canonical_json, load_report


def _write_domain(path, names_sizes):
    path.write_text(
        json.dumps({"attributes": [{"name": n, "size": s} for n, s in names_sizes]}) + "\n"
    )


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


@pytest.fixture
def toy(tmp_path):
    """gen-toy produced domain + data files: (domain_path, data_path)."""
    dom = tmp_path / "domain.json"
    dat = tmp_path / "data.csv"
    rc = main(
        [
            "gen-toy",
            "--attrs", "2",
            "--sizes", "3",
            "--n", "120",
            "--seed", "0",
            "--out", str(dat),
            "--domain-out", str(dom),
        ]
    )
    assert rc == 0
    return dom, dat


def _synth(toy, tmp_path, *extra, method="mwem", budget=("--rho", "0.05")):
    dom, dat = toy
    return main(
        [
            "synth",
            "--domain", str(dom),
            "--data", str(dat),
            "--method", method,
            *budget,
            "--marginal-k", "2",
            "--T", "3",
            "--seed", "0",
            *map(str, extra),
        ]
    )


def test_gen_toy_writes_files(toy):
    dom, dat = toy
    obj = json.loads(dom.read_text())
    assert [a["name"] for a in obj["attributes"]] == ["a0", "a1"]
    with open(dat, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["a0", "a1"]
    assert len(rows) == 121


def test_synth_evaluate_round_trip(toy, tmp_path, capsys):
    dom, dat = toy
    out_csv = tmp_path / "synthetic.csv"
    report = tmp_path / "report.json"
    rc = _synth(toy, tmp_path, "--out", out_csv, "--report", report, "--samples", "500")
    assert rc == 0
    rep = load_report(report)
    assert rep["method"] == "mwem" and rep["private"] is True
    assert rep["budget"]["rho"] == 0.05
    assert 0.0 <= rep["errors"]["max"] <= 1.0
    capsys.readouterr()

    rc = main(
        [
            "evaluate",
            "--domain", str(dom),
            "--data", str(dat),
            "--synthetic", str(out_csv),
            "--marginal-k", "2",
        ]
    )
    assert rc == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("max=")
    mx = float(line.split()[0].split("=")[1])
    # 500 samples from the fitted histogram should stay in the ballpark of
    # the reported distribution error
    assert mx <= rep["errors"]["max"] + 0.15


def test_budget_conflict_exits_2(toy, tmp_path):
    assert _synth(toy, tmp_path, budget=("--rho", "0.1", "--epsilon", "1", "--delta", "1e-6")) == 2
    assert _synth(toy, tmp_path, budget=()) == 2
    assert _synth(toy, tmp_path, budget=("--epsilon", "1")) == 2


def test_option_conflicts_exit_2(toy, tmp_path):
    assert _synth(toy, tmp_path, "--public", "whatever.csv") == 2  # mwem has no public variant
    assert _synth(toy, tmp_path, "--output-average", method="rap-softmax") == 2
    assert _synth(toy, tmp_path, "--gem-init", "ck.json") == 2
    assert _synth(toy, tmp_path, "--threads", "0") == 2


def test_budget_error_exits_2(toy, tmp_path):
    # T=0 rounds is a budget violation, not a crash
    dom, dat = toy
    rc = main(
        ["synth", "--domain", str(dom), "--data", str(dat), "--method", "mwem",
         "--rho", "0.1", "--T", "0", "--marginal-k", "2"]
    )
    assert rc == 2


def test_capacity_exits_3(toy, tmp_path):
    assert _synth(toy, tmp_path, "--cell-cap", "4") == 3  # 3x3 domain > 4 cells


def test_missing_files_exit_4(toy, tmp_path):
    dom, dat = toy
    rc = main(
        ["synth", "--domain", str(tmp_path / "absent.json"), "--data", str(dat),
         "--method", "mwem", "--rho", "0.1"]
    )
    assert rc == 4
    rc = main(
        ["evaluate", "--domain", str(dom), "--data", str(tmp_path / "absent.csv"),
         "--synthetic", str(dat)]
    )
    assert rc == 4


def test_bad_data_exits_4(toy, tmp_path):
    dom, _ = toy
    bad = tmp_path / "bad.csv"
    _write_csv(bad, ["a0", "a1"], [[0, 7]])  # 7 out of range for size 3
    rc = main(
        ["synth", "--domain", str(dom), "--data", str(bad), "--method", "mwem", "--rho", "0.1"]
    )
    assert rc == 4


def test_no_noise_warns_and_marks_report(toy, tmp_path, capsys):
    report = tmp_path / "report.json"
    rc = _synth(toy, tmp_path, "--no-noise", "--report", report)
    assert rc == 0
    err = capsys.readouterr().err
    assert "NOT private" in err
    rep = load_report(report)
    assert rep["private"] is False
    assert '"private": false' in report.read_text()


def test_same_seed_same_outputs(toy, tmp_path, capsys):
    reports, csvs = [], []
    for tag in ("x", "y"):
        rep = tmp_path / f"rep_{tag}.json"
        out = tmp_path / f"out_{tag}.csv"
        assert _synth(toy, tmp_path, "--report", rep, "--out", out) == 0
        reports.append(load_report(rep))
        csvs.append(out.read_bytes())
    assert canonical_json(reports[0]) == canonical_json(reports[1])
    assert csvs[0] == csvs[1]
    capsys.readouterr()


def test_threads_do_not_change_answers(toy, tmp_path, monkeypatch, capsys):
    rep1 = tmp_path / "rep1.json"
    assert _synth(toy, tmp_path, "--threads", "1", "--report", rep1) == 0
    rep2 = tmp_path / "rep2.json"
    monkeypatch.setenv("DPSYNTH_THREADS", "3")
    assert _synth(toy, tmp_path, "--report", rep2) == 0
    a, b = load_report(rep1), load_report(rep2)
    assert a["errors"] == b["errors"]
    capsys.readouterr()


def test_threads_env_validation(toy, tmp_path, monkeypatch):
    monkeypatch.setenv("DPSYNTH_THREADS", "zero")
    assert _synth(toy, tmp_path) == 2
    monkeypatch.setenv("DPSYNTH_THREADS", "0")
    assert _synth(toy, tmp_path) == 2


def test_accountant_frozen_values(capsys):
    rc = main(
        ["accountant", "--rho", "0.5", "--T", "10", "--k", "1", "--alpha", "0.5", "--n", "1000"]
    )
    assert rc == 0
    out = dict(ln.split("=", 1) for ln in capsys.readouterr().out.splitlines())
    assert float(out["eps0"]) == pytest.approx(0.4472135954999579, abs=1e-12)
    assert float(out["sigma_single"]) == pytest.approx(0.004472135954999579, abs=1e-12)
    assert float(out["sigma_workload"]) == pytest.approx(0.006324555320336759, abs=1e-12)

    rc = main(
        ["accountant", "--rho", "1", "--delta", repr(math.exp(-9)), "--T", "1", "--n", "10"]
    )
    assert rc == 0
    lines = capsys.readouterr().out.splitlines()
    eps_line = [ln for ln in lines if ln.startswith("epsilon(")][0]
    assert float(eps_line.split("=")[-1]) == pytest.approx(7.0, abs=1e-9)


def test_accountant_selection_only_prints_no_sigma(capsys):
    rc = main(["accountant", "--rho", "0.5", "--T", "10", "--alpha", "1.0", "--n", "100"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "sigma" not in out
    assert "eps0=" in out


def test_evaluate_uniform_vs_point_mass(tmp_path, capsys):
    dom = tmp_path / "d.json"
    _write_domain(dom, [("a", 2)])
    priv = tmp_path / "priv.csv"
    _write_csv(priv, ["a"], [[0]] * 10)
    synth = tmp_path / "synth.csv"
    _write_csv(synth, ["a"], [[0]] * 5 + [[1]] * 5)
    rc = main(
        ["evaluate", "--domain", str(dom), "--data", str(priv), "--synthetic", str(synth),
         "--marginal-k", "1"]
    )
    assert rc == 0
    assert capsys.readouterr().out.strip() == "max=0.5 mean=0.5 rmse=0.5"


def test_evaluate_requires_one_source(toy, tmp_path):
    dom, dat = toy
    rc = main(["evaluate", "--domain", str(dom), "--data", str(dat)])
    assert rc == 2
    rc = main(
        ["evaluate", "--domain", str(dom), "--data", str(dat),
         "--synthetic", str(dat), "--dist", "x.npz"]
    )
    assert rc == 2


def test_save_dist_average_then_evaluate(toy, tmp_path, capsys):
    dom, dat = toy
    dist = tmp_path / "dist.npz"
    report = tmp_path / "report.json"
    rc = _synth(toy, tmp_path, "--output-average", "--save-dist", dist, "--report", report)
    assert rc == 0
    capsys.readouterr()
    eval_report = tmp_path / "eval_report.json"
    rc = main(
        ["evaluate", "--domain", str(dom), "--data", str(dat), "--dist", str(dist),
         "--marginal-k", "2", "--report", str(eval_report)]
    )
    assert rc == 0
    capsys.readouterr()
    # evaluating the saved distribution reproduces the report's error exactly
    assert load_report(eval_report)["errors"]["max"] == pytest.approx(
        load_report(report)["errors"]["max"], abs=1e-12
    )


def test_dist_domain_mismatch_exits_4(toy, tmp_path, capsys):
    dom, dat = toy
    dist = tmp_path / "dist.npz"
    assert _synth(toy, tmp_path, "--output-average", "--save-dist", dist) == 0
    other_dom = tmp_path / "other.json"
    _write_domain(other_dom, [("a0", 3), ("zz", 3)])
    other_dat = tmp_path / "other.csv"
    _write_csv(other_dat, ["a0", "zz"], [[0, 0], [1, 2]])
    rc = main(
        ["evaluate", "--domain", str(other_dom), "--data", str(other_dat), "--dist", str(dist)]
    )
    assert rc == 4
    capsys.readouterr()


def test_search_methods_run(toy, tmp_path, capsys):
    report = tmp_path / "report.json"
    rc = _synth(
        toy, tmp_path, "--dq-samples", "30", "--report", report,
        method="dualquery", budget=("--rho", "0.2"),
    )
    assert rc == 0
    rep = load_report(report)
    assert rep["method"] == "dualquery"
    assert rep["alpha"] == 1.0  # self-selecting methods spend everything on selection
    rc = _synth(
        toy, tmp_path, "--fem-samples", "30", method="fem", budget=("--rho", "0.2")
    )
    assert rc == 0
    capsys.readouterr()


def test_pretrain_then_gem_init(toy, tmp_path, capsys):
    dom, dat = toy
    ck = tmp_path / "gen.json"
    gem_flags = [
        "--gem-hidden", "8", "--gem-zdim", "4", "--gem-batch", "20",
    ]
    rc = main(
        [
            "pretrain",
            "--domain", str(dom),
            "--public", str(dat),
            "--out", str(ck),
            "--marginal-k", "2",
            "--steps", "300",
            "--lr", "0.01",
            *gem_flags,
        ]
    )
    assert rc == 0
    assert json.loads(ck.read_text())["format"] == "generator-checkpoint"
    report = tmp_path / "report.json"
    # no shape flags here: the checkpoint's architecture must override the
    # --gem-zdim/--gem-hidden defaults or the weights cannot be loaded
    rc = _synth(
        toy, tmp_path, "--gem-init", ck, "--gem-tmax", "5", "--report", report,
        method="gem",
    )
    assert rc == 0
    assert load_report(report)["method"] == "gem"
    capsys.readouterr()


def test_best_mixture_error_subcommand(toy, tmp_path, capsys):
    dom, dat = toy
    rc = main(
        [
            "best-mixture-error",
            "--domain", str(dom),
            "--data", str(dat),
            "--public", str(dat),
            "--marginal-k", "2",
            "--iterations", "500",
        ]
    )
    assert rc == 0
    out = capsys.readouterr().out.strip()
    assert out.startswith("best_mixture_error=")
    val = float(out.split("=")[1])
    # reweighting the private support itself can reproduce it (near-)exactly
    assert 0.0 <= val < 0.02


def test_module_entry_point_subprocess():
    proc = subprocess.run(
        [sys.executable, "-m", "dpsynth", "accountant", "--rho", "0.5", "--T", "10",
         "--alpha", "0.5", "--n", "1000"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "eps0=0.4472135954999579" in proc.stdout
    # argparse usage failures come back as exit 2
    proc = subprocess.run(
        [sys.executable, "-m", "dpsynth", "synth"], capture_output=True, text=True
    )
    assert proc.returncode == 2
