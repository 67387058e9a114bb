import csv
import json

import numpy as np
import pytest

from smoothopl.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, emit_report, load_config, main, run_fig1, run_sweep, sweep_cells

SMALL = [
    "data.n=600",
    "data.n_test=400",
    "data.K=4",
    "data.d=6",
    "sweep.eta0=0,0.5",
    "sweep.seeds=0",
    "sweep.objectives=ours,sakhi2",
    "sweep.alphas=paper-default,adaptive",
    "train.epochs=2",
]


def _read(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# ")
    return json.loads(lines[0][2:]), list(csv.DictReader(lines[1:]))


def test_fig1_table(tmp_path):
    run_fig1(n=50_000, M=100.0, seeds=[0], out=tmp_path / "f.csv")
    meta, rows = _read(tmp_path / "f.csv")
    assert meta["M"] == 100.0
    assert len(rows) == 100
    for r in rows:
        a = int(r["action"])
        assert float(r["true_reward"]) == pytest.approx(0.1 - 1e-3 * (a - 1), abs=1e-15)
    ipsmin = np.array([float(r["ipsmin_estimate"]) for r in rows])
    assert int(np.argmax(ipsmin)) + 1 == 50
    assert abs(ipsmin[49] - 0.051) <= 0.003
    assert all(float(r["ipsmin_stderr"]) == 0.0 for r in rows)


def test_sweep_and_report(tmp_path):
    cfg = load_config(None, SMALL)
    rows = run_sweep(cfg, tmp_path / "run")
    meta, table = _read(tmp_path / "run" / "sweep.csv")
    assert meta["sweep"]["global_seed"] == 0
    assert list(table[0]) == ["eta0", "objective", "policy_class", "alpha_or_tau", "seed", "test_reward"]
    assert len(table) == len(rows) == len(sweep_cells(cfg))
    assert any(r["alpha_or_tau"] == "adaptive" for r in table)
    uniform = [r for r in table if r["objective"] == "logging" and float(r["eta0"]) == 0.0][0]
    assert abs(float(uniform["test_reward"]) - 0.25) <= 4 * np.sqrt(0.25 * 0.75 / 400)
    first = (tmp_path / "run" / "sweep.csv").read_bytes()
    run_sweep(load_config(None, SMALL), tmp_path / "run")
    assert (tmp_path / "run" / "sweep.csv").read_bytes() == first

    summary, problems = emit_report(tmp_path / "run")
    assert problems == []
    assert len(summary) == len(sweep_cells(cfg))
    _, srows = _read(tmp_path / "run" / "summary.csv")
    assert all(float(r["stderr"]) == 0.0 for r in srows)
    assert (tmp_path / "run" / "curve_ours_gaussian.dat").read_text().startswith("# ")


def test_report_aggregation_and_missing(tmp_path):
    cfg = load_config(None, ["sweep.eta0=0.5", "sweep.seeds=0,1", "sweep.objectives=ours", "sweep.alphas=0.5"])
    run = tmp_path / "run"
    run.mkdir()
    (run / "config.json").write_text(json.dumps(cfg))
    (run / "sweep.csv").write_text(
        "# {}\n"
        "eta0,objective,policy_class,alpha_or_tau,seed,test_reward\n"
        "0.5,logging,softmax,-,0,0.4\n"
        "0.5,logging,softmax,-,1,0.6\n"
        "0.5,ours,gaussian,0.5,0,0.7\n"
        "0.5,ours,gaussian,0.5,1,oops\n"
    )
    summary, problems = emit_report(run)
    logging_row = [r for r in summary if r[1] == "logging"][0]
    assert logging_row[5] == pytest.approx(0.5)
    assert any("corrupt" in p for p in problems)
    assert any("missing cell" in p and "seed=1" in p for p in problems)
    assert (run / "summary.csv").exists()
    assert "seed=1" in (run / "missing.txt").read_text()


def test_config_file_and_overrides(tmp_path):
    ini = tmp_path / "exp.ini"
    ini.write_text("[sweep]\neta0 = 0.25  ; inline comment\nseeds = 3\n[train]\nepochs = 7\n")
    cfg = load_config(ini, ["train.epochs=9"])
    assert cfg["sweep"]["eta0"] == [0.25]
    assert cfg["sweep"]["seeds"] == [3]
    assert cfg["train"]["epochs"] == 9
    assert cfg["train"]["S"] == 32 and cfg["train"]["delta"] == 0.05 and cfg["train"]["lr"] == 0.1


def test_exit_codes(tmp_path):
    assert main(["sweep", "--set", "sweep.eta0=1.5"]) == EXIT_CONFIG
    assert main(["sweep", "--set", "nonsense"]) == EXIT_CONFIG
    assert main(["sweep", "--config", str(tmp_path / "absent.ini")]) == EXIT_CONFIG
    assert main(["not-a-command"]) == EXIT_CONFIG
    assert main(["evaluate", "--data", str(tmp_path / "absent.csv"), "--policy", "x"]) == EXIT_RUNTIME


def test_pipeline_subcommands(tmp_path, capsys):
    p = lambda name: str(tmp_path / name)  # noqa: E731
    assert main(["generate", "blobs", "--n", "800", "--K", "4", "--d", "6", "--out", p("sup.csv")]) == EXIT_OK
    assert main(["generate", "blobs", "--n", "400", "--K", "4", "--d", "6", "--seed", "5", "--out", p("test.csv")]) == EXIT_OK
    assert main(["fit-logging", "--data", p("sup.csv"), "--eta0", "0.5", "--out", p("log.csv"), "--held-in-out", p("held.txt")]) == EXIT_OK
    assert main(["convert", "--data", p("sup.csv"), "--logging", p("log.csv"), "--exclude", p("held.txt"), "--out", p("logged.csv")]) == EXIT_OK
    assert main([
        "train", "--data", p("logged.csv"), "--prior", p("log.csv"), "--test", p("test.csv"), "--epochs", "2",
        "--out", p("rep.json"), "--params-out", p("learned.csv"), "--curves-out", p("curves.csv"),
    ]) == EXIT_OK
    rep = json.loads((tmp_path / "rep.json").read_text())
    assert len(rep["objective"]) == 2
    capsys.readouterr()
    assert main(["evaluate", "--data", p("test.csv"), "--policy", p("learned.csv")]) == EXIT_OK
    assert 0.0 <= float(capsys.readouterr().out) <= 1.0
    assert main(["generate", "fig1", "--n", "1000", "--out", p("fig1.csv")]) == EXIT_OK
    assert main(["fig1", "--n", "2000", "--seeds", "0,1", "--out", p("f.csv")]) == EXIT_OK
    for name in ("sup.csv", "log.csv", "logged.csv", "fig1.csv", "f.csv", "curves.csv"):
        assert (tmp_path / name).read_text().startswith("#")
