"""Integration tests for the CLI: artifact contracts, exit codes,
determinism."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from mfglab.cli import main

SMALL_CONFIG = """
[model]
benchmark = lq

[discretization]
level = 3
state_nodes = 41
substeps = 1
control_radius = 2.0

[solver]
particles = 128
tol = 0.02
max_iters = 8

[study]
seed = 42
players = 8
repetitions = 2
n_list = 4,8
m_list = 1,2
delta0 = 0.5
"""


@pytest.fixture()
def config_path(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text(SMALL_CONFIG)
    return path


def test_solve_mfg_artifact_contract(config_path, tmp_path):
    out = tmp_path / "out"
    rc = main(["solve-mfg", "--config", str(config_path), "--out", str(out)])
    assert rc == 0
    expected = {
        "flow.csv",
        "value.csv",
        "policy.csv",
        "iterations.jsonl",
        "manifest.json",
        "events.jsonl",
        "flow_mean.png",
        "value_initial.png",
        "residuals.png",
    }
    assert expected <= {p.name for p in out.iterdir()}
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["study"] == "solve-mfg"
    assert manifest["seed"] == 42
    assert "config_digest" in manifest
    header = (out / "flow.csv").read_text().splitlines()[0]
    assert header == "t,atom,weight,x1"
    header = (out / "policy.csv").read_text().splitlines()[0]
    assert header == "j,t,x1,atom_index,gamma1"
    events = [json.loads(line) for line in (out / "events.jsonl").read_text().splitlines()]
    assert {"ts", "level", "event", "payload"} <= set(events[0])


def test_invalid_key_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text("[solver]\nwarp_factor = 9\n")
    rc = main(["solve-mfg", "--config", str(path)])
    assert rc == 2
    assert "warp_factor" in capsys.readouterr().err


def test_numeric_failure_exits_3(tmp_path):
    path = tmp_path / "blowup.ini"
    path.write_text(
        SMALL_CONFIG.replace("[model]\nbenchmark = lq", "[model]\nbenchmark = lq\nm0_mean = 1e308")
    )
    out = tmp_path / "boom"
    rc = main(["solve-mfg", "--config", str(path), "--out", str(out)])
    assert rc == 3
    events = [json.loads(line) for line in (out / "events.jsonl").read_text().splitlines()]
    assert any(e["event"] == "numeric_failure" for e in events)


def _csv_bytes(folder: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(folder.iterdir()) if p.suffix == ".csv"}


def test_repeat_run_is_byte_identical(config_path, tmp_path):
    out1 = tmp_path / "r1"
    out2 = tmp_path / "r2"
    assert main(["solve-mfg", "--config", str(config_path), "--out", str(out1), "--threads", "1"]) == 0
    assert main(["solve-mfg", "--config", str(config_path), "--out", str(out2), "--threads", "8"]) == 0
    a, b = _csv_bytes(out1), _csv_bytes(out2)
    assert a.keys() == b.keys()
    for name in a:
        assert a[name] == b[name], f"{name} differs between runs"


def test_seed_override_changes_results(config_path, tmp_path):
    out1 = tmp_path / "s1"
    out2 = tmp_path / "s2"
    assert main(["solve-mfg", "--config", str(config_path), "--out", str(out1)]) == 0
    assert main(["solve-mfg", "--config", str(config_path), "--out", str(out2), "--seed", "777"]) == 0
    assert (out1 / "flow.csv").read_bytes() != (out2 / "flow.csv").read_bytes()
    manifest = json.loads((out2 / "manifest.json").read_text())
    assert manifest["seed"] == 777


def test_simulate_nplayer_artifacts(config_path, tmp_path):
    out = tmp_path / "sim"
    rc = main(["simulate-nplayer", "--config", str(config_path), "--out", str(out)])
    assert rc == 0
    names = {p.name for p in out.iterdir()}
    assert {"paths.csv", "flow.csv", "certificate.csv", "condition.csv", "manifest.json"} <= names
    cert_lines = (out / "certificate.csv").read_text().splitlines()
    assert cert_lines[0] == "bound,lhs,rhs,slack,pass"
    assert all(line.endswith(",1") for line in cert_lines[1:])
    header = (out / "paths.csv").read_text().splitlines()[0]
    assert header == "player,t,x1,gamma1,w1"


def test_nash_gap_artifacts(config_path, tmp_path):
    out = tmp_path / "gap"
    rc = main(["nash-gap", "--config", str(config_path), "--out", str(out)])
    assert rc == 0
    gaps = (out / "gaps.csv").read_text().splitlines()
    assert gaps[0] == "candidate,label,gap_mean,gap_se,N,seed,dt,R"
    assert len(gaps) >= 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["epsilon_hat"] >= 0.0


def test_convergence_study_artifacts(config_path, tmp_path):
    out = tmp_path / "conv"
    rc = main(["convergence-study", "--config", str(config_path), "--out", str(out)])
    assert rc == 0
    lines = (out / "convergence.csv").read_text().splitlines()
    assert lines[0].startswith("N,rep,sup_w2,t_statistic,tightness_g,epsilon_hat")
    # one row per (N, repetition)
    assert len(lines) == 1 + 2 * 2
    assert (out / "convergence.png").exists()


def test_convergence_study_degenerate_single_player(tmp_path):
    # N = 1 is a legal degenerate run: the distance to the particle flow is
    # reported, nothing beyond successful execution is asserted.
    path = tmp_path / "single.ini"
    path.write_text(SMALL_CONFIG.replace("n_list = 4,8", "n_list = 1"))
    out = tmp_path / "single"
    rc = main(["convergence-study", "--config", str(path), "--out", str(out)])
    assert rc == 0
    lines = (out / "convergence.csv").read_text().splitlines()
    assert len(lines) == 1 + 2  # header + one row per repetition
    assert all(np.isfinite(float(line.split(",")[2])) for line in lines[1:])


def test_value_monotonicity_artifacts(config_path, tmp_path):
    out = tmp_path / "mono"
    rc = main(["value-monotonicity", "--config", str(config_path), "--out", str(out)])
    assert rc == 0
    lines = (out / "monotonicity.csv").read_text().splitlines()
    assert lines[0] == "M,probe,x,value"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["nonincreasing"] is True


def test_diagnostics_artifacts(config_path, tmp_path):
    out = tmp_path / "diag"
    rc = main(["diagnostics", "--config", str(config_path), "--out", str(out)])
    assert rc == 0
    text = (out / "assumptions.csv").read_text()
    assert text.splitlines()[0] == "check,statistic,bound,ok"
    assert ",0" not in {line.rsplit(",", 1)[-1] for line in text.splitlines()[1:]}
    diag = dict(
        line.split(",", 1) for line in (out / "diagnostics.csv").read_text().splitlines()[1:]
    )
    assert float(diag["certificate_ok"]) == 1.0
    assert np.isfinite(float(diag["tightness_g"]))


def test_bounded_benchmark_through_cli(tmp_path):
    path = tmp_path / "bounded.ini"
    path.write_text(
        """
[model]
benchmark = bounded

[discretization]
level = 3
state_nodes = 41
substeps = 1
control_radius = 1.0

[solver]
particles = 64
tol = 0.05
max_iters = 6

[study]
seed = 5
players = 8
repetitions = 2
"""
    )
    out = tmp_path / "bout"
    rc = main(["diagnostics", "--config", str(path), "--out", str(out)])
    assert rc == 0
