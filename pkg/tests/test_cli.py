from __future__ import annotations

import json

import pytest

from failpred.cli import main

CONFIG = """\
[run]
schema_version = 1
seed = 7

[scenario]
embed_dim = 3
batch = 12
chunk_len = 2
action_dim = 2
stride = 2
max_len = 20
n_modes = 2
mode_separation = 4.0
base_noise = 0.1
embed_drift = 0.5
entropy_inflation = 5.0
failure_onset_fraction = 0.5

[counts]
success_id = 14
fail_id = 6
"""


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """simulate -> train-rnd -> calibrate, shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    config = root / "run.ini"
    config.write_text(CONFIG)
    traces = root / "traces.jsonl"
    ckpt = root / "model.ckpt"
    profiles = root / "profiles.json"
    assert main(["simulate", "--config", str(config), "--out", str(traces)]) == 0
    assert (
        main(
            [
                "train-rnd",
                "--traces", str(traces),
                "--out", str(ckpt),
                "--width-scale", "0.02",
                "--m", "8",
                "--seed", "3",
                "--epochs", "15",
            ]
        )
        == 0
    )
    assert (
        main(
            [
                "calibrate",
                "--traces", str(traces),
                "--rnd", str(ckpt),
                "--scheme", "band",
                "--delta", "0.2",
                "--w-obs", "3",
                "--w-act", "3",
                "--out", str(profiles),
            ]
        )
        == 0
    )
    return root, config, traces, ckpt, profiles


def test_simulate_is_deterministic(pipeline, tmp_path):
    root, config, traces, _, _ = pipeline
    again = tmp_path / "again.jsonl"
    assert main(["simulate", "--config", str(config), "--out", str(again)]) == 0
    assert again.read_bytes() == traces.read_bytes()


def test_seed_env_var_overrides(pipeline, tmp_path, monkeypatch):
    _, config, traces, _, _ = pipeline
    other = tmp_path / "other.jsonl"
    monkeypatch.setenv("FAILPRED_SEED", "99")
    assert main(["simulate", "--config", str(config), "--out", str(other)]) == 0
    assert other.read_bytes() != traces.read_bytes()


def test_profile_file_contents(pipeline):
    _, _, _, _, profiles = pipeline
    doc = json.loads(profiles.read_text())
    assert doc["kind"] == "threshold-profiles"
    assert set(doc["profiles"]) == {"obs", "act"}
    assert doc["profiles"]["obs"]["scheme"] == "band"
    assert doc["profiles"]["obs"]["window"] == 3
    assert doc["ace"]["alpha"] == 0.05
    assert len(doc["ace"]["ranges"]) == 2


def test_monitor_emits_one_record_per_rollout(pipeline, tmp_path, capsys):
    _, _, traces, ckpt, profiles = pipeline
    out = tmp_path / "monitor.jsonl"
    code = main(
        [
            "monitor",
            "--traces", str(traces),
            "--rnd", str(ckpt),
            "--profile-obs", str(profiles),
            "--profile-act", str(profiles),
            "--mode", "and",
            "--out", str(out),
        ]
    )
    assert code == 0
    records = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(records) == 20
    for rec in records:
        assert set(rec) == {"id", "flagged", "t_star", "normalized_dt"}
        if rec["flagged"]:
            assert 0.0 <= rec["normalized_dt"] <= 1.0
        else:
            assert rec["t_star"] is None


def test_evaluate_writes_report_and_warns_on_overlap(pipeline, tmp_path, capsys):
    _, _, traces, ckpt, _ = pipeline
    report = tmp_path / "report.csv"
    code = main(
        [
            "evaluate",
            "--traces", str(traces),
            "--calib", str(traces),  # deliberate overlap
            "--rnd", str(ckpt),
            "--schemes", "constant,tvar",
            "--w", "1,3",
            "--mode", "and",
            "--deltas", "0.1,0.2",
            "--out", str(report),
        ]
    )
    captured = capsys.readouterr()
    assert code == 0
    warning = json.loads(captured.err.splitlines()[0])
    assert "overlap" in warning["warning"]
    lines = report.read_text().splitlines()
    assert lines[0].startswith("#")
    data_rows = [l for l in lines if l and not l.startswith("#")][1:]
    assert len(data_rows) == 2 * 2 * 2 + 4  # cells + averaged rows
    summary = json.loads(captured.out.splitlines()[-1])
    assert summary["command"] == "evaluate"


def test_unknown_subcommand_exits_with_usage(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err.lower()


def test_errors_are_machine_readable(tmp_path, capsys):
    code = main(
        [
            "train-rnd",
            "--traces", str(tmp_path / "missing.jsonl"),
            "--out", str(tmp_path / "x.ckpt"),
        ]
    )
    assert code == 1
    record = json.loads(capsys.readouterr().err.strip())
    assert set(record) == {"error", "message"}


def test_config_rejects_unknown_keys(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[scenario]\nbogus_knob = 3\n\n[counts]\nsuccess_id = 1\n")
    code = main(["simulate", "--config", str(bad), "--out", str(tmp_path / "t.jsonl")])
    assert code == 1
    assert "bogus_knob" in json.loads(capsys.readouterr().err.strip())["message"]
