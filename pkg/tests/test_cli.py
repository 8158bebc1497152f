import json
import os

import pytest
import yaml

from semdrive import cli

SMALL = {
    "scenario": {"highway": {}, "merging": {}},
    "agent": {
        "hidden": [16, 8],
        "warmup": 64,
        "batch_size": 8,
        "target_sync": 200,
        "eps_anneal": 300,
        "memory_capacity": 5000,
    },
    "harness": {"budget": 400, "checkpoint_every": 200, "metrics_window": 50},
}


def write_cfg(tmp_path, data=SMALL, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = write_cfg(tmp)
    out = tmp / "run"
    assert cli.main(["train", "--config", cfg, "--out-dir", str(out)]) == 0
    return tmp, cfg, out


def test_train_writes_artifacts(trained):
    _, _, out = trained
    assert (out / "metrics.csv").exists() and (out / "config.yaml").exists()
    assert (out / "checkpoint" / "manifest.txt").exists()
    assert len((out / "metrics.csv").read_text().splitlines()) == 1 + 400 // 50


def test_same_seed_gives_identical_metrics(trained, tmp_path):
    _, cfg, out = trained
    again = tmp_path / "again"
    assert cli.main(["train", "--config", cfg, "--out-dir", str(again)]) == 0
    assert (out / "metrics.csv").read_bytes() == (again / "metrics.csv").read_bytes()


def test_resolved_config_reloads(trained, tmp_path):
    _, _, out = trained
    again = tmp_path / "again"
    assert cli.main(["train", "--config", str(out / "config.yaml"), "--out-dir", str(again)]) == 0
    assert (out / "metrics.csv").read_bytes() == (again / "metrics.csv").read_bytes()


def test_missing_scenario_section(tmp_path, capsys):
    data = {k: v for k, v in SMALL.items() if k != "scenario"}
    assert cli.main(["train", "--config", write_cfg(tmp_path, data), "--out-dir", str(tmp_path / "o")]) == 1
    assert "scenario" in capsys.readouterr().err


def test_bad_value_is_validation_error(tmp_path, capsys):
    code = cli.main(["train", "--config", write_cfg(tmp_path), "--set", "agent.gamma=1.5", "--out-dir", str(tmp_path)])
    assert code == 1
    assert "gamma" in capsys.readouterr().err


def test_eval_and_replay(trained, capsys):
    tmp, cfg, out = trained
    ev = tmp / "eval"
    code = cli.main(
        ["eval", "--config", cfg, "--checkpoint", str(out / "checkpoint"), "--runs", "2", "--out-dir", str(ev)]
    )
    assert code == 0
    report = json.loads((ev / "eval_highway.json").read_text())
    assert report["runs"] == 2
    trace = str(ev / "eval_highway_trace.jsonl")
    capsys.readouterr()
    assert cli.main(["replay", trace]) == 0
    assert "metrics match" in capsys.readouterr().out
    assert cli.main(["replay", trace, "--steps"]) == 0
    assert " act " in capsys.readouterr().out


def test_replay_truncated_trace_exit_code(trained, tmp_path, capsys):
    tmp, cfg, out = trained
    ev = tmp_path / "eval"
    cli.main(["eval", "--config", cfg, "--checkpoint", str(out / "checkpoint"), "--runs", "1", "--out-dir", str(ev)])
    trace = ev / "eval_highway_trace.jsonl"
    lines = trace.read_text().splitlines()
    trace.write_text("\n".join(lines[:-3]) + "\n")
    assert cli.main(["replay", str(trace)]) == 3
    assert "integrity" in capsys.readouterr().err


def test_replay_warns_on_config_mismatch(trained, tmp_path, capsys):
    tmp, cfg, out = trained
    ev = tmp_path / "eval"
    cli.main(["eval", "--config", cfg, "--checkpoint", str(out / "checkpoint"), "--runs", "1", "--out-dir", str(ev)])
    other = dict(SMALL, encoder={"sensor_range": 80.0})
    capsys.readouterr()
    code = cli.main(["replay", str(ev / "eval_highway_trace.jsonl"), "--config", write_cfg(tmp_path, other, "o.yaml")])
    assert code == 0
    assert "config mismatch" in capsys.readouterr().err


def test_eval_warns_outside_theta_range(trained, tmp_path, capsys):
    tmp, cfg, out = trained
    code = cli.main(
        ["eval", "--config", cfg, "--checkpoint", str(out / "checkpoint"), "--runs", "1",
         "--theta-v", "12", "--empty", "--out-dir", str(tmp_path)]
    )
    assert code == 0
    assert "outside" in capsys.readouterr().err


def test_checkpoint_dim_mismatch(trained, tmp_path, capsys):
    tmp, cfg, out = trained
    code = cli.main(
        ["eval", "--config", cfg, "--set", "encoder.lateral=1", "--checkpoint", str(out / "checkpoint"),
         "--runs", "1", "--out-dir", str(tmp_path)]
    )
    assert code == 1
    assert "input_dim" in capsys.readouterr().err


def test_sweep(trained, tmp_path):
    tmp, cfg, out = trained
    code = cli.main(
        ["sweep", "--config", cfg, "--checkpoint", str(out / "checkpoint"), "--runs", "1",
         "--thetas", "22,25", "--empty", "--out-dir", str(tmp_path)]
    )
    assert code == 0
    lines = (tmp_path / "sweep_highway.csv").read_text().splitlines()
    assert lines[0] == "theta_v,highway,empty" and len(lines) == 3


def test_defaults_lists_sources(capsys):
    assert cli.main(["defaults"]) == 0
    out = capsys.readouterr().out
    assert "agent.gamma" in out and "0.9" in out


def test_no_command_prints_help(capsys):
    assert cli.main([]) == 1


def test_unwritable_out_dir_is_runtime_error(tmp_path):
    blocker = tmp_path / "f"
    blocker.write_text("")
    assert cli.main(["train", "--config", write_cfg(tmp_path), "--out-dir", str(blocker / "x")]) == 2
