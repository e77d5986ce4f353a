"""End-to-end tests for config parsing, the runner, reports, and the CLI."""

import json
import os

import numpy as np
import pytest

from bindgrow import config, report, runner
from bindgrow.cli import main
from bindgrow.jointnet import parse_tabular


def write_config(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


SYNTH_2TASK = """
[run]
benchmark = synthetic
task_count = 2
mode = single
delta = 0.0
seed = 0
fixed_binds = true

[budget]
epochs = 1

[synthetic]
angles_deg = 0,0
samples_per_task = 300
noise = 0.25
"""


# ---------------------------------------------------------------------------
# config


def test_defaults_round_trip(tmp_path):
    path = write_config(tmp_path, "[run]\nseed = 4\n")
    cfg = config.load_config(path)
    assert cfg["run", "seed"] == 4
    assert cfg["run", "benchmark"] == "permuted"
    assert cfg.budget().epochs == 3
    assert cfg.policy().kind == "slow_lr"


def test_unknown_section_rejected(tmp_path):
    path = write_config(tmp_path, "[wat]\nx = 1\n")
    with pytest.raises(config.ConfigError, match="unknown section"):
        config.load_config(path)


def test_unknown_key_rejected(tmp_path):
    path = write_config(tmp_path, "[run]\nbogus = 1\n")
    with pytest.raises(config.ConfigError, match="unknown key"):
        config.load_config(path)


def test_bad_value_type_rejected(tmp_path):
    path = write_config(tmp_path, "[run]\nseed = soon\n")
    with pytest.raises(config.ConfigError, match="cannot parse"):
        config.load_config(path)


def test_bad_choice_rejected(tmp_path):
    path = write_config(tmp_path, "[run]\nbenchmark = imagenet\n")
    with pytest.raises(config.ConfigError, match="not one of"):
        config.load_config(path)


def test_delta_out_of_range_rejected(tmp_path):
    path = write_config(tmp_path, "[run]\ndelta = 1.5\n")
    with pytest.raises(config.ConfigError, match="delta"):
        config.load_config(path)


def test_missing_file_rejected(tmp_path):
    with pytest.raises(config.ConfigError, match="cannot read"):
        config.load_config(str(tmp_path / "nope.ini"))


def test_hash_ignores_data_dir_but_not_seed(tmp_path):
    a = config.load_config(write_config(tmp_path, "[run]\nseed = 1\n", "a.ini"))
    b = config.load_config(write_config(tmp_path, "[run]\nseed = 1\ndata_dir = /elsewhere\n", "b.ini"))
    c = config.load_config(write_config(tmp_path, "[run]\nseed = 2\n", "c.ini"))
    assert a.hash() == b.hash()
    assert a.hash() != c.hash()


def test_manifest_round_trip(tmp_path):
    cfg = config.default_config()
    path = str(tmp_path / "manifest.json")
    config.write_manifest(path, cfg, "ok", 1.0, 2.0)
    m = config.read_manifest(path)
    assert m["status"] == "ok"
    assert m["config_hash"] == cfg.hash()
    assert m["seed"] == 0


# ---------------------------------------------------------------------------
# runner


def test_single_synthetic_run_artifacts(tmp_path):
    cfg = config.load_config(write_config(tmp_path, SYNTH_2TASK))
    out = str(tmp_path / "run0")
    runner.execute(cfg, out)
    for name in ("manifest.json", "trials.csv", "events.log", "jointnet.txt", "checkpoint.bin", "series.json"):
        assert os.path.exists(os.path.join(out, name)), name
    m = config.read_manifest(os.path.join(out, "manifest.json"))
    assert m["status"] == "ok"
    # delta 0: second task fully bound to the first
    _, rows = parse_tabular(open(os.path.join(out, "jointnet.txt")).read())
    assert all(e == "0" for e in rows[1])
    lines = open(os.path.join(out, "trials.csv")).read().splitlines()
    assert lines[0] == ",".join(runner.TRIALS_COLUMNS)
    assert len(lines) == 2
    events = [json.loads(l) for l in open(os.path.join(out, "events.log"))]
    assert any(e.get("event") == "step" for e in events)


def test_grid_run_emits_row_per_delta_and_pareto(tmp_path):
    text = SYNTH_2TASK.replace("mode = single", "mode = grid").replace(
        "delta = 0.0", "delta_grid = 0,0.5,1.0"
    )
    cfg = config.load_config(write_config(tmp_path, text))
    out = str(tmp_path / "grid0")
    runner.execute(cfg, out)
    lines = open(os.path.join(out, "trials.csv")).read().splitlines()
    assert len(lines) == 4
    assert os.path.exists(os.path.join(out, "pareto.csv"))


def test_trials_csv_deterministic_modulo_wall_time(tmp_path):
    cfg = config.load_config(write_config(tmp_path, SYNTH_2TASK))
    rows = []
    for name in ("r1", "r2"):
        out = str(tmp_path / name)
        runner.execute(cfg, out)
        content = open(os.path.join(out, "trials.csv")).read().splitlines()
        wall = runner.TRIALS_COLUMNS.index("wall_time_s")
        rows.append(["\x1f".join(c for i, c in enumerate(line.split(",")) if i != wall) for line in content])
    assert rows[0] == rows[1]


# ---------------------------------------------------------------------------
# report


def test_report_summary_and_figures(tmp_path):
    text = SYNTH_2TASK.replace("mode = single", "mode = grid").replace(
        "delta = 0.0", "delta_grid = 0,1.0"
    )
    cfg = config.load_config(write_config(tmp_path, text))
    out = str(tmp_path / "rep0")
    runner.execute(cfg, out)
    lines = []
    summary = report.summarize([out], out=lines.append)
    assert "mean_avg_accuracy" in summary
    assert any("pareto front" in l for l in lines)
    written = report.render_figures([out])
    names = {os.path.basename(p) for p in written}
    assert {"accuracy_curve.png", "pareto.png", "accuracy_vs_delta.png"} <= names
    for p in written:
        assert os.path.getsize(p) > 0


def test_report_missing_manifest_is_error(tmp_path):
    with pytest.raises(report.ReportError, match="manifest"):
        report.load_run(str(tmp_path))


# ---------------------------------------------------------------------------
# CLI exit codes


def test_cli_run_and_report(tmp_path, capsys):
    cfg_path = write_config(tmp_path, SYNTH_2TASK)
    out = str(tmp_path / "cli0")
    assert main(["run", "--config", cfg_path, "--out", out]) == 0
    assert main(["report", out]) == 0
    captured = capsys.readouterr()
    assert "mean final avg accuracy" in captured.out
    assert "accuracy_curve.png" in captured.out


def test_cli_seed_override(tmp_path):
    cfg_path = write_config(tmp_path, SYNTH_2TASK)
    out = str(tmp_path / "cli1")
    assert main(["run", "--config", cfg_path, "--out", out, "--seed", "9"]) == 0
    assert config.read_manifest(os.path.join(out, "manifest.json"))["seed"] == 9


def test_cli_config_error_exit_1(tmp_path, capsys):
    cfg_path = write_config(tmp_path, "[run]\nbenchmark = imagenet\n")
    assert main(["run", "--config", cfg_path, "--out", str(tmp_path / "x")]) == 1
    assert "config error" in capsys.readouterr().err


def test_cli_runtime_failure_exit_2(tmp_path, capsys):
    # angles count not matching task_count surfaces as a runtime failure
    text = SYNTH_2TASK.replace("angles_deg = 0,0", "angles_deg = 0,0,0")
    cfg_path = write_config(tmp_path, text)
    assert main(["run", "--config", cfg_path, "--out", str(tmp_path / "x")]) == 2
    assert "runtime failure" in capsys.readouterr().err


def test_cli_report_missing_dir_exit_2(tmp_path, capsys):
    assert main(["report", str(tmp_path / "ghost")]) == 2


def test_cli_selfcheck(capsys):
    assert main(["selfcheck"]) == 0
    out = capsys.readouterr().out
    assert "all suites passed" in out
    assert "FAIL" not in out
