from __future__ import annotations

import json

import pytest

from mobilemanip.cli import main, merge_reports, parse_seeds


@pytest.fixture(scope="module")
def gen_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert main(["gen", "--task", "settable", "--split", "cross_config", "--count", "3", "--seed", "1",
                 "--out", str(out)]) == 0
    return out


def test_gen_is_byte_reproducible(gen_dir, tmp_path):
    assert main(["gen", "--task", "settable", "--split", "cross_config", "--count", "3", "--seed", "1",
                 "--out", str(tmp_path)]) == 0
    assert (tmp_path / "episodes.jsonl").read_bytes() == (gen_dir / "episodes.jsonl").read_bytes()
    assert len((gen_dir / "episodes.jsonl").read_text().splitlines()) == 3
    m = json.loads((gen_dir / "manifest.json").read_text())
    assert m["command"] == "gen" and m["seeds"] == [1] and m["outputs"] == ["episodes.jsonl"]
    assert {"config_hash", "git_revision", "started", "finished"} <= set(m)


@pytest.mark.parametrize("argv", [
    ["gen", "--task", "cooking", "--split", "train", "--count", "1", "--out", "x"],
    ["gen", "--task", "tidyhouse", "--split", "train", "--count", "-1", "--out", "x"],
    ["report", "--out", "x"],
    ["config"],
    [],
])
def test_usage_errors_exit_2(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2


def test_parse_seeds():
    assert parse_seeds("3x3") == (3, [0, 1, 2])
    assert parse_seeds("4") == (1, [0, 1, 2, 3])
    assert parse_seeds("5,7") == (1, [5, 7])


def test_eval_oracle_writes_reports(gen_dir, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    out = tmp_path / "ev"
    assert main(["eval", "--task", "settable", "--oracle", "--episodes", str(gen_dir / "episodes.jsonl"),
                 "--seeds", "1x2", "--out", "ev"]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["ev"]  # nothing outside --out
    assert sorted(p.name for p in out.iterdir()) == ["manifest.json", "report.csv", "report.json",
                                                     "transcripts.jsonl"]
    rows = (out / "report.csv").read_text().splitlines()
    assert rows[0] == "stage,mean,stderr" and len(rows) == 9
    report = json.loads((out / "report.json").read_text())
    assert report["n"] == 6 and report["mean"][-1] == 1.0
    assert len((out / "transcripts.jsonl").read_text().splitlines()) == 6


def test_eval_task_mismatch_is_usage_error(gen_dir, tmp_path):
    assert main(["eval", "--task", "tidyhouse", "--oracle", "--episodes", str(gen_dir / "episodes.jsonl"),
                 "--out", str(tmp_path)]) == 2


def test_eval_missing_artifacts_exit_3(gen_dir, tmp_path, capsys):
    eps = str(gen_dir / "episodes.jsonl")
    assert main(["eval", "--task", "settable", "--oracle", "--episodes", str(tmp_path / "none.jsonl"),
                 "--out", str(tmp_path / "o")]) == 3
    bank = tmp_path / "bank"
    bank.mkdir()
    assert main(["train", "--skill", "navigate", "--episodes", eps, "--steps", "0", "--eval-count", "1",
                 "--out", str(bank)]) == 0
    assert main(["train", "--skill", "pick", "--episodes", eps, "--steps", "0", "--eval-count", "1",
                 "--out", str(bank)]) == 0
    capsys.readouterr()
    assert main(["eval", "--task", "settable", "--bank", str(bank), "--episodes", eps,
                 "--out", str(tmp_path / "o")]) == 3
    err = capsys.readouterr().err
    for kind in ("place", "open_drawer", "close_drawer", "open_fridge", "close_fridge"):
        assert kind in err
    assert "navigate" not in err.split("missing:")[1]
    m = json.loads((bank / "manifest.json").read_text())
    assert m["outputs"] == ["navigate.ckpt", "navigate_curve.csv", "pick.ckpt", "pick_curve.csv"]
    assert len(m["runs"]) == 1


def test_train_zero_steps_and_stationary(gen_dir, tmp_path):
    from mobilemanip.rl import read_curve, read_header

    assert main(["train", "--skill", "pick", "--variant", "stationary", "--episodes",
                 str(gen_dir / "episodes.jsonl"), "--steps", "0", "--eval-count", "2", "--out", str(tmp_path)]) == 0
    h = read_header(tmp_path / "pick.ckpt")
    assert h["variant"] == "stationary" and h["config"]["total_steps"] == 0
    assert [c[0] for c in read_curve(tmp_path / "pick_curve.csv")] == [0]


def test_train_missing_episodes_exit_3(tmp_path):
    assert main(["train", "--skill", "pick", "--episodes", str(tmp_path / "no.jsonl"), "--out", str(tmp_path)]) == 3


def _report(tmp_path, name, means, task="settable", stages=None):
    stages = stages or ["open_0", "pick_0"]
    p = tmp_path / name / "report.json"
    p.parent.mkdir()
    p.write_text(json.dumps({"task": task, "stages": stages, "mean": means, "stderr": [0.0] * len(means),
                             "n": 10}))
    return str(p)


def test_report_merges_with_delta(tmp_path):
    a = _report(tmp_path, "M+P", [0.9, 0.5])
    b = _report(tmp_path, "M3", [1.0, 0.75])
    assert main(["report", "--inputs", a, b, "--out", str(tmp_path / "r")]) == 0
    rows = (tmp_path / "r" / "table.csv").read_text().splitlines()
    assert rows[0] == "stage,M+P_mean,M+P_stderr,M3_mean,M3_stderr,delta"
    assert rows[2].endswith(",0.250000")


def test_report_rejects_schema_mismatch(tmp_path):
    a = _report(tmp_path, "a", [0.9, 0.5])
    b = _report(tmp_path, "b", [0.9, 0.5, 0.1], stages=["pick_0", "place_0", "pick_1"])
    assert main(["report", "--inputs", a, b, "--out", str(tmp_path / "r")]) == 2
    assert main(["report", "--inputs", str(tmp_path / "missing.json"), "--out", str(tmp_path / "r")]) == 3


def test_merge_reports_single_input_has_no_delta():
    r = {"task": "t", "stages": ["s"], "mean": [0.5], "stderr": [0.1]}
    assert merge_reports([r], ["x"]).splitlines() == ["stage,x_mean,x_stderr", "s,0.500000,0.100000"]


def test_ablate(gen_dir, tmp_path):
    eps = str(gen_dir / "episodes.jsonl")
    assert main(["ablate", "--name", "handoff_noise", "--oracle", "--sigmas", "0,0.3", "--episodes", eps,
                 "--out", str(tmp_path / "h")]) == 0
    rows = (tmp_path / "h" / "handoff_noise.csv").read_text().splitlines()
    assert len(rows) == 3 and rows[1].startswith("0.0,1.000000,1.000000")
    assert main(["ablate", "--name", "M(S)+R", "--oracle", "--episodes", eps, "--out", str(tmp_path / "m")]) == 0
    assert json.loads((tmp_path / "m" / "report.json").read_text())["label"] == "M(S)+R"
    assert main(["ablate", "--name", "bogus", "--oracle", "--episodes", eps, "--out", str(tmp_path / "b")]) == 2


def test_config_defaults(capsys):
    assert main(["config", "--print-defaults"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["ppo"]["clip"] == 0.2 and cfg["world"]["dt"] == 0.1
    assert cfg["rewards"]["navigate_region"]["success_dist"] == 0.1
