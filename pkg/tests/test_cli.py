import json
import subprocess
import sys

import pytest

from mindkit import cli
from mindkit.config import ENV_VAR, ConfigError, RunConfig, resolve


def run(argv, tmp_path, name="out"):
    out = tmp_path / name
    code = cli.main([*argv, "--out", str(out)])
    return code, out


def test_predict_writes_prediction(tmp_path, capsys):
    code, out = run(["predict", "--scenario", "fixture:t_intersection", "--svg"], tmp_path)
    assert code == cli.EXIT_OK
    doc = json.loads((out / "prediction.json").read_text())
    assert abs(sum(s["weight"] for s in doc["scenarios"]) - 1.0) < 1e-6
    assert (out / "prediction.svg").read_text().startswith("<svg")
    assert "scenarios" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    ["predict", "--scenario", "fixture:t_intersection"],
    ["tree", "--scenario", "fixture:t_intersection"],
    ["tree", "--scenario", "fixture:merge", "--strategy", "ss"],
    ["plan", "--scenario", "fixture:t_intersection", "--seed", "3"],
    ["sim", "--scenario", "fixture:playback", "--planner", "none"],
])
def test_outputs_are_byte_identical_across_runs(argv, tmp_path):
    code_a, a = run(argv, tmp_path, "a")
    code_b, b = run(argv, tmp_path, "b")
    assert code_a == code_b == cli.EXIT_OK
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir())
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_tree_summary(tmp_path, capsys):
    code, out = run(["tree", "--scenario", "fixture:t_intersection", "--no-gaussians"], tmp_path)
    assert code == 0
    text = capsys.readouterr().out
    assert "leaves: 6" in text and "predictor calls: 4" in text
    doc = json.loads((out / "tree.json").read_text())
    assert doc["config"]["strategy"] == "aime"


def test_plan_report_lists_every_candidate(tmp_path):
    code, out = run(["plan", "--scenario", "fixture:t_intersection"], tmp_path)
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    plan = json.loads((out / "plan.json").read_text())
    assert sum(c["selected"] for c in report["candidates"]) == 1
    chosen = report["candidates"][report["selected"]]
    assert chosen["policy_id"] == plan["policy_id"]
    assert plan["continuity_residual"] < 1e-9


def test_plan_refuses_brute_force(tmp_path):
    assert run(["plan", "--scenario", "fixture:single_lane", "--strategy", "bf"], tmp_path)[0] == cli.EXIT_INPUT


def test_sim_writes_log_and_metrics(tmp_path):
    code, out = run(["sim", "--scenario", "fixture:collision", "--planner", "none"], tmp_path)
    assert code == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["reason"] == "collision" and metrics["collision"]
    lines = (out / "episode.jsonl").read_text().splitlines()
    assert json.loads(lines[-1])["event"] == "end"


def test_bench_table2(tmp_path, capsys):
    code, out = run(["bench", "--table", "2", "--fixtures", "straight_road"], tmp_path)
    assert code == 0
    rows = (out / "table2.csv").read_text().splitlines()
    assert rows[0] == "fixture,strategy,coverage_pct,scenarios,predictor_calls,comp_cost"
    cells = [r.split(",") for r in rows[1:]]
    assert cells[0][1] == "SS" and cells[0][5] == "1.0x"
    bf = [c for c in cells if c[1] == "BF-SRCH"]
    assert bf and all(c[2] == "100.0" and c[3] == "7776" for c in bf)


# -- exit codes -----------------------------------------------------------------

@pytest.mark.parametrize("argv", [
    ["predict"],
    ["predict", "--scenario", "does/not/exist.json"],
    ["predict", "--scenario", "fixture:nowhere"],
    ["tree", "--scenario", "fixture:merge", "--beta", "abc"],
    ["tree", "--scenario", "fixture:merge", "--dmax", "-1"],
    ["tree", "--scenario", "fixture:merge", "--command", "backflip"],
    ["frobnicate"],
])
def test_input_errors_exit_2(argv, tmp_path):
    assert run(argv, tmp_path)[0] == cli.EXIT_INPUT


def test_malformed_scenario_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"lanes": [}')
    assert run(["tree", "--scenario", str(bad)], tmp_path)[0] == cli.EXIT_INPUT
    bad.write_text(json.dumps({"lanes": []}))
    assert run(["tree", "--scenario", str(bad)], tmp_path)[0] == cli.EXIT_INPUT


def test_bad_config_file_exits_2(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"aime": {"nonsense": 1}}))
    assert run(["tree", "--scenario", "fixture:merge", "--config", str(cfg)], tmp_path)[0] == cli.EXIT_INPUT
    assert run(["tree", "--scenario", "fixture:merge", "--config", str(tmp_path / "nope.json")],
               tmp_path)[0] == cli.EXIT_INPUT


def test_search_budget_exits_3(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"aime": {"bf_node_budget": 50}}))
    argv = ["tree", "--scenario", "fixture:merge", "--strategy", "bf", "--config", str(cfg)]
    assert run(argv, tmp_path)[0] == cli.EXIT_BUDGET


def test_unexpected_failure_exits_1(tmp_path, monkeypatch, capsys):
    def boom(*args, **kwargs):
        raise RuntimeError("boom")

    monkeypatch.setattr(cli, "build_tree", boom)
    assert run(["tree", "--scenario", "fixture:merge"], tmp_path)[0] == cli.EXIT_INTERNAL
    assert "internal error" in capsys.readouterr().err


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mindkit.cli", "predict", "--scenario", "fixture:single_lane",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "mindkit.cli", "tree"], capture_output=True, text=True)
    assert proc.returncode == 2


# -- configuration precedence ------------------------------------------------------

def test_precedence_defaults_file_env_flags(tmp_path, monkeypatch):
    file_cfg = tmp_path / "file.json"
    file_cfg.write_text(json.dumps({"aime": {"beta": 0.5, "delta": 1.5}, "seed": 4}))
    env_cfg = tmp_path / "env.json"
    env_cfg.write_text(json.dumps({"aime": {"beta": 0.4}, "horizon": 40}))

    assert resolve() == RunConfig()
    monkeypatch.setenv(ENV_VAR, str(env_cfg))
    cfg = resolve()
    assert (cfg.aime.beta, cfg.horizon) == (0.4, 40)
    # an explicit file replaces the environment file, flags override both
    cfg = resolve(file_cfg, {"aime": {"beta": 0.3}})
    assert (cfg.aime.beta, cfg.aime.delta, cfg.seed, cfg.horizon) == (0.3, 1.5, 4, 60)


def test_flags_reach_the_written_config(tmp_path, monkeypatch):
    env_cfg = tmp_path / "env.json"
    env_cfg.write_text(json.dumps({"aime": {"beta": 0.4, "delta": 1.2}}))
    monkeypatch.setenv(ENV_VAR, str(env_cfg))
    code, out = run(["tree", "--scenario", "fixture:single_lane", "--beta", "0.25", "--no-gaussians"], tmp_path)
    assert code == 0
    written = json.loads((out / "tree.json").read_text())["config"]["aime"]
    assert (written["beta"], written["delta"]) == (0.25, 1.2)


def test_config_type_checks():
    with pytest.raises(ConfigError):
        resolve(overrides={"strategy": "dfs"})
    with pytest.raises(ConfigError):
        resolve(overrides={"aime": {"d_max": 1.5}})
    with pytest.raises(ConfigError):
        resolve(overrides={"unknown": 1})
