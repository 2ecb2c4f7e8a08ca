import json
from pathlib import Path

import numpy as np
import pytest

from cprep.cli import EXIT_INVALID, EXIT_OK, main
from cprep.config import ConfigError, ExperimentConfig, dump_config, load_config
from cprep.metrics import TrainingHistory
from cprep.runner import ReportError, build_report, load_runs, output_root, replay, run_seed

DEMO_RM = Path(__file__).resolve().parents[1] / "demos" / "rms" / "order2.rm"

TINY = {
    "name": "tiny", "env_kind": "GN", "context_space": "EL", "representation": "CTL+C-PREP",
    "n_src": 2, "n_tgt": 2, "steps_src": 150, "steps_tgt": 150, "eval_episodes": 2,
    "seeds": [42], "dqn": {"learning_starts": 50, "target_update_interval": 100},
}


def test_defaults_and_round_trip():
    cfg = ExperimentConfig("x", "GN", "CM")
    assert (cfg.n_src, cfg.n_tgt) == (250, 500)
    assert cfg.steps_src == 4_000_000 and cfg.seeds == (42, 84, 126, 168, 210)
    assert ExperimentConfig("y", "ON", "PO").entity_count == 5
    again = load_config(dump_config(cfg))
    assert again == cfg
    assert dump_config(again) == dump_config(cfg)
    tiny = ExperimentConfig.from_dict(TINY)
    assert tiny.dqn.learning_starts == 50 and tiny.dqn.batch_size == 32


@pytest.mark.parametrize("change, match", [
    ({"env_kind": "GN", "context_space": "PO"}, "pairing"),
    ({"representation": "CTL+XYZ"}, "cannot parse"),
    ({"steps_src": 0}, "positive"),
    ({"seeds": [1, 1]}, "distinct"),
    ({"sector_size": [4, 4]}, "tile"),
    ({"bogus": 1}, "unknown"),
])
def test_invalid_configs(change, match):
    with pytest.raises(ConfigError, match=match):
        ExperimentConfig.from_dict({**TINY, **change})


def test_missing_keys_and_bad_json():
    with pytest.raises(ConfigError, match="missing"):
        ExperimentConfig.from_dict({"name": "a"})
    with pytest.raises(ConfigError):
        load_config("{not json")


def test_output_root_precedence(monkeypatch):
    cfg = ExperimentConfig.from_dict(TINY)
    monkeypatch.delenv("CPREP_OUTPUT_ROOT", raising=False)
    assert output_root(cfg) == Path("runs")
    monkeypatch.setenv("CPREP_OUTPUT_ROOT", "/tmp/elsewhere")
    assert output_root(cfg) == Path("/tmp/elsewhere")
    assert output_root(cfg, "/tmp/cli") == Path("/tmp/cli")


def test_cli_invalid_config_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**TINY, "env_kind": "XX"}))
    assert main(["run", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_INVALID
    assert "invalid config" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == EXIT_INVALID


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    path = root / "tiny.json"
    path.write_text(json.dumps(TINY))
    assert main(["run", "--config", str(path), "--out", str(root)]) == EXIT_OK
    return root


def test_run_layout(tiny_run):
    seed_dir = tiny_run / "tiny" / "42"
    names = sorted(p.name for p in seed_dir.iterdir())
    assert names == sorted([
        "checkpoint_source", "checkpoint_target", "checkpoint_transferred", "contexts.txt",
        "generalization.csv", "history_source.csv", "history_target.csv",
        "history_transferred.csv", "manifest.json",
    ])
    m = json.loads((seed_dir / "manifest.json").read_text())
    assert m["representation"]["reward_mode"] == "rm_shaped"
    assert m["representation"]["use_dtl"] is True
    assert m["seed"] == 42 and len(m["contexts"]["source"]) == 2
    h = TrainingHistory.from_csv((seed_dir / "history_transferred.csv").read_text())
    assert len(h) == 101
    assert (tiny_run / "tiny" / "config.json").is_file()
    kinds = [line.split("\t")[0] for line in (seed_dir / "contexts.txt").read_text().splitlines()]
    assert kinds == ["source", "source", "target", "target"]


def test_rerun_is_byte_identical(tiny_run, tmp_path):
    cfg = ExperimentConfig.from_dict(TINY)
    other = run_seed(cfg, 42, tmp_path)
    first = tiny_run / "tiny" / "42"
    for p in first.iterdir():
        if p.name != "manifest.json":
            assert (other / p.name).read_bytes() == p.read_bytes(), p.name


def test_replay_reproduces(tiny_run, tmp_path):
    out = replay(tiny_run / "tiny" / "42", tmp_path)
    for name in ("history_transferred.csv", "checkpoint_target", "contexts.txt"):
        assert (out / name).read_bytes() == (tiny_run / "tiny" / "42" / name).read_bytes()


def test_report_from_run(tiny_run, tmp_path, capsys):
    out = tmp_path / "rep"
    assert main(["report", str(tiny_run), "--out", str(out), "--resamples", "100", "--svg"]) == EXIT_OK
    text = capsys.readouterr().out
    assert "TTT_AUC" in text and "GN+EL" in text and "CTL+C-PREP" in text
    files = sorted(p.name for p in out.iterdir())
    assert files == ["table.csv", "table.txt", "ttt_curve_GN_EL.svg", "ttt_curve_GN_EL_CTL_C-PREP.csv",
                     "utilities.json"]
    curve = (out / "ttt_curve_GN_EL_CTL_C-PREP.csv").read_text().splitlines()
    assert curve[0] == "theta,ttt_iqm,ci_low,ci_high" and len(curve) == 52


def _fake_run(root, name, seed, returns_tsf, returns_tgt, grid=51, representation="CTL"):
    d = root / name / str(seed)
    d.mkdir(parents=True)
    cfg = ExperimentConfig.from_dict({**TINY, "name": name, "representation": representation,
                                      "threshold_grid_size": grid})
    manifest = {"seed": seed, "config": cfg.to_dict(),
                "representation": {"name": representation}}
    (d / "manifest.json").write_text(json.dumps(manifest))
    for phase, r in (("source", returns_tgt), ("transferred", returns_tsf), ("target", returns_tgt)):
        (d / f"history_{phase}.csv").write_text(TrainingHistory.from_returns(r).to_csv())
    return d


def test_report_all_failure_run(tmp_path):
    _fake_run(tmp_path, "fail", 42, np.zeros(101), np.zeros(101))
    rep = build_report(load_runs([tmp_path]))
    u = rep["GN+EL"]["CTL"]["utilities"]
    assert f"{u['TTT_AUC'].iqm:.2f} ± {u['TTT_AUC'].std:.2f}" == "98.04 ± 0.00"
    assert u["TR"].infinite


def test_report_identical_runs_identical_rows(tmp_path, capsys):
    r = np.linspace(0, 1, 101)
    _fake_run(tmp_path / "a", "one", 42, r, r / 2, representation="CTL")
    _fake_run(tmp_path / "a", "two", 42, r, r / 2, representation="CTL+RS")
    assert main(["report", str(tmp_path / "a"), "--resamples", "50"]) == EXIT_OK
    rows = (tmp_path / "a" / "report" / "table.csv").read_text().splitlines()[1:]
    by_cfg = {}
    for row in rows:
        f = row.split(",")
        by_cfg.setdefault(f[2], []).append((f[0], f[1], *f[3:]))
    assert by_cfg["CTL"] == by_cfg["CTL+RS"]


def test_report_rejects_mixed_grids(tmp_path, capsys):
    _fake_run(tmp_path, "a", 1, np.zeros(101), np.zeros(101), grid=51)
    _fake_run(tmp_path, "b", 2, np.zeros(101), np.zeros(101), grid=21)
    with pytest.raises(ReportError, match="threshold grids"):
        build_report(load_runs([tmp_path]))
    assert main(["report", str(tmp_path)]) == EXIT_INVALID
    assert main(["report", str(tmp_path / "nowhere")]) == EXIT_INVALID


def test_report_skips_failed_seeds(tmp_path):
    _fake_run(tmp_path, "a", 1, np.ones(101), np.zeros(101))
    bad = _fake_run(tmp_path, "a", 2, np.zeros(101), np.zeros(101))
    (bad / "FAILED").write_text("boom")
    assert [r.manifest["seed"] for r in load_runs([tmp_path])] == [1]


def test_rm_plan(capsys):
    assert main(["rm", "plan", str(DEMO_RM)]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert out[:3] == ["V*(u0)=0.99", "V*(u1)=1", "V*(u2)=0"]
    assert main(["rm", "plan", str(DEMO_RM), "--gamma", "1.5"]) == EXIT_INVALID


def test_rm_validate_and_viz(tmp_path, capsys):
    assert main(["rm", "validate", str(DEMO_RM)]) == EXIT_OK
    assert "0 error(s)" in capsys.readouterr().out
    assert main(["rm", "viz", str(DEMO_RM)]) == EXIT_OK
    dot = capsys.readouterr().out
    assert dot.startswith("digraph") and "doublecircle" in dot
    broken = tmp_path / "broken.rm"
    broken.write_text(DEMO_RM.read_text().replace("INITIAL: u0", "INITIAL: nowhere"))
    assert main(["rm", "validate", str(broken)]) == EXIT_INVALID
    garbage = tmp_path / "garbage.rm"
    garbage.write_text("this is not a machine\n")
    assert main(["rm", "plan", str(garbage)]) == EXIT_INVALID
    assert "line" in capsys.readouterr().err
    assert main(["rm", "plan", str(tmp_path / "missing.rm")]) == EXIT_INVALID
