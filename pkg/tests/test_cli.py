"""End-to-end tests of the command line workflow on miniature settings."""
import types

import numpy as np
import pytest

from pushkit.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO, EXIT_OK, main
from pushkit.dataset import load_episodes
from pushkit.model import init_weights, save_weights

BASE_CONFIG = """
[run]
seed = 5
[dataset]
objects = 2
episodes_per_object = 2
max_steps = 8
[model]
history = 2
max_steps = 6
batch_size = 8
[control]
history = 2
n_rollouts = 4
horizon = 2
max_steps = 3
[policy]
episodes = 2
max_steps = 5
opt_steps = 1
batch_size = 4
warmup_episodes = 2
replay_capacity = 1000
[eval]
objects = P
episodes_per_object = 1
[push]
object = P
"""


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "run.ini"
    cfg.write_text(BASE_CONFIG)
    paths = types.SimpleNamespace(
        dir=d, cfg=str(cfg), data=str(d / "data.txt"),
        weights=str(d / "model.npz"), agent=str(d / "agent.npz"))
    assert main(["--config", paths.cfg, "collect", "--out", paths.data]) == EXIT_OK
    assert main(["--config", paths.cfg, "train-model", "--data", paths.data,
                 "--out", paths.weights]) == EXIT_OK
    assert main(["--config", paths.cfg, "train-policy",
                 "--out", paths.agent]) == EXIT_OK
    return paths


def variant_config(tmp_path, extra, name="variant.ini"):
    path = tmp_path / name
    path.write_text(BASE_CONFIG + extra)
    return str(path)


class TestCollect:
    def test_outputs_and_stdout(self, pipeline, capsys):
        out = str(pipeline.dir / "again.txt")
        assert main(["--config", pipeline.cfg, "collect", "--out", out]) == EXIT_OK
        text = capsys.readouterr().out
        assert "collected 4 episodes over 2 objects" in text
        assert "config " in text
        episodes, _ = load_episodes(out)
        assert len(episodes) == 4

    def test_byte_identical_reruns(self, pipeline):
        out = str(pipeline.dir / "rerun.txt")
        assert main(["--config", pipeline.cfg, "collect", "--out", out]) == EXIT_OK
        with open(pipeline.data, "rb") as a, open(out, "rb") as b:
            assert a.read() == b.read()

    def test_parallel_matches_serial(self, pipeline):
        out = str(pipeline.dir / "par.txt")
        assert main(["--config", pipeline.cfg, "collect", "--out", out,
                     "--jobs", "2"]) == EXIT_OK
        with open(pipeline.data, "rb") as a, open(out, "rb") as b:
            assert a.read() == b.read()


class TestTrainModel:
    def test_reruns_byte_identical(self, pipeline):
        out = str(pipeline.dir / "model2.npz")
        assert main(["--config", pipeline.cfg, "train-model", "--data",
                     pipeline.data, "--out", out]) == EXIT_OK
        with open(pipeline.weights, "rb") as a, open(out, "rb") as b:
            assert a.read() == b.read()
        with open(pipeline.weights + ".curve") as a, open(out + ".curve") as b:
            assert a.read() == b.read()

    def test_curve_file_schema(self, pipeline):
        lines = open(pipeline.weights + ".curve").read().splitlines()
        assert lines[0].startswith("pushcurve 1 ")
        assert any(l.startswith("T ") for l in lines)
        assert any(l.startswith("V ") for l in lines)
        assert lines[-1].startswith("B ")

    def test_window_mismatch_rejected(self, pipeline, tmp_path):
        cfg = variant_config(tmp_path, "[control]\nhistory = 4\n")
        rc = main(["--config", cfg, "train-model", "--data", pipeline.data,
                   "--out", str(tmp_path / "w.npz")])
        assert rc == EXIT_CONFIG

    def test_missing_dataset_gives_io_error(self, pipeline, tmp_path):
        rc = main(["--config", pipeline.cfg, "train-model", "--data",
                   str(tmp_path / "absent.txt"), "--out", str(tmp_path / "w.npz")])
        assert rc == EXIT_IO

    def test_hash_mismatch_warns_but_runs(self, pipeline, tmp_path, capsys):
        rc = main(["--config", pipeline.cfg, "--seed", "9", "train-model",
                   "--data", pipeline.data, "--out", str(tmp_path / "w.npz")])
        assert rc == EXIT_OK
        assert "differs" in capsys.readouterr().err

    def test_divergence_exit_code(self, pipeline, tmp_path):
        cfg = variant_config(tmp_path, "[model]\nlearning_rate = 1e160\n")
        with np.errstate(all="ignore"):
            rc = main(["--config", cfg, "train-model", "--data", pipeline.data,
                       "--out", str(tmp_path / "w.npz")])
        assert rc == EXIT_DIVERGED


class TestTrainPolicy:
    def test_curve_file_schema(self, pipeline):
        lines = open(pipeline.agent + ".curve").read().splitlines()
        assert lines[0].startswith("pushcurve 1 ")
        assert sum(1 for l in lines if l.startswith("E ")) == 2

    def test_rerun_byte_identical(self, pipeline):
        out = str(pipeline.dir / "agent2.npz")
        assert main(["--config", pipeline.cfg, "train-policy", "--out", out]) == EXIT_OK
        with open(pipeline.agent, "rb") as a, open(out, "rb") as b:
            assert a.read() == b.read()


class TestPush:
    def test_default_goals(self, pipeline, tmp_path, capsys):
        out = str(tmp_path / "traces.txt")
        rc = main(["--config", pipeline.cfg, "push", "--weights",
                   pipeline.weights, "--out", out])
        assert rc == EXIT_OK
        report = open(out + ".report").read().splitlines()
        assert report[0].startswith("pushrun 1 ")
        assert sum(1 for l in report if l.startswith("E ")) == 3
        episodes, _ = load_episodes(out)
        assert len(episodes) == 3
        assert "goal 0:" in capsys.readouterr().out

    def test_goals_file(self, pipeline, tmp_path):
        goals = tmp_path / "goals.txt"
        goals.write_text("# demo goals\n0.1 0.0 0.0\n0 0 0  0.1 0.05 0.2\n")
        out = str(tmp_path / "t.txt")
        rc = main(["--config", pipeline.cfg, "push", "--weights", pipeline.weights,
                   "--goals", str(goals), "--out", out,
                   "--report", str(tmp_path / "r.txt")])
        assert rc == EXIT_OK
        report = open(tmp_path / "r.txt").read().splitlines()
        assert sum(1 for l in report if l.startswith("E ")) == 2

    def test_malformed_goals_file(self, pipeline, tmp_path):
        goals = tmp_path / "bad.txt"
        goals.write_text("0.1 only-two\n")
        rc = main(["--config", pipeline.cfg, "push", "--weights", pipeline.weights,
                   "--goals", str(goals), "--out", str(tmp_path / "t.txt")])
        assert rc == EXIT_IO
        goals.write_text("0.1 0.2\n")
        rc = main(["--config", pipeline.cfg, "push", "--weights", pipeline.weights,
                   "--goals", str(goals), "--out", str(tmp_path / "t.txt")])
        assert rc == EXIT_IO

    def test_missing_weights(self, pipeline, tmp_path):
        rc = main(["--config", pipeline.cfg, "push", "--weights",
                   str(tmp_path / "absent.npz"), "--out", str(tmp_path / "t.txt")])
        assert rc == EXIT_IO

    def test_window_mismatch_rejected(self, pipeline, tmp_path):
        cfg = variant_config(tmp_path, "[control]\nhistory = 4\n[model]\nhistory = 4\n")
        rc = main(["--config", cfg, "push", "--weights", pipeline.weights,
                   "--out", str(tmp_path / "t.txt")])
        assert rc == EXIT_CONFIG


class TestSweep:
    def test_grid_file(self, pipeline, tmp_path):
        out = str(tmp_path / "sweep.txt")
        rc = main(["--config", pipeline.cfg, "sweep", "--weights", pipeline.weights,
                   "--horizons", "1,2", "--out", out])
        assert rc == EXIT_OK
        lines = open(out).read().splitlines()
        assert lines[0].startswith("pushsweep 1 ")
        assert [l.split()[:3] for l in lines[1:]] == [["C", "2", "1"], ["C", "2", "2"]]

    def test_bad_horizons(self, pipeline, tmp_path):
        rc = main(["--config", pipeline.cfg, "sweep", "--weights", pipeline.weights,
                   "--horizons", "0,2", "--out", str(tmp_path / "s.txt")])
        assert rc == EXIT_CONFIG

    def test_duplicate_history_rejected(self, pipeline, tmp_path):
        rc = main(["--config", pipeline.cfg, "sweep", "--weights", pipeline.weights,
                   pipeline.weights, "--out", str(tmp_path / "s.txt")])
        assert rc == EXIT_CONFIG

    def test_weights_without_history_rejected(self, pipeline, tmp_path):
        plain = tmp_path / "plain.npz"
        w = init_weights((7, 4, 4, 4, 3), np.zeros(7), np.ones(7),
                         np.random.default_rng(0))
        save_weights(plain, w, "", 0)
        rc = main(["--config", pipeline.cfg, "sweep", "--weights", str(plain),
                   "--out", str(tmp_path / "s.txt")])
        assert rc == EXIT_CONFIG


class TestEval:
    def test_side_by_side_reports(self, pipeline, tmp_path, capsys):
        out = str(tmp_path / "bench")
        rc = main(["--config", pipeline.cfg, "eval",
                   "--model-weights", pipeline.weights,
                   "--agent-weights", pipeline.agent, "--out", out, "--traces"])
        assert rc == EXIT_OK
        text = capsys.readouterr().out
        assert "model-based controller:" in text
        assert "model-free baseline:" in text
        for suffix in (".model", ".policy", ".model.traces", ".policy.traces"):
            lines = open(out + suffix).read().splitlines()
            assert lines
        model_lines = open(out + ".model").read().splitlines()
        assert model_lines[0].startswith("pushbench 1 ")
        assert any(l.startswith("O P ") for l in model_lines)


class TestTopLevel:
    def test_missing_config_file(self, tmp_path):
        rc = main(["--config", str(tmp_path / "absent.ini"), "collect",
                   "--out", str(tmp_path / "d.txt")])
        assert rc == EXIT_CONFIG

    def test_unknown_command_exits(self):
        with pytest.raises(SystemExit):
            main(["frobnicate"])

    def test_command_required(self):
        with pytest.raises(SystemExit):
            main([])
