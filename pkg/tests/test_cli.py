import csv
import json
import os
import subprocess
import sys

import pytest

from rrmbench import cli


def run_cli(*argv, env=None):
    full_env = dict(os.environ)
    if env:
        full_env.update(env)
    proc = subprocess.run([sys.executable, "-m", "rrmbench.cli", *argv],
                          capture_output=True, text=True, env=full_env)
    return proc.returncode, proc.stdout, proc.stderr


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "ds"
    code = cli.main(["--seed", "7", "generate", "--out", str(out), "--count", "400",
                     "--k", "4", "--l-max", "8", "--m-max", "16",
                     "--labeler", "waterfill"])
    assert code == 0
    return out


class TestGenerate:
    def test_deterministic_bytes(self, tmp_path):
        for name in ("a", "b"):
            code = cli.main(["--seed", "7", "generate", "--out",
                             str(tmp_path / name), "--count", "60", "--k", "2",
                             "--l-max", "4", "--m-max", "4"])
            assert code == 0
        assert ((tmp_path / "a" / "samples.ndjson").read_bytes()
                == (tmp_path / "b" / "samples.ndjson").read_bytes())

    def test_k_zero_is_config_error(self, tmp_path, capsys):
        code = cli.main(["generate", "--out", str(tmp_path / "x"), "--count", "10",
                         "--k", "0"])
        assert code == 2

    def test_reports_default_universe_cardinality(self, tmp_path, capsys):
        code = cli.main(["generate", "--out", str(tmp_path / "y"), "--count", "2",
                         "--k", "1"])
        assert code == 0
        assert "4096" in capsys.readouterr().out


class TestLabelTrainEval:
    def test_label_command(self, tmp_path):
        out = tmp_path / "ds"
        assert cli.main(["--seed", "3", "generate", "--out", str(out), "--count",
                         "50", "--k", "2", "--l-max", "4", "--m-max", "4"]) == 0
        assert cli.main(["label", "--dataset", str(out),
                         "--labeler", "waterfill"]) == 0

    def test_train_unlabeled_errors(self, tmp_path, capsys):
        out = tmp_path / "raw"
        assert cli.main(["--seed", "3", "generate", "--out", str(out), "--count",
                         "60", "--k", "2", "--l-max", "4", "--m-max", "4"]) == 0
        code = cli.main(["train", "--dataset", str(out), "--preset", "sm1-desk",
                         "--out", str(tmp_path / "w.npz"), "--epochs", "1"])
        assert code == 3
        assert "not labeled" in capsys.readouterr().err

    def test_unknown_preset(self, dataset_dir, tmp_path, capsys):
        code = cli.main(["train", "--dataset", str(dataset_dir), "--preset", "huge",
                         "--out", str(tmp_path / "w.npz")])
        assert code == 2

    def test_train_then_eval(self, dataset_dir, tmp_path, capsys):
        ckpt = tmp_path / "w.npz"
        code = cli.main(["train", "--dataset", str(dataset_dir), "--preset",
                         "sm1-desk", "--out", str(ckpt), "--epochs", "3"])
        assert code == 0
        assert ckpt.exists()
        hist = ckpt.with_suffix(".history.csv")
        rows = list(csv.DictReader(open(hist)))
        assert {"epoch", "train_loss", "val_loss", "wall_time"} <= set(rows[0])
        capsys.readouterr()
        code = cli.main(["eval", "--dataset", str(dataset_dir),
                         "--checkpoint", str(ckpt)])
        assert code == 0
        out = capsys.readouterr().out
        assert "relative sum rate" in out and "t3'" in out

    def test_eval_missing_checkpoint(self, dataset_dir, tmp_path):
        code = cli.main(["eval", "--dataset", str(dataset_dir),
                         "--checkpoint", str(tmp_path / "none.npz")])
        assert code == 3


class TestDqnAndBench:
    def test_dqn_writes_episode_log(self, tmp_path):
        out = tmp_path / "log.csv"
        code = cli.main(["--seed", "1", "dqn", "--users", "3", "--episodes", "6",
                         "--out", str(out)])
        assert code == 0
        rows = list(csv.DictReader(open(out)))
        assert len(rows) == 6
        assert {"episode", "steps", "total_reward", "epsilon", "wall_time"} <= set(rows[0])

    def test_bench_unknown_id(self, tmp_path, capsys):
        code = cli.main(["bench", "whatever", "--out", str(tmp_path)])
        assert code == 2

    def test_bench_runs_driver(self, tmp_path):
        code = cli.main(["--seed", "2", "bench", "cs1-trainsize", "--out",
                         str(tmp_path), "--set", "sweep=[150]", "--set",
                         "epochs=2", "--set", "n_subcarriers=8"])
        assert code == 0
        rows = list(csv.DictReader(open(tmp_path / "cs1-trainsize" / "seed2"
                                        / "trainsize.csv")))
        assert len(rows) == 1


class TestReport:
    def test_missing_results_is_runtime_error(self, tmp_path, capsys):
        code = cli.main(["report", "ageing", "--results", str(tmp_path / "none"),
                         "--out", str(tmp_path / "figs")])
        assert code == 3


class TestEntryPoint:
    def test_help_lists_subcommands(self):
        code, out, err = run_cli("--help")
        assert code == 0
        for cmd in ("generate", "label", "train", "eval", "dqn", "bench", "report"):
            assert cmd in out

    def test_env_var_seed(self, tmp_path):
        code, out, _ = run_cli("generate", "--out", str(tmp_path / "z"), "--count",
                               "4", "--k", "1", "--l-max", "2", "--m-max", "2",
                               env={"RRMBENCH_SEED": "123"})
        assert code == 0
        manifest = json.loads((tmp_path / "z" / "manifest.json").read_text())
        assert manifest["master_seed"] == 123

    def test_idempotent_given_seed(self, tmp_path):
        args = ("bench", "cs1-trainsize", "--out", str(tmp_path), "--set",
                "sweep=[100]", "--set", "epochs=1", "--set", "n_subcarriers=8")
        assert cli.main(["--seed", "5", *args, "--run-id", "r1"]) == 0
        assert cli.main(["--seed", "5", *args, "--run-id", "r2"]) == 0
        rows1 = list(csv.DictReader(open(tmp_path / "cs1-trainsize/r1/trainsize.csv")))
        rows2 = list(csv.DictReader(open(tmp_path / "cs1-trainsize/r2/trainsize.csv")))
        assert rows1[0]["r_bar"] == rows2[0]["r_bar"]
