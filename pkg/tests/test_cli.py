"""Command-line surface: determinism, exit codes, file outputs."""

import hashlib
import json

import numpy as np
import pytest

from pedintent.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_config(path, preset="ours6_bboxes", seed=1, epochs=4, extra_data=None, train_extra=None):
    train = {"lr": 3e-4, "batch_size": 16, "max_epochs": epochs, "seed": seed}
    if train_extra:
        train.update(train_extra)
    data = {"obs_len": 16, "tte_lo": 30, "tte_hi": 60, "stride": 15}
    if extra_data:
        data.update(extra_data)
    path.write_text(
        json.dumps({"model": {"preset": preset, "seed": seed}, "train": train, "data": data}),
        encoding="utf-8",
    )
    return path


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["generate", "--seed", "5", "--tracks", "12", "--rule", "separable_motion", "--out", str(out)]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def trained(tmp_path_factory, dataset):
    root = tmp_path_factory.mktemp("run")
    cfg = write_config(root / "config.json")
    assert main(["train", "--config", str(cfg), "--data", str(dataset), "--out", str(root / "out")]) == EXIT_OK
    return root / "out"


class TestGenerate:
    def test_same_seed_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["generate", "--seed", "9", "--tracks", "4", "--rule", "random", "--out", str(out)]) == EXIT_OK
        assert sha(a / "annotations.jsonl") == sha(b / "annotations.jsonl")
        assert sha(a / "frames.pvf") == sha(b / "frames.pvf")

    def test_prints_counts(self, tmp_path, capsys):
        main(["generate", "--seed", "1", "--tracks", "3", "--rule", "random", "--out", str(tmp_path / "d")])
        out = capsys.readouterr().out
        assert "tracks=3" in out and "windows=" in out


class TestTrainEval:
    def test_outputs_exist(self, trained):
        assert (trained / "checkpoint.itn").exists()
        assert (trained / "checkpoint.spec.json").exists()
        assert (trained / "history.csv").exists()
        assert (trained / "resolved_config.json").exists()

    def test_resolved_config_has_expanded_model(self, trained):
        doc = json.loads((trained / "resolved_config.json").read_text())
        assert doc["model"]["channels"] == ["bbox"]
        assert doc["train"]["max_epochs"] == 4

    def test_eval_writes_metrics_csv(self, trained, dataset, tmp_path, capsys):
        rc = main(
            ["eval", "--checkpoint", str(trained / "checkpoint.itn"), "--data", str(dataset), "--split", "train", "--out", str(tmp_path)]
        )
        assert rc == EXIT_OK
        text = (tmp_path / "metrics.csv").read_text()
        assert text.splitlines()[0] == "accuracy,auc,f1,precision,recall"
        acc = float(text.splitlines()[1].split(",")[0])
        assert acc > 0.8  # separable data, trained model

    def test_eval_missing_checkpoint_exit_2(self, dataset, tmp_path, capsys):
        rc = main(["eval", "--checkpoint", str(tmp_path / "nope.itn"), "--data", str(dataset), "--split", "test", "--out", str(tmp_path)])
        assert rc == EXIT_DATA
        assert capsys.readouterr().err != ""

    def test_train_reproducible_bitwise(self, dataset, tmp_path):
        cfg = write_config(tmp_path / "c.json", seed=3, epochs=3)
        for name in ("r1", "r2"):
            assert main(["train", "--config", str(cfg), "--data", str(dataset), "--out", str(tmp_path / name)]) == EXIT_OK
        assert sha(tmp_path / "r1" / "checkpoint.itn") == sha(tmp_path / "r2" / "checkpoint.itn")
        assert sha(tmp_path / "r1" / "history.csv") == sha(tmp_path / "r2" / "history.csv")


class TestPredict:
    def test_prints_probability_and_decision(self, trained, dataset, capsys):
        rc = main(["predict", "--checkpoint", str(trained / "checkpoint.itn"), "--data", str(dataset), "--pid", "ped_0000", "--frame", "40"])
        assert rc == EXIT_OK
        out = capsys.readouterr().out
        assert "probability=" in out and ("decision=crossing" in out or "decision=not_crossing" in out)

    def test_unknown_pid_exit_2(self, trained, dataset, capsys):
        rc = main(["predict", "--checkpoint", str(trained / "checkpoint.itn"), "--data", str(dataset), "--pid", "ghost", "--frame", "40"])
        assert rc == EXIT_DATA


class TestFinetune:
    def test_finetune_runs_and_writes(self, trained, dataset, tmp_path):
        cfg = write_config(tmp_path / "c.json", epochs=2)
        rc = main(
            ["finetune", "--checkpoint", str(trained / "checkpoint.itn"), "--config", str(cfg), "--data", str(dataset), "--out", str(tmp_path / "ft")]
        )
        assert rc == EXIT_OK
        assert (tmp_path / "ft" / "checkpoint.itn").exists()
        doc = json.loads((tmp_path / "ft" / "resolved_config.json").read_text())
        assert doc["finetune_from"].endswith("checkpoint.itn")


class TestEnsemble:
    def test_members_frozen_and_head_saved(self, dataset, tmp_path, capsys):
        members = []
        for seed in (11, 12, 13):
            cfg = write_config(tmp_path / f"c{seed}.json", seed=seed, epochs=2)
            out = tmp_path / f"m{seed}"
            assert main(["train", "--config", str(cfg), "--data", str(dataset), "--out", str(out)]) == EXIT_OK
            members.append(out / "checkpoint.itn")
        before = [sha(m) for m in members]
        cfg = write_config(tmp_path / "ens.json", epochs=30)
        rc = main(
            ["ensemble", "--members", *map(str, members), "--config", str(cfg), "--data", str(dataset), "--out", str(tmp_path / "ens")]
        )
        assert rc == EXIT_OK
        assert [sha(m) for m in members] == before
        assert (tmp_path / "ens" / "ensemble.itn").exists()
        doc = json.loads((tmp_path / "ens" / "ensemble_config.json").read_text())
        assert doc["member_sha256"] == before

    def test_wrong_member_count_exit_1(self, tmp_path):
        rc = main(["ensemble", "--members", "a", "b", "--config", "x", "--out", str(tmp_path)])
        assert rc == EXIT_USAGE  # argparse rejects nargs mismatch


class TestGradcheckCommand:
    def test_ok_exit_zero(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json")
        assert main(["gradcheck", "--config", str(cfg), "--elements", "40"]) == EXIT_OK
        assert "gradcheck ok" in capsys.readouterr().out

    def test_bad_eps_exit_usage(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json")
        assert main(["gradcheck", "--config", str(cfg), "--eps", "0.5"]) == EXIT_USAGE


class TestUsage:
    def test_unknown_command(self, capsys):
        assert main(["transmogrify"]) == EXIT_USAGE

    def test_missing_required_flag(self, capsys):
        assert main(["train"]) == EXIT_USAGE

    def test_bad_config_missing_model(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text("{}", encoding="utf-8")
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_USAGE
