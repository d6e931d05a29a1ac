import json
from pathlib import Path

import numpy as np
import pytest

from signspot import cli
from signspot import posedata as pd


def run(argv):
    return cli.main(argv)


def gen_tiny(tmp_path, name="data", pairs=8, seed=3):
    out = tmp_path / name
    code = run([
        "gen-synth", "--preset", "clean", "--seed", str(seed), "--out", str(out),
        "--pairs", str(pairs), "--val-pairs", "4", "--test-pairs", "4", "--signs", "12",
        "--holdout-signs", "0.34",
    ])
    assert code == 0
    return out


class TestGenSynth:
    def test_outputs_and_digests(self, tmp_path):
        out = gen_tiny(tmp_path)
        for name in ("train_poses.jsonl", "train_pairs.jsonl", "train_truth.json",
                     "val_poses.jsonl", "test_poses.jsonl", "manifest.json"):
            assert (out / name).exists()
        poses = pd.load_pose_file(out / "train_poses.jsonl")
        pairs = pd.load_pairs_file(out / "train_pairs.jsonl")
        assert len(pairs) == 8
        samples = pd.resolve_pairs(pairs, poses)
        assert sum(s.label for s in samples) == 4

    def test_byte_identical_reruns(self, tmp_path):
        a = gen_tiny(tmp_path, "a")
        b = gen_tiny(tmp_path, "b")
        for name in ("train_poses.jsonl", "train_pairs.jsonl", "manifest.json",
                     "digests.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_odd_pairs_is_usage_error(self, tmp_path):
        code = run(["gen-synth", "--out", str(tmp_path / "x"), "--pairs", "1001"])
        assert code == cli.EXIT_USAGE

    def test_refuses_nonempty_dir_without_force(self, tmp_path):
        out = gen_tiny(tmp_path)
        code = run(["gen-synth", "--out", str(out), "--pairs", "4",
                    "--val-pairs", "2", "--test-pairs", "0", "--signs", "8"])
        assert code == cli.EXIT_USAGE
        code = run(["gen-synth", "--out", str(out), "--force", "--pairs", "4",
                    "--val-pairs", "2", "--test-pairs", "0", "--signs", "8"])
        assert code == 0

    def test_holdout_pools_disjoint(self, tmp_path):
        out = gen_tiny(tmp_path)
        train_truth = json.loads((out / "train_truth.json").read_text())
        test_truth = json.loads((out / "test_truth.json").read_text())
        train_signs = {s for signs in train_truth["sentences"].values() for s in signs}
        test_signs = {s for signs in test_truth["sentences"].values() for s in signs}
        assert not train_signs & test_signs

    def test_paper_scale_preset_exposes_total(self):
        from signspot import synthbench as sb
        assert sb.preset_total_pairs("paper-scale") == 25_432


def train_tiny(tmp_path, data, out_name="run", extra=()):
    out = tmp_path / out_name
    code = run([
        "train", "--data", str(data), "--out", str(out),
        "--epochs", "2", "--batch-size", "4", "--dtype", "float64",
        "--layers", "1", "--heads", "2", "--d-model", "16", "--ffn-dim", "32",
        "--sentence-cap", "12", "--query-cap", "6", "--seed", "5",
        *extra,
    ])
    assert code == 0
    return out


@pytest.mark.slow
class TestTrainEvalPredict:
    def test_train_writes_artifacts(self, tmp_path):
        data = gen_tiny(tmp_path)
        out = train_tiny(tmp_path, data)
        assert (out / "model.ckpt").exists()
        history = [json.loads(l) for l in (out / "history.jsonl").read_text().splitlines()]
        assert len(history) <= 2
        assert set(history[0]) == {"epoch", "train_loss", "val_accuracy", "val_f1",
                                   "val_precision", "val_recall"}
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "train"
        assert manifest["config"]["train"]["lr"] == 0.0005
        assert manifest["config"]["train"]["max_epochs"] == 2

    def test_train_determinism_via_cli(self, tmp_path):
        data = gen_tiny(tmp_path)
        a = train_tiny(tmp_path, data, "run_a")
        b = train_tiny(tmp_path, data, "run_b")
        assert (a / "history.jsonl").read_bytes() == (b / "history.jsonl").read_bytes()

    def test_digest_mismatch_refused(self, tmp_path):
        data = gen_tiny(tmp_path)
        poses = data / "train_poses.jsonl"
        poses.write_text(poses.read_text() + "\n")
        code = run(["train", "--data", str(data), "--out", str(tmp_path / "r")])
        assert code == cli.EXIT_DATA

    def test_eval_and_predict(self, tmp_path, capsys):
        data = gen_tiny(tmp_path)
        out = train_tiny(tmp_path, data)
        code = run(["eval", "--checkpoint", str(out / "model.ckpt"),
                    "--poses", str(data / "val_poses.jsonl"),
                    "--pairs", str(data / "val_pairs.jsonl"),
                    "--out", str(tmp_path / "evalout")])
        assert code == 0
        text = capsys.readouterr().out
        assert "accuracy" in text and "confusion" in text
        report = json.loads((tmp_path / "evalout" / "metrics.json").read_text())
        assert 0.0 <= report["accuracy"] <= 1.0

        pairs = pd.load_pairs_file(data / "val_pairs.jsonl")
        sid, qid, _ = pairs[0]
        code = run(["predict", "--checkpoint", str(out / "model.ckpt"),
                    "--poses", str(data / "val_poses.jsonl"),
                    "--sentence-id", sid, "--query-id", qid])
        assert code == 0
        text = capsys.readouterr().out
        prob = float(text.split()[1])
        assert 0.0 < prob < 1.0

        code = run(["predict", "--checkpoint", str(out / "model.ckpt"),
                    "--poses", str(data / "val_poses.jsonl"),
                    "--sentence-id", sid, "--query-id", qid, "--threshold", "0"])
        assert code == 0
        assert "present" in capsys.readouterr().out

    def test_eval_deterministic(self, tmp_path, capsys):
        data = gen_tiny(tmp_path)
        out = train_tiny(tmp_path, data)
        capsys.readouterr()  # drain setup output
        argv = ["eval", "--checkpoint", str(out / "model.ckpt"),
                "--poses", str(data / "val_poses.jsonl"),
                "--pairs", str(data / "val_pairs.jsonl")]
        assert run(argv) == 0
        first = capsys.readouterr().out
        assert run(argv) == 0
        assert capsys.readouterr().out == first

    def test_predict_unknown_id(self, tmp_path):
        data = gen_tiny(tmp_path)
        out = train_tiny(tmp_path, data)
        code = run(["predict", "--checkpoint", str(out / "model.ckpt"),
                    "--poses", str(data / "val_poses.jsonl"),
                    "--sentence-id", "nope", "--query-id", "nada"])
        assert code == cli.EXIT_DATA

    def test_missing_checkpoint(self, tmp_path):
        data = gen_tiny(tmp_path)
        code = run(["eval", "--checkpoint", str(tmp_path / "missing.ckpt"),
                    "--poses", str(data / "val_poses.jsonl"),
                    "--pairs", str(data / "val_pairs.jsonl")])
        assert code == cli.EXIT_DATA

    def test_config_file_and_flag_precedence(self, tmp_path):
        data = gen_tiny(tmp_path)
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "# tiny run\n"
            "model.d_model = 16\n"
            "model.num_layers = 1\n"
            "model.num_heads = 2\n"
            "model.ffn_dim = 32\n"
            "train.batch_size = 4\n"
            "train.max_epochs = 5\n"
            "train.dtype = \"float64\"\n"
            "loss.mode = \"bce\"\n"
        )
        out = tmp_path / "cfgrun"
        code = run(["train", "--data", str(data), "--out", str(out),
                    "--config", str(cfg), "--epochs", "1",
                    "--sentence-cap", "12", "--query-cap", "6"])
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["model"]["d_model"] == 16
        assert manifest["config"]["train"]["max_epochs"] == 1  # flag beats file

    def test_unknown_config_key(self, tmp_path):
        data = gen_tiny(tmp_path)
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("train.learning = 1\n")
        code = run(["train", "--data", str(data), "--out", str(tmp_path / "x"),
                    "--config", str(cfg)])
        assert code == cli.EXIT_USAGE


class TestVerifyCommand:
    def test_subset_runs_and_reports(self, capsys):
        code = run(["verify", "--only", "split_arithmetic,bce_exactness"])
        assert code == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "split_arithmetic" in out
        assert "2/2 checks passed" in out

    def test_unknown_check_rejected(self):
        assert run(["verify", "--only", "no_such_check"]) == cli.EXIT_DATA

    def test_usage_error_exit_code(self):
        assert run(["no-such-command"]) == cli.EXIT_USAGE
