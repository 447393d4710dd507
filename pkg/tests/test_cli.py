import json

import numpy as np
import pytest

from rails import load_dataset, load_memory, make_blobs, save_dataset
from rails.cli import main
from rails.harness import BlobSpec


@pytest.fixture
def datasets(tmp_path):
    """Small two-class train/test CSVs plus a fast config file."""
    means = np.full((2, 3), 0.3)
    means[1] = 0.7
    train, test = make_blobs(BlobSpec(means=means, sigma=0.05, n_train=20, n_test=3, seed=9))
    train_path = tmp_path / "train.csv"
    test_path = tmp_path / "test.csv"
    save_dataset(train_path, train)
    save_dataset(test_path, test)
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps({
        "k": 2, "T": 12, "G": 2, "tau": 0.3, "rho": 0.1, "seed": 5,
        "layers": ["identity", "proj:2"], "n_classes": 2,
    }))
    return train_path, test_path, config_path


def run_cli(*argv):
    return main([str(a) for a in argv])


class TestEvaluateCommand:
    def test_writes_report_and_manifest(self, datasets, tmp_path):
        train, test, config = datasets
        out = tmp_path / "out"
        code = run_cli("evaluate", "--config", config, "--train", train, "--test", test,
                       "--out", out, "--epsilon", "0.1")
        assert code == 0
        csv_text = (out / "eval_report.csv").read_text()
        assert csv_text.startswith("method,split,accuracy,epsilon,seed")
        sidecar = json.loads((out / "eval_report.json").read_text())
        assert sidecar["config"]["k"] == 2
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["subcommand"] == "evaluate"
        assert "wall_time" in manifest
        assert sorted(manifest["outputs"]) == ["eval_report.csv", "eval_report.json"]

    def test_same_seed_is_byte_identical(self, datasets, tmp_path):
        train, test, config = datasets
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert run_cli("evaluate", "--config", config, "--train", train, "--test", test,
                           "--out", out, "--epsilon", "0.1", "--seed", "77") == 0
            outs.append(out)
        assert (outs[0] / "eval_report.csv").read_bytes() == (outs[1] / "eval_report.csv").read_bytes()
        assert (outs[0] / "eval_report.json").read_bytes() == (outs[1] / "eval_report.json").read_bytes()

    def test_seed_override_changes_output(self, datasets, tmp_path):
        train, test, config = datasets
        texts = []
        for seed in ("77", "78"):
            out = tmp_path / f"s{seed}"
            assert run_cli("evaluate", "--config", config, "--train", train, "--test", test,
                           "--out", out, "--epsilon", "0.1", "--seed", seed) == 0
            texts.append((out / "eval_report.csv").read_text())
        assert texts[0] != texts[1]


class TestErrorHandling:
    def test_missing_train_flag(self, datasets, tmp_path, capsys):
        _, test, config = datasets
        code = run_cli("evaluate", "--config", config, "--test", test, "--out", tmp_path / "x")
        assert code == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "E_MISSING_INPUT"
        assert "--train" in err["message"]

    def test_nonexistent_train_file(self, datasets, tmp_path, capsys):
        _, test, config = datasets
        code = run_cli("evaluate", "--config", config, "--train", tmp_path / "ghost.csv",
                       "--test", test, "--out", tmp_path / "x")
        assert code == 1
        assert json.loads(capsys.readouterr().err)["error"] == "E_MISSING_INPUT"

    def test_invalid_config_file(self, datasets, tmp_path, capsys):
        train, test, _ = datasets
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"tau": 0}))
        code = run_cli("predict", "--config", bad, "--train", train, "--test", test,
                       "--out", tmp_path / "x")
        assert code == 1
        assert json.loads(capsys.readouterr().err)["error"] == "E_INVALID_CONFIG"

    def test_unknown_flag(self, tmp_path, capsys):
        code = run_cli("evaluate", "--wat", "1", "--out", tmp_path / "x")
        assert code == 1
        assert json.loads(capsys.readouterr().err)["error"] in ("E_INVALID_INPUT", "E_MISSING_INPUT")


class TestPredictCommand:
    def test_outputs_and_memory_store(self, datasets, tmp_path):
        train, test, config = datasets
        out = tmp_path / "pred"
        assert run_cli("predict", "--config", config, "--train", train, "--test", test,
                       "--out", out) == 0
        lines = (out / "predictions.csv").read_text().strip().split("\n")
        assert lines[0] == "query_id,label,plasma_total,votes_0,votes_1"
        assert len(lines) == 1 + 6
        manifest, records = load_memory(out / "memory_store")
        # ceil(0.25 * 12) = 3 memory records per (query, layer)
        assert manifest["memory_count"] == 3
        assert len(records) == 6 * 2 * 3

    def test_json_format(self, datasets, tmp_path):
        train, test, config = datasets
        out = tmp_path / "predj"
        assert run_cli("predict", "--config", config, "--train", train, "--test", test,
                       "--out", out, "--format", "json") == 0
        records = json.loads((out / "predictions.json").read_text())
        assert len(records) == 6
        assert {"query_id", "label", "plasma_total", "votes"} <= set(records[0])


class TestOtherCommands:
    def test_make_blobs_then_attack(self, tmp_path, datasets):
        *_, config = datasets
        blob_out = tmp_path / "blobs"
        assert run_cli("make-blobs", "--out", blob_out, "--seed", "3") == 0
        train = load_dataset(blob_out / "train.csv")
        test = load_dataset(blob_out / "test.csv")
        assert train.n == 900 and test.n == 300  # canonical 300/100 per class, C=3

        atk_out = tmp_path / "atk"
        assert run_cli("attack", "--train", blob_out / "train.csv",
                       "--test", blob_out / "test.csv", "--out", atk_out,
                       "--epsilon", "0.1", "--seed", "3") == 0
        adv = load_dataset(atk_out / "attacked_test.csv")
        assert np.max(np.abs(adv.X - test.X)) <= 0.1 + 1e-12
        assert np.array_equal(adv.y, test.y)

    def test_sense_command(self, datasets, tmp_path):
        train, test, config = datasets
        out = tmp_path / "sense"
        assert run_cli("sense", "--config", config, "--train", train, "--test", test,
                       "--out", out) == 0
        lines = (out / "threat.csv").read_text().strip().split("\n")
        assert lines[0] == "query_id,raw_score,percentile,flagged"
        assert len(lines) == 1 + 6

    def test_curves_command(self, datasets, tmp_path):
        train, test, config = datasets
        out = tmp_path / "curves"
        assert run_cli("curves", "--config", config, "--train", train, "--test", test,
                       "--out", out) == 0
        for i in range(6):
            lines = (out / f"curves_q{i}.csv").read_text().strip().split("\n")
            assert len(lines) == 1 + 3 * 2  # (G+1) rows per layer, two layers

    def test_outputs_do_not_mutate_inputs(self, datasets, tmp_path):
        train, test, config = datasets
        before = (train.read_bytes(), test.read_bytes())
        out = tmp_path / "ro"
        assert run_cli("evaluate", "--config", config, "--train", train, "--test", test,
                       "--out", out, "--epsilon", "0.05") == 0
        assert (train.read_bytes(), test.read_bytes()) == before
