import json
from pathlib import Path

import numpy as np
import pytest

from carenet.cli import main, parse_config_file
from carenet.dataset import read_spectraset

TINY_CONFIG = """
# tiny panel for fast end-to-end runs
n_patients = 2, 2, 2, 2
image_size = 12
class_separation = 1.5
"""


def run(argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    """synth -> preprocess -> train (type head, 2 epochs) shared by tests."""
    root = tmp_path_factory.mktemp("cli")
    config = root / "panel.cfg"
    config.write_text(TINY_CONFIG)
    synth_dir = root / "panel"
    assert run(["synth", "--seed", 7, "--config", config, "--out-dir", synth_dir]) == 0
    pre_dir = root / "pre"
    assert run(["preprocess", synth_dir, "--seed", 7, "--out-dir", pre_dir]) == 0
    train_dir = root / "train"
    assert run(["train", pre_dir / "spectra.crns", "--head", "type", "--seed", 7,
                "--epochs", 2, "--out-dir", train_dir]) == 0
    return root, synth_dir, pre_dir, train_dir


class TestConfigParsing:
    def test_values(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("a = 3\nb = 0.5\nc = hello\nd = 1, 2, 3\ne = true\n# comment\n")
        values = parse_config_file(path)
        assert values == {"a": 3, "b": 0.5, "c": "hello", "d": (1, 2, 3), "e": True}

    def test_missing_config_is_usage_error(self, tmp_path):
        code = run(["synth", "--config", tmp_path / "nope.cfg", "--out-dir", tmp_path / "x"])
        assert code == 2

    def test_bad_key_is_usage_error(self, tmp_path):
        config = tmp_path / "c.cfg"
        config.write_text("not_a_real_option = 5\n")
        assert run(["synth", "--config", config, "--out-dir", tmp_path / "x"]) == 2


class TestSynth:
    def test_outputs_and_manifest(self, tiny_run):
        _, synth_dir, _, _ = tiny_run
        index = json.loads((synth_dir / "panel.json").read_text())
        assert len(index["cores"]) == 16  # 8 patients x 2 cores
        manifest = json.loads((synth_dir / "manifest.json").read_text())
        assert manifest["command"] == "synth"
        for output in manifest["outputs"]:
            assert Path(output).exists()

    def test_default_config_is_cohort_shaped(self):
        from carenet.cli import _synth_config

        config = _synth_config({}, seed=0)
        assert config.n_patients == (8, 8, 7, 7)
        assert 2 * config.total_patients == 60  # 60 cores, one CA + one AT per patient

    def test_deterministic_rerun(self, tiny_run, tmp_path):
        root, synth_dir, _, _ = tiny_run
        again = tmp_path / "panel2"
        config = root / "panel.cfg"
        assert run(["synth", "--seed", 7, "--config", config, "--out-dir", again]) == 0
        for name in json.loads((synth_dir / "panel.json").read_text())["cores"].values():
            assert (synth_dir / name).read_bytes() == (again / name).read_bytes()


class TestPreprocess:
    def test_container_and_counts(self, tiny_run):
        _, _, pre_dir, _ = tiny_run
        sset = read_spectraset(pre_dir / "spectra.crns")
        assert len(sset) > 0
        manifest = json.loads((pre_dir / "manifest.json").read_text())
        for counts in manifest["stage_counts"].values():
            seq = [counts["tissue_pixels"], counts["after_outlier1"],
                   counts["after_emsc"], counts["after_normalize"],
                   counts["after_outlier2"]]
            assert all(a >= b for a, b in zip(seq, seq[1:]))

    def test_corrupt_input_is_data_error(self, tmp_path):
        bad = tmp_path / "panel"
        bad.mkdir()
        (bad / "panel.json").write_text('{"cores": {"0": "core.crns"}, "h2o": "h2o.crns"}')
        (bad / "core.crns").write_bytes(b"garbage")
        assert run(["preprocess", bad, "--out-dir", tmp_path / "out"]) == 3


class TestTrainEvalGradcam:
    def test_train_outputs(self, tiny_run):
        _, _, _, train_dir = tiny_run
        for fold in range(1, 5):
            assert (train_dir / f"fold{fold}_final.crnm").exists()
            assert (train_dir / f"fold{fold}_best.crnm").exists()
        history = json.loads((train_dir / "history.json").read_text())
        assert set(history) == {"fold1", "fold2", "fold3", "fold4"}
        assert all(len(h["epochs"]) == 2 for h in history.values())
        split = json.loads((train_dir / "split.json").read_text())
        assert len(split["test_patients"]) == 4

    def test_eval_reports(self, tiny_run, tmp_path):
        root, _, pre_dir, train_dir = tiny_run
        eval_dir = tmp_path / "eval"
        assert run(["eval", train_dir, pre_dir / "spectra.crns",
                    "--out-dir", eval_dir]) == 0
        metrics = (eval_dir / "metrics.csv").read_text().splitlines()
        assert metrics[0].startswith("set,label,class,granularity,accuracy_mean")
        assert any(line.startswith("test,type,CA,patient") for line in metrics)
        patients = (eval_dir / "patients.csv").read_text().splitlines()
        assert patients[0] == "label,patient_id,core,ground_truth,fold1,fold2,fold3,fold4"
        assert len(patients) == 1 + 4  # four type rows (2 CA + 2 AT cores)

    def test_gradcam_outputs(self, tiny_run, tmp_path):
        _, _, pre_dir, train_dir = tiny_run
        cam_dir = tmp_path / "cam"
        assert run(["gradcam", train_dir, pre_dir / "spectra.crns",
                    "--out-dir", cam_dir]) == 0
        csv_path = cam_dir / "heatmap_CA.csv"
        assert csv_path.exists() and (cam_dir / "heatmap_CA.svg").exists()
        lines = csv_path.read_text().splitlines()
        assert len(lines) == 1 + 467
        values = np.array([float(line.split(",")[1]) for line in lines[1:]])
        assert values.min() >= 0.0 and values.max() <= 1.0

    def test_eval_missing_split_is_data_error(self, tiny_run, tmp_path):
        _, _, pre_dir, _ = tiny_run
        assert run(["eval", tmp_path, pre_dir / "spectra.crns",
                    "--out-dir", tmp_path / "out"]) == 3

    def test_usage_error_exit_code(self):
        assert run(["train"]) == 2  # missing required arguments
