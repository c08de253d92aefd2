"""Tests for the command-line interface.

Everything runs through cli.main(argv) in-process (fast, capsys-friendly)
except one smoke test that goes through `python -m radiofield` to make sure
the installed entry point works end to end.
"""

import csv
import json
import subprocess
import sys

import numpy as np
import pytest
import yaml
from PIL import Image

from radiofield.cli import DEFAULTS, main
from radiofield.dataio import ChannelRecord, DatasetManifest, read_dataset, write_dataset
from radiofield.scene import SceneConfig

pytestmark = pytest.mark.filterwarnings("ignore:.*clamped.*")

# small enough to train in seconds on one core, large enough to be non-trivial
SYNTH_ARGS = [
    "num_tx=24",
    "num_rx=1",
    "room.num_subcarriers=8",
    "room.max_order=1",
    "scene.azimuth_bins=6",
    "scene.elevation_bins=2",
    "scene.n_samples=8",
]
TRAIN_ARGS = [
    "depth=1",
    "base_channels=8",
    "feature_dim=8",
    "position_frequencies=4",
    "direction_frequencies=2",
    "batch_rays=48",
    "epochs=2",
    "learning_rate=5e-3",
]


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli-dataset")
    code = main(["synth-gen", "bedroom", *SYNTH_ARGS, "seed=1", "-o", str(out)])
    assert code == 0
    return out


@pytest.fixture(scope="session")
def train_dir(tmp_path_factory, dataset_dir):
    out = tmp_path_factory.mktemp("cli-train")
    stem = dataset_dir / "bedroom"
    code = main(["train", f"dataset={stem}", *TRAIN_ARGS, "-o", str(out)])
    assert code == 0
    return out


def _read_metrics(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["name", "value"]
    return {name: float(value) for name, value in rows[1:]}


class TestSynthGen:
    def test_rerun_is_byte_identical(self, tmp_path):
        argv = ["synth-gen", "bedroom", "num_tx=12", "room.max_order=1", "seed=1"]
        dirs = [tmp_path / "a", tmp_path / "b"]
        for d in dirs:
            assert main([*argv, "-o", str(d)]) == 0
        for name in ("bedroom.ndrec", "bedroom.manifest", "resolved-config.yaml"):
            a = (dirs[0] / name).read_bytes()
            b = (dirs[1] / name).read_bytes()
            assert a == b, f"{name} differs between identical reruns"

    def test_seed_changes_the_records(self, tmp_path):
        payloads = []
        for seed in (1, 2):
            d = tmp_path / f"seed{seed}"
            argv = ["synth-gen", "bedroom", "num_tx=12", "room.max_order=1", f"seed={seed}"]
            assert main([*argv, "-o", str(d)]) == 0
            payloads.append((d / "bedroom.ndrec").read_bytes())
        assert payloads[0] != payloads[1]

    def test_resolved_config_echo(self, dataset_dir):
        payload = yaml.safe_load((dataset_dir / "resolved-config.yaml").read_text())
        assert payload["subcommand"] == "synth-gen"
        cfg = payload["config"]
        assert cfg["seed"] == 1
        assert cfg["num_tx"] == 24
        assert cfg["name"] == "bedroom"
        assert cfg["room"]["dimensions"] == [4.0, 3.0, 2.5]
        assert cfg["room"]["num_subcarriers"] == 8
        assert cfg["scene"]["azimuth_bins"] == 6

    def test_dataset_matches_config(self, dataset_dir):
        records, manifest = read_dataset(dataset_dir / "bedroom")
        assert len(records) == 24
        assert manifest.task == "csi"
        assert manifest.record_count == 24
        assert manifest.scene.azimuth_bins == 6
        assert manifest.scene.elevation_bins == 2
        assert manifest.generator["seed"] == 1
        assert all(len(r.h.values) == 8 for r in records)

    def test_bare_override_without_config_file(self, tmp_path):
        out = tmp_path / "defaults"
        argv = ["synth-gen", "num_tx=5", "room.max_order=1", "seed=2", "-o", str(out)]
        assert main(argv) == 0
        records, manifest = read_dataset(out / "dataset")
        assert len(records) == 5
        assert manifest.generator["num_tx"] == 5

    def test_spectrum_task_is_refused(self, tmp_path):
        code = main(["synth-gen", "task=spectrum", "-o", str(tmp_path / "x")])
        assert code == 2


class TestHelp:
    def test_top_level_lists_subcommands(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        text = capsys.readouterr().out
        for name in DEFAULTS:
            assert name in text

    @pytest.mark.parametrize("subcommand", sorted(DEFAULTS))
    def test_subcommand_help_lists_every_key(self, subcommand, capsys):
        with pytest.raises(SystemExit) as exc:
            main([subcommand, "--help"])
        assert exc.value.code == 0
        text = capsys.readouterr().out
        assert "configuration keys and defaults" in text
        for key, value in DEFAULTS[subcommand].items():
            assert f"{key}:" in text
            if isinstance(value, dict):
                for nested in value:
                    assert f"{nested}:" in text

    def test_help_shows_default_values(self, capsys):
        with pytest.raises(SystemExit):
            main(["train", "--help"])
        text = capsys.readouterr().out
        assert "batch_rays: 1024" in text
        assert "learning_rate: 0.0005" in text
        assert "backbone: apt" in text


class TestTrainEvalPredict:
    def test_train_writes_artifacts(self, train_dir):
        assert (train_dir / "checkpoint-best.npz").is_file()
        assert (train_dir / "checkpoint-best.manifest").is_file()
        assert (train_dir / "history.csv").is_file()
        assert (train_dir / "resolved-config.yaml").is_file()

    def test_eval_on_training_split_is_finite(self, train_dir, dataset_dir, tmp_path):
        out = tmp_path / "eval"
        argv = [
            "eval",
            f"checkpoint={train_dir / 'checkpoint-best'}",
            f"dataset={dataset_dir / 'bedroom'}",
            "split=train",
            "-o",
            str(out),
        ]
        assert main(argv) == 0
        metrics = _read_metrics(out / "metrics.csv")
        assert set(metrics) == {"snr_db"}
        for name, value in metrics.items():
            assert np.isfinite(value), f"{name} is not finite"

    def test_eval_rerun_metrics_byte_identical(self, train_dir, dataset_dir, tmp_path):
        blobs = []
        for tag in ("p", "q"):
            out = tmp_path / tag
            argv = [
                "eval",
                f"checkpoint={train_dir / 'checkpoint-best'}",
                f"dataset={dataset_dir / 'bedroom'}",
                "split=eval",
                "-o",
                str(out),
            ]
            assert main(argv) == 0
            blobs.append((out / "metrics.csv").read_bytes())
        assert blobs[0] == blobs[1]

    def test_predict_writes_jsonl(self, train_dir, dataset_dir, tmp_path):
        out = tmp_path / "pred"
        argv = [
            "predict",
            f"checkpoint={train_dir / 'checkpoint-best'}",
            f"dataset={dataset_dir / 'bedroom'}",
            "split=train",
            "limit=3",
            "-o",
            str(out),
        ]
        assert main(argv) == 0
        lines = (out / "predictions.jsonl").read_text().splitlines()
        assert len(lines) == 3
        for line in lines:
            obj = json.loads(line)
            assert len(obj["tx"]) == 3
            assert len(obj["rx"]) == 3
            h = np.array(obj["h_pred"], dtype=np.float64)
            assert h.shape == (8, 2)
            assert np.all(np.isfinite(h))


class TestPlotSpectrum:
    @pytest.fixture()
    def spectrum_dataset(self, tmp_path):
        rng = np.random.default_rng(7)
        scene = SceneConfig(
            bounds_min=np.zeros(3),
            bounds_max=np.array([4.0, 3.0, 2.5]),
            azimuth_bins=6,
            elevation_bins=2,
            n_samples=8,
        )
        records = [
            ChannelRecord(
                tx_position=rng.uniform(0.5, 2.0, 3),
                rx_position=rng.uniform(0.5, 2.0, 3),
                spectrum=rng.uniform(0.0, 1.0, (2, 6)),
            )
            for _ in range(3)
        ]
        manifest = DatasetManifest(
            task="spectrum", scene=scene, record_count=len(records), split_seed=0
        )
        stem = tmp_path / "angles"
        write_dataset(records, manifest, stem)
        return stem

    def test_output_matches_manifest_grid(self, spectrum_dataset, tmp_path):
        out = tmp_path / "plot"
        argv = ["plot-spectrum", f"dataset={spectrum_dataset}", "record_index=1", "-o", str(out)]
        assert main(argv) == 0
        matrix = np.loadtxt(out / "truth-spectrum.csv", delimiter=",")
        assert matrix.shape == (2, 6)
        with Image.open(out / "truth-spectrum.png") as img:
            assert img.size == (6, 2)  # PIL reports (width, height)
        records, _ = read_dataset(spectrum_dataset)
        np.testing.assert_allclose(matrix, records[1].spectrum, rtol=1e-12)

    def test_record_index_out_of_range(self, spectrum_dataset, tmp_path, capsys):
        argv = [
            "plot-spectrum",
            f"dataset={spectrum_dataset}",
            "record_index=99",
            "-o",
            str(tmp_path / "x"),
        ]
        assert main(argv) == 2
        err = capsys.readouterr().err.strip().splitlines()
        assert len(err) == 1
        assert err[0].startswith("DomainError: ")

    def test_dataset_without_spectrum_labels(self, dataset_dir, tmp_path, capsys):
        argv = [
            "plot-spectrum",
            f"dataset={dataset_dir / 'bedroom'}",
            "-o",
            str(tmp_path / "x"),
        ]
        assert main(argv) == 2
        assert capsys.readouterr().err.startswith("DomainError: ")


class TestFailureModes:
    def test_unknown_config_key(self, tmp_path, capsys):
        code = main(["synth-gen", "bogus_knob=1", "-o", str(tmp_path / "x")])
        assert code == 2
        err = capsys.readouterr().err.strip().splitlines()
        assert len(err) == 1
        assert err[0].startswith("ConfigError: ")
        assert "bogus_knob" in err[0]

    def test_unknown_preset_name(self, tmp_path, capsys):
        code = main(["synth-gen", "warehouse", "-o", str(tmp_path / "x")])
        assert code == 2
        assert capsys.readouterr().err.startswith("ConfigError: ")

    def test_invalid_backbone(self, dataset_dir, tmp_path, capsys):
        stem = dataset_dir / "bedroom"
        code = main(["train", f"dataset={stem}", "backbone=banana", "-o", str(tmp_path / "x")])
        assert code == 2
        assert capsys.readouterr().err.startswith("ConfigError: ")

    def test_missing_checkpoint_is_io_error(self, dataset_dir, tmp_path, capsys):
        argv = [
            "eval",
            f"checkpoint={tmp_path / 'no-such-checkpoint'}",
            f"dataset={dataset_dir / 'bedroom'}",
            "-o",
            str(tmp_path / "x"),
        ]
        assert main(argv) == 4
        err = capsys.readouterr().err.strip().splitlines()
        assert len(err) == 1
        assert err[0].startswith("DataIoError: ")

    def test_missing_dataset_is_io_error(self, train_dir, tmp_path, capsys):
        argv = [
            "eval",
            f"checkpoint={train_dir / 'checkpoint-best'}",
            f"dataset={tmp_path / 'no-such-dataset'}",
            "-o",
            str(tmp_path / "x"),
        ]
        assert main(argv) == 4
        assert capsys.readouterr().err.startswith("DataIoError: ")

    def test_diverged_training_exits_3_and_keeps_last_good(
        self, dataset_dir, tmp_path, capsys
    ):
        out = tmp_path / "diverge"
        stem = dataset_dir / "bedroom"
        argv = [
            "train",
            f"dataset={stem}",
            *TRAIN_ARGS[:-1],
            "learning_rate=1e20",
            "-o",
            str(out),
        ]
        assert main(argv) == 3
        err = capsys.readouterr().err.strip().splitlines()
        assert err[-1].startswith("NumericalError: ")
        assert (out / "checkpoint-last-good.npz").is_file()
        assert (out / "history.csv").is_file()


def test_module_entry_point(tmp_path):
    out = tmp_path / "smoke"
    cmd = [
        sys.executable,
        "-m",
        "radiofield",
        "synth-gen",
        "num_tx=3",
        "room.num_subcarriers=4",
        "room.max_order=1",
        "-o",
        str(out),
    ]
    proc = subprocess.run(cmd, capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stderr
    assert "wrote 3 records" in proc.stdout
    assert (out / "dataset.ndrec").is_file()
