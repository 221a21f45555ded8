import logging
import sys

import numpy as np
import pytest
from PIL import Image

from invlab.backbones import build_backbone
from invlab.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_PARTIAL,
    main,
    read_config,
    script_entrypoint,
)
from invlab.dataset import TEST, TRAIN, load_split, load_splits, read_manifest
from invlab.experiment import FAILED, ExperimentConfig, ReplicateResult, ResultsTable
from invlab.miitn import MiitnModel, save_miitn
from invlab.training import TrainedClassifier, channel_statistics


class TestReadConfig:
    def test_data_dir_from_env(self, monkeypatch):
        monkeypatch.setenv("INVLAB_DATA_DIR", "/x/y")
        conf, _ = read_config(["report", "r"])
        assert conf.data_dir == "/x/y"

    def test_data_dir_from_cli_overwrites_the_env(self, monkeypatch, caplog):
        monkeypatch.setenv("INVLAB_DATA_DIR", "/x/y")
        conf, _ = read_config(["data", "build", "--base=k49", "--data-dir=u/v"])
        assert conf.data_dir == "u/v"
        assert "INVLAB_DATA_DIR overwritten" in caplog.text

    def test_device_from_env(self, monkeypatch):
        monkeypatch.setenv("INVLAB_DEVICE", "cuda:1")
        conf, _ = read_config(["report", "r"])
        assert conf.device == "cuda:1"

    def test_plugins_from_env(self, monkeypatch):
        monkeypatch.setenv("INVLAB_PLUGINS", """["a", "b.c.d"]""")
        conf, _ = read_config(["report", "r"])
        assert conf.plugins == ("a", "b.c.d")

    def test_plugins_from_cli(self):
        conf, _ = read_config(
            ["train", "--config=c.toml", "-p", "a", "--plugin", "b.c.d"]
        )
        assert conf.plugins == ("a", "b.c.d")

    def test_merge_plugins_from_env_and_cli(self, monkeypatch):
        monkeypatch.setenv("INVLAB_PLUGINS", """["a", "b.c.d"]""")
        conf, _ = read_config(
            ["train", "--config=c.toml", "-p", "e.f", "--plugin", "g"]
        )
        assert conf.plugins == ("a", "b.c.d", "e.f", "g")

    def test_seeds_are_repeatable(self):
        _, arguments = read_config(["train", "--config=c.toml", "--seed=3", "--seed=1"])
        assert arguments["--seed"] == ["3", "1"]


class TestDataBuild:
    def test_it_writes_a_portable_variant(self, base_dir, tmp_path, capsys):
        out = tmp_path / "variant"
        code = main(
            [
                "data",
                "build",
                f"--base={base_dir}",
                "--transform=rot",
                "--seed=1",
                f"--out={out}",
            ]
        )
        assert code == EXIT_OK
        assert capsys.readouterr().out.strip() == str(out)
        splits = load_splits(out)
        assert len(splits[TRAIN]) < 48
        assert len(splits[TEST]) == 16
        manifest = read_manifest(out)
        assert manifest["variant"]["transform_family"] == "rotation"
        assert manifest["variant"]["ordering_seed"] == 1

    def test_outputs_default_to_the_data_directory(self, base_dir, monkeypatch, capsys):
        monkeypatch.setenv("INVLAB_DATA_DIR", str(base_dir.parent))
        assert main(["data", "build", "--base=tiny", "--seed=2"]) == EXIT_OK
        out = capsys.readouterr().out.strip()
        assert out == str(base_dir.parent / "tiny-none-lt-seed2")
        assert set(load_splits(out)) == {TRAIN, TEST}

    def test_it_lifts_small_classes_to_the_floor(self, base_dir, tmp_path):
        build = ["data", "build", f"--base={base_dir}"]
        assert main([*build, f"--out={tmp_path / 'a'}"]) == EXIT_OK
        plan = read_manifest(tmp_path / "a")["variant"]["plan"]
        assert plan["target_sizes"] == [12, 3, 1, 1]
        assert main([*build, "--floor=3", f"--out={tmp_path / 'b'}"]) == EXIT_OK
        plan = read_manifest(tmp_path / "b")["variant"]["plan"]
        assert plan["floor"] == 3
        assert plan["target_sizes"] == [12, 3, 3, 3]


class TestMeasure:
    @pytest.fixture
    def checkpoint(self, base_dir, tmp_path):
        test = load_split(base_dir, TEST)
        classifier = TrainedClassifier(
            build_backbone("simple_cnn", 4, test.image_shape), *channel_statistics(test)
        )
        return classifier.save(tmp_path / "c.pt")

    def test_it_writes_per_class_ekld(self, base_dir, checkpoint, tmp_path, capsys):
        csv = tmp_path / "ekld.csv"
        code = main(
            [
                "measure",
                "ekld",
                f"--checkpoint={checkpoint}",
                f"--dataset={base_dir}",
                "--transform=rot",
                "--k=2",
                f"--out={csv}",
            ]
        )
        assert code == EXIT_OK
        assert float(capsys.readouterr().out) >= 0
        assert csv.read_text().startswith("class_index,class_size,ekld_nats,n_samples")

    def test_it_defaults_to_the_family_of_the_dataset(
        self, base_dir, checkpoint, tmp_path, caplog
    ):
        variant = tmp_path / "variant"
        build = ["data", "build", f"--base={base_dir}", "--transform=bg"]
        assert main([*build, f"--out={variant}"]) == EXIT_OK
        csv = tmp_path / "ekld.csv"
        args = [f"--checkpoint={checkpoint}", f"--dataset={variant}", "--k=1"]
        with caplog.at_level(logging.INFO):
            code = main(["measure", "ekld", *args, f"--out={csv}"])
        assert code == EXIT_OK
        assert "under background" in caplog.text
        assert csv.exists()

    def test_it_needs_a_family_for_datasets_without_one(
        self, base_dir, checkpoint, monkeypatch
    ):
        args = [f"--checkpoint={checkpoint}", f"--dataset={base_dir}"]
        monkeypatch.setattr(sys, "argv", ["invlab", "measure", "ekld", *args])
        with pytest.raises(SystemExit) as raised:
            script_entrypoint()
        assert raised.value.code == EXIT_CONFIG


class TestMiitn:
    def test_it_trains_then_samples(self, base_dir, tmp_path, capsys):
        checkpoint = tmp_path / "miitn.pt"
        args = ["miitn", "train", f"--dataset={base_dir}", f"--out={checkpoint}"]
        assert main([*args, "--steps=2"]) == EXIT_OK
        assert checkpoint.exists()
        assert checkpoint.with_suffix(".csv").exists()

        out = tmp_path / "samples"
        code = main(
            [
                "miitn",
                "sample",
                f"--checkpoint={checkpoint}",
                f"--dataset={base_dir}",
                "--index=3",
                "--n=2",
                f"--out={out}",
            ]
        )
        assert code == EXIT_OK
        assert capsys.readouterr().out.strip() == str(out / "sample_3_grid.png")
        assert sorted(p.name for p in out.iterdir()) == [
            "sample_3_000.png",
            "sample_3_001.png",
            "sample_3_grid.png",
        ]

    def test_it_samples_an_image_file(self, base_dir, tmp_path, capsys):
        model = MiitnModel(load_split(base_dir, TEST).image_shape, seed=0)
        checkpoint = save_miitn(tmp_path / "miitn.pt", model)
        image = tmp_path / "digit.png"
        Image.fromarray(load_split(base_dir, TEST).images[0, ..., 0]).save(image)
        out = tmp_path / "samples"
        args = [f"--checkpoint={checkpoint}", f"--input={image}", f"--out={out}"]
        assert main(["miitn", "sample", *args, "--n=3"]) == EXIT_OK
        assert capsys.readouterr().out.strip() == str(out / "sample_digit_grid.png")
        assert len(list(out.glob("sample_digit_0*.png"))) == 3


def failed_table(config: ExperimentConfig, *args, **kwargs) -> ResultsTable:
    return ResultsTable(
        [
            ReplicateResult(
                config.method, 0, config.replicate_key(0), status=FAILED, error="boom"
            )
        ]
    )


class TestExitCodes:
    def run(self, monkeypatch, *args) -> int:
        monkeypatch.setattr(sys, "argv", ["invlab", *args])
        with pytest.raises(SystemExit) as raised:
            script_entrypoint()
        return raised.value.code

    def test_invalid_configs(self, monkeypatch, tmp_path):
        config = tmp_path / "c.toml"
        config.write_text("git_p = 5.0\n")
        assert self.run(monkeypatch, "train", f"--config={config}") == EXIT_CONFIG

    def test_unknown_plugins(self, monkeypatch, tmp_path):
        config = ExperimentConfig(output_dir=str(tmp_path / "run"))
        path = config.save(tmp_path / "c.toml")
        code = self.run(
            monkeypatch, "train", f"--config={path}", "-p", "no.such.plugin"
        )
        assert code == EXIT_CONFIG

    def test_partial_sweeps(self, monkeypatch, tmp_path, mocker):
        mocker.patch("invlab.cli.run_experiment", side_effect=failed_table)
        config = ExperimentConfig(output_dir=str(tmp_path / "run"))
        path = config.save(tmp_path / "c.toml")
        assert self.run(monkeypatch, "train", f"--config={path}") == EXIT_PARTIAL
        assert (tmp_path / "run" / "report" / "summary.txt").exists()

    def test_reports(self, monkeypatch, tmp_path, capsys):
        ReplicateResult(
            "ERM",
            0,
            "k",
            balanced_accuracy=0.5,
            per_class_accuracy=[0.5, 0.5],
            class_sizes=[3, 1],
        ).save(tmp_path / "run" / "replicates" / "k.json")
        out = tmp_path / "report"
        code = self.run(
            monkeypatch, "report", str(tmp_path / "run"), f"--out={out}", "--name=demo"
        )
        assert code == EXIT_OK
        assert "  ERM: 50.00" in capsys.readouterr().out
        assert (out / "accuracy_by_class.csv").exists()
        (row,) = ResultsTable.from_directory(tmp_path / "run").rows
        assert np.isclose(row.balanced_accuracy, 0.5)
