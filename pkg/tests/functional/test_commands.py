import subprocess
from pathlib import Path

from invlab.dataset import TEST, TRAIN, load_splits
from invlab.experiment import ExperimentConfig, ResultsTable


def invlab(*args: str, cwd: Path) -> subprocess.CompletedProcess:
    return subprocess.run(
        ["invlab", *args],
        cwd=cwd,
        timeout=300,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
    )


def test_data_build(base_dir, tmp_path):
    out = tmp_path / "variant"
    run = invlab(
        "data",
        "build",
        f"--base={base_dir}",
        "--transform=dil",
        f"--out={out}",
        cwd=tmp_path,
    )
    assert run.returncode == 0, run.stderr.decode()
    assert run.stdout.decode().strip() == str(out)
    assert set(load_splits(out)) == {TRAIN, TEST}


def test_train_then_report(base_dir, tmp_path):
    config = ExperimentConfig(
        name="functional",
        base=str(base_dir),
        epochs=1,
        batch_size=16,
        generator="oracle",
        oracle_transform="rot",
        git_cutoff=5,
        ekld_transform="rot",
        ekld_samples=2,
        seeds=(0,),
        output_dir=str(tmp_path / "run"),
    ).save(tmp_path / "config.toml")

    run = invlab("train", f"--config={config}", cwd=tmp_path)
    assert run.returncode == 0, run.stderr.decode()
    assert "ERM+Oracle" in run.stdout.decode()
    rows = ResultsTable.from_directory(tmp_path / "run").rows
    assert [r.status for r in rows] == ["ok"]

    report = invlab(
        "report", str(tmp_path / "run"), f"--out={tmp_path / 'report'}", cwd=tmp_path
    )
    assert report.returncode == 0, report.stderr.decode()
    assert (tmp_path / "report" / "ekld_by_class.png").exists()


def test_invalid_configs_exit_with_2(tmp_path):
    config = tmp_path / "config.toml"
    config.write_text('schedule = "sometimes"\n')
    run = invlab("train", f"--config={config}", cwd=tmp_path)
    assert run.returncode == 2
    assert b"Invalid experiment config" in run.stderr
