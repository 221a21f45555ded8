import numpy as np
import pandas as pd
import pytest
from PIL import Image

from invlab.experiment import FAILED, ReplicateResult, ResultsTable
from invlab.metrics import EKLDReport
from invlab.report import (
    ACCURACY_COLUMNS,
    EKLD_COLUMNS,
    emit_accuracy_by_class,
    emit_ekld_figure,
    render_summary,
    write_report,
    write_sample_grid,
)


def ekld(values, sizes) -> EKLDReport:
    values = np.asarray(values, dtype=np.float64)
    counts = np.full(len(values), 8)
    return EKLDReport(values, counts, float(values.mean()), np.asarray(sizes))


def replicate(
    method, seed, accuracy, sizes=(50, 5, 20), status="ok"
) -> ReplicateResult:
    ok = status == "ok"
    return ReplicateResult(
        method=method,
        seed=seed,
        key=f"{method}-{seed}",
        status=status,
        balanced_accuracy=float(np.mean(accuracy)) if ok else float("nan"),
        per_class_accuracy=list(accuracy) if ok else [],
        class_sizes=list(sizes),
        ekld=ekld([0.1, 0.9, 0.3], sizes) if ok else None,
    )


@pytest.fixture
def table() -> ResultsTable:
    return ResultsTable(
        [
            replicate("ERM", 0, [0.9, 0.2, 0.6]),
            replicate("ERM", 1, [0.8, 0.3, 0.5], sizes=(5, 50, 20)),
            replicate("ERM+GIT", 0, [0.9, 0.5, 0.7]),
            replicate("ERM+GIT", 1, [], status=FAILED),
        ]
    )


class TestEkldFigure:
    def test_classes_are_ranked_by_training_size(self, tmp_path):
        reports = {"ERM": [ekld([0.1, 0.9, 0.3], [50, 5, 20])]}
        paths = emit_ekld_figure(reports, tmp_path / "fig")
        assert [p.suffix for p in paths] == [".csv", ".svg", ".png"]
        assert all(p.exists() for p in paths)
        frame = pd.read_csv(paths[0])
        assert list(frame.columns) == list(EKLD_COLUMNS)
        assert frame["class_index"].tolist() == [0, 2, 1]
        assert frame["ekld_nats"].tolist() == pytest.approx([0.1, 0.3, 0.9])

    def test_explicit_sizes_override_the_reports(self, tmp_path):
        paths = emit_ekld_figure(
            [ekld([0.1, 0.2], [1, 1])], tmp_path / "fig", class_sizes=[3, 9]
        )
        assert pd.read_csv(paths[0])["class_index"].tolist() == [1, 0]

    def test_nothing_to_plot_writes_only_the_csv(self, tmp_path, caplog):
        paths = emit_ekld_figure({}, tmp_path / "fig")
        assert paths == [tmp_path / "fig.csv"]
        assert "no eKLD to plot" in caplog.text


class TestAccuracyFigure:
    def test_failed_replicates_are_left_out(self, table, tmp_path):
        paths = emit_accuracy_by_class(table.rows, tmp_path / "acc")
        frame = pd.read_csv(paths[0])
        assert list(frame.columns) == list(ACCURACY_COLUMNS)
        assert len(frame) == 9
        assert set(frame["method"]) == {"ERM", "ERM+GIT"}

    def test_replicates_align_by_rank_not_index(self, table, tmp_path):
        frame = pd.read_csv(emit_accuracy_by_class(table.rows[:2], tmp_path / "acc")[0])
        head = frame[frame["rank"] == 0]
        assert head["accuracy"].tolist() == pytest.approx([0.9, 0.3])
        assert head["class_size"].tolist() == [50, 50]


class TestSummary:
    def test_it_reports_intervals_and_failures(self, table):
        text = render_summary(table, "demo")
        lines = text.splitlines()
        assert lines[0] == "demo: balanced test accuracy (mean ± 95% CI over replicates)"
        assert lines[1].startswith("  ERM: 55.00 ± ")
        assert lines[2] == "  ERM+GIT: 70.00 (1 failed)"

    def test_report_directories_hold_tables_and_figures(self, table, tmp_path):
        paths = write_report(table, tmp_path / "report", "demo")
        names = {p.name for p in paths}
        assert {"results.csv", "summary.csv", "summary.txt"} <= names
        figures = {"ekld_by_class.svg", "ekld_by_class.png", "accuracy_by_class.png"}
        assert figures <= names
        assert all(p.exists() for p in paths)
        summary = pd.read_csv(tmp_path / "report" / "summary.csv")
        assert summary["failed"].tolist() == [0, 1]


class TestSampleGrid:
    def test_it_writes_a_grid_and_each_sample(self, tmp_path):
        original = np.zeros((8, 8, 1), np.uint8)
        samples = [np.full((8, 8, 1), 255, np.uint8)] * 3
        paths = write_sample_grid(original, samples, tmp_path, "s")
        assert [p.name for p in paths] == [
            "s_grid.png",
            "s_000.png",
            "s_001.png",
            "s_002.png",
        ]
        grid = Image.open(paths[0])
        assert grid.size == (4 * 8 + 5 * 2, 8 + 2 * 2)
        assert np.asarray(Image.open(paths[1])).min() == 255

    def test_color_images_keep_their_channels(self, tmp_path):
        image = np.zeros((8, 8, 3), np.uint8)
        paths = write_sample_grid(image, [image], tmp_path)
        assert Image.open(paths[1]).mode == "RGB"
