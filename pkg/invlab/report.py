"""
:mod:`invlab.report` -- Figures, tables and summaries
=====================================================

Every figure is written as SVG and PNG next to the CSV holding its data;
the CSV is the source of truth.
Classes are arranged by decreasing training size: each replicate draws its
own class ordering, so curves are aggregated by size rank, not by class
index.
"""
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import chevron
import matplotlib
import numpy as np
import pandas as pd
import torch
from PIL import Image
from torchvision.utils import make_grid

from invlab.experiment import ReplicateResult, ResultsTable, t_interval
from invlab.metrics import EKLDReport

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

LaxPath = Union[str, Path]

_KEY_COLUMNS = ("method", "replicate", "rank", "class_index", "class_size")
EKLD_COLUMNS = (*_KEY_COLUMNS, "ekld_nats")
ACCURACY_COLUMNS = (*_KEY_COLUMNS, "accuracy")
FIGURE_FORMATS = ("svg", "png")

SUMMARY_TEMPLATE = """\
{{name}}: balanced test accuracy (mean ± 95% CI over replicates)
{{#methods}}
  {{method}}: {{accuracy}}{{#failed}} ({{failed}} failed){{/failed}}
{{/methods}}
{{^methods}}
  no results
{{/methods}}
"""


def _by_size(sizes: Sequence[int]) -> np.ndarray:
    """Class indices by decreasing size; ties keep index order."""
    return np.argsort(-np.asarray(sizes), kind="stable")


def _long_frame(
    curves: Mapping[str, Sequence[Tuple[np.ndarray, np.ndarray]]], value: str, columns
) -> pd.DataFrame:
    records = []
    for method, replicates in curves.items():
        for replicate, (values, sizes) in enumerate(replicates):
            for rank, j in enumerate(_by_size(sizes)):
                records.append(
                    {
                        "method": method,
                        "replicate": replicate,
                        "rank": rank,
                        "class_index": int(j),
                        "class_size": int(sizes[j]),
                        value: float(values[j]),
                    }
                )
    return pd.DataFrame(records, columns=list(columns))


def _plot_by_rank(
    frame: pd.DataFrame, value: str, ylabel: str, title: str, prefix: Path
) -> List[Path]:
    fig, ax = plt.subplots(figsize=(7, 4), constrained_layout=True)
    for method, rows in frame.groupby("method", sort=False):
        ranks = sorted(rows["rank"].unique())
        intervals = [
            t_interval(rows.loc[rows["rank"] == r, value].dropna()) for r in ranks
        ]
        mean, low, high = (np.array(v) for v in zip(*intervals))
        ax.plot(ranks, mean, label=method or "method")
        if np.isfinite(low).any():
            ax.fill_between(ranks, low, high, alpha=0.25)
    ax.set_xlabel("class, largest to smallest training size")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend(loc="best")
    paths = []
    for fmt in FIGURE_FORMATS:
        path = prefix.with_suffix(f".{fmt}")
        fig.savefig(path, dpi=200)
        paths.append(path)
    plt.close(fig)
    return paths


def emit_ekld_figure(
    reports: Union[Mapping[str, Sequence[EKLDReport]], Sequence[EKLDReport]],
    prefix: LaxPath,
    class_sizes: Optional[Sequence[int]] = None,
) -> List[Path]:
    """
    Per-class eKLD against class size rank, one curve per method with a
    shaded 95% interval over replicates.
    Writes ``<prefix>.csv``, one row per (method, replicate, class), then
    the figure.

    :param reports: replicate reports, grouped by method.
    :param class_sizes: training class sizes shared by every report;
        defaults to each report's own.
    :return: the paths written, CSV first.
    """
    if not isinstance(reports, Mapping):
        reports = {"": list(reports)}
    curves = {
        method: [
            (
                r.per_class_ekld,
                np.asarray(class_sizes if class_sizes is not None else r.class_sizes),
            )
            for r in group
        ]
        for method, group in reports.items()
    }
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    frame = _long_frame(curves, "ekld_nats", EKLD_COLUMNS)
    csv = prefix.with_suffix(".csv")
    frame.to_csv(csv, index=False)
    if frame.empty:
        logging.warning("no eKLD to plot; only %s written", csv)
        return [csv]
    figures = _plot_by_rank(
        frame, "ekld_nats", "eKLD (nats)", "Invariance by class size", prefix
    )
    return [csv, *figures]


def emit_accuracy_by_class(
    results: Iterable[ReplicateResult],
    prefix: LaxPath,
    class_sizes: Optional[Sequence[int]] = None,
) -> List[Path]:
    """
    Per-class test accuracy against class size rank, one curve per method.
    Failed replicates are left out.

    :return: the paths written, CSV first.
    """
    curves: Dict[str, List[Tuple[np.ndarray, np.ndarray]]] = {}
    for r in results:
        if not r.ok:
            continue
        sizes = np.asarray(class_sizes if class_sizes is not None else r.class_sizes)
        accuracy = np.asarray(r.per_class_accuracy)
        curves.setdefault(r.method, []).append((accuracy, sizes))
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    frame = _long_frame(curves, "accuracy", ACCURACY_COLUMNS)
    csv = prefix.with_suffix(".csv")
    frame.to_csv(csv, index=False)
    if frame.empty:
        logging.warning("no accuracy to plot; only %s written", csv)
        return [csv]
    figures = _plot_by_rank(
        frame, "accuracy", "test accuracy", "Accuracy by class size", prefix
    )
    return [csv, *figures]


def _percent(x: float) -> str:
    return "n/a" if np.isnan(x) else f"{100 * x:.2f}"


def render_summary(table: ResultsTable, name: str = "experiment") -> str:
    """
    >>> print(render_summary(ResultsTable([]), "empty"), end="")
    empty: balanced test accuracy (mean ± 95% CI over replicates)
      no results
    """
    methods = []
    for row in table.summary().to_dict("records"):
        half = (row["ci_high"] - row["ci_low"]) / 2
        accuracy = _percent(row["mean"])
        if not np.isnan(half):
            accuracy += f" ± {100 * half:.2f}"
        methods.append(
            {"method": row["method"], "accuracy": accuracy, "failed": row["failed"]}
        )
    return chevron.render(SUMMARY_TEMPLATE, {"name": name, "methods": methods})


def write_report(
    table: ResultsTable, directory: LaxPath, name: str = "experiment"
) -> List[Path]:
    """
    Writes the results table, the per-method summary (CSV and text), and
    both figures to *directory*.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    table.to_csv(directory / "results.csv")
    table.summary().to_csv(directory / "summary.csv", index=False)
    summary = directory / "summary.txt"
    summary.write_text(render_summary(table, name))
    paths = [directory / "results.csv", directory / "summary.csv", summary]
    paths += emit_ekld_figure(table.ekld_reports(), directory / "ekld_by_class")
    paths += emit_accuracy_by_class(table.rows, directory / "accuracy_by_class")
    logging.info("report written to %s", directory)
    return paths


def write_sample_grid(
    original: np.ndarray,
    samples: Sequence[np.ndarray],
    directory: LaxPath,
    stem: str = "sample",
) -> List[Path]:
    """
    Writes *original* followed by *samples* as one PNG grid, and every
    sample as its own PNG.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    images = np.stack([original, *samples])
    if images.ndim == 3:
        images = images[..., np.newaxis]
    tensor = torch.from_numpy(np.array(images)).permute(0, 3, 1, 2)
    grid = make_grid(tensor, nrow=len(images), padding=2, pad_value=255)
    grid_path = directory / f"{stem}_grid.png"
    Image.fromarray(_to_pil_array(grid.permute(1, 2, 0).numpy())).save(grid_path)
    paths = [grid_path]
    for i, image in enumerate(images[1:]):
        path = directory / f"{stem}_{i:03d}.png"
        Image.fromarray(_to_pil_array(image)).save(path)
        paths.append(path)
    return paths


def _to_pil_array(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.uint8)
    return image[..., 0] if image.shape[-1] == 1 else image
