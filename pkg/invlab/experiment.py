"""
:mod:`invlab.experiment` -- Replicate sweeps
============================================

An :class:`ExperimentConfig` describes one method trained on one long-tailed
dataset variant, replicated over several seeds (each seed draws its own
class ordering, pruning, transforms and initialization).
It is stored as a flat TOML file, one documented key per field::

    base = "k49"
    transform = "bg"
    schedule = "DRS"
    generator = "miitn"
    seeds = [0, 1, 2, 3, 4]

:func:`run_experiment` builds, trains and evaluates every replicate, and
writes each outcome to its own JSON file under ``<output_dir>/replicates/``,
named after a content hash of the config and the seed.
Re-running a config skips the replicates already done; failed replicates
are recorded as such and retried on the next run.
"""
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import pendulum
import tomlkit
from scipy import stats

from invlab import sources
from invlab.backbones import ARCHITECTURES
from invlab.dataset import TEST, TRAIN, VALIDATION, LabeledImageDataset, load_splits
from invlab.git import GitConfig, miitn_generator, oracle_generator
from invlab.longtail import (
    DecayLaw,
    LongTailPlan,
    apply_oneshot_transform,
    build_isotransform_dataset,
    build_longtail_dataset,
    make_longtail_plan,
)
from invlab.metrics import EKLDReport, estimate_ekld, per_class_accuracy
from invlab.miitn import MiitnTransform, load_miitn, train_miitn
from invlab.miitn import preset as miitn_preset
from invlab.nuisance import ALIASES, TransformDistribution
from invlab.plugins import resolve_all
from invlab.plugins.contracts import Plugin
from invlab.strategies import StrategyConfig, StrategyError
from invlab.training import (
    TrainingError,
    TrainSchedule,
    schedule_preset,
    seeded_backbone,
    train_classifier,
)

GENERATORS = ("none", "oracle", "miitn")
REPLICATES_DIR = "replicates"
RESULTS_FILE = "results.csv"
CONFIG_FILE = "config.toml"

OK = "ok"
FAILED = "failed"

# Fields that do not change what a replicate computes.
_UNHASHED = ("name", "output_dir", "seeds")

LaxPath = Union[str, Path]


class ConfigError(ValueError):  # noqa: B903
    """
    Raised for experiment configs that cannot be read or are invalid.
    """

    def __init__(self, path: Optional[Path], reason: Union[Exception, str]) -> None:
        super().__init__(f"{path or '<config>'}: {reason}")
        self.path = path
        self.reason = reason


#: One line of documentation per config key, written as TOML comments.
CONFIG_DOCS = {
    "name": "Name of the experiment, used in reports.",
    "base": "Base dataset: k49, gtsrb, cifar10, cifar100, or a directory in portable layout.",
    "transform": "Nuisance family applied once to every image: none, rot, bg or dil.",
    "law": 'Decay law of class sizes, e.g. "zipf:2.0" or "exp:100"; empty for the base preset.',
    "head_size": "Target size of the largest class; 0 for the base preset.",
    "floor": "Minimum class size; 0 for the base preset.",
    "validation_fraction": "Share of the training split held out for validation; -1 for the base preset.",
    "isotransform_originals": "If > 0, build the isotransform control with this many originals per class.",
    "architecture": "Classifier backbone: simple_cnn, resnet20 or resnet32.",
    "recipe": "Training recipe preset: k49, gtsrb, cifar10 or cifar100.",
    "epochs": "Training epochs, the recipe's milestones being rescaled; -1 for the recipe's.",
    "batch_size": "Training batch size.",
    "lr": "Initial SGD learning rate.",
    "loss": "Loss: CE, Focal or LDAM.",
    "gamma": "Focal loss focusing parameter.",
    "max_margin": "Largest LDAM margin.",
    "scale": "LDAM logit scale.",
    "schedule": "Imbalance schedule: ERM, RS, CB_RS, DRS, DRW or CB_RW.",
    "beta": "Effective-number parameter of class-balanced schedules.",
    "switch_epoch": "First epoch of the second phase of DRS/DRW; -1 for the recipe's first milestone.",
    "generator": "Generative augmentation: none, oracle or miitn.",
    "git_p": "Proportion of each batch designated for generative augmentation.",
    "git_cutoff": "Only classes with at most this many training examples are augmented; inf for all.",
    "oracle_transform": "Family sampled by the oracle generator; empty for the dataset's transform.",
    "miitn_checkpoint": "Trained MIITN to use; empty to train one per replicate.",
    "miitn_preset": "MIITN size preset when training one: desk or paper.",
    "miitn_steps": "MIITN training steps when training one.",
    "ekld_transform": "Family under which eKLD is measured; empty for the dataset's transform.",
    "ekld_samples": "Transform draws per test input when measuring eKLD.",
    "seeds": "Replicate seeds.",
    "output_dir": "Directory receiving checkpoints, histories and results.",
}


@dataclass(frozen=True)
class ExperimentConfig:
    """See :data:`CONFIG_DOCS` for the meaning of each field."""

    name: str = "experiment"
    base: str = "k49"
    transform: str = "none"
    law: str = ""
    head_size: int = 0
    floor: int = 0
    validation_fraction: float = -1.0
    isotransform_originals: int = 0
    architecture: str = "simple_cnn"
    recipe: str = "k49"
    epochs: int = -1
    batch_size: int = 128
    lr: float = 0.1
    loss: str = "CE"
    gamma: float = 1.0
    max_margin: float = 0.5
    scale: float = 30.0
    schedule: str = "ERM"
    beta: float = 0.9999
    switch_epoch: int = -1
    generator: str = "none"
    git_p: float = 0.5
    git_cutoff: float = math.inf
    oracle_transform: str = ""
    miitn_checkpoint: str = ""
    miitn_preset: str = "desk"
    miitn_steps: int = 10000
    ekld_transform: str = ""
    ekld_samples: int = 8
    seeds: Tuple[int, ...] = (0,)
    output_dir: str = "runs"

    def __post_init__(self) -> None:
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        for key in ("transform", "oracle_transform", "ekld_transform"):
            value = getattr(self, key)
            if value and value not in ALIASES:
                raise ConfigError(None, f"{key}: unknown family {value!r}")
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(
                None,
                f"architecture must be one of {ARCHITECTURES}, "
                f"got {self.architecture!r}",
            )
        if self.generator not in GENERATORS:
            raise ConfigError(
                None, f"generator must be one of {GENERATORS}, got {self.generator!r}"
            )
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(
                None, f"seeds must be non-empty and distinct, got {list(self.seeds)}"
            )
        if any(s < 0 for s in self.seeds):
            raise ConfigError(None, "seeds must be non-negative")
        if not 0 <= self.git_p <= 1:
            raise ConfigError(None, f"git_p must be in [0, 1], got {self.git_p}")
        if not self.git_cutoff >= 0:
            raise ConfigError(None, f"git_cutoff must be ≥ 0, got {self.git_cutoff}")
        if self.ekld_samples < 1:
            raise ConfigError(
                None, f"ekld_samples must be ≥ 1, got {self.ekld_samples}"
            )
        if self.epochs < -1 or self.miitn_steps < 0 or self.isotransform_originals < 0:
            raise ConfigError(
                None, "epochs, miitn_steps and isotransform_originals must be ≥ 0"
            )
        if self.law:
            try:
                DecayLaw.parse(self.law)
            except ValueError as err:
                raise ConfigError(None, err) from None
        try:
            self.train_schedule()
            miitn_preset(self.miitn_preset)
        except (StrategyError, TrainingError, ValueError) as err:
            raise ConfigError(None, err) from None

    # Serialization

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(
        cls, d: Mapping[str, Any], path: Optional[Path] = None
    ) -> "ExperimentConfig":
        """
        :raise ConfigError: for unknown keys, ill-typed values or invalid
            settings.
        """
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError(path, f"unknown keys {unknown}")
        values = {}
        for key, value in d.items():
            try:
                values[key] = _coerce(known[key].type, value)
            except (TypeError, ValueError):
                raise ConfigError(path, f"{key}: invalid value {value!r}") from None
        try:
            return cls(**values)
        except ConfigError as err:
            raise ConfigError(path, err.reason) from None

    def to_toml(self) -> str:
        doc = tomlkit.document()
        doc.add(tomlkit.comment("invlab experiment"))
        for key, value in self.to_dict().items():
            doc.add(tomlkit.comment(CONFIG_DOCS[key]))
            doc.add(key, value)
        return tomlkit.dumps(doc)

    @classmethod
    def from_toml(cls, text: str, path: Optional[Path] = None) -> "ExperimentConfig":
        try:
            doc = tomlkit.parse(text)
        except Exception as err:
            raise ConfigError(path, err) from None
        return cls.from_dict(dict(doc), path)

    @classmethod
    def load(cls, path: LaxPath) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as err:
            raise ConfigError(path, err) from None
        return cls.from_toml(text, path)

    def save(self, path: LaxPath) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_toml())
        return path

    def content_hash(self) -> str:
        """SHA-256 of the canonical serialization of the result-affecting settings."""
        d = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        return _sha256(d)

    def replicate_key(self, seed: int) -> str:
        return _sha256({"config": self.content_hash(), "seed": seed})[:16]

    # Derived settings

    @property
    def method(self) -> str:
        """
        >>> ExperimentConfig(schedule="DRS", generator="miitn", git_cutoff=25).method
        'CE+DRS+GIT'
        """
        label = self.strategy().label
        if self.generator == "none" or self.git_p == 0:
            return label
        label += "+Oracle" if self.generator == "oracle" else "+GIT"
        if not math.isfinite(self.git_cutoff):
            label += " (all classes)"
        return label

    def strategy(self, recipe_switch: int = 0) -> StrategyConfig:
        return StrategyConfig(
            loss=self.loss,
            gamma=self.gamma,
            max_margin=self.max_margin,
            scale=self.scale,
            schedule=self.schedule,
            beta=self.beta,
            switch_epoch=self.switch_epoch if self.switch_epoch >= 0 else recipe_switch,
        )

    def train_schedule(self) -> TrainSchedule:
        recipe = schedule_preset(self.recipe)
        if self.epochs >= 0:
            recipe = recipe.scaled(self.epochs)
        return TrainSchedule(
            epochs=recipe.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            momentum=recipe.momentum,
            weight_decay=recipe.weight_decay,
            milestones=recipe.milestones,
            lr_decay=recipe.lr_decay,
            warmup_epochs=recipe.warmup_epochs,
            strategy=self.strategy(recipe.strategy.switch_epoch),
            plugins=recipe.plugins,
        )

    def transform_distribution(self, key: str = "transform") -> TransformDistribution:
        return TransformDistribution.from_name(getattr(self, key) or self.transform)


def _sha256(d: Mapping[str, Any]) -> str:
    canonical = json.dumps(d, sort_keys=True, separators=(",", ":"), allow_nan=True)
    return hashlib.sha256(canonical.encode()).hexdigest()


def _nullable(x: float) -> Optional[float]:
    return None if math.isnan(x) else x


def _coerce(kind: Any, value: Any) -> Any:
    if kind is str:
        if not isinstance(value, str):
            raise TypeError(value)
        return str(value)
    if kind is int:
        if isinstance(value, bool) or int(value) != value:
            raise TypeError(value)
        return int(value)
    if kind is float:
        if isinstance(value, bool):
            raise TypeError(value)
        return float(value)
    return tuple(_coerce(int, v) for v in value)


def t_interval(
    values: Sequence[float], confidence: float = 0.95
) -> Tuple[float, float, float]:
    """
    ``(mean, low, high)`` of a Student t confidence interval for the mean.
    The bounds are NaN with fewer than two values.

    >>> mean, low, high = t_interval([1.0, 2.0, 3.0])
    >>> mean, round(high - mean, 4)
    (2.0, 2.4841)
    """
    x = np.asarray(values, dtype=np.float64)
    if len(x) == 0:
        return float("nan"), float("nan"), float("nan")
    mean = float(x.mean())
    if len(x) < 2:
        return mean, float("nan"), float("nan")
    quantile = stats.t.ppf(0.5 + confidence / 2, len(x) - 1)
    half = quantile * x.std(ddof=1) / math.sqrt(len(x))
    return mean, mean - float(half), mean + float(half)


@dataclass
class ReplicateResult:
    """
    Outcome of one replicate.

    .. attribute:: ekld

        :class:`EKLDReport` on the test split, or :any:`None` for failed
        replicates.
    """

    method: str
    seed: int
    key: str
    status: str = OK
    balanced_accuracy: float = float("nan")
    per_class_accuracy: List[float] = field(default_factory=list)
    class_sizes: List[int] = field(default_factory=list)
    ekld: Optional[EKLDReport] = None
    error: str = ""
    finished_at: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OK

    def to_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "seed": self.seed,
            "key": self.key,
            "status": self.status,
            "balanced_accuracy": _nullable(self.balanced_accuracy),
            "per_class_accuracy": [_nullable(a) for a in self.per_class_accuracy],
            "class_sizes": list(self.class_sizes),
            "ekld": self.ekld.to_dict() if self.ekld is not None else None,
            "error": self.error,
            "finished_at": self.finished_at,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ReplicateResult":
        def num(v):
            return float("nan") if v is None else float(v)

        return cls(
            method=d["method"],
            seed=int(d["seed"]),
            key=d["key"],
            status=d["status"],
            balanced_accuracy=num(d.get("balanced_accuracy")),
            per_class_accuracy=[num(a) for a in d.get("per_class_accuracy", [])],
            class_sizes=[int(n) for n in d.get("class_sizes", [])],
            ekld=EKLDReport.from_dict(d["ekld"]) if d.get("ekld") else None,
            error=d.get("error", ""),
            finished_at=d.get("finished_at", ""),
        )

    def save(self, path: LaxPath) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=2))
        tmp.replace(path)

    @classmethod
    def load(cls, path: LaxPath) -> "ReplicateResult":
        return cls.from_dict(json.loads(Path(path).read_text()))


TABLE_COLUMNS = ("method", "seed", "status", "balanced_accuracy", "overall_ekld", "key")
SUMMARY_COLUMNS = ("method", "replicates", "failed", "mean", "ci_low", "ci_high")


@dataclass
class ResultsTable:
    """One row per (method, seed); failed replicates have missing values."""

    rows: List[ReplicateResult] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def failed(self) -> List[ReplicateResult]:
        return [r for r in self.rows if not r.ok]

    @property
    def methods(self) -> List[str]:
        return list(dict.fromkeys(r.method for r in self.rows))

    def to_frame(self) -> pd.DataFrame:
        records = [
            {
                "method": r.method,
                "seed": r.seed,
                "status": r.status,
                "balanced_accuracy": r.balanced_accuracy if r.ok else np.nan,
                "overall_ekld": r.ekld.overall_ekld if r.ekld is not None else np.nan,
                "key": r.key,
            }
            for r in sorted(self.rows, key=lambda r: (r.method, r.seed))
        ]
        return pd.DataFrame(records, columns=list(TABLE_COLUMNS))

    def to_csv(self, path: LaxPath) -> None:
        self.to_frame().to_csv(path, index=False)

    def summary(self, confidence: float = 0.95) -> pd.DataFrame:
        """Mean balanced accuracy and its t-interval, per method."""
        records = []
        for method in self.methods:
            rows = [r for r in self.rows if r.method == method]
            values = [r.balanced_accuracy for r in rows if r.ok]
            mean, low, high = t_interval(values, confidence)
            records.append(
                {
                    "method": method,
                    "replicates": len(values),
                    "failed": len(rows) - len(values),
                    "mean": mean,
                    "ci_low": low,
                    "ci_high": high,
                }
            )
        return pd.DataFrame(records, columns=list(SUMMARY_COLUMNS))

    def ekld_reports(self) -> Dict[str, List[EKLDReport]]:
        reports: Dict[str, List[EKLDReport]] = {}
        for r in self.rows:
            if r.ok and r.ekld is not None:
                reports.setdefault(r.method, []).append(r.ekld)
        return reports

    @classmethod
    def from_directory(cls, directory: LaxPath) -> "ResultsTable":
        """
        Reads every replicate file under *directory* (an experiment output
        directory, or a parent of several).
        """
        paths = sorted(Path(directory).rglob(f"{REPLICATES_DIR}/*.json"))
        rows = [ReplicateResult.load(p) for p in paths]
        return cls(rows)


def load_base_splits(
    config: ExperimentConfig, data_dir: LaxPath
) -> Dict[str, LabeledImageDataset]:
    fraction = None if config.validation_fraction < 0 else config.validation_fraction
    if config.base in sources.PRESETS:
        return sources.load_base(
            config.base, data_dir, seed=0, validation_fraction=fraction
        )
    directory = Path(config.base)
    if not directory.is_absolute() and not directory.exists():
        directory = Path(data_dir) / config.base
    splits = load_splits(directory)
    if fraction and VALIDATION not in splits:
        splits[TRAIN], splits[VALIDATION] = sources.split_validation(
            splits[TRAIN], fraction, 0
        )
    return splits


def longtail_plan(config: ExperimentConfig, train: LabeledImageDataset) -> LongTailPlan:
    """
    The plan of *config*: the base preset's, with explicit keys overriding it.
    Bases without preset default to Zipf(2.0), floor 1, and a head as large
    as the largest class.
    """
    base = sources.PRESETS.get(config.base)
    if config.law:
        law = DecayLaw.parse(config.law)
    else:
        law = base.law if base else DecayLaw.zipf(2.0)
    largest = int(train.class_sizes.max())
    head = config.head_size or (base.head_size if base else largest)
    floor = config.floor or (base.floor if base else 1)
    return make_longtail_plan(train.num_classes, head, law, floor)


def build_variant(
    config: ExperimentConfig, splits: Mapping[str, LabeledImageDataset], seed: int
) -> Dict[str, LabeledImageDataset]:
    """
    The long-tailed, transformed splits of one replicate. Only the training
    split is pruned.
    """
    transform = config.transform_distribution()
    train = splits[TRAIN]
    plan = longtail_plan(config, train)
    if config.isotransform_originals:
        train = build_isotransform_dataset(
            train, plan, transform, config.isotransform_originals, seed
        )
    else:
        pruned = build_longtail_dataset(train, plan, seed)
        train = apply_oneshot_transform(pruned, transform, seed)
    variant = {TRAIN: train}
    for split in (VALIDATION, TEST):
        if split in splits:
            variant[split] = apply_oneshot_transform(splits[split], transform, seed)
    return variant


def _miitn(
    config: ExperimentConfig,
    train: LabeledImageDataset,
    seed: int,
    workdir: Path,
    device: str,
) -> MiitnTransform:
    if config.miitn_checkpoint:
        return miitn_generator(config.miitn_checkpoint, device)
    checkpoint = workdir / "miitn.pt"
    if checkpoint.exists():
        model = load_miitn(checkpoint, device)
        if model.steps_trained >= config.miitn_steps:
            logging.info("reusing MIITN %s", checkpoint)
            return MiitnTransform(model)
    model, curve = train_miitn(
        train,
        config.miitn_steps,
        seed=seed,
        cfg=miitn_preset(config.miitn_preset),
        device=device,
        checkpoint_path=checkpoint,
        resume=True,
    )
    curve.to_csv(workdir / "miitn_curve.csv")
    return MiitnTransform(model)


def git_config(
    config: ExperimentConfig,
    train: LabeledImageDataset,
    seed: int,
    workdir: Path,
    device: str,
) -> GitConfig:
    if config.generator == "none":
        return GitConfig()
    if config.generator == "oracle":
        generator = oracle_generator(config.transform_distribution("oracle_transform"))
    else:
        generator = _miitn(config, train, seed, workdir, device)
    return GitConfig(config.git_p, config.git_cutoff, generator)


def run_replicate(
    config: ExperimentConfig,
    splits: Mapping[str, LabeledImageDataset],
    seed: int,
    workdir: Path,
    device: str = "cpu",
    plugins: Sequence[Plugin] = (),
) -> ReplicateResult:
    """Builds, trains and evaluates the replicate of *seed* under *workdir*."""
    workdir.mkdir(parents=True, exist_ok=True)
    variant = build_variant(config, splits, seed)
    train = variant[TRAIN]
    if TEST not in variant:
        raise TrainingError(f"{config.base} has no test split")
    test = variant[TEST]
    schedule = config.train_schedule()
    git = git_config(config, train, seed, workdir, device)
    backbone = seeded_backbone(
        config.architecture, train.num_classes, train.image_shape, seed
    )
    classifier, history = train_classifier(
        train,
        backbone,
        schedule,
        git,
        seed,
        validation=variant.get(VALIDATION, test),
        plugins=[*resolve_all(schedule.plugins), *plugins],
        device=device,
    )
    classifier.save(workdir / "classifier.pt", seed=seed, config=config.to_dict())
    history.to_csv(workdir / "history.csv")

    accuracy = per_class_accuracy(classifier, test)
    ekld = estimate_ekld(
        classifier,
        test,
        config.transform_distribution("ekld_transform"),
        samples_per_input=config.ekld_samples,
        seed=seed,
        class_sizes=train.class_sizes,
    )
    ekld.to_csv(workdir / "ekld.csv")
    return ReplicateResult(
        method=config.method,
        seed=seed,
        key=config.replicate_key(seed),
        balanced_accuracy=float(np.nanmean(accuracy)) if len(test) else float("nan"),
        per_class_accuracy=accuracy.tolist(),
        class_sizes=train.class_sizes.tolist(),
        ekld=ekld,
        finished_at=pendulum.now("UTC").to_iso8601_string(),
    )


def run_experiment(
    config: ExperimentConfig,
    data_dir: LaxPath = "data",
    device: str = "cpu",
    plugins: Sequence[Plugin] = (),
    seeds: Optional[Iterable[int]] = None,
) -> ResultsTable:
    """
    Runs the replicates of *config* (or only *seeds*) that have no
    successful result yet, and returns the table of all of them.
    A replicate that raises is logged, recorded as failed, and does not stop
    the sweep.
    """
    out = Path(config.output_dir)
    config.save(out / CONFIG_FILE)
    splits: Optional[Dict[str, LabeledImageDataset]] = None
    rows = []
    for seed in config.seeds if seeds is None else seeds:
        key = config.replicate_key(seed)
        result_path = out / REPLICATES_DIR / f"{key}.json"
        if result_path.exists():
            previous = ReplicateResult.load(result_path)
            if previous.ok:
                logging.info("replicate %s (seed %d) already done, skipping", key, seed)
                rows.append(previous)
                continue
        logging.info("running %s replicate %s (seed %d)", config.method, key, seed)
        try:
            if splits is None:
                splits = load_base_splits(config, data_dir)
            result = run_replicate(
                config, splits, seed, out / REPLICATES_DIR / key, device, plugins
            )
        except Exception as err:
            logging.exception("replicate %s (seed %d) failed", key, seed)
            result = ReplicateResult(
                method=config.method,
                seed=seed,
                key=key,
                status=FAILED,
                error=f"{type(err).__name__}: {err}",
                finished_at=pendulum.now("UTC").to_iso8601_string(),
            )
        result.save(result_path)
        rows.append(result)

    table = ResultsTable(rows)
    table.to_csv(out / RESULTS_FILE)
    if table.failed:
        logging.warning(
            "%d of %d replicates failed: seeds %s",
            len(table.failed),
            len(table),
            [r.seed for r in table.failed],
        )
    return table
