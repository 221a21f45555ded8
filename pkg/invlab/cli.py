"""
invlab: Measure and transfer nuisance invariances across the classes of
long-tailed image datasets.

Usage:
    invlab data build --base=<base> [--law=<law>] [--floor=<n>] [--transform=<family>]
                      [--isotransform=<k>] [--seed=<n>] [--out=<dir>] [--data-dir=<dir>]
    invlab miitn train --dataset=<dir> --out=<checkpoint> [--split=<split>]
                       [--steps=<n>] [--preset=<name>] [--seed=<n>] [--resume]
                       [--device=<dev>]
    invlab miitn sample --checkpoint=<checkpoint>
                        (--input=<image> | --dataset=<dir>
                         [--split=<split>] [--index=<i>])
                        [--n=<n>] [--seed=<n>] [--out=<dir>] [--device=<dev>]
    invlab train --config=<file> [-p <plugin>]... [--seed=<n>]... [--data-dir=<dir>] [--device=<dev>]
    invlab measure ekld --checkpoint=<checkpoint> --dataset=<dir> [--split=<split>]
                        [--transform=<family>] [--miitn=<checkpoint>] [--k=<k>]
                        [--seed=<n>] [--out=<csv>] [--device=<dev>]
    invlab report <dir>... [--out=<dir>] [--name=<name>]
    invlab --help
    invlab --version

Options:
    --help                  Print this help message and exit.
    --version               Print version information and exit.
    -p, --plugin=<name>     Use the specified plugin module. Repeatable.
    --config=<file>         Experiment config (TOML).
    --data-dir=<dir>        Root of the base datasets [env: INVLAB_DATA_DIR].
    --device=<dev>          Torch device [env: INVLAB_DEVICE].
    --base=<base>           Base dataset: k49, gtsrb, cifar10, cifar100 or a
                            directory in portable layout.
    --dataset=<dir>         Dataset directory in portable layout.
    --checkpoint=<path>     Checkpoint of a MIITN (miitn sample) or of a
                            classifier (measure ekld).
    --input=<image>         Image file to sample transformations of.
    --transform=<family>    Nuisance family: none, rot, bg or dil. For measure
                            ekld, defaults to the family the dataset was built with.
    --law=<law>             Decay law of class sizes, e.g. zipf:2.0 or exp:100.
    --floor=<n>             Minimum class size; the base's preset if omitted.
    --isotransform=<k>      Build the isotransform control with k originals per class.
    --seed=<n>              Seed; repeatable for train, to run only those replicates.
    --split=<split>         Split of the dataset to use (train for miitn train,
                            test otherwise).
    --steps=<n>             MIITN training steps [default: 10000].
    --preset=<name>         MIITN size preset: desk or paper [default: desk].
    --resume                Resume MIITN training from its --out checkpoint.
    --index=<i>             Index of the input image [default: 0].
    --n=<n>                 Number of samples [default: 8].
    --miitn=<checkpoint>    Measure eKLD under a trained MIITN instead of a family.
    --k=<k>                 Transform draws per input [default: 8].
    --out=<path>            Output file or directory.
    --name=<name>           Name of the report [default: experiment].

Exit codes: 0 on success, 1 on unexpected errors, 2 for invalid configs or
plugins, 3 when some replicates of a sweep failed.
"""
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, Sequence, Tuple, cast

import ecological
import numpy as np
from docopt import docopt
from PIL import Image

from invlab.dataset import TEST, TRAIN, LabeledImageDataset, load_split, save_splits
from invlab.experiment import (
    ConfigError,
    ExperimentConfig,
    ResultsTable,
    build_variant,
    load_base_splits,
    longtail_plan,
    run_experiment,
)
from invlab.longtail import DatasetVariant
from invlab.metrics import estimate_ekld
from invlab.miitn import MiitnModel, MiitnTransform, load_miitn, train_miitn
from invlab.miitn import preset as miitn_preset
from invlab.naming import to_slug
from invlab.nuisance import Family, TransformDistribution
from invlab.plugins import resolve_all
from invlab.plugins.contracts import InvalidContractError
from invlab.plugins.resolve import NoPluginError
from invlab.report import render_summary, write_report, write_sample_grid
from invlab.seeding import Stream, generator
from invlab.training import TrainedClassifier
from ._version import __version__

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_PARTIAL = 3


class Config(ecological.AutoConfig, prefix="invlab"):
    data_dir: str = "data"
    device: str = "cpu"
    log_level: str = "INFO"
    plugins: Tuple[str, ...] = ()


def read_config(cli_args: Sequence[str]) -> Tuple[Config, Dict[str, Any]]:
    """
    Combine command-line arguments & options (managed by docopt) with environment
    variables (managed by Ecological) into Ecological's Config class.

    Special cases:

    - If the data directory or the device are provided both from the
      environment and the command-line, the command-line wins.
    - If plugins are provided both from the environment and the command-line,
      the union of both groups is taken into account.

    :return: the configuration and docopt's parsed arguments.
    """
    arguments = docopt(__doc__, version=__version__, argv=cli_args)

    # Re-declared so that the environment is read at call time.
    class conf(ecological.AutoConfig, prefix="invlab"):
        data_dir: str = "data"
        device: str = "cpu"
        log_level: str = "INFO"
        plugins: Tuple[str, ...] = ()

    for option, key, env in (
        ("--data-dir", "data_dir", "INVLAB_DATA_DIR"),
        ("--device", "device", "INVLAB_DEVICE"),
    ):
        value = arguments.get(option)
        if value:
            if env in os.environ:
                logging.warning("%s overwritten with CLI option %s", env, option)
            setattr(conf, key, value)

    plugins = arguments.get("--plugin") or []
    if plugins:
        if conf.plugins:
            logging.warning("INVLAB_PLUGINS merged with CLI -p/--plugin options")
        conf.plugins = (*conf.plugins, *plugins)

    return cast(Config, conf), arguments


def _seed(arguments: Dict[str, Any]) -> int:
    seed = arguments["--seed"]
    if isinstance(seed, list):
        seed = seed[0] if seed else None
    return int(seed) if seed is not None else 0


def build_data(conf: Config, arguments: Dict[str, Any]) -> int:
    seed = _seed(arguments)
    config = ExperimentConfig(
        base=arguments["--base"],
        transform=arguments["--transform"] or "none",
        law=arguments["--law"] or "",
        floor=int(arguments["--floor"] or 0),
        isotransform_originals=int(arguments["--isotransform"] or 0),
        seeds=(seed,),
    )
    splits = load_base_splits(config, conf.data_dir)
    variant = build_variant(config, splits, seed)
    plan = longtail_plan(config, splits[TRAIN])
    identity = DatasetVariant(
        base=config.base,
        transform_family=config.transform_distribution().family,
        plan=plan,
        ordering_seed=seed,
        extra={"isotransform_originals": config.isotransform_originals},
    )
    out = arguments["--out"] or Path(conf.data_dir) / to_slug(
        f"{Path(config.base).name}-{config.transform}-lt-seed{seed}"
    )
    save_splits(out, variant, extra={"variant": identity.to_dict()})
    print(out)
    return EXIT_OK


def train_generator(conf: Config, arguments: Dict[str, Any]) -> int:
    dataset = load_split(arguments["--dataset"], arguments["--split"] or TRAIN)
    out = Path(arguments["--out"])
    model, curve = train_miitn(
        dataset,
        int(arguments["--steps"]),
        seed=_seed(arguments),
        cfg=miitn_preset(arguments["--preset"]),
        device=conf.device,
        checkpoint_path=out,
        resume=arguments["--resume"],
    )
    curve.to_csv(out.with_suffix(".csv"))
    logging.info("MIITN trained for %d steps: %s", model.steps_trained, out)
    return EXIT_OK


def read_image(path: str, model: MiitnModel) -> np.ndarray:
    """An image file as an HWC uint8 array with the channels of *model*."""
    mode = "L" if model.image_shape[-1] == 1 else "RGB"
    image = np.asarray(Image.open(path).convert(mode))
    return image[..., np.newaxis] if image.ndim == 2 else image


def sample_generator(conf: Config, arguments: Dict[str, Any]) -> int:
    transform = MiitnTransform(load_miitn(arguments["--checkpoint"], conf.device))
    if arguments["--input"]:
        index = 0
        x = read_image(arguments["--input"], transform.model)
        stem = f"sample_{to_slug(Path(arguments['--input']).stem)}"
    else:
        dataset = load_split(arguments["--dataset"], arguments["--split"] or TEST)
        index = int(arguments["--index"])
        x = dataset.images[index]
        stem = f"sample_{index}"
    transform.model.check_shape(x.shape)
    rng = generator(_seed(arguments), Stream.MIITN, 3, index)
    samples = [transform.sample(x, rng).image for _ in range(int(arguments["--n"]))]
    paths = write_sample_grid(x, samples, arguments["--out"] or ".", stem)
    print(paths[0])
    return EXIT_OK


def train(conf: Config, arguments: Dict[str, Any]) -> int:
    config = ExperimentConfig.load(arguments["--config"])
    plugins = resolve_all(conf.plugins)
    seeds = [int(s) for s in arguments["--seed"]] or None
    table = run_experiment(config, conf.data_dir, conf.device, plugins, seeds)
    write_report(table, Path(config.output_dir) / "report", config.name)
    print(render_summary(table, config.name), end="")
    return EXIT_PARTIAL if table.failed else EXIT_OK


def recorded_transform(dataset: LabeledImageDataset) -> TransformDistribution:
    """
    The transform family *dataset* was built with.

    :raise ConfigError: if the dataset records none, or records a MIITN.
    """
    family = dataset.metadata.get("transform_family")
    if family is None or family == Family.MIITN.value:
        raise ConfigError(
            None,
            f"dataset {dataset.name!r} records no transform family to measure "
            f"under ({family!r}); pass --transform or --miitn",
        )
    return TransformDistribution.from_name(family)


def measure(conf: Config, arguments: Dict[str, Any]) -> int:
    classifier = TrainedClassifier.load(arguments["--checkpoint"], conf.device)
    dataset = load_split(arguments["--dataset"], arguments["--split"] or TEST)
    if arguments["--miitn"]:
        transform = MiitnTransform(load_miitn(arguments["--miitn"], conf.device))
    elif arguments["--transform"]:
        transform = TransformDistribution.from_name(arguments["--transform"])
    else:
        transform = recorded_transform(dataset)
    logging.info("measuring eKLD of %s under %s", dataset.name, transform.family.value)
    report = estimate_ekld(
        classifier,
        dataset,
        transform,
        samples_per_input=int(arguments["--k"]),
        seed=_seed(arguments),
    )
    out = arguments["--out"] or "ekld.csv"
    report.to_csv(out)
    print(f"{report.overall_ekld:.6f}")
    return EXIT_OK


def report(conf: Config, arguments: Dict[str, Any]) -> int:
    rows = [r for d in arguments["<dir>"] for r in ResultsTable.from_directory(d).rows]
    table = ResultsTable(rows)
    write_report(table, arguments["--out"] or "report", arguments["--name"])
    print(render_summary(table, arguments["--name"]), end="")
    return EXIT_OK


def main(cli_args: Sequence[str]) -> int:
    conf, arguments = read_config(cli_args)
    logging.getLogger().setLevel(conf.log_level.upper())
    if arguments["data"]:
        return build_data(conf, arguments)
    if arguments["miitn"]:
        if arguments["train"]:
            return train_generator(conf, arguments)
        return sample_generator(conf, arguments)
    if arguments["train"]:
        return train(conf, arguments)
    if arguments["measure"]:
        return measure(conf, arguments)
    return report(conf, arguments)


def script_entrypoint() -> None:
    """
    Entrypoint for the "invlab" program (which reads arguments from the
    command-line and the environment).
    """
    logging.basicConfig(
        level=logging.INFO, format="%(asctime)s\t%(levelname)s\t%(message)s"
    )
    try:
        code = main(sys.argv[1:])
    except ConfigError as err:
        logging.error("Invalid experiment config: %s", err)
        sys.exit(EXIT_CONFIG)
    except (ImportError, NoPluginError, InvalidContractError) as err:
        logging.error("Failed loading plugins: %s", err)
        sys.exit(EXIT_CONFIG)
    except Exception:
        logging.exception("invlab failed")
        sys.exit(EXIT_ERROR)
    sys.exit(code)
