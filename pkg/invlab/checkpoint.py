"""
:mod:`invlab.checkpoint` -- Versioned model containers
======================================================

Checkpoints are :func:`torch.save` archives of a dictionary with a
``format`` tag (``"<kind>/<version>"``, e.g. ``invlab.miitn/1``), a creation
timestamp, and a ``payload`` of state dicts and settings.
Readers ask for a tag and refuse anything else.
"""
import logging
import pickle
from pathlib import Path
from typing import Any, Dict, Mapping, Union

import pendulum
import torch

MIITN_FORMAT = "invlab.miitn/1"
CLASSIFIER_FORMAT = "invlab.classifier/1"


class CheckpointFormatError(ValueError):  # noqa: B903
    """
    Raised when a file is not a checkpoint of the expected format.
    """

    def __init__(self, path: Path, reason: Union[Exception, str]) -> None:
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


def save_checkpoint(
    path: Union[str, Path], format_tag: str, payload: Mapping[str, Any]
) -> Path:
    """Writes *payload* under *format_tag*; parent directories are created."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    container = {
        "format": format_tag,
        "created_at": pendulum.now("UTC").to_iso8601_string(),
        "payload": dict(payload),
    }
    tmp = path.with_name(path.name + ".tmp")
    torch.save(container, tmp)
    tmp.replace(path)
    logging.debug("saved %s checkpoint to %s", format_tag, path)
    return path


def load_checkpoint(path: Union[str, Path], format_tag: str) -> Dict[str, Any]:
    """
    :return: the payload of a checkpoint written with *format_tag*.
    :raise CheckpointFormatError: if *path* is unreadable, has no format tag,
        or has another tag (including another version of the same kind).
    """
    path = Path(path)
    try:
        container = torch.load(path, map_location="cpu")
    except (OSError, RuntimeError, EOFError, pickle.UnpicklingError) as err:
        raise CheckpointFormatError(path, err)
    if not isinstance(container, dict) or "format" not in container:
        raise CheckpointFormatError(path, "not an invlab checkpoint")
    if container["format"] != format_tag:
        raise CheckpointFormatError(
            path, f"expected format {format_tag!r}, got {container['format']!r}"
        )
    return container["payload"]
