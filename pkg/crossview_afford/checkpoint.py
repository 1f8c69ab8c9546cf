"""Checkpoints: a directory of FTM1 tensors plus a flat ``model.txt``.

An entry named ``encoder/stem/kernel`` lives at ``<dir>/encoder/stem/kernel.ftm``.
"""

from __future__ import annotations

import logging
from collections.abc import Mapping
from pathlib import Path

import numpy as np

from .config import read_config, write_config
from .errors import FormatError
from .ftm import read_tensor, write_tensor

log = logging.getLogger(__name__)

META_NAME = "model.txt"
SUFFIX = ".ftm"


def save_checkpoint(directory: Path | str, arrays: Mapping[str, np.ndarray], meta: Mapping[str, str]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, array in arrays.items():
        if name.startswith("/") or ".." in name.split("/"):
            raise FormatError(f"invalid checkpoint entry name '{name}'")
        write_tensor(directory / f"{name}{SUFFIX}", array)
    write_config(directory / META_NAME, meta)
    log.info("Saved %d tensors to %s", len(arrays), directory)
    return directory


def load_checkpoint(directory: Path | str) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    directory = Path(directory)
    meta_path = directory / META_NAME
    if not directory.is_dir() or not meta_path.exists():
        raise FormatError(f"{directory} is not a checkpoint (missing {META_NAME})")
    arrays = {
        path.relative_to(directory).as_posix()[: -len(SUFFIX)]: read_tensor(path)
        for path in sorted(directory.rglob(f"*{SUFFIX}"))
    }
    return arrays, read_config(meta_path)
