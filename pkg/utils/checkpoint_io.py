"""
Checkpoint container.

A checkpoint is a directory holding

    weights.bin   every parameter as little-endian float64, concatenated
                  in manifest order, row-major
    manifest.txt  one line per parameter: name<TAB>shape<TAB>byte offset,
                  shape as comma-separated extents
    train.conf    the run configuration (optional)

Parameter names follow `<network>.<layer>.<param>`.
"""
import logging
import re
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from utils.config_loader import TrainConfig, load_train_config, save_train_config
from utils.errors import DataError

logger = logging.getLogger("checkpoint_io")

WEIGHTS_FILE = "weights.bin"
MANIFEST_FILE = "manifest.txt"
CONFIG_FILE = "train.conf"
STEP_DIR = re.compile(r"^step_(\d+)$")
WIRE_DTYPE = np.dtype("<f8")


def step_dir(checkpoint_dir: Union[str, Path], step: int) -> Path:
    return Path(checkpoint_dir) / f"step_{step:06d}"


def save_checkpoint(directory: Union[str, Path], arrays: Dict[str, np.ndarray],
                    config: Optional[TrainConfig] = None) -> Path:
    """Write named arrays (and the config) into `directory`, replacing what is there."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    offset = 0
    manifest = []
    with open(directory / WEIGHTS_FILE, "wb") as file:
        for name, array in arrays.items():
            data = np.ascontiguousarray(array, dtype=WIRE_DTYPE)
            shape = ",".join(str(extent) for extent in data.shape)
            manifest.append(f"{name}\t{shape}\t{offset}")
            file.write(data.tobytes())
            offset += data.nbytes
    with open(directory / MANIFEST_FILE, "w", encoding="utf-8") as file:
        file.write("\n".join(manifest) + "\n")
    if config is not None:
        save_train_config(config, directory / CONFIG_FILE)
    logger.info(f"Saved checkpoint {directory} ({len(arrays)} arrays, {offset} bytes)")
    return directory


def load_checkpoint(directory: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], Optional[TrainConfig]]:
    """
    Read a checkpoint directory.

    Returns:
        (name -> float64 array, stored TrainConfig or None)
    """
    directory = Path(directory)
    weights_path = directory / WEIGHTS_FILE
    manifest_path = directory / MANIFEST_FILE
    if not weights_path.exists() or not manifest_path.exists():
        raise DataError(f"Not a checkpoint directory: {directory}")

    raw = weights_path.read_bytes()
    arrays: Dict[str, np.ndarray] = {}
    with open(manifest_path, "r", encoding="utf-8") as file:
        for line_no, line in enumerate(file, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                name, shape_text, offset_text = line.split("\t")
                shape = tuple(int(extent) for extent in shape_text.split(",") if extent)
                offset = int(offset_text)
            except ValueError:
                raise DataError(f"{manifest_path}:{line_no}: malformed manifest line")
            count = int(np.prod(shape)) if shape else 1
            end = offset + count * WIRE_DTYPE.itemsize
            if end > len(raw):
                raise DataError(f"{weights_path} is truncated at parameter '{name}'")
            arrays[name] = np.frombuffer(raw, dtype=WIRE_DTYPE, count=count, offset=offset).reshape(shape).astype(np.float64)

    config_path = directory / CONFIG_FILE
    config = load_train_config(config_path) if config_path.exists() else None
    return arrays, config


def checkpoint_step(directory: Union[str, Path]) -> Optional[int]:
    match = STEP_DIR.match(Path(directory).name)
    return int(match.group(1)) if match else None


def latest_checkpoint(checkpoint_dir: Union[str, Path]) -> Optional[Path]:
    checkpoint_dir = Path(checkpoint_dir)
    if not checkpoint_dir.is_dir():
        return None
    steps = [(checkpoint_step(d), d) for d in checkpoint_dir.iterdir() if d.is_dir() and checkpoint_step(d) is not None]
    return max(steps)[1] if steps else None


def resolve_checkpoint(path: Union[str, Path]) -> Path:
    """A checkpoint directory itself, or the latest `step_*` directory under a run directory."""
    path = Path(path)
    if (path / WEIGHTS_FILE).exists():
        return path
    latest = latest_checkpoint(path)
    if latest is None:
        raise DataError(f"No checkpoint found at {path}")
    return latest
