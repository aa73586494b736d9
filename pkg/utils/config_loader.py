"""
Run configuration (flat `key = value` files) and architecture descriptions
(JSON under run_config/).
"""
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from utils.errors import ConfigurationError, DataError, UsageError

logger = logging.getLogger("config_loader")

RUN_CONFIG_DIR = Path(__file__).parent.parent / "run_config"

SPEECH_COMMANDS_KEYWORDS = ["yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go"]
LOSS_TERMS = "mio"


@dataclass
class TrainConfig:
    """Training and evaluation settings; defaults follow the published recipe."""
    batch_size: int = 100
    total_steps: int = 30000
    lr: float = 0.001
    lr_decay: float = 0.1
    lr_decay_every: int = 10000
    alpha: float = 1.0
    lambda1: float = 0.25
    lambda2: float = 0.01
    lambda3: float = 0.01
    power_iters: int = 10
    seed: int = 0
    data_root: str = ""
    noise_dirs: List[str] = field(default_factory=list)
    checkpoint_dir: str = "checkpoints"
    checkpoint_every: int = 1000
    log_every: int = 100
    model: str = "ldy-tenet12"
    keywords: List[str] = field(default_factory=lambda: list(SPEECH_COMMANDS_KEYWORDS))
    silence_fraction: float = 0.1
    unknown_fraction: float = 0.1
    p_noise: float = 0.8
    noise_volume: float = 0.1
    time_shift_ms: float = 100.0
    loss_terms: str = LOSS_TERMS
    metric_reduction: str = "mean"
    snr_grid: List[float] = field(default_factory=lambda: [20.0, 15.0, 10.0, 5.0, 0.0])
    eval_batch_size: int = 100
    prefetch: int = 2
    repeats: int = 1
    workers: int = 4

    def __post_init__(self):
        validate_train_config(self)

    @property
    def num_classes(self) -> int:
        return len(self.keywords) + 2

    def lr_at(self, step: int) -> float:
        """Learning rate for 1-based `step`; decays after every `lr_decay_every` steps."""
        return self.lr * self.lr_decay ** ((step - 1) // self.lr_decay_every)

    def uses(self, term: str) -> bool:
        return term in self.loss_terms and self.loss_terms != "ce"


def validate_train_config(config: TrainConfig):
    if not config.lr > 0:
        raise ConfigurationError(f"lr must be positive, got {config.lr}")
    if config.batch_size < 2:
        raise ConfigurationError(f"batch_size must be at least 2, got {config.batch_size}")
    if config.total_steps < 1 or config.lr_decay_every < 1 or config.checkpoint_every < 1:
        raise ConfigurationError("step counts must be positive")
    if config.power_iters < 1:
        raise ConfigurationError(f"power_iters must be at least 1, got {config.power_iters}")
    if config.loss_terms != "ce" and (not config.loss_terms or set(config.loss_terms) - set(LOSS_TERMS)):
        raise ConfigurationError(f"loss_terms must be 'ce' or a subset of '{LOSS_TERMS}', got '{config.loss_terms}'")
    if config.metric_reduction not in ("mean", "literal"):
        raise ConfigurationError(f"metric_reduction must be 'mean' or 'literal', got '{config.metric_reduction}'")
    if not 0.0 <= config.silence_fraction + config.unknown_fraction < 1.0:
        raise ConfigurationError("silence_fraction + unknown_fraction must lie in [0, 1)")
    if not config.keywords:
        raise ConfigurationError("at least one keyword is required")


def _format_value(value) -> str:
    if isinstance(value, list):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(raw: str, field_type, key: str):
    raw = raw.strip()
    try:
        if field_type in (List[str], "List[str]"):
            return [item.strip() for item in raw.split(",") if item.strip()]
        if field_type in (List[float], "List[float]"):
            return [float(item) for item in raw.split(",") if item.strip()]
        if field_type in (int, "int"):
            return int(raw)
        if field_type in (float, "float"):
            return float(raw)
    except ValueError:
        raise UsageError(f"Invalid value for '{key}': {raw}")
    return raw


def dump_train_config(config: TrainConfig) -> str:
    """Serialize to `key = value` lines; floats use repr() so loading is bit-exact."""
    lines = ["# LOVO keyword spotting run configuration"]
    for f in dataclasses.fields(config):
        lines.append(f"{f.name} = {_format_value(getattr(config, f.name))}")
    return "\n".join(lines) + "\n"


def parse_train_config(text: str) -> TrainConfig:
    """Parse `key = value` lines; `#` starts a comment."""
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    values = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"Line {line_no}: expected 'key = value', got '{line}'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise UsageError(f"Line {line_no}: unknown config key '{key}'")
        values[key] = _parse_value(raw, types[key], key)
    return TrainConfig(**values)


def load_train_config(path: Union[str, Path]) -> TrainConfig:
    try:
        with open(path, "r", encoding="utf-8") as file:
            text = file.read()
    except FileNotFoundError:
        raise DataError(f"Config file not found: {path}")
    config = parse_train_config(text)
    logger.info(f"Loaded config {path} (model={config.model}, loss_terms={config.loss_terms})")
    return config


def save_train_config(config: TrainConfig, path: Union[str, Path]):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as file:
        file.write(dump_train_config(config))


def load_architectures(path: Union[str, Path, None] = None) -> Dict[str, Dict]:
    """Load the named architecture table from run_config/architectures.json."""
    path = Path(path) if path else RUN_CONFIG_DIR / "architectures.json"
    try:
        with open(path, "r", encoding="utf-8") as file:
            data = json.load(file)
    except FileNotFoundError:
        raise DataError(f"Architecture file not found: {path}")
    except json.JSONDecodeError as e:
        raise DataError(f"Invalid JSON format in {path}: {e}")
    return data.get("architectures", {})


def get_architecture(name: str, path: Union[str, Path, None] = None) -> Dict:
    architectures = load_architectures(path)
    if name not in architectures:
        raise UsageError(f"Unknown model '{name}'. Available: {', '.join(sorted(architectures))}")
    return architectures[name]


def spawn_rngs(seed: int) -> Dict[str, np.random.Generator]:
    """Split one seed into independent data / init / noise streams."""
    data_seq, init_seq, noise_seq = np.random.SeedSequence(seed).spawn(3)
    return {
        "data": np.random.default_rng(data_seq),
        "init": np.random.default_rng(init_seq),
        "noise": np.random.default_rng(noise_seq),
    }


def repeat_seeds(config: TrainConfig) -> Tuple[int, ...]:
    return tuple(config.seed + i for i in range(max(1, config.repeats)))
