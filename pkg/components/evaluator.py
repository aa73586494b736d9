"""
Noise-grid evaluation: clean test accuracy plus accuracy on every
(noise pool x SNR) cell, each cell mixed with its own seeded generator.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from components.dataset import (CLIP_SAMPLES, DatasetIndex, NoisePool, background_noise_pool,
                                build_noise_pool, featurize, load_clip, scan_dataset)
from components.models import KwsModel, build_model
from components.report_generator import (AGGREGATE_REPORT, CLEAN, EVAL_REPORT, aggregate_reports,
                                         format_aggregate_summary, read_eval_report, write_aggregate,
                                         write_eval_report)
from utils.audio_frontend import SAMPLE_RATE, Clip, mix_at_snr
from utils.checkpoint_io import load_checkpoint, resolve_checkpoint
from utils.config_loader import TrainConfig, get_architecture, spawn_rngs
from utils.errors import DataError, DegenerateInputError

logger = logging.getLogger("evaluator")

Condition = Tuple[str, float]


@dataclass
class EvalReport:
    """Accuracy in percent per (noise, snr_db) condition; NaN marks an absent cell."""
    accuracies: Dict[Condition, float] = field(default_factory=dict)
    seed: int = 0
    checkpoint: str = ""

    @property
    def average(self) -> float:
        present = [v for v in self.accuracies.values() if not np.isnan(v)]
        return float(np.mean(present)) if present else float("nan")

    @property
    def clean(self) -> float:
        return self.accuracies.get((CLEAN, math.inf), float("nan"))

    def rows(self) -> List[Dict]:
        return [{"noise": noise, "snr_db": snr, "accuracy_pct": acc}
                for (noise, snr), acc in self.accuracies.items()]


@dataclass
class TestSet:
    clips: List[Clip]
    labels: np.ndarray


def build_test_set(index: DatasetIndex, config: TrainConfig, rng: np.random.Generator,
                   noise_pool: Optional[NoisePool] = None) -> TestSet:
    """
    All test-split keyword files plus seeded unknown and silence samples.

    Unknown and silence counts follow the configured fractions relative to
    the keyword count.
    """
    grouped = index.by_label("test")
    keyword_entries = [e for label in sorted(grouped) if label < index.unknown_label for e in grouped[label]]
    if not keyword_entries:
        raise DataError("Test split holds no keyword files")
    keyword_share = 1.0 - config.silence_fraction - config.unknown_fraction
    n_unknown = int(round(len(keyword_entries) * config.unknown_fraction / keyword_share))
    n_silence = int(round(len(keyword_entries) * config.silence_fraction / keyword_share))

    clips = [load_clip(e.path) for e in keyword_entries]
    labels = [e.label for e in keyword_entries]

    unknown_entries = grouped.get(index.unknown_label, [])
    if unknown_entries and n_unknown:
        picks = rng.choice(len(unknown_entries), size=min(n_unknown, len(unknown_entries)), replace=False)
        for i in sorted(picks):
            clips.append(load_clip(unknown_entries[i].path))
            labels.append(index.unknown_label)

    for _ in range(n_silence):
        if noise_pool is None:
            samples = np.zeros(CLIP_SAMPLES)
        else:
            samples = np.clip(noise_pool.crop(CLIP_SAMPLES, rng) * rng.uniform(0.0, 1.0), -1.0, 1.0)
        clips.append(Clip(samples, SAMPLE_RATE, index.silence_label))
        labels.append(index.silence_label)

    logger.info(f"Test set: {len(keyword_entries)} keyword, {len(labels) - len(keyword_entries) - n_silence} "
                f"unknown, {n_silence} silence clips")
    return TestSet(clips, np.asarray(labels, dtype=np.int64))


def load_noise_pools(noise_dirs: Sequence[str]) -> Dict[str, Optional[NoisePool]]:
    """One pool per directory, named after it; unusable directories map to None."""
    pools: Dict[str, Optional[NoisePool]] = {}
    for directory in noise_dirs:
        name = Path(directory).name
        try:
            pools[name] = build_noise_pool([directory], name=name)
        except DataError as e:
            logger.warning(f"Noise pool '{name}' is missing: {e}")
            pools[name] = None
    return pools


class NoiseGridEvaluator:
    """Scores a model on a fixed test set under clean and noisy conditions."""

    def __init__(self, model: KwsModel, test_set: TestSet, noise_pools: Dict[str, Optional[NoisePool]],
                 snr_grid: Sequence[float], seed: int = 0, batch_size: int = 100, workers: int = 4):
        self.model = model
        self.test_set = test_set
        self.noise_pools = noise_pools
        self.snr_grid = list(snr_grid)
        self.seed = seed
        self.batch_size = max(1, batch_size)
        self.workers = max(1, workers)

    def accuracy(self, clips: Sequence[Clip], labels: np.ndarray) -> float:
        """Percent correct, predicting in chunks of `batch_size`."""
        if not clips:
            return float("nan")
        correct = 0
        for start in range(0, len(clips), self.batch_size):
            chunk = clips[start:start + self.batch_size]
            predictions = self.model.predict(featurize(chunk))
            correct += int(np.sum(predictions == labels[start:start + len(chunk)]))
        return 100.0 * correct / len(clips)

    def cell_rng(self, pool_idx: int, snr_idx: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, pool_idx, snr_idx])

    def evaluate_cell(self, pool_idx: int, name: str, snr_idx: int) -> float:
        pool = self.noise_pools[name]
        snr_db = self.snr_grid[snr_idx]
        rng = self.cell_rng(pool_idx, snr_idx)
        mixed, labels, skipped = [], [], 0
        for clip, label in zip(self.test_set.clips, self.test_set.labels):
            noise = pool.pick(rng)
            try:
                mixed.append(mix_at_snr(clip, noise, snr_db, rng))
                labels.append(label)
            except DegenerateInputError:
                skipped += 1
        if skipped:
            logger.warning(f"{name} @ {snr_db:g} dB: skipped {skipped} zero-power clips")
        accuracy = self.accuracy(mixed, np.asarray(labels, dtype=np.int64))
        logger.info(f"{name} @ {snr_db:g} dB: {accuracy:.2f}%")
        return accuracy

    def run(self, checkpoint: str = "") -> EvalReport:
        report = EvalReport(seed=self.seed, checkpoint=checkpoint)
        report.accuracies[(CLEAN, math.inf)] = self.accuracy(self.test_set.clips, self.test_set.labels)
        logger.info(f"clean: {report.clean:.2f}%")

        cells = []
        for pool_idx, (name, pool) in enumerate(self.noise_pools.items(), start=1):
            for snr_idx, snr_db in enumerate(self.snr_grid):
                report.accuracies[(name, float(snr_db))] = float("nan")
                if pool is None:
                    continue
                cells.append((pool_idx, name, snr_idx))

        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            futures = {cell: executor.submit(self.evaluate_cell, *cell) for cell in cells}
            for (pool_idx, name, snr_idx), future in futures.items():
                report.accuracies[(name, float(self.snr_grid[snr_idx]))] = future.result()
        return report


def load_inference_model(checkpoint: Union[str, Path], config: TrainConfig) -> KwsModel:
    """Inference graph of `config.model` (no dynamic embedding) with checkpoint weights."""
    arrays, _ = load_checkpoint(checkpoint)
    model = build_model(get_architecture(config.model), config.num_classes, np.random.default_rng(0),
                        inference_only=True, name=config.model)
    model.load_state_dict(arrays)
    return model


def evaluate(checkpoint: Union[str, Path], config: TrainConfig, snr_grid: Optional[Sequence[float]] = None,
             out_path: Union[str, Path, None] = None) -> EvalReport:
    """
    Evaluate one checkpoint on the clean test set and the noise grid.

    Args:
        checkpoint: Checkpoint directory, or run directory (latest step is used)
        config: Data, noise and grid settings
        snr_grid: Overrides `config.snr_grid`; empty gives a clean-only report
        out_path: CSV destination (defaults to eval_report.csv beside the step directories)

    Returns:
        EvalReport
    """
    checkpoint = resolve_checkpoint(checkpoint)
    model = load_inference_model(checkpoint, config)
    index = scan_dataset(config.data_root, config.keywords)
    rng = spawn_rngs(config.seed)["noise"]
    test_set = build_test_set(index, config, rng, background_noise_pool(index))
    evaluator = NoiseGridEvaluator(model, test_set, load_noise_pools(config.noise_dirs),
                                   config.snr_grid if snr_grid is None else snr_grid,
                                   seed=config.seed, batch_size=config.eval_batch_size, workers=config.workers)
    report = evaluator.run(checkpoint=str(checkpoint))
    write_eval_report(report, out_path or checkpoint.parent / EVAL_REPORT)
    return report


def sweep_runs(sweep_dir: Union[str, Path]) -> List[Path]:
    return sorted(d for d in Path(sweep_dir).glob("seed_*") if d.is_dir())


def evaluate_sweep(sweep_dir: Union[str, Path], config: TrainConfig,
                   snr_grid: Optional[Sequence[float]] = None) -> Tuple[Dict[str, EvalReport], Path]:
    """Evaluate every `seed_*` run of a repeat sweep and write the mean/best aggregate."""
    runs = sweep_runs(sweep_dir)
    if not runs:
        raise DataError(f"No seed_* runs under {sweep_dir}")
    reports = {run.name: evaluate(run, config, snr_grid, run / EVAL_REPORT) for run in runs}
    aggregate = aggregate_reports([read_eval_report(run / EVAL_REPORT) for run in runs])
    path = write_aggregate(aggregate, Path(sweep_dir) / AGGREGATE_REPORT)
    logger.info("\n" + format_aggregate_summary(aggregate, len(runs)))
    return reports, path
