"""
Training loop for the LOVO objective.

One step: batch -> dynamic filter -> {dynamic embedding -> L_M;
TENet -> (E -> L_I, L_O; logits -> L_CE)} -> weighted total -> backward ->
Adam. The learning rate follows the step schedule of the config.
"""
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Tuple

import numpy as np

from components.dataset import (AugmentPolicy, Batch, background_noise_pool, batch_stream,
                                scan_dataset)
from components.losses import (EmbeddingBatch, LossReport, LossWeights, class_centroids,
                               intra_class_loss, metric_loss, offdiagonal_mass, orthogonal_loss,
                               total_loss)
from components.models import KwsModel, ModelOutput, build_model
from components.report_generator import LOSS_LOG, write_loss_log
from utils.adam import AdamState, adam_step, zero_grad
from utils.checkpoint_io import save_checkpoint, step_dir
from utils.config_loader import TrainConfig, get_architecture, repeat_seeds, spawn_rngs
from utils.errors import ConfigurationError, NumericError
from utils.tensor import Tensor, backward, softmax_cross_entropy

logger = logging.getLogger("trainer")


def loss_weights(config: TrainConfig) -> LossWeights:
    return LossWeights(config.alpha, config.lambda1, config.lambda2, config.lambda3)


def lovo_objective(output: ModelOutput, labels: np.ndarray, config: TrainConfig
                   ) -> Tuple[Tensor, LossReport]:
    """
    Build L_total for one batch.

    Terms not selected by `config.loss_terms` are neither computed nor
    reported; L_O is also skipped for a batch holding a single class.

    Returns:
        (total loss tensor, report with step/lr left at 0)
    """
    ce = softmax_cross_entropy(output.logits, labels)
    lm = li = lo = None
    extras = {}
    if config.uses("m"):
        lm = metric_loss(EmbeddingBatch(output.dynamic_embedding, labels), config.alpha, config.metric_reduction)
    if config.uses("i") or config.uses("o"):
        keyword = EmbeddingBatch(output.keyword_embedding, labels)
        centroids = class_centroids(keyword)
        if config.uses("i"):
            li = intra_class_loss(keyword, centroids)
        if config.uses("o") and centroids.num_classes >= 2:
            lo = orthogonal_loss(centroids, iters=config.power_iters)
            extras["offdiag"] = offdiagonal_mass(centroids)
    total = total_loss(ce, lm, li, lo, loss_weights(config))
    values = [float("nan") if t is None else t.item() for t in (lm, li, lo)]
    report = LossReport(0, 0.0, ce.item(), *values, l_total=total.item(), extras=extras)
    return total, report


@dataclass
class TrainResult:
    model: KwsModel
    history: List[LossReport]
    checkpoint: Optional[Path] = None
    run_dir: Optional[Path] = None


@dataclass
class LovoTrainer:
    """Owns the model weights and the optimizer state of one run."""
    config: TrainConfig
    model: KwsModel
    run_dir: Optional[Path] = None
    state: AdamState = field(default_factory=AdamState)
    history: List[LossReport] = field(default_factory=list)
    last_checkpoint: Optional[Path] = None

    def __post_init__(self):
        if self.config.uses("m") and self.model.embedding is None:
            raise ConfigurationError(f"loss term 'm' needs a model with the dynamic embedding branch, "
                                     f"'{self.model.name}' has none")
        self.params = self.model.parameters()
        self.state = AdamState.for_params(self.params)

    def step(self, batch: Batch, step: int) -> LossReport:
        """Run one optimization step (1-based `step`) and return its losses."""
        lr = self.config.lr_at(step)
        zero_grad(self.params)
        output = self.model.forward(Tensor(batch.features), with_embedding=self.config.uses("m"))
        try:
            total, report = lovo_objective(output, batch.labels, self.config)
        except NumericError as e:
            logger.error(f"Loss evaluation failed at step {step}: {e}")
            total, report = None, LossReport(step, lr, float("nan"))
        report.step, report.lr = step, lr
        if not report.is_finite():
            self.history.append(report)
            self._abort(report)
        backward(total)
        adam_step(self.params, self.state, lr)
        self.history.append(report)
        return report

    def fit(self, batches: Iterable[Batch], on_step: Optional[Callable[[LossReport], None]] = None) -> TrainResult:
        """
        Train for `config.total_steps` steps on the given batches.

        Checkpoints and the loss log are written every `checkpoint_every`
        steps and at the end when the trainer has a run directory.
        """
        total = self.config.total_steps
        step = 0
        try:
            for step, batch in enumerate(batches, start=1):
                report = self.step(batch, step)
                if on_step is not None:
                    on_step(report)
                if step % self.config.log_every == 0 or step == 1:
                    logger.info(self._progress_line(report))
                if self.run_dir is not None and (step % self.config.checkpoint_every == 0 or step == total):
                    self.checkpoint(step)
                if step == total:
                    break
        finally:
            # stops a prefetch thread on abort or early break
            close = getattr(batches, "close", None)
            if close is not None:
                close()
        if step < total:
            logger.warning(f"Batch source ran out after {step} of {total} steps")
            if self.run_dir is not None and step and self.last_checkpoint != step_dir(self.run_dir, step):
                self.checkpoint(step)
        return TrainResult(self.model, self.history, self.last_checkpoint, self.run_dir)

    def checkpoint(self, step: int) -> Path:
        directory = save_checkpoint(step_dir(self.run_dir, step), self.model.state_dict(), self.config)
        write_loss_log(self.history, self.run_dir / LOSS_LOG)
        self.last_checkpoint = directory
        return directory

    def _progress_line(self, report: LossReport) -> str:
        parts = [f"step {report.step}/{self.config.total_steps}", f"lr {report.lr:.2e}", f"ce {report.l_ce:.4f}"]
        for name, value in (("m", report.l_m), ("i", report.l_i), ("o", report.l_o)):
            if not np.isnan(value):
                parts.append(f"l_{name} {value:.4f}")
        parts.append(f"total {report.l_total:.4f}")
        return " | ".join(parts)

    def _abort(self, report: LossReport):
        dump = {
            "step": report.step,
            "lr": report.lr,
            "losses": report.as_row(),
            "last_checkpoint": str(self.last_checkpoint) if self.last_checkpoint else None,
            "finite_parameters": {name: bool(np.all(np.isfinite(t.data))) for name, t in self.model.named_parameters()},
        }
        target = self.last_checkpoint or self.run_dir
        message = f"Non-finite loss at step {report.step}: {report.as_row()}"
        if target is not None:
            Path(target).mkdir(parents=True, exist_ok=True)
            path = Path(target) / f"diagnostic_step_{report.step:06d}.json"
            with open(path, "w", encoding="utf-8") as file:
                json.dump(dump, file, indent=2, default=str)
            write_loss_log(self.history, self.run_dir / LOSS_LOG)
            message += f"; diagnostic dump written to {path}"
        logger.error(message)
        raise NumericError(message)


def train_accuracy(model: KwsModel, batch: Batch) -> float:
    """Percentage of `batch` classified correctly by the inference path."""
    predictions = model.predict(batch.features)
    return float(np.mean(predictions == batch.labels) * 100.0)


def build_training_model(config: TrainConfig, rng: np.random.Generator) -> KwsModel:
    return build_model(get_architecture(config.model), config.num_classes, rng, name=config.model)


def train(config: TrainConfig, run_dir: Optional[Path] = None) -> TrainResult:
    """
    Train one run on the dataset named by the config.

    Args:
        config: Run configuration; its seed drives batching and initialization
        run_dir: Output directory (defaults to `config.checkpoint_dir`)

    Returns:
        TrainResult with the loss history and the final checkpoint
    """
    run_dir = Path(run_dir or config.checkpoint_dir)
    rngs = spawn_rngs(config.seed)
    index = scan_dataset(config.data_root, config.keywords)
    noise_pool = background_noise_pool(index)
    model = build_training_model(config, rngs["init"])
    trainer = LovoTrainer(config, model, run_dir)
    logger.info(f"Training {config.model} ({model.num_params()} parameters, loss terms '{config.loss_terms}') "
                f"for {config.total_steps} steps into {run_dir}")
    batches = batch_stream(index, "train", rngs["data"], AugmentPolicy.from_config(config),
                           config.batch_size, config.total_steps, noise_pool, config.prefetch)
    return trainer.fit(batches)


def train_runs(config: TrainConfig) -> List[TrainResult]:
    """Train `config.repeats` runs with consecutive seeds; repeats go to `seed_<s>/` subdirectories."""
    seeds = repeat_seeds(config)
    if len(seeds) == 1:
        return [train(config)]
    results = []
    for seed in seeds:
        run_config = dataclasses.replace(config, seed=seed, repeats=1)
        run_dir = Path(config.checkpoint_dir) / f"seed_{seed}"
        logger.info(f"Repeat with seed {seed} -> {run_dir}")
        results.append(train(run_config, run_dir))
    return results
