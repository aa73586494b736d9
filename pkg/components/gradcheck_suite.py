"""
Registry of finite-difference checks over the differentiable operations, the
four training losses and the three networks.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from components.losses import (EmbeddingBatch, class_centroids, intra_class_loss, metric_loss,
                               orthogonal_loss)
from components.models import build_model
from components.trainer import lovo_objective
from utils.config_loader import TrainConfig, get_architecture
from utils.errors import UsageError
from utils.gradcheck import finite_diff_check
from utils.tensor import (Tensor, conv1d_temporal, conv2d_3x3, div, exp, log, matmul, mean_over_time,
                          pairwise_sq_dists, parameter, power, relu, softmax, softmax_cross_entropy)

logger = logging.getLogger("gradcheck")

TOLERANCE = 1e-4
STEP = 1e-5
SCOPES = ("ops", "losses", "models", "all")
# Power iterations used when checking L_O, enough for the estimate to converge
CHECK_POWER_ITERS = 50

CheckFn = Callable[[np.random.Generator], float]


@dataclass
class CheckResult:
    scope: str
    name: str
    max_error: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


@dataclass
class GradCheck:
    scope: str
    name: str
    fn: CheckFn
    trials: int = 1


def _random(rng: np.random.Generator, *shape) -> Tensor:
    return parameter(rng.standard_normal(shape))


def _fixed(rng: np.random.Generator, *shape) -> Tensor:
    return Tensor(rng.standard_normal(shape))


def _op_check(make: Callable[[np.random.Generator], Callable[[Tensor], Tensor]], *shape) -> CheckFn:
    """
    Check an op on a random input of `shape`.

    `make` draws any fixed operands and returns the op; its output is
    projected to a scalar with random weights so every entry is exercised.
    """
    def run(rng: np.random.Generator) -> float:
        x = _random(rng, *shape)
        op = make(rng)
        projection = Tensor(rng.standard_normal(op(x).shape))
        return finite_diff_check(lambda t: (op(t) * projection).sum(), x, h=STEP)
    return run


def _ops_checks() -> List[GradCheck]:
    checks = [
        ("matmul", _op_check(lambda r: (lambda x, w=_fixed(r, 5, 3): matmul(x, w)), 4, 5)),
        ("relu", _op_check(lambda r: relu, 6, 6)),
        ("exp", _op_check(lambda r: (lambda x: exp(x * 0.5)), 5, 4)),
        ("log", _op_check(lambda r: (lambda x: log(x * x + 1.0)), 5, 4)),
        ("div", _op_check(lambda r: (lambda x, d=Tensor(r.uniform(1.0, 2.0, (4, 4))): div(x, d)), 4, 4)),
        ("power", _op_check(lambda r: (lambda x: power(x * x + 0.5, 1.5)), 3, 3)),
        ("mean_over_time", _op_check(lambda r: mean_over_time, 8, 7)),
        ("softmax", _op_check(lambda r: (lambda x: softmax(x, axis=-1)), 4, 6)),
        ("pairwise_sq_dists", _op_check(lambda r: pairwise_sq_dists, 6, 3)),
        ("conv1d_temporal", _op_check(
            lambda r: (lambda x, w=_fixed(r, 3, 4, 5): conv1d_temporal(x, w, stride=2)), 4, 8)),
        ("conv1d_depthwise", _op_check(
            lambda r: (lambda x, w=_fixed(r, 5, 1, 6): conv1d_temporal(x, w, groups=6)), 2, 6, 8)),
        ("conv1d_weight", _op_check(
            lambda r: (lambda w, x=_fixed(r, 2, 4, 8): conv1d_temporal(x, w, stride=2)), 3, 4, 6)),
        ("conv1d_bias", _op_check(
            lambda r: (lambda b, x=_fixed(r, 2, 4, 8), w=_fixed(r, 3, 4, 6): conv1d_temporal(x, w, bias=b)), 6)),
        ("conv2d_3x3", _op_check(lambda r: (lambda x, k=_fixed(r, 9): conv2d_3x3(x, k)), 2, 6, 7)),
        ("conv2d_3x3_kernel", _op_check(lambda r: (lambda k, x=_fixed(r, 2, 6, 7): conv2d_3x3(x, k)), 2, 9)),
    ]
    return [GradCheck("ops", name, fn, trials=10) for name, fn in checks]


def _labels(rng: np.random.Generator, count: int, classes: int) -> np.ndarray:
    """Random labels covering every class at least once."""
    labels = np.concatenate([np.arange(classes), rng.integers(0, classes, count - classes)])
    return rng.permutation(labels)


def _check_ce(rng: np.random.Generator) -> float:
    logits = _random(rng, 8, 5)
    labels = rng.integers(0, 5, 8)
    return finite_diff_check(lambda t: softmax_cross_entropy(t, labels), logits, h=STEP)


def _check_metric(rng: np.random.Generator) -> float:
    vectors = _random(rng, 10, 6)
    labels = _labels(rng, 10, 3)
    return finite_diff_check(lambda t: metric_loss(EmbeddingBatch(t, labels), alpha=8.0), vectors, h=STEP)


def _check_intra(rng: np.random.Generator) -> float:
    vectors = _random(rng, 12, 8)
    labels = _labels(rng, 12, 4)
    return finite_diff_check(lambda t: intra_class_loss(EmbeddingBatch(t, labels)), vectors, h=STEP)


def _check_orthogonal(rng: np.random.Generator) -> float:
    vectors = parameter(0.15 * rng.standard_normal((12, 8)))
    labels = _labels(rng, 12, 4)

    def f(t: Tensor) -> Tensor:
        return orthogonal_loss(class_centroids(EmbeddingBatch(t, labels)), iters=CHECK_POWER_ITERS)

    return finite_diff_check(f, vectors, h=STEP)


def _loss_checks() -> List[GradCheck]:
    return [
        GradCheck("losses", "L_CE", _check_ce, trials=3),
        GradCheck("losses", "L_M", _check_metric, trials=3),
        GradCheck("losses", "L_I", _check_intra, trials=3),
        GradCheck("losses", "L_O", _check_orthogonal, trials=3),
    ]


def check_model_networks(rng: np.random.Generator, model_name: str = "ldy-tenet12", frames: int = 16,
                         batch: int = 6, coordinates: int = 20,
                         networks: Optional[Sequence[str]] = None) -> Dict[str, float]:
    """
    Check d(L_total)/d(weight) for randomly chosen weights of each network.

    Returns:
        network name -> max relative error over its sampled weights
    """
    config = TrainConfig(model=model_name, power_iters=CHECK_POWER_ITERS, batch_size=batch)
    model = build_model(get_architecture(model_name), config.num_classes, rng)
    features = Tensor(rng.standard_normal((batch, 40, frames)))
    labels = _labels(rng, batch, 3)

    def f(_: Tensor) -> Tensor:
        output = model.forward(features, with_embedding=config.uses("m"))
        return lovo_objective(output, labels, config)[0]

    by_network: Dict[str, list] = {}
    for name, tensor in model.named_parameters():
        by_network.setdefault(name.split(".", 1)[0], []).append(tensor)

    errors = {}
    for network, tensors in by_network.items():
        if networks is not None and network not in networks:
            continue
        sizes = np.array([t.size for t in tensors])
        picks = rng.choice(int(sizes.sum()), size=min(coordinates, int(sizes.sum())), replace=False)
        owner = np.searchsorted(np.cumsum(sizes), picks, side="right")
        offsets = picks - np.concatenate([[0], np.cumsum(sizes)])[owner]
        worst = 0.0
        for t_idx in np.unique(owner):
            worst = max(worst, finite_diff_check(f, tensors[t_idx], h=STEP, indices=offsets[owner == t_idx].tolist()))
        errors[network] = worst
    return errors


def _model_checks() -> List[GradCheck]:
    def network_check(network: str) -> CheckFn:
        def run(rng: np.random.Generator) -> float:
            return check_model_networks(rng, networks=[network])[network]
        return run
    return [GradCheck("models", f"L_total/{network}", network_check(network))
            for network in ("filter", "tenet", "embedding")]


def default_registry() -> List[GradCheck]:
    return _ops_checks() + _loss_checks() + _model_checks()


def run_gradcheck(scope: str = "all", seed: int = 0, registry: Optional[List[GradCheck]] = None,
                  tolerance: float = TOLERANCE) -> List[CheckResult]:
    """
    Run every registered check of `scope`.

    Args:
        scope: "ops", "losses", "models" or "all"
        seed: Seed of the random inputs
        registry: Checks to choose from (defaults to the built-in registry)
        tolerance: Failure threshold on the max relative error

    Returns:
        One CheckResult per check, worst error over its trials
    """
    if scope not in SCOPES:
        raise UsageError(f"Unknown gradcheck scope '{scope}'. Available: {', '.join(SCOPES)}")
    registry = default_registry() if registry is None else registry
    selected = [c for c in registry if scope == "all" or c.scope == scope]
    results = []
    for index, check in enumerate(selected):
        rng = np.random.default_rng([seed, index])
        worst = max(check.fn(rng) for _ in range(check.trials))
        result = CheckResult(check.scope, check.name, worst, tolerance)
        logger.info(f"gradcheck {check.scope}/{check.name}: {worst:.3e} {'ok' if result.passed else 'FAIL'}")
        results.append(result)
    return results


def format_results(results: List[CheckResult]) -> str:
    lines = ["=" * 56, f"{'check':<30} {'max rel err':>14} {'status':>8}", "-" * 56]
    for r in results:
        lines.append(f"{r.scope + '/' + r.name:<30} {r.max_error:>14.3e} {'ok' if r.passed else 'FAIL':>8}")
    lines.append("=" * 56)
    failed = sum(1 for r in results if not r.passed)
    lines.append(f"{len(results) - failed} passed, {failed} failed")
    return "\n".join(lines)


def all_passed(results: List[CheckResult]) -> bool:
    return all(r.passed for r in results)
