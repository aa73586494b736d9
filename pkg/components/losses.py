"""
LOVO loss suite.

metric_loss pulls same-class dynamic embeddings together and pushes others
past a margin; intra_class_loss shrinks each class around its centroid;
orthogonal_loss drives the centroid Gram matrix toward a diagonal while
keeping centroids apart. All losses are graph operations on Tensors, so
gradients flow back to the embeddings.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from utils.errors import ConfigurationError, DegenerateInputError, DimensionError, NumericError
from utils.tensor import Tensor, as_tensor, exp, matmul, pairwise_sq_dists, relu

logger = logging.getLogger("losses")

POWER_ITERATION_SEED = 0


@dataclass
class EmbeddingBatch:
    """Embedding vectors [M x D] with one integer class label per row."""
    vectors: Tensor
    labels: np.ndarray

    def __post_init__(self):
        self.vectors = as_tensor(self.vectors)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.vectors.ndim != 2 or self.labels.shape != (self.vectors.shape[0],):
            raise DimensionError(f"embeddings {self.vectors.shape} do not match labels {self.labels.shape}")

    @property
    def size(self) -> int:
        return self.vectors.shape[0]


@dataclass
class CentroidSet:
    """Class centroids as columns of E' [D x C], classes in ascending id order."""
    matrix: Tensor
    global_mean: Tensor
    class_ids: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.matrix.shape[1]


@dataclass
class LossWeights:
    alpha: float = 1.0
    lambda1: float = 0.25
    lambda2: float = 0.01
    lambda3: float = 0.01


@dataclass
class LossReport:
    """Loss values of one training step; disabled terms stay NaN."""
    step: int
    lr: float
    l_ce: float
    l_m: float = float("nan")
    l_i: float = float("nan")
    l_o: float = float("nan")
    l_total: float = float("nan")
    extras: Dict[str, float] = field(default_factory=dict)

    def as_row(self) -> Dict[str, float]:
        return {"step": self.step, "lr": self.lr, "l_ce": self.l_ce, "l_m": self.l_m,
                "l_i": self.l_i, "l_o": self.l_o, "l_total": self.l_total}

    def is_finite(self) -> bool:
        values = [self.l_ce, self.l_total] + [v for v in (self.l_m, self.l_i, self.l_o) if not np.isnan(v)]
        return bool(np.all(np.isfinite(values)))


def metric_loss(batch: EmbeddingBatch, alpha: float = 1.0, reduction: str = "mean") -> Tensor:
    """
    Pairwise metric loss over the dynamic embeddings H.

    Args:
        batch: Dynamic embeddings [M x 128] and labels
        alpha: Margin
        reduction: "mean" averages hinged terms over ordered pairs i != j;
            "literal" sums y_ij * d_ij^2 + alpha over all ordered pairs
            (self-pairs included, no hinge)

    Returns:
        Scalar tensor
    """
    m = batch.size
    if m < 2:
        raise DegenerateInputError(f"metric loss needs at least 2 embeddings, got {m}")
    d2 = pairwise_sq_dists(batch.vectors)
    same = (batch.labels[:, None] == batch.labels[None, :]).astype(np.float64)

    if reduction == "literal":
        sign = 2.0 * same - 1.0
        return (d2 * sign).sum() + alpha * m * m
    if reduction != "mean":
        raise ConfigurationError(f"unknown metric reduction '{reduction}'")

    off_diagonal = 1.0 - np.eye(m)
    pulled = (d2 + alpha) * (same * off_diagonal)
    pushed = relu(alpha - d2) * ((1.0 - same) * off_diagonal)
    return (pulled + pushed).sum() * (1.0 / (m * (m - 1)))


def _assignment(labels: np.ndarray):
    class_ids, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    one_hot = np.zeros((labels.shape[0], class_ids.shape[0]))
    one_hot[np.arange(labels.shape[0]), inverse] = 1.0
    return class_ids, one_hot, counts


def class_centroids(batch: EmbeddingBatch) -> CentroidSet:
    """Per-class means of the keyword embeddings, stacked as columns of E'."""
    if batch.size == 0:
        raise DegenerateInputError("cannot compute centroids of an empty batch")
    class_ids, one_hot, counts = _assignment(batch.labels)
    averaging = Tensor(one_hot / counts[None, :])
    matrix = matmul(batch.vectors.T, averaging)
    global_mean = matrix.mean(axis=1)
    return CentroidSet(matrix, global_mean, class_ids)


def intra_class_loss(batch: EmbeddingBatch, centroids: Optional[CentroidSet] = None) -> Tensor:
    """(1/C) * sum over classes of squared distances to the class centroid."""
    if batch.size == 0:
        raise DegenerateInputError("intra-class loss of an empty batch")
    centroids = centroids or class_centroids(batch)
    _, one_hot, _ = _assignment(batch.labels)
    assigned = matmul(Tensor(one_hot), centroids.matrix.T)
    residual = batch.vectors - assigned
    return (residual * residual).sum() * (1.0 / centroids.num_classes)


def distance_matrix(centroids: CentroidSet) -> Tensor:
    """M_DM: squared Euclidean distances between centroids, [C x C]."""
    return pairwise_sq_dists(centroids.matrix.T)


def centroid_covariance(centroids: CentroidSet) -> Tensor:
    """M_IM: Gram matrix of mean-centered centroids divided by C - 1."""
    c = centroids.num_classes
    if c < 2:
        raise DegenerateInputError(f"centroid covariance needs at least 2 classes, got {c}")
    centered = centroids.matrix - centroids.global_mean.reshape(-1, 1)
    return matmul(centered.T, centered) * (1.0 / (c - 1))


def spectral_norm(matrix: Tensor, iters: int = 10, seed: int = POWER_ITERATION_SEED) -> Tensor:
    """
    Largest singular value by power iteration on A^T A.

    The start vector is drawn from a fixed-seed generator. u and v are
    constants of the graph, so the gradient with respect to A is u v^T.

    Args:
        matrix: 2-D tensor A
        iters: Power iterations
        seed: Seed of the start vector

    Returns:
        Scalar tensor sigma = u^T A v
    """
    matrix = as_tensor(matrix)
    if matrix.ndim != 2:
        raise DimensionError(f"spectral_norm expects a matrix, got shape {matrix.shape}")
    if iters < 1:
        raise ConfigurationError(f"power iteration needs at least one step, got {iters}")
    a = matrix.data
    if not np.all(np.isfinite(a)):
        raise NumericError("spectral_norm of a matrix with non-finite entries")

    zero = (matrix * 0.0).sum()
    if not np.any(a):
        return zero

    v = np.random.default_rng(seed).standard_normal(a.shape[1])
    v /= np.linalg.norm(v)
    for _ in range(iters):
        w = a.T @ (a @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return zero
        v = w / norm
    av = a @ v
    norm = np.linalg.norm(av)
    if norm == 0.0:
        return zero
    u = av / norm
    return (matrix * np.outer(u, v)).sum()


def orthogonal_loss(centroids: CentroidSet, iters: int = 10, seed: int = POWER_ITERATION_SEED) -> Tensor:
    """SN(p(M_IM) + exp(-M_DM) - I), where p zeroes the diagonal."""
    covariance = centroid_covariance(centroids)
    c = centroids.num_classes
    identity = np.eye(c)
    argument = covariance * (1.0 - identity) + exp(-distance_matrix(centroids)) - identity
    return spectral_norm(argument, iters=iters, seed=seed)


def offdiagonal_mass(centroids: CentroidSet) -> float:
    """Mean absolute off-diagonal entry of M_IM (0 for fewer than two classes)."""
    if centroids.num_classes < 2:
        return 0.0
    covariance = centroid_covariance(centroids).data
    mask = ~np.eye(covariance.shape[0], dtype=bool)
    return float(np.abs(covariance[mask]).mean())


def total_loss(ce: Tensor, lm: Optional[Tensor] = None, li: Optional[Tensor] = None,
               lo: Optional[Tensor] = None, weights: Optional[LossWeights] = None) -> Tensor:
    """L_CE + lambda1 L_M + lambda2 L_I + lambda3 L_O; terms passed as None are left out."""
    weights = weights or LossWeights()
    total = ce
    for term, weight in ((lm, weights.lambda1), (li, weights.lambda2), (lo, weights.lambda3)):
        if term is not None:
            total = total + term * weight
    return total


def scalar_values(terms: Sequence[Optional[Tensor]]):
    return [float("nan") if term is None else term.item() for term in terms]
