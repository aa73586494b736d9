import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from components.losses import (EmbeddingBatch, LossReport, LossWeights, centroid_covariance,
                               class_centroids, distance_matrix, intra_class_loss, metric_loss,
                               offdiagonal_mass, orthogonal_loss, spectral_norm, total_loss)
from utils.errors import DegenerateInputError, DimensionError, NumericError
from utils.tensor import Tensor, backward, parameter


def batch(points, labels) -> EmbeddingBatch:
    return EmbeddingBatch(Tensor(np.asarray(points, dtype=float)), labels)


def centroids_of(points):
    return class_centroids(batch(points, list(range(len(points)))))


# metric loss

def test_metric_same_class_pair():
    assert metric_loss(batch([[0, 0], [1, 0]], [0, 0]), alpha=1.0).item() == pytest.approx(2.0)


def test_metric_different_class_pair_past_margin():
    assert metric_loss(batch([[0, 0], [2, 0]], [0, 1]), alpha=1.0).item() == 0.0


def test_metric_identical_embeddings_give_alpha():
    points = np.ones((5, 3))
    assert metric_loss(batch(points, [2] * 5), alpha=0.7).item() == pytest.approx(0.7)


def test_metric_literal_reduction():
    # all four ordered pairs (self pairs included) are same-class: d^2 sums to 2, plus alpha * M^2
    assert metric_loss(batch([[0, 0], [1, 0]], [0, 0]), alpha=1.0, reduction="literal").item() == pytest.approx(6.0)


def test_metric_needs_two_embeddings():
    with pytest.raises(DegenerateInputError):
        metric_loss(batch([[0, 0]], [0]))


def test_embedding_batch_label_mismatch():
    with pytest.raises(DimensionError):
        batch([[0, 0], [1, 1]], [0])


@given(st.integers(min_value=0, max_value=2 ** 31 - 1))
def test_metric_is_non_negative(seed):
    rng = np.random.default_rng(seed)
    vectors = rng.standard_normal((8, 4))
    labels = rng.integers(0, 3, 8)
    assert metric_loss(batch(vectors, labels)).item() >= 0.0


# intra-class loss and centroids

def test_intra_class_oracle():
    loss = intra_class_loss(batch([[0, 0], [2, 0], [0, 2], [0, 4]], [0, 0, 1, 1]))
    assert loss.item() == 2.0


def test_intra_class_single_points_is_zero():
    assert intra_class_loss(batch([[1, 2], [3, 4], [5, 6]], [0, 1, 2])).item() == 0.0


def test_intra_class_scales_quadratically():
    rng = np.random.default_rng(3)
    points = rng.standard_normal((9, 4))
    labels = rng.integers(0, 3, 9)
    base = intra_class_loss(batch(points, labels)).item()
    assert intra_class_loss(batch(3.0 * points, labels)).item() == pytest.approx(9.0 * base)


def test_intra_class_gradient_flows_through_centroid():
    vectors = parameter([[0.0, 0.0], [2.0, 0.0]])
    backward(intra_class_loss(EmbeddingBatch(vectors, [0, 0])))
    # 2 (x_i - centroid); the centroid dependence contributes nothing in total
    np.testing.assert_allclose(vectors.grad, [[-2.0, 0.0], [2.0, 0.0]])


def test_centroids_columns_in_class_order():
    cs = class_centroids(batch([[9, 9], [1, 1], [3, 3], [7, 7]], [5, 2, 2, 5]))
    np.testing.assert_array_equal(cs.class_ids, [2, 5])
    np.testing.assert_allclose(cs.matrix.data, [[2.0, 8.0], [2.0, 8.0]])
    np.testing.assert_allclose(cs.global_mean.data, [5.0, 5.0])


def test_centroids_ignore_order_within_class():
    points = np.array([[1.0, 0.0], [0.0, 1.0], [4.0, 4.0], [2.0, 2.0]])
    a = class_centroids(batch(points, [0, 0, 1, 1])).matrix.data
    b = class_centroids(batch(points[[1, 0, 3, 2]], [0, 0, 1, 1])).matrix.data
    np.testing.assert_allclose(a, b)


# centroid matrices

def test_distance_matrix_oracle():
    np.testing.assert_allclose(distance_matrix(centroids_of([[0, 0], [3, 4]])).data, [[0, 25], [25, 0]])
    np.testing.assert_allclose(distance_matrix(centroids_of([[1, 1]])).data, [[0.0]])


def test_covariance_oracle():
    np.testing.assert_allclose(centroid_covariance(centroids_of([[1, 0], [-1, 0]])).data, [[1, -1], [-1, 1]])


def test_covariance_needs_two_classes():
    with pytest.raises(DegenerateInputError):
        centroid_covariance(centroids_of([[1, 0]]))


def test_covariance_is_psd_and_translation_invariant():
    rng = np.random.default_rng(8)
    points = rng.standard_normal((5, 6))
    shift = rng.standard_normal(6)
    cov = centroid_covariance(centroids_of(points)).data
    assert np.min(np.linalg.eigvalsh(cov)) >= -1e-12
    np.testing.assert_allclose(centroid_covariance(centroids_of(points + shift)).data, cov, atol=1e-12)
    np.testing.assert_allclose(distance_matrix(centroids_of(points + shift)).data,
                               distance_matrix(centroids_of(points)).data, atol=1e-12)


# spectral norm

def test_spectral_norm_diagonal():
    assert spectral_norm(Tensor(np.diag([3.0, 4.0]))).item() == pytest.approx(4.0)


def test_spectral_norm_nilpotent():
    assert spectral_norm(Tensor([[0.0, 2.0], [0.0, 0.0]])).item() == pytest.approx(2.0)


def test_spectral_norm_of_zero_matrix():
    a = parameter(np.zeros((3, 3)))
    sigma = spectral_norm(a)
    assert sigma.item() == 0.0
    backward(sigma)
    np.testing.assert_array_equal(a.grad, np.zeros((3, 3)))


def test_spectral_norm_rejects_non_finite():
    with pytest.raises(NumericError):
        spectral_norm(Tensor([[1.0, np.nan], [0.0, 1.0]]))


def test_spectral_norm_gradient_is_outer_product():
    a = parameter(np.diag([1.0, 5.0, 2.0]))
    backward(spectral_norm(a))
    expected = np.zeros((3, 3))
    expected[1, 1] = 1.0
    np.testing.assert_allclose(np.abs(a.grad), expected, atol=1e-6)


def symmetric_with_dominant_eigenvalue(rng: np.random.Generator, size: int = 12) -> np.ndarray:
    """Random symmetric matrix whose second largest |eigenvalue| is at most half the largest."""
    q, _ = np.linalg.qr(rng.standard_normal((size, size)))
    top = rng.uniform(1.0, 5.0) * rng.choice([-1.0, 1.0])
    rest = rng.uniform(-0.5, 0.5, size - 1) * abs(top)
    return q @ np.diag(np.concatenate([[top], rest])) @ q.T


def test_spectral_norm_matches_eigen_decomposition():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        a = symmetric_with_dominant_eigenvalue(rng)
        oracle = np.max(np.abs(np.linalg.eigvalsh(a)))
        estimate = spectral_norm(Tensor(a), iters=10).item()
        assert abs(estimate - oracle) / oracle < 1e-4


def test_spectral_norm_bounds():
    rng = np.random.default_rng(11)
    for _ in range(100):
        rows, cols = rng.integers(2, 9, size=2)
        a = rng.standard_normal((rows, cols))
        estimate = spectral_norm(Tensor(a), iters=500).item()
        assert estimate <= np.linalg.norm(a, "fro") + 1e-9
        assert estimate >= np.max(np.linalg.norm(a, axis=0)) - 1e-9


# orthogonal loss

def test_orthogonal_two_centroid_oracle():
    loss = orthogonal_loss(centroids_of([[1, 0], [-1, 0]]))
    assert abs(loss.item() - (1.0 - math.exp(-4.0))) < 1e-9


@pytest.mark.parametrize("classes", [2, 4, 6])
def test_orthogonal_identical_centroids(classes):
    loss = orthogonal_loss(centroids_of(np.ones((classes, 3))))
    assert abs(loss.item() - (classes - 1)) < 1e-9


def test_orthogonal_is_rotation_invariant():
    rng = np.random.default_rng(5)
    points = rng.standard_normal((4, 5))
    rotation, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    a = orthogonal_loss(centroids_of(points), iters=100).item()
    b = orthogonal_loss(centroids_of(points @ rotation), iters=100).item()
    assert a >= 0.0
    assert b == pytest.approx(a, rel=1e-6)


def test_offdiagonal_mass():
    assert offdiagonal_mass(centroids_of([[1, 0], [-1, 0]])) == 1.0
    assert offdiagonal_mass(centroids_of([[1, 0]])) == 0.0


def test_gradient_descent_reduces_orthogonal_loss():
    rng = np.random.default_rng(0)
    vectors = parameter(rng.standard_normal((4, 8)))
    labels = np.arange(4)
    weight, lr = 0.01, 10.0

    def loss() -> Tensor:
        return orthogonal_loss(class_centroids(EmbeddingBatch(vectors, labels)))

    start = loss().item()
    for _ in range(200):
        vectors.zero_grad()
        backward(loss() * weight)
        vectors.data -= lr * vectors.grad
    assert loss().item() <= 0.5 * start


# total loss

def test_total_loss_default_weights():
    terms = [Tensor(1.0), Tensor(2.0), Tensor(3.0), Tensor(4.0)]
    assert total_loss(*terms, weights=LossWeights()).item() == pytest.approx(1.57)


def test_total_loss_zero_weights_is_cross_entropy():
    terms = [Tensor(1.3), Tensor(2.0), Tensor(3.0), Tensor(4.0)]
    assert total_loss(*terms, weights=LossWeights(lambda1=0.0, lambda2=0.0, lambda3=0.0)).item() == 1.3
    assert total_loss(Tensor(1.3)).item() == 1.3


def test_total_loss_is_linear_in_weights():
    terms = [Tensor(1.0), Tensor(2.0), Tensor(3.0), Tensor(4.0)]
    base = total_loss(*terms, weights=LossWeights()).item()
    doubled = total_loss(*terms, weights=LossWeights(lambda2=0.02)).item()
    assert doubled - base == pytest.approx(0.03)


def test_loss_report_finiteness():
    assert LossReport(1, 0.001, 1.0, l_total=1.0).is_finite()
    assert not LossReport(1, 0.001, float("inf"), l_total=1.0).is_finite()
    assert set(LossReport(1, 0.001, 1.0).as_row()) == {"step", "lr", "l_ce", "l_m", "l_i", "l_o", "l_total"}
