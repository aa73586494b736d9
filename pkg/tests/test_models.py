import numpy as np
import pytest

from components.layers import Linear, TemporalConv
from components.model_counter import ModelCounter, count_flops, count_params
from components.models import DynamicEmbeddingModel, DynamicFilter, KwsModel, build_model
from utils.config_loader import get_architecture
from utils.errors import DataError, DimensionError, UsageError


def make(name: str, inference_only: bool = False, seed: int = 0) -> KwsModel:
    return build_model(get_architecture(name), 12, np.random.default_rng(seed), inference_only=inference_only, name=name)


def test_forward_shapes():
    model = make("ldy-tenet12")
    x = np.random.default_rng(1).standard_normal((2, 40, 98))
    output = model.forward(x)
    assert output.filtered.shape == (2, 40, 98)
    assert output.keyword_embedding.shape == (2, 32)
    assert output.logits.shape == (2, 12)
    assert output.dynamic_embedding.shape == (2, 128)


def test_unbatched_input_is_promoted():
    model = make("tenet12")
    output = model.forward(np.zeros((40, 98)), with_embedding=False)
    assert output.logits.shape == (1, 12)
    assert output.dynamic_embedding is None


def test_tenet12_parameter_count():
    model = make("tenet12")
    assert count_params(model) == 90604
    assert abs(count_params(model) - 100_000) <= 10_000


def test_only_stride_blocks_have_projected_shortcut():
    blocks = make("tenet12").tenet.blocks
    with_shortcut = [i for i, block in enumerate(blocks, start=1) if block.shortcut is not None]
    assert with_shortcut == [1, 5]
    assert sum(blocks[i - 1].shortcut.num_params() for i in with_shortcut) == 2 * (32 * 32 + 32)


def test_dynamic_filter_adds_about_2k_parameters():
    ldy = make("ldy-tenet12", inference_only=True)
    assert count_params(ldy) == 92622
    assert count_params(ldy) - count_params(make("tenet12")) == 2018
    assert ldy.filter.num_params() == 2018


def test_inference_graph_has_no_embedding_weights():
    model = make("ldy-tenet12", inference_only=True)
    assert model.embedding is None
    assert not any(name.startswith("embedding.") for name, _ in model.named_parameters())
    training = make("ldy-tenet12")
    assert count_params(training, inference_only=True) == 92622
    assert count_params(training) == 92622 + training.embedding.num_params()


def test_tenet12_flops_near_published():
    flops = count_flops(make("tenet12"), frames=98)
    assert abs(flops - 6.42e6) / 6.42e6 <= 0.15


def test_temporal_conv_flops_double_with_frames():
    conv = TemporalConv(32, 96, 9, np.random.default_rng(0), groups=1)
    assert conv.flops(200)[0] == 2 * conv.flops(100)[0]
    assert Linear(32, 12, np.random.default_rng(0)).flops() == 2 * 32 * 12


def test_model_flops_roughly_double_with_frames():
    model = make("ldy-tenet12", inference_only=True)
    ratio = count_flops(model, frames=200) / count_flops(model, frames=100)
    assert ratio == pytest.approx(2.0, rel=0.01)


def test_zero_input_passes_filter_as_zero():
    dynamic_filter = DynamicFilter(np.random.default_rng(0))
    out = dynamic_filter.forward(np.zeros((3, 40, 20)))
    np.testing.assert_array_equal(out.data, np.zeros((3, 40, 20)))


def test_examples_are_processed_independently():
    model = make("ldy-tenet12")
    x = np.random.default_rng(2).standard_normal((4, 40, 30))
    batched = model.forward(x).logits.data
    permutation = [2, 0, 3, 1]
    permuted = model.forward(x[permutation]).logits.data
    np.testing.assert_allclose(permuted, batched[permutation], atol=1e-12)
    single = model.forward(x[1:2]).logits.data
    np.testing.assert_allclose(single[0], batched[1], atol=1e-12)


def test_embedding_needs_four_frames():
    embedding = DynamicEmbeddingModel(np.random.default_rng(0))
    assert embedding.forward(np.zeros((2, 40, 4))).shape == (2, 128)
    with pytest.raises(DimensionError):
        embedding.forward(np.zeros((2, 40, 3)))


def test_wrong_feature_count():
    with pytest.raises(DimensionError):
        make("tenet12").forward(np.zeros((2, 13, 98)))


def test_unknown_model_is_usage_error():
    with pytest.raises(UsageError):
        get_architecture("resnet50")


def test_training_weights_load_into_inference_model():
    training = make("ldy-tenet12", seed=1)
    inference = make("ldy-tenet12", inference_only=True, seed=2)
    inference.load_state_dict(training.state_dict())
    x = np.random.default_rng(3).standard_normal((2, 40, 98))
    np.testing.assert_array_equal(inference.forward(x).logits.data, training.forward(x).logits.data)
    np.testing.assert_array_equal(inference.predict(x), training.predict(x))


def test_load_state_dict_errors():
    model = make("tenet12")
    state = model.state_dict()
    missing = {k: v for k, v in state.items() if k != "tenet.fc.bias"}
    with pytest.raises(DataError, match="missing"):
        model.load_state_dict(missing)
    model.load_state_dict(missing, strict=False)
    state["tenet.fc.bias"] = np.zeros(5)
    with pytest.raises(DataError, match="shape"):
        model.load_state_dict(state)


def test_count_report_lists_networks():
    report = ModelCounter.report("ldy-tenet12")
    assert report.inference_params == 92622
    assert set(report.breakdown) == {"filter", "tenet", "embedding"}
    assert report.training_flops > report.inference_flops
    text = ModelCounter.format_report(report)
    assert "ldy-tenet12" in text


def test_predict_returns_class_ids():
    model = make("tenet12")
    predictions = model.predict(np.zeros((5, 40, 98)))
    assert predictions.shape == (5,)
    assert predictions.dtype.kind == "i"
