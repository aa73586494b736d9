import numpy as np
import pytest

from utils.checkpoint_io import (MANIFEST_FILE, WEIGHTS_FILE, checkpoint_step, latest_checkpoint,
                                 load_checkpoint, resolve_checkpoint, save_checkpoint, step_dir)
from utils.config_loader import TrainConfig
from utils.errors import DataError


def sample_arrays():
    rng = np.random.default_rng(0)
    return {
        "filter.pdf_kernel": rng.standard_normal(9),
        "tenet.fc.weight": rng.standard_normal((32, 12)),
        "tenet.fc.bias": np.zeros(12),
    }


def test_save_and_load_are_exact(tmp_path):
    arrays = sample_arrays()
    config = TrainConfig(seed=3, lambda1=0.125)
    directory = save_checkpoint(step_dir(tmp_path, 1000), arrays, config)
    loaded, loaded_config = load_checkpoint(directory)
    assert list(loaded) == list(arrays)
    for name in arrays:
        np.testing.assert_array_equal(loaded[name], arrays[name])
    assert loaded_config == config


def test_manifest_lists_names_shapes_and_offsets(tmp_path):
    directory = save_checkpoint(tmp_path / "ckpt", sample_arrays())
    lines = (directory / MANIFEST_FILE).read_text(encoding="utf-8").splitlines()
    assert lines[0] == "filter.pdf_kernel\t9\t0"
    assert lines[1] == "tenet.fc.weight\t32,12\t72"
    assert (directory / WEIGHTS_FILE).stat().st_size == (9 + 32 * 12 + 12) * 8


def test_checkpoint_without_config(tmp_path):
    _, config = load_checkpoint(save_checkpoint(tmp_path / "ckpt", sample_arrays()))
    assert config is None


def test_truncated_weights_are_data_error(tmp_path):
    directory = save_checkpoint(tmp_path / "ckpt", sample_arrays())
    weights = directory / WEIGHTS_FILE
    weights.write_bytes(weights.read_bytes()[:100])
    with pytest.raises(DataError, match="truncated"):
        load_checkpoint(directory)


def test_not_a_checkpoint(tmp_path):
    with pytest.raises(DataError):
        load_checkpoint(tmp_path)


def test_latest_and_resolve(tmp_path):
    for step in (1000, 3000, 2000):
        save_checkpoint(step_dir(tmp_path, step), sample_arrays())
    assert checkpoint_step(step_dir(tmp_path, 3000)) == 3000
    assert latest_checkpoint(tmp_path) == step_dir(tmp_path, 3000)
    assert resolve_checkpoint(tmp_path) == step_dir(tmp_path, 3000)
    assert resolve_checkpoint(step_dir(tmp_path, 1000)) == step_dir(tmp_path, 1000)
    with pytest.raises(DataError):
        resolve_checkpoint(tmp_path / "empty")


def test_malformed_manifest_is_data_error(tmp_path):
    directory = save_checkpoint(tmp_path / "ckpt", sample_arrays())
    (directory / MANIFEST_FILE).write_text("filter.pdf_kernel 9 0\n", encoding="utf-8")
    with pytest.raises(DataError, match="malformed"):
        load_checkpoint(directory)
