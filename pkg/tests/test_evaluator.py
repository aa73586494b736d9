import math

import numpy as np
import pytest

from components.dataset import NoisePool, scan_dataset
from components.evaluator import (NoiseGridEvaluator, build_test_set, evaluate, evaluate_sweep,
                                  load_noise_pools)
from components.evaluator import TestSet as ClipSet
from components.models import build_model
from components.report_generator import AGGREGATE_REPORT, CLEAN, EVAL_REPORT, read_eval_report
from utils.audio_frontend import SAMPLE_RATE, Clip
from utils.checkpoint_io import save_checkpoint, step_dir
from utils.config_loader import TrainConfig, get_architecture
from utils.errors import DataError

LABELS = np.array([0, 1, 2, 2, 3, 2, 4, 0, 1, 3])


def tone_clips(labels, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(SAMPLE_RATE) / SAMPLE_RATE
    return [Clip(0.4 * np.sin(2 * np.pi * (300.0 + 250.0 * label) * t) + 0.01 * rng.standard_normal(SAMPLE_RATE),
                 SAMPLE_RATE, int(label))
            for label in labels]


def white_pool(name="white", seed=1):
    noise = 0.1 * np.random.default_rng(seed).standard_normal(3 * SAMPLE_RATE)
    return NoisePool(name, [Clip(noise)])


def small_model(architecture, seed=0):
    return build_model(architecture, 5, np.random.default_rng(seed), inference_only=True)


def constant_model(architecture, label):
    model = small_model(architecture)
    model.tenet.fc.weight.data[...] = 0.0
    model.tenet.fc.bias.data[...] = 0.0
    model.tenet.fc.bias.data[label] = 5.0
    return model


def test_constant_predictor_scores_the_class_prior(small_architecture):
    test_set = ClipSet(tone_clips(LABELS), LABELS)
    evaluator = NoiseGridEvaluator(constant_model(small_architecture, 2), test_set, {"white": white_pool()},
                                   snr_grid=[10.0, 0.0], workers=2)
    report = evaluator.run()
    assert report.clean == pytest.approx(30.0)
    assert report.accuracies[("white", 10.0)] == pytest.approx(30.0)
    assert report.accuracies[("white", 0.0)] == pytest.approx(30.0)
    assert report.average == pytest.approx(30.0)


def test_empty_grid_gives_clean_only_report(small_architecture):
    test_set = ClipSet(tone_clips(LABELS), LABELS)
    report = NoiseGridEvaluator(small_model(small_architecture), test_set, {"white": white_pool()}, []).run()
    assert list(report.accuracies) == [(CLEAN, math.inf)]


def test_missing_pool_gives_absent_cells(small_architecture):
    test_set = ClipSet(tone_clips(LABELS), LABELS)
    pools = {"white": white_pool(), "gone": None}
    report = NoiseGridEvaluator(small_model(small_architecture), test_set, pools, [5.0]).run()
    assert np.isnan(report.accuracies[("gone", 5.0)])
    assert not np.isnan(report.accuracies[("white", 5.0)])
    present = [report.clean, report.accuracies[("white", 5.0)]]
    assert report.average == pytest.approx(np.mean(present))


def test_runs_are_deterministic_across_worker_counts(small_architecture):
    test_set = ClipSet(tone_clips(LABELS), LABELS)
    model = small_model(small_architecture)
    pools = {"white": white_pool(), "pink": white_pool("pink", seed=2)}
    first = NoiseGridEvaluator(model, test_set, pools, [20.0, 0.0], seed=3, workers=1).run()
    second = NoiseGridEvaluator(model, test_set, pools, [20.0, 0.0], seed=3, workers=4).run()
    assert first.accuracies == second.accuracies
    assert list(first.accuracies)[1:] == [("white", 20.0), ("white", 0.0), ("pink", 20.0), ("pink", 0.0)]


def test_accuracy_does_not_depend_on_batch_size(small_architecture):
    clips = tone_clips(LABELS, seed=4)
    model = small_model(small_architecture, seed=5)
    scores = {size: NoiseGridEvaluator(model, ClipSet(clips, LABELS), {}, [], batch_size=size).accuracy(clips, LABELS)
              for size in (1, 3, 100)}
    assert scores[1] == scores[3] == scores[100]


def test_cell_generators_are_seeded_by_position(small_architecture):
    evaluator = NoiseGridEvaluator(small_model(small_architecture), ClipSet([], np.array([])), {}, [], seed=9)
    np.testing.assert_array_equal(evaluator.cell_rng(1, 2).random(4), np.random.default_rng([9, 1, 2]).random(4))
    assert not np.array_equal(evaluator.cell_rng(1, 2).random(4), evaluator.cell_rng(2, 1).random(4))


def test_test_set_adds_silence(tone_corpus):
    root, keywords = tone_corpus
    index = scan_dataset(root, keywords)
    config = TrainConfig(data_root=str(root), keywords=keywords)
    test_set = build_test_set(index, config, np.random.default_rng(0))
    keyword_count = len(index.split("test"))
    silence = int(np.sum(test_set.labels == index.silence_label))
    assert silence == int(round(keyword_count * 0.1 / 0.8))
    assert len(test_set.clips) == keyword_count + silence


def test_load_noise_pools_marks_missing_directories(tone_corpus, tmp_path):
    root, _ = tone_corpus
    pools = load_noise_pools([str(root / "_background_noise_"), str(tmp_path / "missing")])
    assert len(pools["_background_noise_"]) == 1
    assert pools["missing"] is None


def write_run(run_dir, config, seed):
    model = build_model(get_architecture(config.model), config.num_classes, np.random.default_rng(seed))
    save_checkpoint(step_dir(run_dir, 1), model.state_dict(), config)


def test_evaluate_writes_report_beside_checkpoints(tone_corpus, tmp_path):
    root, keywords = tone_corpus
    config = TrainConfig(data_root=str(root), keywords=keywords, model="tenet12",
                         noise_dirs=[str(root / "_background_noise_")], workers=1)
    write_run(tmp_path / "run", config, seed=0)
    report = evaluate(tmp_path / "run", config, snr_grid=[10.0])
    frame = read_eval_report(tmp_path / "run" / EVAL_REPORT)
    assert list(zip(frame["noise"], frame["snr_db"])) == [(CLEAN, math.inf), ("_background_noise_", 10.0)]
    assert frame["accuracy_pct"].tolist() == pytest.approx([report.clean, report.accuracies[("_background_noise_", 10.0)]])
    assert report.checkpoint.endswith("step_000001")


def test_evaluate_sweep_aggregates_seed_runs(tone_corpus, tmp_path):
    root, keywords = tone_corpus
    config = TrainConfig(data_root=str(root), keywords=keywords, model="tenet12", workers=1)
    for seed in (0, 1):
        write_run(tmp_path / "sweep" / f"seed_{seed}", config, seed)
    reports, path = evaluate_sweep(tmp_path / "sweep", config, snr_grid=[])
    assert sorted(reports) == ["seed_0", "seed_1"]
    assert path == tmp_path / "sweep" / AGGREGATE_REPORT
    with pytest.raises(DataError):
        evaluate_sweep(tmp_path / "nothing", config)
