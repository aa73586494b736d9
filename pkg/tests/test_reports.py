import io
import math

import numpy as np
import openpyxl
import pandas as pd
import pytest

from components.evaluator import EvalReport
from components.losses import LossReport
from components.model_counter import ModelCounter
from components.report_generator import (AGGREGATE_REPORT, CLEAN, EVAL_REPORT, LOSS_COLUMNS, LOSS_LOG,
                                         aggregate_reports, average_accuracy, eval_grid, format_aggregate_summary,
                                         format_eval_summary, loss_curves, read_eval_report, read_loss_log,
                                         run_summary, write_aggregate, write_eval_report, write_loss_log)
from utils.checkpoint_io import save_checkpoint, step_dir
from utils.config_loader import TrainConfig
from utils.errors import DataError
from utils.excel_generator import create_eval_workbook, save_eval_workbook
from utils.run_loader import count_table, discover_runs, load_run, report_downloads


def sample_report(clean=90.0, white=(80.0, 60.0), seed=0) -> EvalReport:
    report = EvalReport(seed=seed)
    report.accuracies[(CLEAN, math.inf)] = clean
    report.accuracies[("white", 10.0)] = white[0]
    report.accuracies[("white", 0.0)] = white[1]
    report.accuracies[("babble", 10.0)] = float("nan")
    report.accuracies[("babble", 0.0)] = float("nan")
    return report


def sample_history():
    return [LossReport(1, 0.001, 2.5, l_i=0.3, l_total=2.503),
            LossReport(2, 0.001, 2.0, l_i=0.2, l_total=2.002)]


def test_loss_log_keeps_disabled_terms_empty(tmp_path):
    path = write_loss_log(sample_history(), tmp_path / LOSS_LOG)
    frame = read_loss_log(path)
    assert list(frame.columns) == LOSS_COLUMNS
    assert frame["l_m"].isna().all() and frame["l_o"].isna().all()
    assert frame["l_i"].tolist() == [0.3, 0.2]
    assert list(loss_curves(frame).columns) == ["l_ce", "l_i", "l_total"]


def test_loss_log_requires_columns(tmp_path):
    path = tmp_path / "other.csv"
    pd.DataFrame({"step": [1]}).to_csv(path, index=False)
    with pytest.raises(DataError, match="lacks"):
        read_loss_log(path)
    with pytest.raises(DataError):
        read_loss_log(tmp_path / "missing.csv")


def test_eval_report_round_trip(tmp_path):
    path = write_eval_report(sample_report(), tmp_path / EVAL_REPORT)
    assert path.read_text(encoding="utf-8").splitlines()[:2] == ["noise,snr_db,accuracy_pct", "clean,inf,90.0"]
    frame = read_eval_report(path)
    assert math.isinf(frame["snr_db"][0])
    assert frame["accuracy_pct"].isna().sum() == 2
    assert average_accuracy(frame) == pytest.approx((90.0 + 80.0 + 60.0) / 3)


def test_eval_report_rejects_other_tables(tmp_path):
    path = tmp_path / "x.csv"
    pd.DataFrame({"a": [1]}).to_csv(path, index=False)
    with pytest.raises(DataError):
        read_eval_report(path)


def test_aggregate_takes_mean_and_best(tmp_path):
    for seed, clean in enumerate((90.0, 94.0)):
        write_eval_report(sample_report(clean=clean, seed=seed), tmp_path / f"r{seed}.csv")
    frames = [read_eval_report(tmp_path / f"r{seed}.csv") for seed in range(2)]
    aggregate = aggregate_reports(frames)
    clean_row = aggregate.iloc[0]
    assert clean_row["noise"] == CLEAN
    assert clean_row["mean_pct"] == pytest.approx(92.0)
    assert clean_row["best_pct"] == pytest.approx(94.0)
    assert aggregate["mean_pct"].isna().sum() == 2
    summary = format_aggregate_summary(aggregate, 2)
    assert "AGGREGATE OVER 2 RUNS" in summary and "AVERAGE" in summary
    with pytest.raises(DataError):
        aggregate_reports([])


def test_eval_summary_and_grid():
    frame = pd.DataFrame(sample_report().rows())
    summary = format_eval_summary(frame)
    assert "AVERAGE" in summary
    assert "absent" in summary
    grid = eval_grid(frame)
    assert list(grid.columns) == ["clean", "10 dB", "0 dB"]
    assert list(grid.index) == ["clean", "white", "babble"]
    assert grid.loc["white", "0 dB"] == 60.0
    assert run_summary({"a": frame})["average_pct"][0] == pytest.approx(average_accuracy(frame))


def test_workbook_lays_out_runs_side_by_side(tmp_path):
    reports = {"seed_0": pd.DataFrame(sample_report().rows()),
               "seed_1": pd.DataFrame(sample_report(clean=94.0).rows())}
    aggregate = aggregate_reports(list(reports.values()))
    workbook = openpyxl.load_workbook(io.BytesIO(create_eval_workbook(reports, aggregate)))
    sheet = workbook["Noise Grid"]
    assert [sheet.cell(row=3, column=c).value for c in range(1, 7)] == \
        ["Noise", "SNR (dB)", "seed_0", "seed_1", "Mean", "Best"]
    assert sheet.cell(row=4, column=2).value == "clean"
    assert sheet.cell(row=4, column=6).value == 94.0
    assert sheet.cell(row=7, column=3).value is None
    assert sheet.cell(row=9, column=1).value == "AVERAGE"
    assert save_eval_workbook(tmp_path / "out" / "grid.xlsx", reports).exists()
    with pytest.raises(DataError):
        create_eval_workbook({})


def make_run(run_dir, steps=2):
    config = TrainConfig(model="tenet12")
    write_loss_log(sample_history()[:steps], run_dir / LOSS_LOG)
    save_checkpoint(step_dir(run_dir, steps), {"w": np.zeros(3)}, config)
    return config


def test_discover_and_load_runs(tmp_path):
    config = make_run(tmp_path / "sweep" / "seed_0")
    make_run(tmp_path / "sweep" / "seed_1")
    write_eval_report(sample_report(), tmp_path / "sweep" / "seed_0" / EVAL_REPORT)
    frame = read_eval_report(tmp_path / "sweep" / "seed_0" / EVAL_REPORT)
    write_aggregate(aggregate_reports([frame]), tmp_path / "sweep" / AGGREGATE_REPORT)

    runs = discover_runs(tmp_path / "sweep")
    assert list(runs) == ["sweep/seed_0", "sweep/seed_1"]
    assert runs["sweep/seed_1"]["eval_report"] is None

    data = load_run(runs["sweep/seed_0"])
    assert data["error"] is None
    assert data["config"] == config
    assert data["checkpoint"].name == "step_000002"
    assert len(data["loss"]) == 2
    assert len(data["eval"]) == 5
    assert data["aggregate"] is not None

    labels = [label for label, *_ in report_downloads("sweep/seed_0", data)]
    assert labels == ["Evaluation CSV", "Evaluation XLSX", "Aggregate CSV", "Loss log CSV"]
    file_names = [name for *_, name, _ in report_downloads("sweep/seed_0", data)]
    assert file_names[0] == "sweep_seed_0_eval_report.csv"


def test_discover_runs_of_missing_root(tmp_path):
    assert discover_runs(tmp_path / "absent") == {}


def test_load_run_reports_broken_files(tmp_path):
    make_run(tmp_path / "run")
    (tmp_path / "run" / EVAL_REPORT).write_text("a,b\n1,2\n", encoding="utf-8")
    data = load_run(discover_runs(tmp_path / "run")["run"])
    assert "not an evaluation report" in data["error"]
    assert report_downloads("run", {"loss": None, "eval": None, "aggregate": None}) == []


def test_count_table_rows():
    table = count_table(ModelCounter.report("tenet12"))
    assert list(table.index) == ["inference", "training"]
    assert table.loc["inference", "parameters"] == 90604
    assert table.loc["training", "parameters"] == 90604
