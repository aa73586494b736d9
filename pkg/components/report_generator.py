"""
CSV and text reports: the training loss log, evaluation reports and their
aggregation over repeated runs.
"""
import logging
import math
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, Sequence, Union

import numpy as np
import pandas as pd

from utils.errors import DataError

if TYPE_CHECKING:
    from components.evaluator import EvalReport
    from components.losses import LossReport

logger = logging.getLogger("report_generator")

LOSS_COLUMNS = ["step", "lr", "l_ce", "l_m", "l_i", "l_o", "l_total"]
EVAL_COLUMNS = ["noise", "snr_db", "accuracy_pct"]
AGGREGATE_COLUMNS = ["noise", "snr_db", "mean_pct", "best_pct"]
CLEAN = "clean"

LOSS_LOG = "loss_log.csv"
EVAL_REPORT = "eval_report.csv"
AGGREGATE_REPORT = "eval_aggregate.csv"


def write_loss_log(history: Sequence["LossReport"], path: Union[str, Path]) -> Path:
    """One row per step; disabled loss terms are left empty."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([report.as_row() for report in history], columns=LOSS_COLUMNS)
    frame.to_csv(path, index=False)
    return path


def read_loss_log(path: Union[str, Path]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError:
        raise DataError(f"Loss log not found: {path}")
    missing = [c for c in LOSS_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"{path} lacks loss log columns: {', '.join(missing)}")
    return frame


def eval_report_frame(report: "EvalReport") -> pd.DataFrame:
    return pd.DataFrame(report.rows(), columns=EVAL_COLUMNS)


def write_eval_report(report: "EvalReport", path: Union[str, Path]) -> Path:
    """CSV with header `noise,snr_db,accuracy_pct`; the clean row has snr_db=inf, absent cells are empty."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    eval_report_frame(report).to_csv(path, index=False)
    logger.info(f"Wrote evaluation report {path}")
    return path


def read_eval_report(path: Union[str, Path]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError:
        raise DataError(f"Evaluation report not found: {path}")
    if list(frame.columns) != EVAL_COLUMNS:
        raise DataError(f"{path} is not an evaluation report (columns {list(frame.columns)})")
    frame["snr_db"] = frame["snr_db"].astype(float)
    return frame


def average_accuracy(frame: pd.DataFrame) -> float:
    """Mean over the conditions present in the report."""
    present = frame["accuracy_pct"].dropna()
    return float(present.mean()) if len(present) else float("nan")


def aggregate_reports(frames: Sequence[pd.DataFrame]) -> pd.DataFrame:
    """
    Combine per-run reports into mean and best accuracy per condition.

    Args:
        frames: Evaluation reports of the repeated runs

    Returns:
        DataFrame with columns noise, snr_db, mean_pct, best_pct in the
        condition order of the first report
    """
    if not frames:
        raise DataError("No evaluation reports to aggregate")
    stacked = pd.concat(frames, ignore_index=True)
    grouped = stacked.groupby(["noise", "snr_db"], sort=False)["accuracy_pct"]
    aggregate = grouped.agg(mean_pct="mean", best_pct="max").reset_index()
    return aggregate[AGGREGATE_COLUMNS]


def write_aggregate(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    frame.to_csv(path, index=False)
    logger.info(f"Wrote aggregate report {path}")
    return path


def _snr_label(snr_db: float) -> str:
    return "clean" if math.isinf(snr_db) else f"{snr_db:g} dB"


def _pct(value: float) -> str:
    return "absent" if value is None or np.isnan(value) else f"{value:6.2f}%"


def format_eval_summary(frame: pd.DataFrame, title: str = "EVALUATION REPORT") -> str:
    """Fixed-width text rendering of an evaluation report."""
    lines: List[str] = ["=" * 50, title, "=" * 50]
    current = None
    for row in frame.itertuples(index=False):
        if row.noise != current:
            if current is not None:
                lines.append("-" * 50)
            current = row.noise
        lines.append(f"{row.noise:<20} {_snr_label(row.snr_db):>10} {_pct(row.accuracy_pct):>12}")
    lines.append("=" * 50)
    lines.append(f"{'AVERAGE':<31} {_pct(average_accuracy(frame)):>12}")
    return "\n".join(lines)


def format_aggregate_summary(frame: pd.DataFrame, runs: int) -> str:
    lines = ["=" * 60, f"AGGREGATE OVER {runs} RUNS", "=" * 60,
             f"{'noise':<20} {'snr':>10} {'mean':>12} {'best':>12}", "-" * 60]
    for row in frame.itertuples(index=False):
        lines.append(f"{row.noise:<20} {_snr_label(row.snr_db):>10} {_pct(row.mean_pct):>12} {_pct(row.best_pct):>12}")
    lines.append("-" * 60)
    mean_avg = frame["mean_pct"].dropna().mean()
    best_avg = frame["best_pct"].dropna().mean()
    lines.append(f"{'AVERAGE':<31} {_pct(mean_avg):>12} {_pct(best_avg):>12}")
    return "\n".join(lines)


def loss_curves(frame: pd.DataFrame) -> pd.DataFrame:
    """Loss columns indexed by step, dropping terms that were never computed."""
    curves = frame.set_index("step")[[c for c in LOSS_COLUMNS if c.startswith("l_")]]
    return curves.dropna(axis=1, how="all")


def eval_grid(frame: pd.DataFrame) -> pd.DataFrame:
    """Noise sets as rows and SNR levels as columns, clean first."""
    labelled = frame.assign(condition=frame["snr_db"].map(_snr_label))
    grid = labelled.pivot(index="noise", columns="condition", values="accuracy_pct")
    return grid.reindex(index=list(dict.fromkeys(labelled["noise"])),
                        columns=list(dict.fromkeys(labelled["condition"])))


def run_summary(frames: Dict[str, pd.DataFrame]) -> pd.DataFrame:
    """Average accuracy per run name."""
    return pd.DataFrame({"run": list(frames), "average_pct": [average_accuracy(f) for f in frames.values()]})
