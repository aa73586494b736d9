import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import pandas as pd

from components.model_counter import CountReport
from components.report_generator import (AGGREGATE_REPORT, EVAL_REPORT, LOSS_LOG, read_eval_report,
                                         read_loss_log)
from utils.checkpoint_io import CONFIG_FILE, latest_checkpoint
from utils.config_loader import load_train_config
from utils.errors import KwsError
from utils.excel_generator import create_eval_workbook

logger = logging.getLogger("run_loader")


def _is_run_dir(path: Path) -> bool:
    return (path / LOSS_LOG).exists() or latest_checkpoint(path) is not None


def discover_runs(root: Union[str, Path]) -> Dict[str, Dict]:
    """
    Find training runs under a checkpoint root.

    A run directory holds a loss log or `step_*` checkpoints. The root itself
    and its children (repeat sweeps keep runs in `seed_*` children) are
    searched.

    Returns:
        run name -> {'path', 'loss_log', 'eval_report', 'aggregate'}
    """
    root = Path(root)
    runs = {}
    if not root.is_dir():
        return runs
    candidates = [root] + sorted(d for d in root.iterdir() if d.is_dir() and not d.name.startswith("step_"))
    for candidate in candidates:
        if not _is_run_dir(candidate):
            continue
        name = root.name if candidate == root else f"{root.name}/{candidate.name}"
        runs[name] = {
            'path': candidate,
            'loss_log': candidate / LOSS_LOG if (candidate / LOSS_LOG).exists() else None,
            'eval_report': candidate / EVAL_REPORT if (candidate / EVAL_REPORT).exists() else None,
            'aggregate': root / AGGREGATE_REPORT if (root / AGGREGATE_REPORT).exists() else None,
        }
    return runs


def load_run(run: Dict) -> Dict:
    """
    Load the tables of one discovered run.

    Returns:
        Dictionary with loss, eval, aggregate frames, config and latest
        checkpoint; 'error' holds the first failure message
    """
    result = {
        'loss': None,
        'eval': None,
        'aggregate': None,
        'config': None,
        'checkpoint': latest_checkpoint(run['path']),
        'error': None,
    }
    try:
        if run.get('loss_log'):
            result['loss'] = read_loss_log(run['loss_log'])
        if run.get('eval_report'):
            result['eval'] = read_eval_report(run['eval_report'])
        if run.get('aggregate'):
            result['aggregate'] = pd.read_csv(run['aggregate'])
        checkpoint: Optional[Path] = result['checkpoint']
        if checkpoint is not None and (checkpoint / CONFIG_FILE).exists():
            result['config'] = load_train_config(checkpoint / CONFIG_FILE)
    except KwsError as e:
        logger.error(f"Error loading run {run['path']}: {e}")
        result['error'] = str(e)
    return result


def count_table(report: CountReport) -> pd.DataFrame:
    """Parameter and FLOP counts of a CountReport as a two-row table."""
    return pd.DataFrame(
        {
            "parameters": [report.inference_params, report.training_params],
            "flops": [report.inference_flops, report.training_flops],
        },
        index=["inference", "training"],
    )


def report_downloads(name: str, run_data: Dict) -> List[Tuple[str, bytes, str, str]]:
    """
    Files offered for download for one loaded run.

    Returns:
        List of (label, payload, file name, mime type)
    """
    downloads = []
    safe_name = name.replace("/", "_")
    if run_data.get('eval') is not None:
        downloads.append(("Evaluation CSV", run_data['eval'].to_csv(index=False).encode("utf-8"),
                          f"{safe_name}_{EVAL_REPORT}", "text/csv"))
        workbook = create_eval_workbook({name: run_data['eval']}, run_data.get('aggregate'))
        downloads.append(("Evaluation XLSX", workbook, f"{safe_name}_eval.xlsx",
                          "application/vnd.openxmlformats-officedocument.spreadsheetml.sheet"))
    if run_data.get('aggregate') is not None:
        downloads.append(("Aggregate CSV", run_data['aggregate'].to_csv(index=False).encode("utf-8"),
                          AGGREGATE_REPORT, "text/csv"))
    if run_data.get('loss') is not None:
        downloads.append(("Loss log CSV", run_data['loss'].to_csv(index=False).encode("utf-8"),
                          f"{safe_name}_{LOSS_LOG}", "text/csv"))
    return downloads
