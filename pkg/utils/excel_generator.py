import math
import os
import tempfile
from pathlib import Path
from typing import Dict, Optional, Union

import pandas as pd

from utils.errors import DataError


def _condition_label(snr_db: float) -> str:
    return "clean" if math.isinf(snr_db) else f"{snr_db:g}"


def _accuracy_fill(value, fills):
    if value is None or pd.isna(value):
        return fills["gray"]
    if value >= 90.0:
        return fills["green"]
    if value >= 70.0:
        return fills["yellow"]
    return fills["red"]


def create_eval_workbook(reports: Dict[str, pd.DataFrame], aggregate: Optional[pd.DataFrame] = None) -> bytes:
    """
    Lay out evaluation reports as a noise x SNR grid, one accuracy column per run.

    Args:
        reports: run name -> evaluation report (noise, snr_db, accuracy_pct)
        aggregate: Optional mean/best table over the runs

    Returns:
        The .xlsx file as bytes
    """
    from openpyxl import Workbook
    from openpyxl.styles import Alignment, Border, Font, PatternFill, Side

    if not reports:
        raise DataError("No evaluation reports to write")

    wb = Workbook()
    ws = wb.active
    ws.title = "Noise Grid"

    header_font = Font(bold=True, size=12)
    subheader_font = Font(bold=True, size=10)
    normal_font = Font(size=10)
    center_align = Alignment(horizontal="center", vertical="center")
    border = Border(
        left=Side(style='thin'), right=Side(style='thin'),
        top=Side(style='thin'), bottom=Side(style='thin')
    )
    fills = {
        "green": PatternFill(start_color="90EE90", end_color="90EE90", fill_type="solid"),
        "yellow": PatternFill(start_color="FFFF00", end_color="FFFF00", fill_type="solid"),
        "red": PatternFill(start_color="FFB6C1", end_color="FFB6C1", fill_type="solid"),
        "gray": PatternFill(start_color="F0F0F0", end_color="F0F0F0", fill_type="solid"),
        "blue": PatternFill(start_color="ADD8E6", end_color="ADD8E6", fill_type="solid"),
    }

    runs = list(reports)
    first = next(iter(reports.values()))
    conditions = list(zip(first["noise"], first["snr_db"]))
    columns = ["Noise", "SNR (dB)"] + runs
    if aggregate is not None:
        columns += ["Mean", "Best"]

    ws.cell(row=1, column=1, value="KEYWORD SPOTTING ACCURACY (%)").font = header_font
    ws.merge_cells(start_row=1, start_column=1, end_row=1, end_column=len(columns))
    for col, title in enumerate(columns, start=1):
        cell = ws.cell(row=3, column=col, value=title)
        cell.font = subheader_font
        cell.fill = fills["blue"]
        cell.alignment = center_align
        cell.border = border

    lookups = {run: {(n, s): a for n, s, a in frame[["noise", "snr_db", "accuracy_pct"]].itertuples(index=False)}
               for run, frame in reports.items()}
    aggregate_lookup = {}
    if aggregate is not None:
        aggregate_lookup = {(r.noise, r.snr_db): (r.mean_pct, r.best_pct) for r in aggregate.itertuples(index=False)}

    row = 4
    for noise, snr_db in conditions:
        values = [lookups[run].get((noise, snr_db)) for run in runs]
        if aggregate is not None:
            values += list(aggregate_lookup.get((noise, snr_db), (None, None)))
        ws.cell(row=row, column=1, value=noise).font = normal_font
        ws.cell(row=row, column=2, value=_condition_label(snr_db)).alignment = center_align
        for offset, value in enumerate(values):
            cell = ws.cell(row=row, column=3 + offset)
            cell.value = None if value is None or pd.isna(value) else round(float(value), 2)
            cell.fill = _accuracy_fill(value, fills)
            cell.alignment = center_align
            cell.border = border
        ws.cell(row=row, column=1).border = border
        ws.cell(row=row, column=2).border = border
        row += 1

    ws.cell(row=row, column=1, value="AVERAGE").font = Font(bold=True)
    averages = [reports[run]["accuracy_pct"].dropna().mean() for run in runs]
    if aggregate is not None:
        averages += [aggregate["mean_pct"].dropna().mean(), aggregate["best_pct"].dropna().mean()]
    for offset, value in enumerate(averages):
        cell = ws.cell(row=row, column=3 + offset, value=None if pd.isna(value) else round(float(value), 2))
        cell.font = Font(bold=True)
        cell.fill = _accuracy_fill(value, fills)
        cell.alignment = center_align
        cell.border = border

    ws.column_dimensions['A'].width = 22
    ws.column_dimensions['B'].width = 10

    # Save to bytes
    with tempfile.NamedTemporaryFile(suffix='.xlsx', delete=False) as tmp_file:
        wb.save(tmp_file.name)

        with open(tmp_file.name, 'rb') as f:
            excel_bytes = f.read()

        os.unlink(tmp_file.name)
        return excel_bytes


def save_eval_workbook(path: Union[str, Path], reports: Dict[str, pd.DataFrame],
                       aggregate: Optional[pd.DataFrame] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(create_eval_workbook(reports, aggregate))
    return path
