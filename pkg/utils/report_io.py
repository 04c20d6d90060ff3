# utils/report_io.py
"""
CSV and spreadsheet exports of study reports, metrics and slices.
"""
import logging
import os

import numpy as np
import pandas as pd
from openpyxl import Workbook

logger = logging.getLogger(__name__)

DEFAULT_OUT = "data/exports"

CONVERGENCE_COLUMNS = ["level", "err_rho", "err_c", "slope_rho", "slope_c"]
BENCH_COLUMNS = ["method", "n", "P", "seconds", "steps"]
LOSS_COLUMNS = ["epoch", "mean_mse"]
COMPARE_COLUMNS = ["time", "rel_l2_rho", "rel_l2_c"]
METRIC_COLUMNS = ["time", "particles", "mass", "rho_min", "rho_max", "c_min", "c_max",
                  "var_x", "var_y", "var_z", "center_fraction", "ring_distance"]


def ensure_out_dir(directory):
    if directory and not os.path.exists(directory):
        os.makedirs(directory)


def write_rows(rows, columns, path) -> pd.DataFrame:
    """Write dict rows as a CSV with a header row; returns the frame."""
    ensure_out_dir(os.path.dirname(str(path)))
    df = pd.DataFrame(list(rows), columns=columns)
    df.to_csv(path, index=False, float_format="%.10g")
    logger.info("wrote %d rows to %s", len(df), path)
    return df


def write_convergence(report, path) -> pd.DataFrame:
    return write_rows(report.rows(), CONVERGENCE_COLUMNS, path)


def write_bench(report, path) -> pd.DataFrame:
    return write_rows(report.rows, BENCH_COLUMNS, path)


def write_loss_curve(curve, path) -> pd.DataFrame:
    rows = [{"epoch": i + 1, "mean_mse": loss} for i, loss in enumerate(curve)]
    return write_rows(rows, LOSS_COLUMNS, path)


def write_metrics(rows, path) -> pd.DataFrame:
    return write_rows(rows, METRIC_COLUMNS, path)


def write_comparison(rows, path) -> pd.DataFrame:
    return write_rows(rows, COMPARE_COLUMNS, path)


def write_slice(values, path):
    """A 2D slice as a headerless grid of numbers."""
    ensure_out_dir(os.path.dirname(str(path)))
    pd.DataFrame(np.asarray(values)).to_csv(path, index=False, header=False, float_format="%.10g")


def export_xlsx(sheets, path):
    """
    One worksheet per (title, DataFrame) pair.
    """
    wb = Workbook()
    ws = wb.active
    for i, (title, df) in enumerate(sheets):
        if i > 0:
            ws = wb.create_sheet()
        # sheet titles are capped at 31 characters
        ws.title = title[:31]
        ws.append(list(df.columns))
        for row in df.itertuples(index=False):
            ws.append([None if pd.isna(v) else (v.item() if hasattr(v, "item") else v) for v in row])
    ensure_out_dir(os.path.dirname(str(path)))
    wb.save(path)
    logger.info("exported %d sheets to %s", len(sheets), path)
