# services/reports.py
"""
Markdown / spreadsheet / plot reports over eval JSON and GRPO curves.
"""
from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd
from marshmallow import INCLUDE, Schema, ValidationError, fields
from openpyxl import Workbook

from errors import ReportParseError
from services.evaluation import METRICS, aggregate

log = logging.getLogger(__name__)

COLUMNS = ("clip_id",) + METRICS


class ClipRowSchema(Schema):
    class Meta:
        unknown = INCLUDE

    clip_id = fields.String(required=True)
    n_ref = fields.Integer(load_default=None, allow_none=True)
    wer = fields.Float(required=True)
    S = fields.Integer(required=True)
    D = fields.Integer(required=True)
    I = fields.Integer(required=True)
    r_con = fields.Float(required=True)
    r_mel = fields.Float(required=True)
    fpc = fields.Float(required=True, allow_none=True)
    sim_stub = fields.Float(load_default=None, allow_none=True)


class EvalSchema(Schema):
    class Meta:
        unknown = INCLUDE

    task = fields.String(load_default="synthesis")
    clips = fields.List(fields.Nested(ClipRowSchema), required=True)


# --------------------------------------------------
# Inputs
# --------------------------------------------------
def load_eval(path) -> Dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"eval file not found: {path}")
    try:
        return EvalSchema().load(json.loads(path.read_text()))
    except (json.JSONDecodeError, ValidationError) as exc:
        raise ReportParseError(f"{path}: {exc}") from exc


def load_curves(path) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"curves file not found: {path}")
    rows = []
    for n, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ReportParseError(f"{path}:{n}: {exc}") from exc
    df = pd.DataFrame(rows)
    if len(df) and "step" not in df:
        raise ReportParseError(f"{path}: curve rows need a 'step' field")
    return df


def _fmt(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "n/a"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def _table(header: List[str], rows: List[List]) -> List[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(_fmt(v) for v in row) + " |" for row in rows]
    return lines


# --------------------------------------------------
# Markdown
# --------------------------------------------------
def summary_rows(current: Dict, baseline: Optional[Dict] = None) -> List[List]:
    """(metric, value[, baseline, delta]) rows; delta = current - baseline."""
    agg = aggregate(current["clips"])
    base = aggregate(baseline["clips"]) if baseline is not None else None
    rows = []
    for key in METRICS + ("corpus_wer",):
        if base is None:
            rows.append([key, agg[key]])
            continue
        a, b = agg[key], base[key]
        delta = a - b if a is not None and b is not None else None
        rows.append([key, b, a, delta])
    return rows


def build_report(current: Dict, baseline: Optional[Dict] = None, curves: Optional[pd.DataFrame] = None) -> str:
    lines = [f"# Evaluation report ({current.get('task', 'synthesis')})", ""]
    lines.append(f"Clips: {len(current['clips'])}")
    lines.append("")
    lines.append("## Aggregates")
    lines.append("")
    if baseline is None:
        lines += _table(["metric", "mean"], summary_rows(current))
    else:
        lines += _table(["metric", "baseline", "current", "delta"], summary_rows(current, baseline))
    lines.append("")
    lines.append("`sim_stub` is a mean-feature cosine, not a speaker-embedding similarity.")
    lines.append("")

    lines.append("## Per clip")
    lines.append("")
    lines += _table(list(COLUMNS), [[row.get(c) for c in COLUMNS] for row in current["clips"]])
    lines.append("")

    if curves is not None and len(curves):
        last = curves.iloc[-1]
        lines.append("## GRPO curves")
        lines.append("")
        cols = [c for c in ("mean_reward", "mean_r_con", "mean_r_mel", "mean_kl") if c in curves]
        lines += _table(
            ["", *cols],
            [["first", *[float(curves.iloc[0][c]) for c in cols]], ["last", *[float(last[c]) for c in cols]]],
        )
        lines.append("")
    return "\n".join(lines)


# --------------------------------------------------
# Excel
# --------------------------------------------------
def export_excel(output_path, current: Dict, baseline: Optional[Dict] = None) -> None:
    wb = Workbook()
    ws = wb.active
    ws.title = "Per clip"
    ws.append(list(COLUMNS))
    for row in current["clips"]:
        ws.append([row.get(c) for c in COLUMNS])

    ws = wb.create_sheet("Aggregates")
    if baseline is None:
        ws.append(["metric", "mean"])
    else:
        ws.append(["metric", "baseline", "current", "delta"])
    for row in summary_rows(current, baseline):
        ws.append(row)

    for sheet in wb.worksheets:
        for col in sheet.columns:
            width = max(len(str(c.value)) if c.value is not None else 0 for c in col)
            sheet.column_dimensions[col[0].column_letter].width = min(width + 2, 40)

    wb.save(output_path)


# --------------------------------------------------
# Plots
# --------------------------------------------------
def plot_curves(curves: pd.DataFrame, output_path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4))
    for col in ("mean_reward", "mean_r_con", "mean_r_mel"):
        if col in curves:
            ax.plot(curves["step"], curves[col], label=col)
    ax.set_xlabel("step")
    ax.set_ylabel("reward")
    ax.legend()
    fig.tight_layout()
    fig.savefig(output_path, dpi=100)
    plt.close(fig)
    log.info("wrote %s", output_path)
