"""
reports.py

Writes the report tables (prevalence, cross-tab, alignment, evaluation) as CSV and Markdown plus the run
summary JSON. Output depends only on its inputs: no timestamps, sorted JSON keys and fixed float formats,
so re-running over an unchanged cache rewrites identical files.
"""

import logging
import os
from dataclasses import dataclass, field

import pandas as pd

from utils.analytics import CrossTab, PrevalenceRow, prevalence_frame, prevalence_wide
from utils.evaluate_segments import METRIC_COLUMNS
from utils.utils import atomic_write_json, atomic_write_text

logger = logging.getLogger(__name__)

FORMATS = ("csv", "md")
FLOAT_FORMAT = "%.6f"


@dataclass
class ReportSet:
    prevalence: list[PrevalenceRow]
    cross_tab: CrossTab
    alignment: pd.DataFrame
    evaluation: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=METRIC_COLUMNS))


def _markdown(df: pd.DataFrame, index: bool = False) -> str:
    if df.empty and len(df.columns) == 0:
        return "_No rows._\n"
    return df.to_markdown(index=index, floatfmt=".4f") + "\n"


def _tables(reports: ReportSet) -> dict[str, tuple[pd.DataFrame, str]]:
    """name -> (CSV frame, Markdown text)."""
    cross = reports.cross_tab.frame()
    cross_csv = cross.reset_index() if not cross.empty else pd.DataFrame(columns=["Content category"])
    return {
        "prevalence": (prevalence_frame(reports.prevalence), _markdown(prevalence_wide(reports.prevalence))),
        "cross_tab": (cross_csv, _markdown(cross, index=True)),
        "alignment": (reports.alignment, _markdown(reports.alignment)),
        "eval": (reports.evaluation, _markdown(reports.evaluation)),
    }


def emit_reports(reports: ReportSet, out_dir: str, formats: tuple[str, ...] = FORMATS,
                 summary: dict | None = None) -> list[str]:
    """Writes `<name>.csv` / `<name>.md` for every table and `summary.json`. Returns the written paths."""
    unknown = set(formats) - set(FORMATS)
    if unknown:
        raise ValueError(f"Unknown report formats: {sorted(unknown)}")
    os.makedirs(out_dir, exist_ok=True)
    written: list[str] = []
    for name, (frame, markdown) in _tables(reports).items():
        if "csv" in formats:
            path = os.path.join(out_dir, f"{name}.csv")
            atomic_write_text(path, frame.to_csv(index=False, float_format=FLOAT_FORMAT))
            written.append(path)
        if "md" in formats:
            path = os.path.join(out_dir, f"{name}.md")
            atomic_write_text(path, markdown)
            written.append(path)

    summary = dict(summary or {})
    summary["reports"] = sorted(os.path.basename(p) for p in written)
    summary["uncategorized_videos"] = reports.cross_tab.uncategorized
    path = os.path.join(out_dir, "summary.json")
    atomic_write_json(path, summary)
    written.append(path)
    logger.info(f"Wrote {len(written)} report files to {out_dir}.")
    return written
