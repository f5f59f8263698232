# tcc/reports.py
"""
CSV outputs of a run and the multi-run summary.

    metrics.csv   one row per optimizer step: phase, epoch, step, anchor, loss terms
    report.csv    protocol, seed, labels_fraction, ablation, accuracy, mf1, f1_<k>
    summary       protocol, labels_fraction, runs, accuracy_mean, accuracy_std,
                  mf1_mean, mf1_std (percent, one decimal, half-to-even)
"""
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence

import pandas as pd

from tcc.errors import ConfigError
from tcc.utils import as_percent

logger = logging.getLogger(__name__)

METRICS_COLUMNS = ["phase", "epoch", "step", "anchor", "loss", "tc_s", "tc_w", "cc", "ce"]
REPORT_COLUMNS = ["protocol", "seed", "labels_fraction", "ablation", "accuracy", "mf1"]
SUMMARY_COLUMNS = [
    "protocol", "labels_fraction", "runs",
    "accuracy_mean", "accuracy_std", "mf1_mean", "mf1_std",
]


def _to_csv(df: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")
    return path


def write_metrics_csv(history: Iterable[Dict[str, Any]], path: Path) -> Path:
    df = pd.DataFrame(list(history))
    columns = [c for c in METRICS_COLUMNS if c in df.columns]
    return _to_csv(df.reindex(columns=columns or METRICS_COLUMNS), path)


def report_row(report) -> Dict[str, Any]:
    row = {
        "protocol": report.protocol,
        "seed": report.seed,
        "labels_fraction": report.labels_fraction,
        "ablation": report.ablation,
    }
    row.update(report.metrics.as_row())
    return row


def write_report_csv(reports: Sequence, path: Path) -> Path:
    return _to_csv(pd.DataFrame([report_row(r) for r in reports]), path)


def read_reports(run_dirs: Iterable[Path]) -> pd.DataFrame:
    frames = []
    for run_dir in run_dirs:
        path = Path(run_dir) / "report.csv"
        if not path.exists():
            raise FileNotFoundError(f"no report.csv in {run_dir}")
        frames.append(pd.read_csv(path))
    if not frames:
        raise ConfigError("no run directories given")
    return pd.concat(frames, ignore_index=True)


def _percent(value: float) -> str:
    return str(as_percent(value))


def aggregate_reports(reports: pd.DataFrame, group: bool = False) -> pd.DataFrame:
    """Mean and sample std (0 for a single run) per (protocol, labels_fraction)."""
    missing = [c for c in REPORT_COLUMNS if c not in reports.columns]
    if missing:
        raise ConfigError(f"report is missing columns {missing}")
    protocols = sorted(reports["protocol"].unique())
    if len(protocols) > 1 and not group:
        raise ConfigError(f"runs mix protocols {protocols}; pass --group to summarize each")

    rows: List[Dict[str, Any]] = []
    for (protocol, fraction), runs in reports.groupby(["protocol", "labels_fraction"], sort=True):
        std = runs[["accuracy", "mf1"]].std(ddof=1).fillna(0.0)
        rows.append({
            "protocol": protocol,
            "labels_fraction": fraction,
            "runs": len(runs),
            "accuracy_mean": _percent(runs["accuracy"].mean()),
            "accuracy_std": _percent(std["accuracy"]),
            "mf1_mean": _percent(runs["mf1"].mean()),
            "mf1_std": _percent(std["mf1"]),
        })
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def write_summary(summary: pd.DataFrame, path: Path) -> Path:
    path = _to_csv(summary, path)
    logger.info("💾 summary of %d groups written to %s", len(summary), path)
    return path
