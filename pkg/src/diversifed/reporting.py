"""Per-round CSV metrics and the end-of-run JSON summary.

CSV columns: ``round, mean_acc, acc_client_0..N-1, loss_client_0..N-1``,
numbers fixed at 6 decimals.  The header goes out with the first row and every
row is flushed immediately, so an interrupted run still leaves a valid file.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .orchestrator import RoundRecord, RunReport


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.6f}"


class MetricsSink:
    def __init__(self, csv_path: Optional[str] = None, json_path: Optional[str] = None):
        self.csv_path = Path(csv_path) if csv_path else None
        self.json_path = Path(json_path) if json_path else None
        self._fh = None
        self._writer = None
        self._last_round = -1

    def _open(self, n_clients: int):
        try:
            self.csv_path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.csv_path, "w", newline="")
        except OSError as exc:
            raise OSError(f"cannot open metrics CSV {self.csv_path}: {exc}") from exc
        self._writer = csv.writer(self._fh)
        self._writer.writerow(["round", "mean_acc"]
                              + [f"acc_client_{i}" for i in range(n_clients)]
                              + [f"loss_client_{i}" for i in range(n_clients)])

    def emit_round(self, record: RoundRecord) -> None:
        if record.round <= self._last_round:
            raise ValueError(f"round {record.round} arrived after round {self._last_round}")
        self._last_round = record.round
        if self.csv_path is None:
            return
        if self._writer is None:
            self._open(len(record.accuracies))
        try:
            self._writer.writerow([record.round, _fmt(record.mean_accuracy)]
                                  + [_fmt(a) for a in record.accuracies]
                                  + [_fmt(v) for v in record.losses])
            self._fh.flush()
        except OSError as exc:
            raise OSError(f"writing {self.csv_path} failed: {exc}") from exc

    __call__ = emit_round

    def emit_summary(self, report: RunReport) -> dict:
        summary = summarize(report)
        if self.json_path is not None:
            try:
                self.json_path.parent.mkdir(parents=True, exist_ok=True)
                self.json_path.write_text(json.dumps(summary, indent=2))
            except OSError as exc:
                raise OSError(f"writing summary {self.json_path} failed: {exc}") from exc
        return summary

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def summarize(report: RunReport) -> dict:
    return {
        "method": report.method,
        "config": report.config,
        "best_mean_accuracy": report.best_mean_accuracy,
        "best_round": report.best_round,
        "final_mean_accuracy": report.final_mean_accuracy,
        "per_client_best": report.per_client_best,
        "seed": report.config.get("seed"),
        "wall_clock_seconds": report.wall_clock_seconds,
    }


def read_csv(path) -> list[RoundRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n = sum(1 for h in header if h.startswith("acc_client_"))
    records = []
    for row in body:
        accs = [float(x) for x in row[2:2 + n]]
        losses = [float(x) for x in row[2 + n:2 + 2 * n]]
        records.append(RoundRecord(int(row[0]), accs, float(row[1]), losses, []))
    return records


def aggregate_summaries(summaries: Iterable[dict], key: str = "best_mean_accuracy") -> dict:
    """Mean and population std of one summary field across runs (e.g. seeds)."""
    values = np.array([s[key] for s in summaries], dtype=np.float64)
    return {"mean": float(values.mean()), "std": float(values.std()), "n": int(values.size),
            "values": values.tolist()}


def format_mean_std(agg: dict, scale: float = 100.0) -> str:
    return f"{agg['mean'] * scale:.2f} ± {agg['std'] * scale:.2f}"
