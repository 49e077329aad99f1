"""Utility- and relevance-based metrics over reranked pages, plus reporting.

Reports are flat key-value rows with a fixed column order (utility, sctr,
per-list sctr, ndcg, map, seed, timestamp) emitted as CSV and JSON. The
timestamp honors SOURCE_DATE_EPOCH so that identical runs can produce
byte-identical tables.
"""

from __future__ import annotations

import datetime
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


def utility(clicks_per_page: list[np.ndarray]) -> float:
    """Mean over pages of the total click count."""
    if not clicks_per_page:
        return 0.0
    return float(np.mean([np.sum(c) for c in clicks_per_page]))


def sctr(probs_per_page: list[np.ndarray], lists: list[int] | None = None) -> float:
    """Mean over pages of summed click probabilities, optionally per list."""
    if not probs_per_page:
        return 0.0
    totals = []
    for probs in probs_per_page:
        if lists is None:
            totals.append(probs.sum())
        else:
            totals.append(probs[lists, :].sum())
    return float(np.mean(totals))


def ndcg(relevance: list[int] | np.ndarray) -> float:
    """Binary-gain nDCG with log2(rank+1) discount; 0 when nothing is relevant."""
    rel = np.asarray(relevance, dtype=np.float64)
    if rel.size == 0 or rel.sum() == 0:
        return 0.0
    ranks = np.arange(1, rel.size + 1)
    dcg = float((rel / np.log2(ranks + 1)).sum())
    ideal = np.sort(rel)[::-1]
    idcg = float((ideal / np.log2(ranks + 1)).sum())
    return dcg / idcg


def average_precision(relevance: list[int] | np.ndarray) -> float:
    """Mean precision@k over the relevant ranks; 0 when nothing is relevant."""
    rel = np.asarray(relevance, dtype=np.float64)
    if rel.size == 0 or rel.sum() == 0:
        return 0.0
    hits = np.cumsum(rel)
    ranks = np.arange(1, rel.size + 1)
    return float((rel * hits / ranks).sum() / rel.sum())


@dataclass
class MetricReport:
    """One evaluated system on one page set."""

    utility: float
    sctr: float
    sctr_per_list: dict[str, float]
    ndcg: float
    map: float
    seed: int

    def row(self) -> dict[str, float | int]:
        out: dict[str, float | int] = {"utility": self.utility, "sctr": self.sctr}
        for role, value in self.sctr_per_list.items():
            out[f"sctr_{role}"] = value
        out["ndcg"] = self.ndcg
        out["map"] = self.map
        out["seed"] = self.seed
        return out


def compute_report(clicks: list[np.ndarray], probs: list[np.ndarray],
                   relevance: list[list[list[int]]], roles: tuple[str, ...],
                   seed: int) -> MetricReport:
    """Aggregate page-level arrays into one report.

    clicks/probs: per page (n, m) arrays; relevance: per page, per list, the
    binary labels in display order (real slots only).
    """
    per_list = {role: sctr(probs, lists=[i]) for i, role in enumerate(roles)}
    ndcg_vals, ap_vals = [], []
    for page_rel in relevance:
        for rel in page_rel:
            ndcg_vals.append(ndcg(rel))
            ap_vals.append(average_precision(rel))
    return MetricReport(
        utility=utility(clicks),
        sctr=sctr(probs),
        sctr_per_list=per_list,
        ndcg=float(np.mean(ndcg_vals)) if ndcg_vals else 0.0,
        map=float(np.mean(ap_vals)) if ap_vals else 0.0,
        seed=seed,
    )


# -- report tables -------------------------------------------------------------


def report_timestamp() -> str:
    """ISO timestamp; fixed by SOURCE_DATE_EPOCH when set (reproducible runs)."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        moment = datetime.datetime.fromtimestamp(int(epoch), datetime.timezone.utc)
    else:
        moment = datetime.datetime.now(datetime.timezone.utc)
    return moment.strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass
class ReportTable:
    """Rows keyed by system/variant name, shared column order."""

    roles: tuple[str, ...]
    rows: list[dict] = field(default_factory=list)

    def columns(self) -> list[str]:
        return (["system", "utility", "sctr"]
                + [f"sctr_{role}" for role in self.roles]
                + ["ndcg", "map", "seed", "timestamp"])

    def add(self, system: str, report: MetricReport, timestamp: str | None = None) -> None:
        row = {"system": system}
        row.update(report.row())
        row["timestamp"] = timestamp if timestamp is not None else report_timestamp()
        missing = set(self.columns()) - set(row)
        if missing:
            raise DataError(f"report row missing columns: {sorted(missing)}")
        self.rows.append(row)

    def add_aggregate(self, system: str, reports: list[MetricReport],
                      timestamp: str | None = None) -> None:
        """Append mean and std rows over seeds for one system."""
        ts = timestamp if timestamp is not None else report_timestamp()
        keys = [c for c in self.columns() if c not in ("system", "seed", "timestamp")]
        for label, reducer in (("mean", np.mean), ("std", np.std)):
            row = {"system": system, "seed": label, "timestamp": ts}
            for key in keys:
                row[key] = float(reducer([r.row()[key] for r in reports]))
            self.rows.append(row)

    def to_csv(self) -> str:
        cols = self.columns()
        lines = [",".join(cols)]
        for row in self.rows:
            lines.append(",".join(_format_cell(row[c]) for c in cols))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        cols = self.columns()
        payload = [{c: row[c] for c in cols} for row in self.rows]
        return json.dumps(payload, indent=2) + "\n"


def _format_cell(value) -> str:
    if isinstance(value, float):
        if not math.isfinite(value):
            raise DataError(f"non-finite metric value {value}")
        return f"{value:.6f}"
    return str(value)
