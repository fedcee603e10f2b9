"""Measurement protocols: per-metric AUC-ROC, group summaries, CSV reports.

AUC orientation: the positive class is "adversarial" and higher scores must
mean more adversarial, so confidence-gap scores are negated before ranking
while the dispersion/entropy metrics are used as-is.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DatasetError
from .uncertainty import PatternLabel, PatternThresholds, UncertaintyProfile, categorize_values

__all__ = [
    "ScoredSample", "SummaryRow", "ReportRow", "METRIC_NAMES",
    "auc_roc", "metric_auc_scores", "summarize",
    "emit_report", "read_report", "emit_summary",
]

METRIC_NAMES = ("pcs", "vr", "vro", "pe", "mi")

# metrics whose raw value decreases for adversarial inputs get negated scores
NEGATED_METRICS = ("pcs",)

REPORT_COLUMNS = ("id", "group", "label_true", "label_pred", "is_adversarial",
                  "pcs", "vr", "vro", "pe", "mi", "pattern")


@dataclass
class ScoredSample:
    sample_id: str
    is_adversarial: bool
    scores: dict[str, float]


@dataclass
class SummaryRow:
    group: str
    count: int
    means: dict[str, float]
    variances: dict[str, float]


def auc_roc(positives, negatives) -> float:
    """Probability a random positive outranks a random negative (ties get
    half credit); computed with one sort via midranks."""
    pos = np.asarray(positives, dtype=np.float64)
    neg = np.asarray(negatives, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ConfigError("auc_roc needs non-empty positive and negative score lists")
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
        raise ConfigError("auc_roc scores must be finite")

    scores = np.concatenate([pos, neg])
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    rank_sum_pos = float(ranks[:pos.size].sum())
    u_stat = rank_sum_pos - pos.size * (pos.size + 1) / 2.0
    return u_stat / (pos.size * neg.size)


def metric_auc_scores(samples: list[ScoredSample]) -> dict[str, float]:
    """AUC per metric over a mixed benign/adversarial sample list."""
    pos = [s for s in samples if s.is_adversarial]
    neg = [s for s in samples if not s.is_adversarial]
    if not pos or not neg:
        raise ConfigError("need both adversarial and benign samples to score")
    out = {}
    for name in METRIC_NAMES:
        sign = -1.0 if name in NEGATED_METRICS else 1.0
        out[name] = auc_roc([sign * s.scores[name] for s in pos],
                            [sign * s.scores[name] for s in neg])
    return out


def summarize(groups: dict[str, list[UncertaintyProfile]]) -> list[SummaryRow]:
    """Mean and population variance of each metric, per group."""
    rows = []
    for name, profiles in groups.items():
        if not profiles:
            raise DatasetError(f"group {name!r} is empty")
        means, variances = {}, {}
        for metric in METRIC_NAMES:
            values = np.array([getattr(p, metric) for p in profiles], dtype=np.float64)
            means[metric] = float(values.mean())
            variances[metric] = float(values.var())  # population variance
        rows.append(SummaryRow(group=name, count=len(profiles), means=means,
                               variances=variances))
    return rows


@dataclass
class ReportRow:
    sample_id: str
    group: str
    label_true: int
    label_pred: int
    is_adversarial: bool
    profile: UncertaintyProfile
    pattern: PatternLabel

    @classmethod
    def from_profile(cls, sample_id: str, group: str, label_true: int,
                     prof: UncertaintyProfile,
                     thresholds: PatternThresholds = PatternThresholds()) -> "ReportRow":
        return cls(
            sample_id=sample_id,
            group=group,
            label_true=int(label_true),
            label_pred=prof.original_label,
            is_adversarial=prof.original_label != int(label_true),
            profile=prof,
            pattern=categorize_values(prof.pcs, prof.vro, thresholds),
        )


def _fmt(value: float) -> str:
    return repr(float(value))  # shortest round-trip representation


def emit_report(rows: list[ReportRow], path: str) -> None:
    """Per-sample metric report; floats are printed with full round-trip
    precision so re-reading reproduces them exactly."""
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            p = row.profile
            writer.writerow([
                row.sample_id, row.group, row.label_true, row.label_pred,
                int(row.is_adversarial),
                _fmt(p.pcs), _fmt(p.vr), _fmt(p.vro), _fmt(p.pe), _fmt(p.mi),
                row.pattern.value,
            ])
    os.replace(tmp, path)


def read_report(path: str) -> list[dict]:
    """Parse a metric report back into plain dicts (floats exact)."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != REPORT_COLUMNS:
            raise DatasetError(f"{path}: unexpected report header {header}")
        out = []
        for row in reader:
            record = dict(zip(REPORT_COLUMNS, row))
            record["label_true"] = int(record["label_true"])
            record["label_pred"] = int(record["label_pred"])
            record["is_adversarial"] = bool(int(record["is_adversarial"]))
            for metric in METRIC_NAMES:
                record[metric] = float(record[metric])
            out.append(record)
        return out


def emit_summary(rows: list[SummaryRow], path: str) -> None:
    """Group summary CSV (variance column is the population variance)."""
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as f:
        writer = csv.writer(f)
        header = ["group", "count"]
        for metric in METRIC_NAMES:
            header += [f"{metric}_mean", f"{metric}_var"]
        writer.writerow(header)
        for row in rows:
            record = [row.group, row.count]
            for metric in METRIC_NAMES:
                record += [_fmt(row.means[metric]), _fmt(row.variances[metric])]
            writer.writerow(record)
    os.replace(tmp, path)
