"""Deterministic and extreme-event verification scores, and report tables."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import DISPLAY_NAMES, VARIABLES

PERCENTILES = (90.0, 99.5)
RATE_EPS = 1e-6
REPORT_COLUMNS = ("lead", "variable", "mae", "mse", "sedi90", "sedi995", "n_points")


class EmptyReportError(ValueError):
    pass


def _pair(y_true, y_pred):
    a = np.asarray(y_true, dtype=np.float64)
    b = np.asarray(y_pred, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mae(y_true, y_pred) -> float:
    a, b = _pair(y_true, y_pred)
    return float(np.mean(np.abs(a - b)))


def mse(y_true, y_pred) -> float:
    a, b = _pair(y_true, y_pred)
    return float(np.mean((a - b) ** 2))


@dataclass(frozen=True)
class ExtremeThresholds:
    """``values[q]`` holds one threshold per variable for percentile ``q``."""

    values: dict

    def __post_init__(self):
        qs = sorted(self.values)
        for lo, hi in zip(qs, qs[1:]):
            if np.any(np.asarray(self.values[hi]) < np.asarray(self.values[lo])):
                raise ValueError("thresholds must be non-decreasing in the percentile")

    def to_dict(self):
        return {str(q): np.asarray(v).tolist() for q, v in self.values.items()}

    @classmethod
    def from_dict(cls, raw):
        return cls({float(q): np.array(v, dtype=np.float64) for q, v in raw.items()})


def fit_thresholds(train_series, percentiles: Sequence[float] = PERCENTILES) -> ExtremeThresholds:
    """Per-variable percentiles of the pooled training observations (linear interpolation)."""
    if not train_series:
        raise ValueError("fit_thresholds needs training data")
    pooled = np.concatenate([s.values for s in train_series], axis=1)
    if pooled.shape[1] == 0:
        raise ValueError("fit_thresholds needs training data")
    return ExtremeThresholds({float(q): np.percentile(pooled, q, axis=1) for q in percentiles})


@dataclass(frozen=True)
class ConfusionCounts:
    hits: int
    misses: int
    false_alarms: int
    correct_negatives: int

    @property
    def total(self):
        return self.hits + self.misses + self.false_alarms + self.correct_negatives

    def __add__(self, other):
        return ConfusionCounts(self.hits + other.hits, self.misses + other.misses,
                               self.false_alarms + other.false_alarms,
                               self.correct_negatives + other.correct_negatives)


def confusion(y_true, y_pred, threshold) -> ConfusionCounts:
    a, b = _pair(y_true, y_pred)
    obs = a > threshold
    fc = b > threshold
    return ConfusionCounts(int(np.sum(obs & fc)), int(np.sum(obs & ~fc)),
                           int(np.sum(~obs & fc)), int(np.sum(~obs & ~fc)))


def sedi_from_rates(hit_rate, false_alarm_rate) -> float:
    h = min(max(hit_rate, RATE_EPS), 1.0 - RATE_EPS)
    f = min(max(false_alarm_rate, RATE_EPS), 1.0 - RATE_EPS)
    lf, lh, l1f, l1h = math.log(f), math.log(h), math.log(1.0 - f), math.log(1.0 - h)
    return (lf - lh - l1f + l1h) / (lf + lh + l1f + l1h)


def sedi(counts: ConfusionCounts) -> float:
    """Symmetric extremal dependence index; NaN when no event was observed."""
    if counts.hits + counts.misses == 0:
        return math.nan
    h = counts.hits / (counts.hits + counts.misses)
    negatives = counts.false_alarms + counts.correct_negatives
    f = counts.false_alarms / negatives if negatives else 0.0
    return sedi_from_rates(h, f)


# reporting ---------------------------------------------------------------------


@dataclass
class ReportRow:
    lead: int
    variable: str
    mae: float
    mse: float
    sedi90: float
    sedi995: float
    n_points: int


def report(predictions, targets, thresholds: ExtremeThresholds, lead: int,
           variables: Sequence[str] = VARIABLES) -> list[ReportRow]:
    """Per-variable and overall scores for (n, M, H) arrays in physical units.

    The overall row is the unweighted mean over variables; its SEDI columns
    skip variables with no observed events.
    """
    true, pred = _pair(targets, predictions)
    if true.size == 0 or true.shape[0] == 0:
        raise EmptyReportError("cannot report on an empty evaluation set")
    rows = []
    for m, name in enumerate(variables):
        t, p = true[:, m], pred[:, m]
        s90 = sedi(confusion(t, p, thresholds.values[90.0][m]))
        s995 = sedi(confusion(t, p, thresholds.values[99.5][m]))
        rows.append(ReportRow(lead, name, mae(t, p), mse(t, p), s90, s995, int(t.size)))

    def nanmean(vals):
        vals = [v for v in vals if not math.isnan(v)]
        return float(np.mean(vals)) if vals else math.nan

    rows.append(ReportRow(
        lead, "overall",
        float(np.mean([r.mae for r in rows])),
        float(np.mean([r.mse for r in rows])),
        nanmean([r.sedi90 for r in rows]),
        nanmean([r.sedi995 for r in rows]),
        int(sum(r.n_points for r in rows)),
    ))
    return rows


def report_csv(rows: Sequence[ReportRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for r in rows:
        writer.writerow([r.lead, r.variable, f"{r.mae:.6f}", f"{r.mse:.6f}",
                         f"{r.sedi90:.6f}", f"{r.sedi995:.6f}", r.n_points])
    return buf.getvalue()


def report_table(rows: Sequence[ReportRow]) -> str:
    """Human-readable table; SEDI columns in percent."""
    names = dict(zip(VARIABLES, DISPLAY_NAMES))
    lines = [f"{'Lead':>4}  {'Variable':<12} {'MAE':>10} {'MSE':>12} {'SEDI 99.5th':>12} {'SEDI 90th':>10}"]
    for r in rows:
        label = names.get(r.variable, "Overall" if r.variable == "overall" else r.variable)

        def pct(v):
            return "n/a" if math.isnan(v) else f"{100 * v + 0.0:.2f}"

        lines.append(f"{r.lead:>4}  {label:<12} {r.mae:>10.3f} {r.mse:>12.3f} "
                     f"{pct(r.sedi995):>12} {pct(r.sedi90):>10}")
    lines.append("SEDI thresholds: pooled training-split percentiles.")
    return "\n".join(lines)
