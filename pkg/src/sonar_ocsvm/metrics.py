"""Online error accounting, margin traces, aggregation and file output."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import ConfigError, InputError, as_matrix
from .sonar import NORMAL, OUTLIER

__all__ = [
    "MetricTrace",
    "AggregateTrace",
    "record",
    "aggregate",
    "smooth",
    "offline_eval",
    "write_trace_csv",
    "read_trace_csv",
    "write_sidecar",
    "DEFAULT_SMOOTHING_WINDOW",
    "CONVENTIONS",
]

DEFAULT_SMOOTHING_WINDOW = 200
CSV_COLUMNS = ("index", "type1_cum", "type2_cum", "margin", "restarted")
CONVENTIONS = {
    "outlier_rule": "<w, z(x)> < rho * (1 - epsilon)",
    "unlabeled_events": "counted as normal",
    "f1_positive_class": OUTLIER,
    "std": "population",
    "undefined_margin": "missing (||w|| <= 1e-12)",
}


@dataclass
class MetricTrace:
    """Per-step cumulative online errors.

    Absent ratios (no normal / no outlier seen yet) and undefined margins are
    stored as NaN and written as empty CSV cells.
    """

    index: list = field(default_factory=list)
    type1_cum: list = field(default_factory=list)
    type2_cum: list = field(default_factory=list)
    margin: list = field(default_factory=list)
    restarted: list = field(default_factory=list)
    cpd_stats: list | None = None
    n_normal: int = 0
    n_outlier: int = 0
    type1_mistakes: int = 0
    type2_mistakes: int = 0

    def __len__(self):
        return len(self.index)

    @property
    def restart_indices(self):
        return [i for i, r in zip(self.index, self.restarted) if r]

    def arrays(self):
        return {
            "index": np.asarray(self.index, dtype=np.int64),
            "type1_cum": np.asarray(self.type1_cum, dtype=float),
            "type2_cum": np.asarray(self.type2_cum, dtype=float),
            "margin": np.asarray(self.margin, dtype=float),
            "restarted": np.asarray(self.restarted, dtype=bool),
        }

    @classmethod
    def from_decisions(cls, decisions, labels=None, margins=None, restarted=None):
        """Build a trace from raw logs in one shot.

        ``decisions`` holds True for outlier calls; ``labels`` uses
        ``NORMAL``/``OUTLIER``/None per row.
        """
        flagged = np.asarray(decisions, dtype=bool)
        n = flagged.shape[0]
        if labels is None:
            is_out = np.zeros(n, dtype=bool)
        else:
            is_out = np.array([lab == OUTLIER for lab in labels], dtype=bool)
        n_norm = np.cumsum(~is_out)
        n_out = np.cumsum(is_out)
        m1 = np.cumsum(flagged & ~is_out)
        m2 = np.cumsum(~flagged & is_out)
        with np.errstate(invalid="ignore", divide="ignore"):
            t1 = np.where(n_norm > 0, m1 / np.maximum(n_norm, 1), np.nan)
            t2 = np.where(n_out > 0, m2 / np.maximum(n_out, 1), np.nan)
        margins = np.full(n, np.nan) if margins is None else np.array(
            [np.nan if m is None else m for m in margins], dtype=float)
        restarted = np.zeros(n, dtype=bool) if restarted is None else np.asarray(restarted, bool)
        return cls(
            index=list(range(n)), type1_cum=t1.tolist(), type2_cum=t2.tolist(),
            margin=margins.tolist(), restarted=restarted.tolist(),
            n_normal=int(n_norm[-1]) if n else 0, n_outlier=int(n_out[-1]) if n else 0,
            type1_mistakes=int(m1[-1]) if n else 0, type2_mistakes=int(m2[-1]) if n else 0,
        )


def record(trace: MetricTrace, event, decision, margin_value, restarted=False, cpd_stats=None):
    """Append one online decision; mutates and returns ``trace``."""
    if decision not in (NORMAL, OUTLIER):
        raise InputError(f"decision must be {NORMAL!r} or {OUTLIER!r}, got {decision!r}")
    label = getattr(event, "label", None)
    if label == OUTLIER:
        trace.n_outlier += 1
        trace.type2_mistakes += decision == NORMAL
    else:
        trace.n_normal += 1
        trace.type1_mistakes += decision == OUTLIER
    trace.index.append(getattr(event, "index", len(trace.index)))
    trace.type1_cum.append(trace.type1_mistakes / trace.n_normal if trace.n_normal else math.nan)
    trace.type2_cum.append(trace.type2_mistakes / trace.n_outlier if trace.n_outlier else math.nan)
    trace.margin.append(math.nan if margin_value is None else float(margin_value))
    trace.restarted.append(bool(restarted))
    if cpd_stats is not None:
        if trace.cpd_stats is None:
            trace.cpd_stats = [None] * (len(trace.index) - 1)
        trace.cpd_stats.append(cpd_stats)
    elif trace.cpd_stats is not None:
        trace.cpd_stats.append(None)
    return trace


# -- aggregation -------------------------------------------------------------

@dataclass
class AggregateTrace:
    mean: dict
    std: dict
    count: dict
    n_runs: int
    restarts: list

    @property
    def mean_restarts(self):
        return float(np.mean(self.restarts)) if self.restarts else 0.0


def _masked_stats(stack):
    valid = ~np.isnan(stack)
    count = valid.sum(axis=0)
    filled = np.where(valid, stack, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = filled.sum(axis=0) / count
        dev = np.where(valid, stack - mean, 0.0)
        std = np.sqrt((dev * dev).sum(axis=0) / count)
    return mean, std, count


def aggregate(runs) -> AggregateTrace:
    """Pointwise mean and population std across runs, skipping missing values."""
    runs = list(runs)
    if not runs:
        raise InputError("aggregate needs at least one run")
    lengths = {len(r) for r in runs}
    if len(lengths) != 1:
        raise InputError(f"runs have different lengths: {sorted(lengths)}")
    mean, std, count = {}, {}, {}
    for key in ("type1_cum", "type2_cum", "margin"):
        stack = np.vstack([np.asarray(getattr(r, key), dtype=float) for r in runs])
        mean[key], std[key], count[key] = _masked_stats(stack)
    return AggregateTrace(mean=mean, std=std, count=count, n_runs=len(runs),
                          restarts=[sum(r.restarted) for r in runs])


def smooth(series, window=DEFAULT_SMOOTHING_WINDOW):
    """Centered rolling mean whose window shrinks at the edges; NaNs are skipped."""
    if int(window) != window or window < 1:
        raise ConfigError(f"window must be a positive integer, got {window!r}")
    x = np.asarray(series, dtype=float)
    if window == 1 or x.size == 0:
        return x.copy()
    valid = ~np.isnan(x)
    csum = np.concatenate([[0.0], np.cumsum(np.where(valid, x, 0.0))])
    ccnt = np.concatenate([[0], np.cumsum(valid)])
    idx = np.arange(x.size)
    lo = np.maximum(idx - (window - 1) // 2, 0)
    hi = np.minimum(idx + window // 2 + 1, x.size)
    cnt = ccnt[hi] - ccnt[lo]
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (csum[hi] - csum[lo]) / cnt
    out[cnt == 0] = np.nan
    # guard against float drift past the input range
    if valid.any():
        out = np.clip(out, np.nanmin(x), np.nanmax(x))
    return out


# -- offline evaluation ------------------------------------------------------

def offline_eval(state, X, labels, epsilon=0.0):
    """Classify every row with a fixed iterate.

    Returns a dict with ``type1``, ``type2`` and ``f1`` (outlier = positive);
    a key is None when its class is missing from ``labels``.
    """
    X = as_matrix(X, state.w.shape[0])
    labels = list(labels)
    if len(labels) != X.shape[0]:
        raise InputError(f"{len(labels)} labels for {X.shape[0]} rows")
    if not labels:
        raise InputError("offline_eval needs a nonempty dataset")
    flagged = X @ state.w < state.rho * (1.0 - epsilon)
    is_out = np.array([lab == OUTLIER for lab in labels], dtype=bool)
    n_out = int(is_out.sum())
    n_norm = len(labels) - n_out
    tp = int((flagged & is_out).sum())
    fp = int((flagged & ~is_out).sum())
    fn = n_out - tp
    return {
        "type1": fp / n_norm if n_norm else None,
        "type2": fn / n_out if n_out else None,
        "f1": 2 * tp / (2 * tp + fp + fn) if n_out and n_norm else None,
    }


# -- files -------------------------------------------------------------------

def _cell(v):
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def write_trace_csv(trace: MetricTrace, path):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for i, t1, t2, m, r in zip(trace.index, trace.type1_cum, trace.type2_cum,
                                   trace.margin, trace.restarted):
            writer.writerow([i, _cell(t1), _cell(t2), _cell(m), int(r)])


def read_trace_csv(path) -> MetricTrace:
    trace = MetricTrace()
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            trace.index.append(int(row["index"]))
            for key in ("type1_cum", "type2_cum", "margin"):
                getattr(trace, key).append(float(row[key]) if row[key] else math.nan)
            trace.restarted.append(row["restarted"] == "1")
    return trace


def write_sidecar(path, *, config, seeds, detected_changes=(), smoothing_window=DEFAULT_SMOOTHING_WINDOW,
                  extra=None):
    payload = {
        "config": config,
        "seeds": seeds,
        "smoothing_window": smoothing_window,
        "detected_changes": [int(i) for i in detected_changes],
        "conventions": CONVENTIONS,
    }
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))
