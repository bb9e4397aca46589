"""Changepoint-aware SONAR: a main learner plus dyadic base learners.

Base ``m`` forgets its history every ``2^m`` steps (its rate counter restarts)
and keeps the iterate it held just before that reset as a snapshot. The
squared distance between the main iterate and snapshot ``m`` is compared
with ``C * log(T) * log(1/delta) / 2^m``; crossing it restarts everything
with the remaining horizon.

Scales whose window is shorter than ``min_window`` (default ``ceil(1/lam)``)
are still run but not tested: below that length a base has not yet seen
enough flagged points for its snapshot to settle, and its distance to the
main iterate is dominated by start-up noise rather than by drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin

from ._validation import (
    ConfigError,
    InputError,
    NotFittedError,
    as_matrix,
    as_vector,
    check_in_range,
    check_lambda,
    check_positive,
    check_unit_norm,
)
from .metrics import MetricTrace
from .sonar import NORMAL, OUTLIER, ModelState, StepSchedule

__all__ = [
    "CpdConfig",
    "CpdEnsemble",
    "TuningError",
    "cpd_step",
    "run_cpd",
    "max_cpd_statistic",
    "tune_threshold",
    "default_grid",
    "oracle_restart_runner",
    "SONARC",
]

REFERENCES = ("main", "slowest")


class TuningError(ConfigError):
    pass


@dataclass(frozen=True)
class CpdConfig:
    horizon_T: int
    lam: float = 0.01
    delta: float = 0.005
    threshold_C: float = 1.0
    min_window: int | None = None
    reference: str = "main"
    epsilon: float = 0.0

    def __post_init__(self):
        if int(self.horizon_T) != self.horizon_T or self.horizon_T < 2:
            raise ConfigError(f"horizon_T must be an integer >= 2, got {self.horizon_T!r}")
        check_lambda(self.lam)
        check_in_range("delta", self.delta, 0.0, 1.0, closed=(False, False))
        if not self.threshold_C > 0:
            raise ConfigError(f"threshold_C must be positive, got {self.threshold_C!r}")
        if self.min_window is not None and (int(self.min_window) != self.min_window or self.min_window < 1):
            raise ConfigError(f"min_window must be a positive integer, got {self.min_window!r}")
        if self.reference not in REFERENCES:
            raise ConfigError(f"reference must be one of {REFERENCES}, got {self.reference!r}")
        check_in_range("epsilon", self.epsilon, 0.0, 1.0, closed=(True, False))

    @property
    def gate(self):
        if self.min_window is not None:
            return int(self.min_window)
        return math.ceil(1.0 / self.lam) if self.lam > 0 else 1


def _num_scales(horizon):
    return int(math.floor(math.log2(horizon))) if horizon >= 2 else 0


@dataclass
class CpdEnsemble:
    """Main learner (row 0) and bases (rows 1..M) stored as stacked arrays.

    ``W[k]``, ``rho[k]``, ``t[k]`` are the iterate and rate counter of row
    ``k``; base ``m`` sits in row ``m``. ``snap_w[m-1]``/``snap_rho[m-1]`` are
    its snapshots, valid where ``has_snap[m-1]``. ``step`` counts global steps
    and ``steps_since_restart`` resets with the ensemble.
    """

    dim: int
    horizon: int
    W: np.ndarray = field(repr=False)
    rho: np.ndarray = field(repr=False)
    t: np.ndarray = field(repr=False)
    snap_w: np.ndarray = field(repr=False)
    snap_rho: np.ndarray = field(repr=False)
    has_snap: np.ndarray = field(repr=False)
    periods: np.ndarray = field(repr=False)
    step: int = 0
    steps_since_restart: int = 0
    restart_log: list = field(default_factory=list)
    last_stats: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def fresh(cls, dim, horizon, step=0, restart_log=None):
        M = _num_scales(horizon)
        return cls(
            dim=dim, horizon=int(horizon),
            W=np.zeros((M + 1, dim)), rho=np.zeros(M + 1), t=np.zeros(M + 1, dtype=np.int64),
            snap_w=np.zeros((M, dim)), snap_rho=np.zeros(M), has_snap=np.zeros(M, dtype=bool),
            periods=2 ** np.arange(1, M + 1, dtype=np.int64),
            step=step, steps_since_restart=0, restart_log=list(restart_log or []),
        )

    @property
    def num_bases(self):
        return self.periods.shape[0]

    @property
    def main(self) -> ModelState:
        return ModelState(w=self.W[0].copy(), rho=float(self.rho[0]), t=int(self.t[0]),
                          schedule=StepSchedule("theory"))

    def base(self, m) -> ModelState:
        return ModelState(w=self.W[m].copy(), rho=float(self.rho[m]), t=int(self.t[m]),
                          schedule=StepSchedule("theory"))

    def snapshot(self, m):
        """``(w, rho)`` captured at base ``m``'s last reset, or None."""
        if not self.has_snap[m - 1]:
            return None
        return self.snap_w[m - 1].copy(), float(self.snap_rho[m - 1])


def init_ensemble(dim, cfg: CpdConfig) -> CpdEnsemble:
    return CpdEnsemble.fresh(dim, cfg.horizon_T)


def _statistics(ens, cfg):
    """Per-scale ratio ``dist^2 / (log T log(1/delta) / 2^m)``; NaN where untested."""
    ref = 0 if cfg.reference == "main" else ens.num_bases
    diff_w = ens.snap_w - ens.W[ref]
    dist = np.einsum("ij,ij->i", diff_w, diff_w) + (ens.snap_rho - ens.rho[ref]) ** 2
    scale = math.log(ens.horizon) * math.log(1.0 / cfg.delta)
    ratio = dist * ens.periods / scale
    tested = ens.has_snap & (ens.periods >= cfg.gate) & (ens.steps_since_restart >= ens.periods)
    return np.where(tested, ratio, np.nan)


def _advance(ens, x, lam):
    s = ens.W @ x
    z = s <= ens.rho
    eta = 1.0 / (ens.t + 1.0)
    keep = 1.0 - eta
    ens.W *= keep[:, None]
    ens.W[z] += eta[z, None] * x
    ens.rho = keep * ens.rho + eta * (lam - z)
    ens.t += 1
    ens.step += 1
    ens.steps_since_restart += 1
    boundary = ens.steps_since_restart % ens.periods == 0
    if boundary.any():
        rows = np.flatnonzero(boundary) + 1
        ens.snap_w[boundary] = ens.W[rows]
        ens.snap_rho[boundary] = ens.rho[rows]
        ens.has_snap[boundary] = True
        ens.t[rows] = 0
    return bool(z[0])


def cpd_step(ens: CpdEnsemble, x, cfg: CpdConfig, *, check=True):
    """Advance every learner on ``x`` and run the changepoint test.

    Updates ``ens`` in place (a restart replaces it) and returns
    ``(ensemble, flagged, restarted)`` where ``flagged`` is the main
    learner's update indicator before the step.
    """
    if check:
        x = check_unit_norm(as_vector(x, ens.dim))
    flagged = _advance(ens, x, cfg.lam)
    stats = _statistics(ens, cfg) if ens.num_bases else np.empty(0)
    ens.last_stats = stats
    with np.errstate(invalid="ignore"):
        fire = bool(np.any(stats >= cfg.threshold_C))
    if fire and cfg.horizon_T - ens.step >= 1:
        log = ens.restart_log + [ens.step]
        remaining = max(cfg.horizon_T - ens.step, 1)
        new = CpdEnsemble.fresh(ens.dim, remaining, step=ens.step, restart_log=log)
        new.last_stats = stats
        return new, flagged, True
    return ens, flagged, False


@dataclass
class CpdRun:
    ensemble: CpdEnsemble
    decisions: np.ndarray
    margins: np.ndarray
    restarted: np.ndarray
    max_stat: float

    @property
    def restarts(self):
        return list(self.ensemble.restart_log)


def run_cpd(X, cfg: CpdConfig, train_mask=None, epsilon=None, *, record_margins=True) -> CpdRun:
    """Run SONARC over a matrix of embedded rows.

    ``decisions[i]`` is True when the main iterate before step ``i`` calls
    row ``i`` an outlier. Rows with ``train_mask`` False are classified
    but not learned from (and do not advance the clock).
    """
    X = check_unit_norm(as_matrix(X))
    n = X.shape[0]
    eps = cfg.epsilon if epsilon is None else epsilon
    mask = np.ones(n, dtype=bool) if train_mask is None else np.asarray(train_mask, bool)
    ens = init_ensemble(X.shape[1], cfg)
    decisions = np.zeros(n, dtype=bool)
    margins = np.full(n, np.nan)
    restarted = np.zeros(n, dtype=bool)
    max_stat = -math.inf
    for i in range(n):
        x = X[i]
        w0, r0 = ens.W[0], ens.rho[0]
        decisions[i] = float(w0 @ x) < r0 * (1.0 - eps)
        if mask[i]:
            ens, _, restarted[i] = cpd_step(ens, x, cfg, check=False)
            stats = ens.last_stats
            if stats is not None and stats.size:
                with np.errstate(invalid="ignore"):
                    cur = np.nanmax(stats) if not np.all(np.isnan(stats)) else -math.inf
                max_stat = max(max_stat, cur)
        if record_margins:
            norm = math.sqrt(float(ens.W[0] @ ens.W[0]))
            margins[i] = ens.rho[0] / norm if norm > 1e-12 else np.nan
    return CpdRun(ensemble=ens, decisions=decisions, margins=margins, restarted=restarted,
                  max_stat=max_stat)


def max_cpd_statistic(X, cfg: CpdConfig, train_mask=None) -> float:
    """Largest normalized statistic over a restart-free pass.

    Until the first restart the trajectory does not depend on ``C``, so a
    threshold ``C`` fires on ``X`` iff ``C <= max_cpd_statistic(X, cfg)``.
    """
    probe = CpdConfig(cfg.horizon_T, cfg.lam, cfg.delta, math.inf, cfg.min_window,
                      cfg.reference, cfg.epsilon)
    return run_cpd(X, probe, train_mask, record_margins=False).max_stat


def default_grid(low_exp=-6, high_exp=1):
    """Log grid with mantissas 1, 2, 5 per decade."""
    return sorted(m * 10.0 ** e for e in range(low_exp, high_exp + 1) for m in (1, 2, 5))


def tune_threshold(streams, cfg: CpdConfig, grid=None, mode="safe"):
    """Pick ``C`` from an ascending grid.

    ``mode="safe"``: smallest grid value that fires on none of ``streams``
    (stationary data). ``mode="detect"``: largest grid value that fires at
    least once on some stream.
    """
    grid = default_grid() if grid is None else [float(c) for c in grid]
    if not grid:
        raise TuningError("threshold grid is empty")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise TuningError("threshold grid must be sorted ascending")
    if any(not c > 0 for c in grid):
        raise TuningError("threshold grid values must be positive")
    streams = list(streams)
    if not streams:
        raise TuningError("need at least one stream to tune on")
    peaks = [max_cpd_statistic(X, cfg) for X in streams]
    if mode == "safe":
        for c in grid:
            if all(c > p for p in peaks):
                return c
        counts = {c: sum(c <= p for p in peaks) for c in grid}
        raise TuningError(f"every grid value triggers; streams triggered per C: {counts}")
    if mode == "detect":
        hits = [c for c in grid if any(c <= p for p in peaks)]
        if not hits:
            raise TuningError(f"no grid value detects a change (largest statistic {max(peaks):.3g})")
        return hits[-1]
    raise ConfigError(f"mode must be 'safe' or 'detect', got {mode!r}")


# -- oracle restarts ---------------------------------------------------------

def oracle_restart_runner(X, changepoints, lam=0.01, epsilon=0.0, labels=None,
                          train_mask=None) -> MetricTrace:
    """Plain SONAR (theory schedule) whose rate counter restarts at the
    given row indices; the iterate itself is kept."""
    X = check_unit_norm(as_matrix(X))
    n = X.shape[0]
    check_lambda(lam)
    cps = sorted({int(c) for c in changepoints})
    if any(c < 0 or c >= n for c in cps):
        raise InputError(f"changepoints must lie in [0, {n}), got {list(changepoints)}")
    resets = np.zeros(n, dtype=bool)
    resets[cps] = True
    mask = np.ones(n, dtype=bool) if train_mask is None else np.asarray(train_mask, bool)
    w = np.zeros(X.shape[1])
    rho = 0.0
    t = 0
    decisions = np.zeros(n, dtype=bool)
    margins = np.full(n, np.nan)
    for i in range(n):
        if resets[i]:
            t = 0
        x = X[i]
        s = float(w @ x)
        decisions[i] = s < rho * (1.0 - epsilon)
        if mask[i]:
            eta = 1.0 / (t + 1.0)
            z = s <= rho
            w *= 1.0 - eta
            if z:
                w += eta * x
            rho = (1.0 - eta) * rho + eta * (lam - z)
            t += 1
        norm = math.sqrt(float(w @ w))
        margins[i] = rho / norm if norm > 1e-12 else np.nan
    return MetricTrace.from_decisions(decisions, labels, margins, resets)


# -- estimator ---------------------------------------------------------------

class SONARC(OutlierMixin, BaseEstimator):
    """SONAR with dyadic changepoint detection and full restarts.

    Parameters
    ----------
    lam : float, default=0.01
    epsilon : float, default=0.0
    horizon : int or None
        Stream length ``T``; when None, ``fit`` uses ``len(X)``.
    delta : float, default=0.005
    threshold_C : float, default=1e-3
    min_window : int or None
        Shortest base window that is tested; None means ``ceil(1/lam)``.
    reference : {"main", "slowest"}
        Iterate compared against base snapshots.
    """

    def __init__(self, lam=0.01, epsilon=0.0, horizon=None, delta=0.005, threshold_C=1e-3,
                 min_window=None, reference="main"):
        self.lam = lam
        self.epsilon = epsilon
        self.horizon = horizon
        self.delta = delta
        self.threshold_C = threshold_C
        self.min_window = min_window
        self.reference = reference

    def _config(self, n):
        horizon = self.horizon if self.horizon is not None else max(n, 2)
        check_positive("threshold_C", self.threshold_C)
        return CpdConfig(int(horizon), self.lam, self.delta, self.threshold_C,
                         self.min_window, self.reference, self.epsilon)

    def fit(self, X, y=None):
        self.process(X)
        return self

    def process(self, X, train_mask=None):
        """Single online pass; returns pre-update predictions (+1/-1)."""
        X = as_matrix(X)
        cfg = self._config(X.shape[0])
        run = run_cpd(X, cfg, train_mask)
        self.n_features_in_ = X.shape[1]
        self.ensemble_ = run.ensemble
        self.restart_log_ = run.restarts
        self.online_margins_ = run.margins
        return np.where(run.decisions, -1, 1)

    def _check_fitted(self):
        if not hasattr(self, "ensemble_"):
            raise NotFittedError("SONARC is not fitted")

    @property
    def state_(self):
        self._check_fitted()
        return self.ensemble_.main

    def decision_function(self, X):
        self._check_fitted()
        X = as_matrix(X, self.n_features_in_)
        main = self.ensemble_.main
        return X @ main.w - main.rho * (1.0 - self.epsilon)

    def predict(self, X):
        return np.where(self.decision_function(X) < 0, -1, 1)

    def classify(self, x):
        return OUTLIER if self.decision_function(np.atleast_2d(x))[0] < 0 else NORMAL
