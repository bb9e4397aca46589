"""Streaming SGD on the strongly convex one-class objective.

The learner keeps a pair ``(w, rho)`` inside the box ``||w|| <= 1, |rho| <= 1``
and, for every unit-norm point ``x``, sets ``Z = 1{<w, x> <= rho}`` and moves

    w   <- (1 - eta) * w   + eta * Z * x
    rho <- (1 - eta) * rho + eta * (lam - Z)

A point is reported as an outlier when ``<w, x> < rho * (1 - epsilon)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin

from ._validation import (
    ConfigError,
    InputError,
    NotFittedError,
    UNIT_NORM_TOL,
    as_matrix,
    as_vector,
    check_in_range,
    check_lambda,
    check_positive,
    check_unit_norm,
)

__all__ = [
    "NORMAL",
    "OUTLIER",
    "SCHEDULE_KINDS",
    "StepSchedule",
    "SonarParams",
    "ModelState",
    "init_state",
    "step",
    "classify",
    "margin",
    "SonarTrace",
    "record_trace",
    "margin_recursion_check",
    "transfer_bound_check",
    "save_state",
    "load_state",
    "state_to_dict",
    "state_from_dict",
    "SONAR",
]

NORMAL = "normal"
OUTLIER = "outlier"
SCHEDULE_KINDS = ("theory", "adagrad", "bottou")
BOX_TOL = 1e-12
SNAPSHOT_FORMAT = "sonar-ocsvm/model-state"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class StepSchedule:
    """Learning-rate rule.

    ``theory``: ``eta_t = 1 / (t + 1)``.
    ``bottou``: ``eta_t = eta0 / (1 + eta0 * mu * t)`` where ``mu`` is the
    learner's strong-convexity modulus (1 for SONAR, lambda for the OCSVM
    baseline).
    ``adagrad``: ``eta_t = eta0 / sqrt(1 + sum_{s<=t} ||g_s||^2)``.

    Rates are clipped to ``(0, 1]`` so updates stay convex combinations.
    """

    kind: str = "theory"
    base_rate: float = 1.0
    accum: float = 0.0

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigError(f"schedule kind must be one of {SCHEDULE_KINDS}, got {self.kind!r}")
        check_positive("base_rate", self.base_rate)

    @property
    def needs_gradient(self):
        return self.kind == "adagrad"

    def advance(self, t, grad_sq=0.0, modulus=1.0):
        """Rate for the step taken with counter ``t``, plus the updated schedule."""
        if self.kind == "theory":
            return 1.0 / (t + 1.0), self
        if self.kind == "bottou":
            eta = self.base_rate / (1.0 + self.base_rate * modulus * t)
            return min(eta, 1.0), self
        accum = self.accum + grad_sq
        eta = self.base_rate / math.sqrt(1.0 + accum)
        return min(eta, 1.0), replace(self, accum=accum)

    def reset(self):
        return replace(self, accum=0.0) if self.accum else self


@dataclass(frozen=True)
class SonarParams:
    lam: float = 0.01
    epsilon: float = 0.0
    init_w: np.ndarray | None = field(default=None, repr=False)
    init_rho: float = 0.0

    def __post_init__(self):
        check_lambda(self.lam)
        check_in_range("epsilon", self.epsilon, 0.0, 1.0, closed=(True, False))
        if self.init_w is not None:
            w = as_vector(self.init_w, name="init_w")
            if np.linalg.norm(w) > 1.0 + BOX_TOL:
                raise ConfigError("init_w must satisfy ||init_w|| <= 1")
            object.__setattr__(self, "init_w", w)
        if abs(self.init_rho) > 1.0:
            raise ConfigError("init_rho must satisfy |init_rho| <= 1")


@dataclass(frozen=True)
class ModelState:
    """Iterate ``(w, rho)`` with the step counter since the last rate reset."""

    w: np.ndarray = field(repr=False)
    rho: float
    t: int = 0
    schedule: StepSchedule = field(default_factory=StepSchedule)

    @property
    def dim(self):
        return self.w.shape[0]

    def reset_rate(self):
        return replace(self, t=0, schedule=self.schedule.reset())


def init_state(dim, params=None, schedule=None):
    params = params or SonarParams()
    if params.init_w is None:
        w = np.zeros(dim)
    else:
        w = as_vector(params.init_w, dim, name="init_w").copy()
    return ModelState(w=w, rho=float(params.init_rho), t=0,
                      schedule=schedule or StepSchedule())


def _check_point(state, x, check):
    if not check:
        return x
    x = as_vector(x, state.dim)
    check_unit_norm(x)
    return x


def step(state: ModelState, x, params: SonarParams, *, check=True):
    """One update. Returns ``(new_state, flagged)`` with ``flagged = Z``
    evaluated before the update."""
    x = _check_point(state, x, check)
    w, rho = state.w, state.rho
    z = 1.0 if float(w @ x) <= rho else 0.0
    grad_sq = 0.0
    if state.schedule.needs_gradient:
        g_w = w - z * x
        g_rho = rho - params.lam + z
        grad_sq = float(g_w @ g_w) + g_rho * g_rho
    eta, schedule = state.schedule.advance(state.t, grad_sq, 1.0)
    new_w = (1.0 - eta) * w
    if z:
        new_w += eta * x
    new_rho = (1.0 - eta) * rho + eta * (params.lam - z)
    assert np.dot(new_w, new_w) <= (1.0 + BOX_TOL) ** 2 and abs(new_rho) <= 1.0 + BOX_TOL
    return ModelState(w=new_w, rho=new_rho, t=state.t + 1, schedule=schedule), bool(z)


def is_outlier(state: ModelState, x, epsilon=0.0) -> bool:
    return float(state.w @ x) < state.rho * (1.0 - epsilon)


def classify(state: ModelState, x, params: SonarParams | None = None, *, check=True):
    """``OUTLIER`` iff ``<w, x> < rho * (1 - epsilon)``; no state change."""
    x = _check_point(state, x, check)
    epsilon = params.epsilon if params is not None else 0.0
    return OUTLIER if is_outlier(state, x, epsilon) else NORMAL


def margin(state: ModelState):
    """``rho / ||w||``, or None when ``||w||`` is numerically zero."""
    norm = float(np.linalg.norm(state.w))
    if norm <= 1e-12:
        return None
    return state.rho / norm


# -- recorded runs -----------------------------------------------------------

@dataclass
class SonarTrace:
    """Replayable record of a run: ``iterates[k]`` is the state before step k+1."""

    X: np.ndarray
    Z: np.ndarray
    w: np.ndarray
    rho: np.ndarray
    t: np.ndarray
    lam: float
    schedule_kind: str

    def __len__(self):
        return self.Z.shape[0]


def record_trace(state: ModelState, X, params: SonarParams) -> tuple[ModelState, SonarTrace]:
    X = check_unit_norm(as_matrix(X, state.dim))
    n = X.shape[0]
    ws = np.empty((n + 1, state.dim))
    rhos = np.empty(n + 1)
    ts = np.empty(n + 1, dtype=np.int64)
    Z = np.empty(n, dtype=bool)
    ws[0], rhos[0], ts[0] = state.w, state.rho, state.t
    for i in range(n):
        state, Z[i] = step(state, X[i], params, check=False)
        ws[i + 1], rhos[i + 1], ts[i + 1] = state.w, state.rho, state.t
    trace = SonarTrace(X=X, Z=Z, w=ws, rho=rhos, t=ts, lam=params.lam,
                       schedule_kind=state.schedule.kind)
    return state, trace


def margin_recursion_check(trace: SonarTrace) -> float:
    """Largest violation of the per-step margin lower bound along ``trace``.

    For a step taken with counter ``s - 1`` (rate ``1/s``),

        r_s - r_{s-1} >= (lam - Z_s (1 + |r_{s-1}|))
                         / ((s - 1) * ||w_{s-1} + Z_s X_s / (s - 1)||).

    Steps with rate 1 or an undefined margin on either side are skipped.
    """
    if trace.schedule_kind != "theory":
        raise ConfigError("margin recursion holds for the theory schedule only")
    worst = 0.0
    for k in range(len(trace)):
        prev_t = int(trace.t[k])
        if trace.t[k + 1] != prev_t + 1:
            raise ConfigError("trace step counters are not consecutive")
        if prev_t < 1:
            continue
        w_prev, w_next = trace.w[k], trace.w[k + 1]
        n_prev, n_next = np.linalg.norm(w_prev), np.linalg.norm(w_next)
        if n_prev <= 1e-12 or n_next <= 1e-12:
            continue
        r_prev = trace.rho[k] / n_prev
        r_next = trace.rho[k + 1] / n_next
        z = float(trace.Z[k])
        shifted = np.linalg.norm(w_prev + z * trace.X[k] / prev_t)
        bound = (trace.lam - z * (1.0 + abs(r_prev))) / (prev_t * shifted)
        worst = max(worst, bound - (r_next - r_prev))
    return worst


def transfer_bound_check(trace: SonarTrace, start=0, probes=None) -> float:
    """Largest violation of the transfer implication along ``trace``.

    With ``t0`` the counter at position ``start`` (theory schedule), any
    point flagged by the iterate with counter ``t`` must satisfy
    ``<w_{t0}, x> < rho_{t0} + lam * (t - t0) / t0``. Flagged points are the
    next stream point (online decision) and every row of ``probes``.
    Returns ``max(0, max(<w_{t0}, x> - rho_{t0} - lam (t - t0) / t0))``.
    """
    if trace.schedule_kind != "theory":
        raise ConfigError("transfer bound holds for the theory schedule only")
    t0 = int(trace.t[start])
    if t0 < 1:
        raise ConfigError("transfer bound needs a warm start with counter >= 1")
    w0, rho0 = trace.w[start], trace.rho[start]
    probes = None if probes is None else as_matrix(probes, trace.w.shape[1])
    worst = 0.0
    for k in range(start + 1, len(trace) + 1):
        t = int(trace.t[k])
        slack = rho0 + trace.lam * (t - t0) / t0
        w, rho = trace.w[k], trace.rho[k]
        candidates = []
        if k < len(trace):
            candidates.append(trace.X[k][None, :])
        if probes is not None:
            candidates.append(probes)
        for pts in candidates:
            flagged = pts @ w < rho
            if np.any(flagged):
                worst = max(worst, float(np.max(pts[flagged] @ w0 - slack)))
    return worst


# -- snapshots ---------------------------------------------------------------

def state_to_dict(state: ModelState, rff=None):
    record = {
        "format": SNAPSHOT_FORMAT,
        "version": SNAPSHOT_VERSION,
        "w": [float(v) for v in state.w],
        "rho": float(state.rho),
        "t": int(state.t),
        "schedule": {
            "kind": state.schedule.kind,
            "base_rate": float(state.schedule.base_rate),
            "accum": float(state.schedule.accum),
        },
    }
    if rff is not None:
        cfg = getattr(rff, "config", rff)
        record["rff"] = {
            "gamma": float(cfg.gamma),
            "num_pairs": int(cfg.num_pairs),
            "input_dim": int(cfg.input_dim),
            "seed": int(cfg.seed),
        }
    return record


def state_from_dict(record):
    if record.get("format") != SNAPSHOT_FORMAT:
        raise InputError(f"not a model-state record: format={record.get('format')!r}")
    if record.get("version") != SNAPSHOT_VERSION:
        raise InputError(f"unsupported snapshot version {record.get('version')!r}")
    sched = StepSchedule(**record["schedule"])
    state = ModelState(w=np.asarray(record["w"], dtype=float), rho=float(record["rho"]),
                       t=int(record["t"]), schedule=sched)
    rff = None
    if "rff" in record:
        from .kernel_features import RffConfig

        rff = RffConfig(**record["rff"])
    return state, rff


def save_state(state: ModelState, path, rff=None):
    Path(path).write_text(json.dumps(state_to_dict(state, rff), indent=2))


def load_state(path):
    """Returns ``(state, rff_config_or_None)``."""
    return state_from_dict(json.loads(Path(path).read_text()))


# -- estimator ---------------------------------------------------------------

class _OnlineOneClass(OutlierMixin, BaseEstimator):
    """Shared scikit-learn surface for single-pass one-class learners.

    Inputs must already be embedded on the unit sphere (chain after
    :class:`~sonar_ocsvm.kernel_features.RandomFourierFeatures` in a
    pipeline). ``predict`` follows the scikit-learn convention: +1 normal,
    -1 outlier.
    """

    _modulus_from_lam = False

    def _params(self):
        return SonarParams(lam=self.lam, epsilon=self.epsilon)

    def _schedule(self):
        return StepSchedule(kind=self.schedule, base_rate=self.eta0)

    def _step(self, state, x, params):
        raise NotImplementedError

    def _check_fitted(self):
        if not hasattr(self, "state_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted")

    def _prepare(self, X):
        X = as_matrix(X)
        if not hasattr(self, "state_"):
            self.n_features_in_ = X.shape[1]
            self.state_ = init_state(X.shape[1], SonarParams(lam=self.lam),
                                     self._schedule())
            self.n_steps_ = 0
        elif X.shape[1] != self.n_features_in_:
            raise InputError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return check_unit_norm(X, UNIT_NORM_TOL, "X")

    def partial_fit(self, X, y=None, train_mask=None):
        self.process(X, train_mask=train_mask)
        return self

    def fit(self, X, y=None):
        for attr in ("state_", "n_steps_"):
            self.__dict__.pop(attr, None)
        return self.partial_fit(X)

    def process(self, X, train_mask=None):
        """Single pass over ``X``: classify each row with the current iterate
        (before updating), then update on rows where ``train_mask`` is True.

        Returns the online predictions (+1 normal, -1 outlier).
        """
        X = self._prepare(X)
        params = self._params()
        mask = np.ones(X.shape[0], dtype=bool) if train_mask is None else np.asarray(train_mask, bool)
        out = np.empty(X.shape[0], dtype=int)
        state = self.state_
        for i, x in enumerate(X):
            out[i] = -1 if is_outlier(state, x, params.epsilon) else 1
            if mask[i]:
                state, _ = self._step(state, x, params)
                self.n_steps_ += 1
        self.state_ = state
        return out

    def score_samples(self, X):
        self._check_fitted()
        X = as_matrix(X, self.n_features_in_)
        return X @ self.state_.w

    def decision_function(self, X):
        return self.score_samples(X) - self.state_.rho * (1.0 - self.epsilon)

    def predict(self, X):
        return np.where(self.decision_function(X) < 0, -1, 1)

    @property
    def coef_(self):
        self._check_fitted()
        return self.state_.w

    @property
    def offset_(self):
        self._check_fitted()
        return self.state_.rho

    @property
    def margin_(self):
        self._check_fitted()
        return margin(self.state_)


class SONAR(_OnlineOneClass):
    """Single-pass one-class detector on the strongly convex objective.

    Parameters
    ----------
    lam : float, default=0.01
        Anticipated outlier proportion, in [0, 1].
    epsilon : float, default=0.0
        Threshold shrink: outlier iff ``<w, x> < rho * (1 - epsilon)``.
    schedule : {"theory", "adagrad", "bottou"}, default="theory"
    eta0 : float, default=1.0
        Base rate for the adagrad and bottou schedules.
    """

    def __init__(self, lam=0.01, epsilon=0.0, schedule="theory", eta0=1.0):
        self.lam = lam
        self.epsilon = epsilon
        self.schedule = schedule
        self.eta0 = eta0

    def _step(self, state, x, params):
        return step(state, x, params, check=False)
