"""Exact batch oracles on empirical measures.

Objectives over unit-norm points ``X`` with weights ``p``:

* ``F(w, rho) = (||w||^2 + rho^2)/2 - lam*rho + E[(rho - <w, X>)_+]``
  (1-strongly convex),
* soft OCSVM ``||w||^2/2 - rho + E[(rho - <w, X>)_+] / lam``,
* linearized OCSVM ``lam/2 ||w||^2 - lam*rho + E[(rho - <w, X>)_+]``.

Minimizers are computed through their box-constrained duals, then polished
on the identified active set; every returned :class:`Solution` carries the
duality gap that certifies it. A projected-subgradient route is kept for
cross-checking.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.linalg import lstsq
from scipy.optimize import lsq_linear, minimize

from ._validation import ConfigError, InputError, as_matrix, as_vector, check_lambda, check_unit_norm

__all__ = [
    "EmpiricalMeasure",
    "Solution",
    "SupportMargin",
    "ConvergenceWarning",
    "eval_F",
    "subgradient_F",
    "eval_soft_ocsvm",
    "eval_erm_ocsvm",
    "minimize_F",
    "minimize_soft_ocsvm",
    "support_margin",
    "strong_convexity_probe",
    "type1_fraction",
]


ORIGIN_TOL = 1e-10


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted point cloud on the unit sphere."""

    points: np.ndarray = field(repr=False)
    weights: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        X = as_matrix(self.points, name="points")
        if X.shape[0] == 0:
            raise InputError("empirical measure needs at least one point")
        check_unit_norm(X, name="points")
        if self.weights is None:
            p = np.full(X.shape[0], 1.0 / X.shape[0])
        else:
            p = as_vector(self.weights, X.shape[0], name="weights")
            if np.any(p < 0) or p.sum() <= 0:
                raise InputError("weights must be non-negative with positive total")
            p = p / p.sum()
        object.__setattr__(self, "points", X)
        object.__setattr__(self, "weights", p)

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    def expect(self, values):
        return float(self.weights @ values)


@dataclass
class Solution:
    w: np.ndarray = field(repr=False)
    rho: float
    objective_value: float
    margin: float | None
    gap: float = math.nan
    iterations: int = 0
    converged: bool = True

    @property
    def theta(self):
        return np.append(self.w, self.rho)


class SupportMargin(NamedTuple):
    r_star: float
    v_star: np.ndarray
    contains_origin: bool
    gap: float
    iterations: int


def _margin(w, rho):
    norm = float(np.linalg.norm(w))
    return rho / norm if norm > 1e-12 else None


def _hinge(w, rho, measure):
    return np.maximum(rho - measure.points @ w, 0.0)


def _check_args(w, rho, measure, lam, allow_zero=True):
    check_lambda(lam, allow_zero=allow_zero)
    return as_vector(w, measure.dim, name="w"), float(rho)


def eval_F(w, rho, measure: EmpiricalMeasure, lam) -> float:
    w, rho = _check_args(w, rho, measure, lam)
    return 0.5 * (w @ w + rho * rho) - lam * rho + measure.expect(_hinge(w, rho, measure))


def subgradient_F(w, rho, measure: EmpiricalMeasure, lam):
    """``(w - E[X 1{rho >= <w,X>}], rho - lam + P(rho >= <w,X>))``."""
    w, rho = _check_args(w, rho, measure, lam)
    active = (measure.points @ w <= rho).astype(float) * measure.weights
    return w - active @ measure.points, rho - lam + float(active.sum())


def eval_soft_ocsvm(w, rho, measure: EmpiricalMeasure, lam) -> float:
    if lam == 0:
        raise ConfigError("soft OCSVM objective needs lambda > 0")
    w, rho = _check_args(w, rho, measure, lam, allow_zero=False)
    return 0.5 * (w @ w) - rho + measure.expect(_hinge(w, rho, measure)) / lam


def eval_erm_ocsvm(w, rho, measure: EmpiricalMeasure, lam) -> float:
    w, rho = _check_args(w, rho, measure, lam)
    return 0.5 * lam * (w @ w) - lam * rho + measure.expect(_hinge(w, rho, measure))


def type1_fraction(w, rho, measure: EmpiricalMeasure, tie_tol=0.0) -> float:
    """Weighted fraction of points strictly on the outlier side,
    ``<w, X> < rho - tie_tol``."""
    return measure.expect((measure.points @ np.asarray(w) < rho - tie_tol).astype(float))


# -- F: dual box QP ----------------------------------------------------------
#
# Dual: min_a q(a) = ||X^T a||^2 / 2 + (lam - sum a)^2 / 2,  0 <= a_i <= p_i,
# with w = X^T a, rho = lam - sum a and F(w, rho) + q(a) = duality gap.

def _F_from_dual(alpha, X, lam):
    return X.T @ alpha, lam - alpha.sum()


def _F_gap(alpha, measure, lam):
    w, rho = _F_from_dual(alpha, measure.points, lam)
    dual = -0.5 * (w @ w) - 0.5 * rho * rho
    return w, rho, eval_F(w, rho, measure, lam) - dual


def _polish_F(alpha, measure, lam, tau):
    """Re-solve with the active set read off the dual gradient ``s_i - rho``:
    points within ``tau`` of the hyperplane are free, the rest sit at a bound."""
    X, p = measure.points, measure.weights
    w, rho = _F_from_dual(alpha, X, lam)
    g = X @ w - rho
    upper = g < -tau
    free = np.abs(g) <= tau
    if free.sum() > 2 * (measure.dim + 1):
        # generic optima have at most dim + 1 points on the hyperplane
        return None
    cand = np.where(upper, p, 0.0)
    if free.any():
        Xf = X[free]
        Q = Xf @ Xf.T + 1.0
        rhs = lam - (Xf @ (X[upper].T @ p[upper]) + p[upper].sum())
        sol, *_ = lstsq(Q, rhs, lapack_driver="gelsy")
        cand[free] = np.clip(sol, 0.0, p[free])
    return cand


def _minimize_F_dual(measure, lam, max_iters, tol):
    """The dual is a bounded least-squares problem
    ``min ||A a - b||^2 / 2`` with ``A = [X^T; 1^T]``, ``b = (0, lam)``."""
    X, p = measure.points, measure.weights
    A = np.vstack([X.T, np.ones(measure.n)])
    b = np.zeros(measure.dim + 1)
    b[-1] = lam
    res = lsq_linear(A, b, bounds=(np.zeros_like(p), p), method="bvls", tol=1e-15,
                     max_iter=max_iters)
    alpha = np.clip(res.x, 0.0, p)
    best = (_F_gap(alpha, measure, lam)[2], alpha)
    it = int(res.nit)
    if best[0] > tol:
        # quasi-Newton restart, then active-set polish
        def fun(a):
            w = X.T @ a
            rho = lam - a.sum()
            return 0.5 * (w @ w + rho * rho), X @ w - rho

        res = minimize(fun, alpha, jac=True, method="L-BFGS-B",
                       bounds=list(zip(np.zeros_like(p), p)),
                       options={"maxiter": max_iters, "ftol": 1e-16, "gtol": 1e-14, "maxcor": 30})
        it += int(res.nit)
        cand = np.clip(res.x, 0.0, p)
        best = min(best, (_F_gap(cand, measure, lam)[2], cand), key=lambda pair: pair[0])
        for _ in range(3):
            start = best
            for tau in 10.0 ** -np.arange(3, 13):
                cand = _polish_F(start[1], measure, lam, tau)
                if cand is None:
                    continue
                gap = _F_gap(cand, measure, lam)[2]
                if gap < best[0]:
                    best = (gap, cand)
            if best[0] <= tol or best is start:
                break
    w, rho, gap = _F_gap(best[1], measure, lam)
    return w, rho, max(gap, 0.0), it


def _minimize_F_subgradient(measure, lam, max_iters, tol):
    """Full-batch projected subgradient, rate ``1/t``, on the unit box."""
    w = np.zeros(measure.dim)
    rho = 0.0
    best = (eval_F(w, rho, measure, lam), w.copy(), rho)
    it = 0
    for it in range(1, max_iters + 1):
        g_w, g_rho = subgradient_F(w, rho, measure, lam)
        eta = 1.0 / it
        w_new = w - eta * g_w
        norm = np.linalg.norm(w_new)
        if norm > 1.0:
            w_new /= norm
        rho_new = float(np.clip(rho - eta * g_rho, -1.0, 1.0))
        move = math.sqrt(float((w_new - w) @ (w_new - w)) + (rho_new - rho) ** 2)
        w, rho = w_new, rho_new
        val = eval_F(w, rho, measure, lam)
        if val < best[0]:
            best = (val, w.copy(), rho)
        if move < tol:
            break
    return best[1], best[2], math.nan, it


def minimize_F(measure: EmpiricalMeasure, lam, max_iters=20000, tol=1e-10, method="dual") -> Solution:
    """Minimizer of ``F`` on ``measure``.

    ``method="dual"`` (default) solves the dual box QP and reports the
    duality gap; ``||theta - theta*||^2 <= 2 * gap`` by strong convexity.
    ``method="subgradient"`` runs projected subgradient descent and keeps
    the best iterate (gap not available).
    """
    check_lambda(lam)
    if method == "dual":
        w, rho, gap, it = _minimize_F_dual(measure, lam, max_iters, tol)
        converged = gap <= tol
    elif method == "subgradient":
        w, rho, gap, it = _minimize_F_subgradient(measure, lam, max_iters, tol)
        converged = it < max_iters
    else:
        raise ConfigError(f"unknown method {method!r}")
    if not converged:
        warnings.warn(f"minimize_F stopped after {it} iterations (gap {gap:.3g})",
                      ConvergenceWarning, stacklevel=2)
    return Solution(w=w, rho=float(rho), objective_value=eval_F(w, rho, measure, lam),
                    margin=_margin(w, rho), gap=gap, iterations=it, converged=converged)


# -- soft OCSVM: capped-simplex dual -----------------------------------------
#
# Dual: min_a ||X^T a||^2 / 2,  sum a = 1, 0 <= a_i <= p_i / lam; w = X^T a.
# Given w, rho is the smallest minimizer of -rho + E[(rho - <w,X>)_+] / lam,
# i.e. the lower weighted lam-quantile of <w, X>.

def _project_capped_simplex(v, cap):
    lo, hi = float(np.min(v - cap)) - 1.0, float(np.max(v)) + 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if np.clip(v - mid, 0.0, cap).sum() > 1.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, abs(mid)):
            break
    return np.clip(v - 0.5 * (lo + hi), 0.0, cap)


def _lower_quantile(scores, weights, level):
    order = np.argsort(scores, kind="stable")
    cum = np.cumsum(weights[order])
    k = int(np.searchsorted(cum, level - 1e-12, side="left"))
    return float(scores[order[min(k, len(order) - 1)]])


def _soft_rho(w, measure, lam):
    return _lower_quantile(measure.points @ w, measure.weights, lam)


def _soft_gap(alpha, measure, lam):
    w = measure.points.T @ alpha
    rho = _soft_rho(w, measure, lam)
    return w, rho, eval_soft_ocsvm(w, rho, measure, lam) + 0.5 * (w @ w)


def _polish_capped(alpha, X, cap, tol=1e-9):
    """Solve the equality-constrained system on the free set of ``alpha``."""
    upper = alpha >= cap - tol * np.maximum(cap, 1e-300)
    free = (alpha > tol * cap) & ~upper
    cand = np.where(upper, cap, 0.0)
    if not free.any():
        return cand
    Xf = X[free]
    k = int(free.sum())
    K = np.zeros((k + 1, k + 1))
    K[:k, :k] = Xf @ Xf.T
    K[:k, k] = -1.0
    K[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[:k] = -(Xf @ (X[upper].T @ cap[upper]))
    rhs[k] = 1.0 - cap[upper].sum()
    sol, *_ = lstsq(K, rhs, lapack_driver="gelsy")
    cand[free] = np.clip(sol[:k], 0.0, cap[free])
    total = cand.sum()
    return cand / total if total > 0 else alpha


def _min_norm_capped(X, cap, score, max_iters, tol):
    """``min ||X^T a||`` over ``{sum a = 1, 0 <= a <= cap}``.

    Accelerated projected gradient; every 100 iterations the free set is
    re-solved exactly and the run stops once ``score`` (a certificate gap)
    drops to ``tol``. Returns ``(alpha, iterations)``.
    """
    lip = max(float(np.linalg.norm(X, 2)) ** 2, 1e-12)
    alpha = _project_capped_simplex(cap / cap.sum(), cap)
    y, prev, t = alpha.copy(), alpha.copy(), 1.0
    best = (score(alpha), alpha)
    it = 0
    for it in range(1, max_iters + 1):
        grad = X @ (X.T @ y)
        alpha = _project_capped_simplex(y - grad / lip, cap)
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = alpha + ((t - 1.0) / t_next) * (alpha - prev)
        prev, t = alpha, t_next
        if it % 100 == 0:
            for cand in (alpha, _polish_capped(alpha, X, cap)):
                val = score(cand)
                if val < best[0]:
                    best = (val, cand)
            if best[0] <= tol:
                break
    for _ in range(5):
        cand = _polish_capped(best[1], X, cap)
        val = score(cand)
        if val >= best[0]:
            break
        best = (val, cand)
    return best[1], it


def _minimize_soft_dual(measure, lam, max_iters, tol):
    X, p = measure.points, measure.weights
    cap = np.minimum(p / lam, 1.0)
    if cap.sum() < 1.0 - 1e-12:
        raise ConfigError("lambda too large for the dual constraints")
    alpha, it = _min_norm_capped(X, cap, lambda a: _soft_gap(a, measure, lam)[2], max_iters, tol)
    w, rho, gap = _soft_gap(alpha, measure, lam)
    return w, rho, max(gap, 0.0), it


def _minimize_soft_subgradient(measure, lam, max_iters, tol):
    """Averaged subgradient descent with rate ``c / sqrt(t)``."""
    X, p = measure.points, measure.weights
    w = np.zeros(measure.dim)
    rho = 0.0
    w_avg, rho_avg = w.copy(), rho
    it = 0
    for it in range(1, max_iters + 1):
        active = (X @ w <= rho).astype(float) * p
        g_w = w - (active @ X) / lam
        g_rho = -1.0 + active.sum() / lam
        eta = lam / math.sqrt(it)
        w = w - eta * g_w
        rho = rho - eta * g_rho
        w_avg += (w - w_avg) / (it + 1)
        rho_avg += (rho - rho_avg) / (it + 1)
    return w_avg, rho_avg, math.nan, it


def minimize_soft_ocsvm(measure: EmpiricalMeasure, lam, max_iters=20000, tol=1e-12,
                        method="dual") -> Solution:
    """Minimizer of the soft (penalized) one-class SVM objective.

    ``w`` is unique; among the optimal offsets the smallest is returned.
    """
    if lam == 0:
        raise ConfigError("soft OCSVM objective needs lambda > 0")
    check_lambda(lam, allow_zero=False)
    if method == "dual":
        w, rho, gap, it = _minimize_soft_dual(measure, lam, max_iters, tol)
        converged = gap <= max(tol, 1e-9)
    elif method == "subgradient":
        w, rho, gap, it = _minimize_soft_subgradient(measure, lam, max_iters, tol)
        converged = True
    else:
        raise ConfigError(f"unknown method {method!r}")
    if not converged:
        warnings.warn(f"minimize_soft_ocsvm stopped after {it} iterations (gap {gap:.3g})",
                      ConvergenceWarning, stacklevel=2)
    return Solution(w=w, rho=float(rho), objective_value=eval_soft_ocsvm(w, rho, measure, lam),
                    margin=_margin(w, rho), gap=gap, iterations=it, converged=converged)


# -- support margin ----------------------------------------------------------

def _support_margin_fw(X, tol, max_iters):
    """Pairwise Frank-Wolfe on ``min ||X^T b||`` over the simplex."""
    beta = np.zeros(len(X))
    beta[0] = 1.0
    y = X[0].copy()
    it = 0
    for it in range(1, max_iters + 1):
        norm = float(np.linalg.norm(y))
        if norm <= ORIGIN_TOL:
            break
        g = X @ y
        s = int(np.argmin(g))
        if norm - float(g[s]) / norm <= tol:
            break
        active = np.flatnonzero(beta > 0)
        a = int(active[np.argmax(g[active])])
        d = X[s] - X[a]
        dd = float(d @ d)
        if dd <= 0:
            break
        step = min(max(float(g[a] - g[s]) / dd, 0.0), beta[a])
        beta[s] += step
        beta[a] -= step
        if beta[a] < 1e-15:
            beta[a] = 0.0
        # periodic resync against drift in the incremental update
        y = X.T @ beta if it % 100 == 0 else y + step * d
    return y, it


def _certify(X, y):
    norm = float(np.linalg.norm(y))
    if norm <= ORIGIN_TOL:
        return norm, None, 0.0
    v = y / norm
    return norm, v, norm - float(np.min(X @ v))


def support_margin(measure: EmpiricalMeasure, tol=1e-8, max_iters=10000, method="auto") -> SupportMargin:
    """Distance ``r*`` from the origin to the convex hull of the support.

    Any unit direction ``v`` gives ``min_i <x_i, v> <= r*`` and any hull
    point ``y`` gives ``r* <= ||y||``; the reported ``gap`` is the spread of
    that pair and ``r_star`` is the upper value ``||y||``.

    ``method="frank_wolfe"`` runs pairwise Frank-Wolfe; ``"qp"`` runs the
    accelerated projected-gradient solver with active-set polishing;
    ``"auto"`` tries Frank-Wolfe and switches to ``"qp"`` if the gap is still
    above ``tol``.
    """
    if method not in ("auto", "frank_wolfe", "qp"):
        raise ConfigError(f"unknown method {method!r}")
    X = measure.points[measure.weights > 0]
    it = 0
    norm, v, gap = math.inf, np.ones(1), math.inf
    if method in ("auto", "frank_wolfe"):
        y, it = _support_margin_fw(X, tol, max_iters)
        norm, v, gap = _certify(X, y)
    if method == "qp" or (method == "auto" and v is not None and gap > tol):
        beta, it_qp = _min_norm_capped(X, np.ones(len(X)), lambda b: _certify(X, X.T @ b)[2],
                                       max_iters, tol)
        cand = _certify(X, X.T @ beta)
        if method == "qp" or cand[1] is None or cand[2] < gap:
            norm, v, gap = cand
            it += it_qp
    if v is None:
        return SupportMargin(0.0, np.zeros(X.shape[1]), True, norm, it)
    if gap > tol:
        warnings.warn(f"support_margin gap {gap:.3g} after {it} iterations",
                      ConvergenceWarning, stacklevel=2)
    return SupportMargin(norm, v, False, gap, it)


# -- strong convexity probe --------------------------------------------------

_OBJECTIVES = {"sonar": eval_F, "erm_ocsvm": eval_erm_ocsvm, "soft_ocsvm": eval_soft_ocsvm}


def strong_convexity_probe(measure: EmpiricalMeasure, lam, num_trials=1000, seed=0, *,
                           objective="sonar", modulus=1.0, segments="random") -> float:
    """Largest observed violation of the ``modulus``-strong convexity inequality.

    ``segments="random"`` draws both endpoints freely; ``segments="rho"``
    keeps ``w`` fixed along a direction with every hinge inactive and varies
    only ``rho``, the flat direction of the linearized OCSVM objective.
    """
    if objective not in _OBJECTIVES:
        raise ConfigError(f"objective must be one of {sorted(_OBJECTIVES)}")
    f = _OBJECTIVES[objective]
    rng = np.random.default_rng(seed)
    dim = measure.dim
    if segments == "rho":
        direction = support_margin(measure).v_star
        if not np.any(direction):
            direction = measure.points.mean(axis=0)
            direction /= max(np.linalg.norm(direction), 1e-12)
    elif segments != "random":
        raise ConfigError("segments must be 'random' or 'rho'")
    worst = -math.inf
    for _ in range(num_trials):
        a = rng.uniform()
        if segments == "random":
            w1 = rng.standard_normal(dim)
            w2 = rng.standard_normal(dim)
            w1 *= rng.uniform(0, 1.5) / np.linalg.norm(w1)
            w2 *= rng.uniform(0, 1.5) / np.linalg.norm(w2)
            r1, r2 = rng.uniform(-1.5, 1.5, size=2)
        else:
            w1 = w2 = direction * rng.uniform(0.5, 1.0)
            floor = float(np.min(measure.points @ w1))
            r1, r2 = rng.uniform(floor - 2.0, floor - 1e-3, size=2)
        wm, rm = a * w1 + (1 - a) * w2, a * r1 + (1 - a) * r2
        dist_sq = float((w1 - w2) @ (w1 - w2)) + (r1 - r2) ** 2
        lhs = f(wm, rm, measure, lam)
        rhs = a * f(w1, r1, measure, lam) + (1 - a) * f(w2, r2, measure, lam) \
            - 0.5 * modulus * a * (1 - a) * dist_sq
        worst = max(worst, lhs - rhs)
    return worst
