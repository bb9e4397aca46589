"""SGD on the RFF-linearized one-class SVM objective (baseline).

Objective per point: ``lam/2 ||w||^2 - lam * rho + (rho - <w, x>)_+``.
Only the ``w`` block carries curvature (modulus ``lam``), so iterates are not
confined to the unit box; runs abort once ``||w||`` exceeds ``max_norm``.
"""

from __future__ import annotations

import numpy as np

from ._validation import InputError
from .sonar import (
    ModelState,
    SonarParams,
    _check_point,
    _OnlineOneClass,
    classify,
    margin,
)

__all__ = ["DivergenceError", "step_ocsvm", "classify", "margin", "OnlineOCSVM"]

MAX_W_NORM = 10.0


class DivergenceError(InputError, RuntimeError):
    """Baseline iterate left the monitored region."""


def step_ocsvm(state: ModelState, x, params: SonarParams, *, check=True, max_norm=MAX_W_NORM):
    """Returns ``(new_state, flagged)`` with ``flagged = 1{rho >= <w, x>}``."""
    x = _check_point(state, x, check)
    w, rho, lam = state.w, state.rho, params.lam
    z = 1.0 if rho >= float(w @ x) else 0.0
    g_w = lam * w - z * x
    g_rho = z - lam
    grad_sq = float(g_w @ g_w) + g_rho * g_rho if state.schedule.needs_gradient else 0.0
    eta, schedule = state.schedule.advance(state.t, grad_sq, lam)
    new_w = w - eta * g_w
    new_rho = rho - eta * g_rho
    norm = float(np.linalg.norm(new_w))
    if norm > max_norm:
        raise DivergenceError(
            f"OCSVM iterate diverged at step {state.t + 1}: ||w|| = {norm:.3g} > {max_norm}, "
            f"rho = {new_rho:.3g}, eta = {eta:.3g}"
        )
    return ModelState(w=new_w, rho=new_rho, t=state.t + 1, schedule=schedule), bool(z)


class OnlineOCSVM(_OnlineOneClass):
    """Single-pass SGD baseline for the linearized one-class SVM.

    Same parameters and prediction convention as :class:`~sonar_ocsvm.sonar.SONAR`.
    """

    def __init__(self, lam=0.01, epsilon=0.0, schedule="bottou", eta0=0.5):
        self.lam = lam
        self.epsilon = epsilon
        self.schedule = schedule
        self.eta0 = eta0

    def _step(self, state, x, params):
        return step_ocsvm(state, x, params, check=False)
