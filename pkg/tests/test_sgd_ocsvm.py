import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sonar_ocsvm import InputError
from sonar_ocsvm.objective import EmpiricalMeasure, eval_erm_ocsvm
from sonar_ocsvm.sgd_ocsvm import DivergenceError, OnlineOCSVM, step_ocsvm
from sonar_ocsvm.sonar import ModelState, SonarParams, StepSchedule, init_state

from .oracles import hemisphere_rows

e = np.eye(3)


def test_first_step_with_unit_rate():
    lam = 0.1
    s = init_state(3, schedule=StepSchedule("bottou", 1.0))
    new, flagged = step_ocsvm(s, e[0], SonarParams(lam=lam))
    assert flagged
    # rate 1: w' = w - (lam w - x) = x, rho' = rho - (1 - lam)
    assert np.allclose(new.w, e[0]) and new.rho == pytest.approx(lam - 1)


def test_inactive_branch():
    lam, eta0 = 0.1, 0.5
    s = ModelState(w=0.8 * e[0], rho=0.3, t=4, schedule=StepSchedule("bottou", eta0))
    new, flagged = step_ocsvm(s, e[0], SonarParams(lam=lam))
    eta = eta0 / (1 + eta0 * lam * 4)
    assert not flagged
    assert np.allclose(new.w, (1 - eta * lam) * s.w)
    assert new.rho == pytest.approx(0.3 + eta * lam)


def test_input_checks():
    with pytest.raises(InputError):
        step_ocsvm(init_state(3), np.ones(3), SonarParams())


def test_divergence_is_reported():
    s = ModelState(w=0.9 * e[0], rho=0.95, t=0, schedule=StepSchedule("bottou", 1.0))
    with pytest.raises(DivergenceError, match=r"\|\|w\|\|"):
        step_ocsvm(s, e[0], SonarParams(lam=0.1), max_norm=1.0)


@given(st.integers(0, 10**6), st.sampled_from([0.05, 0.2, 0.5]))
def test_mean_update_is_objective_subgradient(seed, lam):
    # away from kinks, the dataset-averaged update direction equals minus the
    # gradient of the empirical objective; compare against central differences
    rng = np.random.default_rng(seed)
    X = hemisphere_rows(rng, 25, 3)
    m = EmpiricalMeasure(X)
    w = rng.normal(size=3) * 0.5
    rho = float(rng.uniform(-0.5, 0.5))
    if np.min(np.abs(X @ w - rho)) < 1e-3:
        return
    state = ModelState(w=w, rho=rho, t=0, schedule=StepSchedule("bottou", 1e-3))
    eta = 1e-3
    dirs = [np.append(*(lambda n: (n.w, n.rho))(step_ocsvm(state, x, SonarParams(lam=lam))[0]))
            - np.append(w, rho) for x in X]
    mean_dir = np.mean(dirs, axis=0) / eta
    h = 1e-6
    theta = np.append(w, rho)
    grad = np.empty(4)
    for k in range(4):
        d = np.zeros(4)
        d[k] = h
        fp = eval_erm_ocsvm((theta + d)[:3], (theta + d)[3], m, lam)
        fm = eval_erm_ocsvm((theta - d)[:3], (theta - d)[3], m, lam)
        grad[k] = (fp - fm) / (2 * h)
    assert np.allclose(mean_dir, -grad, atol=1e-5)


def test_estimator_defaults_and_fit():
    est = OnlineOCSVM()
    assert est.get_params() == {"lam": 0.01, "epsilon": 0.0, "schedule": "bottou", "eta0": 0.5}
    X = hemisphere_rows(np.random.default_rng(0), 300, 4)
    est.fit(X)
    assert est.n_steps_ == 300
    assert np.linalg.norm(est.coef_) < 10
    assert np.array_equal(est.predict(X), np.where(X @ est.coef_ < est.offset_, -1, 1))
