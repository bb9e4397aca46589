"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np

UNIT_NORM_TOL = 1e-9


class ConfigError(ValueError):
    """Invalid configuration or hyperparameter."""


class InputError(ValueError):
    """Malformed data passed to an otherwise valid model."""


class NotFittedError(InputError, AttributeError):
    """Estimator used before ``fit``/``partial_fit``."""


def check_positive(name, value, *, strict=True):
    if not np.isfinite(value) or (value <= 0 if strict else value < 0):
        kind = "positive" if strict else "non-negative"
        raise ConfigError(f"{name} must be {kind}, got {value!r}")
    return value


def check_in_range(name, value, low, high, *, closed=(True, True)):
    lo_ok = value >= low if closed[0] else value > low
    hi_ok = value <= high if closed[1] else value < high
    if not (np.isfinite(value) and lo_ok and hi_ok):
        left = "[" if closed[0] else "("
        right = "]" if closed[1] else ")"
        raise ConfigError(f"{name} must lie in {left}{low}, {high}{right}, got {value!r}")
    return value


def check_lambda(lam, *, allow_zero=True):
    return check_in_range("lambda", lam, 0.0, 1.0, closed=(allow_zero, True))


def as_vector(x, dim=None, name="x"):
    """Return ``x`` as a 1-D float array, checking its length if ``dim`` is given."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise InputError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise InputError(f"{name} has dimension {arr.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite values")
    return arr


def as_matrix(X, dim=None, name="X"):
    """Return ``X`` as a 2-D float array; a single vector becomes one row."""
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise InputError(f"{name} must be 2-D, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise InputError(f"{name} has {arr.shape[1]} features, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite values")
    return arr


def check_unit_norm(x, tol=UNIT_NORM_TOL, name="x"):
    """Raise unless every row of ``x`` has Euclidean norm 1 within ``tol``.

    Learners rely on embedded points living on the unit sphere; raw
    (un-embedded) inputs are the usual cause of failure here.
    """
    arr = np.asarray(x, dtype=float)
    norms = np.linalg.norm(arr, axis=-1)
    bad = np.abs(norms - 1.0) > tol
    if np.any(bad):
        worst = float(np.max(np.abs(norms - 1.0)))
        raise InputError(
            f"{name} must be unit norm (max deviation {worst:.3g} > {tol:g}); "
            "embed raw data with RandomFourierFeatures first"
        )
    return arr
