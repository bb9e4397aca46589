"""Random Fourier Features for the Gaussian (RBF) kernel.

The embedding uses cos-sin pairs scaled by ``1/sqrt(d)`` so that every
embedded point has unit Euclidean norm and

    z(x) . z(y) = (1/d) * sum_j cos(omega_j . (x - y)),

an unbiased estimate of ``exp(-gamma * ||x - y||^2)`` when the frequencies
are drawn from ``N(0, 2 * gamma * I)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import (
    ConfigError,
    InputError,
    NotFittedError,
    as_matrix,
    as_vector,
    check_in_range,
    check_positive,
)

__all__ = [
    "RffConfig",
    "RffMap",
    "sample_rff",
    "embed",
    "embed_many",
    "kernel_exact",
    "recommended_feature_count",
    "RandomFourierFeatures",
]


@dataclass(frozen=True)
class RffConfig:
    gamma: float
    num_pairs: int
    input_dim: int
    seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ConfigError(f"gamma must be positive, got {self.gamma!r}")
        if int(self.num_pairs) != self.num_pairs or self.num_pairs < 1:
            raise ConfigError(f"num_pairs must be a positive integer, got {self.num_pairs!r}")
        if int(self.input_dim) != self.input_dim or self.input_dim < 1:
            raise ConfigError(f"input_dim must be a positive integer, got {self.input_dim!r}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")


@dataclass(frozen=True)
class RffMap:
    """Frozen frequency matrix of shape ``(num_pairs, input_dim)``."""

    omegas: np.ndarray = field(repr=False)
    config: RffConfig

    def __post_init__(self):
        omegas = np.array(self.omegas, dtype=float)
        omegas.setflags(write=False)
        object.__setattr__(self, "omegas", omegas)

    @property
    def output_dim(self):
        return 2 * self.config.num_pairs

    def __call__(self, x):
        return embed(self, x)


def sample_rff(config: RffConfig) -> RffMap:
    """Draw ``d`` frequency vectors i.i.d. from ``N(0, 2*gamma*I_D)``."""
    rng = np.random.default_rng(int(config.seed))
    scale = math.sqrt(2.0 * config.gamma)
    omegas = rng.standard_normal((config.num_pairs, config.input_dim)) * scale
    return RffMap(omegas=omegas, config=config)


def embed_many(rff_map: RffMap, X) -> np.ndarray:
    """Embed each row of ``X``; returns an array of shape ``(n, 2d)``."""
    X = as_matrix(X, rff_map.config.input_dim)
    proj = X @ rff_map.omegas.T
    out = np.empty((X.shape[0], rff_map.output_dim))
    out[:, 0::2] = np.sin(proj)
    out[:, 1::2] = np.cos(proj)
    out /= math.sqrt(rff_map.config.num_pairs)
    return out


def embed(rff_map: RffMap, x) -> np.ndarray:
    """Embed a single point ``x`` of dimension ``D`` onto the unit sphere in R^{2d}."""
    x = as_vector(x, rff_map.config.input_dim)
    return embed_many(rff_map, x[None, :])[0]


def kernel_exact(x, y, gamma) -> float:
    check_positive("gamma", gamma)
    x = as_vector(x, name="x")
    y = as_vector(y, x.shape[0], name="y")
    diff = x - y
    return float(np.exp(-gamma * diff @ diff))


def recommended_feature_count(input_dim, r_min, delta, constant=1.0) -> int:
    """Number of cos-sin pairs so that kernel error stays below ``r_min/2``.

    Evaluates ``ceil(c * D / r_min^2 * log(D / (delta * r_min^2)))``. The
    uniform-convergence bound only fixes the order of growth, so ``constant``
    is a tunable multiplier.
    """
    if int(input_dim) != input_dim or input_dim < 1:
        raise ConfigError(f"input_dim must be a positive integer, got {input_dim!r}")
    check_in_range("r_min", r_min, 0.0, 1.0, closed=(False, False))
    check_in_range("delta", delta, 0.0, 1.0, closed=(False, False))
    check_positive("constant", constant)
    ratio = input_dim / r_min**2
    count = constant * ratio * math.log(input_dim / (delta * r_min**2))
    return max(1, math.ceil(count))


class RandomFourierFeatures(TransformerMixin, BaseEstimator):
    """Unit-norm RBF feature map as a scikit-learn transformer.

    Parameters
    ----------
    gamma : float, default=0.5
        RBF bandwidth in ``exp(-gamma * ||x - y||^2)``.
    n_pairs : int or None, default=None
        Number of cos-sin pairs ``d``; output has ``2 * d`` columns. When
        None it is taken from :func:`recommended_feature_count`.
    r_min, delta : float
        Margin target and failure probability used when ``n_pairs`` is None.
    feature_constant : float, default=1.0
        Multiplier in the recommended feature count.
    random_state : int or None
        Seed for the frequency draw.

    Attributes
    ----------
    rff_map_ : RffMap
    n_pairs_ : int
    n_features_in_ : int
    """

    def __init__(self, gamma=0.5, n_pairs=None, r_min=0.5, delta=0.005,
                 feature_constant=1.0, random_state=None):
        self.gamma = gamma
        self.n_pairs = n_pairs
        self.r_min = r_min
        self.delta = delta
        self.feature_constant = feature_constant
        self.random_state = random_state

    def fit(self, X, y=None):
        X = as_matrix(X)
        self.n_features_in_ = X.shape[1]
        return self._fit_dim(X.shape[1])

    def _fit_dim(self, input_dim):
        self.n_features_in_ = input_dim
        if self.n_pairs is None:
            n_pairs = recommended_feature_count(
                input_dim, self.r_min, self.delta, self.feature_constant
            )
        else:
            n_pairs = int(self.n_pairs)
        seed = self.random_state
        if seed is None:
            seed = int(np.random.default_rng().integers(2**63))
        self.n_pairs_ = n_pairs
        self.rff_map_ = sample_rff(RffConfig(self.gamma, n_pairs, input_dim, int(seed)))
        return self

    def transform(self, X):
        if not hasattr(self, "rff_map_"):
            raise NotFittedError("RandomFourierFeatures is not fitted")
        X = as_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise InputError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return embed_many(self.rff_map_, X)
