import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sonar_ocsvm import ConfigError, InputError, NotFittedError
from sonar_ocsvm.kernel_features import (
    RandomFourierFeatures,
    RffConfig,
    embed,
    embed_many,
    kernel_exact,
    recommended_feature_count,
    sample_rff,
)

from .oracles import cos_kernel_sum

finite = st.floats(-50, 50, allow_nan=False)


def test_sample_shape_and_determinism():
    cfg = RffConfig(gamma=0.5, num_pairs=1, input_dim=2, seed=7)
    a, b = sample_rff(cfg), sample_rff(cfg)
    assert a.omegas.shape == (1, 2)
    assert np.array_equal(a.omegas, b.omegas)
    assert not sample_rff(RffConfig(0.5, 1, 2, seed=8)).omegas.tolist() == a.omegas.tolist()


def test_frequencies_are_read_only():
    m = sample_rff(RffConfig(0.5, 3, 2, 0))
    with pytest.raises(ValueError):
        m.omegas[0, 0] = 1.0


def test_sampling_covariance_is_identity_for_half_gamma():
    m = sample_rff(RffConfig(gamma=0.5, num_pairs=100_000, input_dim=2, seed=1))
    cov = np.cov(m.omegas.T)
    assert np.all(np.abs(cov - np.eye(2)) < 0.05)


@pytest.mark.parametrize("kwargs", [
    dict(gamma=0.0, num_pairs=1, input_dim=2),
    dict(gamma=-1.0, num_pairs=1, input_dim=2),
    dict(gamma=0.5, num_pairs=0, input_dim=2),
    dict(gamma=0.5, num_pairs=1, input_dim=0),
    dict(gamma=float("nan"), num_pairs=1, input_dim=2),
])
def test_bad_config(kwargs):
    with pytest.raises(ConfigError):
        RffConfig(**kwargs)


@given(arrays(np.float64, 3, elements=finite), st.integers(1, 40), st.integers(0, 2**32))
def test_embedding_is_unit_norm(x, d, seed):
    m = sample_rff(RffConfig(0.7, d, 3, seed))
    assert abs(np.linalg.norm(embed(m, x)) - 1.0) <= 1e-9


@given(arrays(np.float64, 2, elements=finite), arrays(np.float64, 2, elements=finite))
def test_inner_product_matches_cosine_sum(x, y):
    m = sample_rff(RffConfig(0.5, 17, 2, 3))
    assert embed(m, x) @ embed(m, y) == pytest.approx(cos_kernel_sum(m.omegas, x, y), abs=1e-12)


def test_embed_dimension_mismatch():
    m = sample_rff(RffConfig(0.5, 4, 2, 0))
    with pytest.raises(InputError):
        embed(m, np.zeros(3))
    with pytest.raises(InputError):
        embed_many(m, np.zeros((5, 3)))


def test_kernel_exact_values():
    x = np.array([0.3, -1.2])
    assert kernel_exact(x, x, 2.0) == 1.0
    assert kernel_exact([0, 0], [1, 0], 0.5) == pytest.approx(math.exp(-0.5))
    assert kernel_exact([0, 0], [1, 0], 500.0) < 1e-200
    with pytest.raises(InputError):
        kernel_exact([0, 0], [0, 0, 0], 0.5)
    with pytest.raises(ConfigError):
        kernel_exact([0, 0], [1, 0], 0.0)


def test_monte_carlo_kernel_consistency():
    x, y = np.array([0.4, -0.2]), np.array([-0.5, 0.9])
    vals = np.array([embed(m, x) @ embed(m, y)
                     for m in (sample_rff(RffConfig(0.5, 8, 2, s)) for s in range(2000))])
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean() - kernel_exact(x, y, 0.5)) <= 3 * se


def test_recommended_count():
    assert recommended_feature_count(2, 0.5, 0.005) == 60
    assert recommended_feature_count(2, 0.5, 0.005) == math.ceil(8 * math.log(1600))
    assert recommended_feature_count(2, 0.25, 0.005) > 4 * 60
    assert recommended_feature_count(2, 0.5, 0.005, constant=2.0) == math.ceil(16 * math.log(1600))
    for bad in [(2, 0.5, 1.0), (2, 0.0, 0.1), (2, 1.0, 0.1), (0, 0.5, 0.1), (2, 0.5, 0.0)]:
        with pytest.raises(ConfigError):
            recommended_feature_count(*bad)


@pytest.mark.parametrize("seed", range(5))
def test_kernel_error_within_half_rmin_on_data_pairs(seed):
    from sonar_ocsvm.streams import generate_arrays, preset

    rng = np.random.default_rng(seed)
    d = recommended_feature_count(2, 0.5, 0.005)
    m = sample_rff(RffConfig(0.5, d, 2, 100 + seed))
    data, _ = generate_arrays(preset("stationary2", seed=seed, scale=0.1))
    idx = rng.integers(0, len(data), (1000, 2))
    X, Y = data[idx[:, 0]], data[idx[:, 1]]
    approx = np.einsum("ij,ij->i", embed_many(m, X), embed_many(m, Y))
    exact = np.exp(-0.5 * np.sum((X - Y) ** 2, axis=1))
    assert np.max(np.abs(approx - exact)) <= 0.25


def test_small_diameter_data_lies_in_a_cap():
    # diameter B with exp(-gamma B^2) >= r_min
    gamma, r_min = 0.5, 0.5
    B = math.sqrt(-math.log(r_min) / gamma)
    rng = np.random.default_rng(1)
    theta = rng.uniform(0, 2 * np.pi, 400)
    rad = B / 2 * np.sqrt(rng.uniform(size=400))
    X = np.column_stack([rad * np.cos(theta), rad * np.sin(theta)])
    m = sample_rff(RffConfig(gamma, recommended_feature_count(2, r_min, 0.005), 2, 5))
    Z = embed_many(m, X)
    assert np.min(Z @ Z.T) >= r_min / 2


def test_transformer():
    X = np.random.default_rng(2).normal(size=(10, 3))
    tf = RandomFourierFeatures(random_state=4)
    with pytest.raises(NotFittedError):
        tf.transform(X)
    Z = tf.fit_transform(X)
    assert Z.shape == (10, 2 * recommended_feature_count(3, 0.5, 0.005))
    assert np.allclose(np.linalg.norm(Z, axis=1), 1.0)
    assert np.array_equal(Z, RandomFourierFeatures(random_state=4).fit(X).transform(X))
    assert RandomFourierFeatures(n_pairs=5, random_state=0).fit_transform(X).shape == (10, 10)
    with pytest.raises(InputError):
        tf.transform(X[:, :2])
