import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sonar_ocsvm import ConfigError
from sonar_ocsvm.sonar import NORMAL, OUTLIER
from sonar_ocsvm.streams import (
    PRESETS,
    DataError,
    PhaseSpec,
    RunningStandardizer,
    generate,
    generate_arrays,
    ingest_csv,
    preset,
    read_csv_arrays,
    standardize,
    standardize_array,
    write_csv,
)

from .oracles import batch_mean_var


def test_stationary_environment():
    (phase,) = preset("stationary2")
    assert phase.length == 20000 and phase.std == 0.3
    assert phase.centers == ((-2.0, 2.0), (2.0, -2.0))


def test_preset_shapes():
    t = preset("transfer2")
    assert [p.length for p in t] == [10000, 10000] and [p.std for p in t] == [0.6, 0.3]
    assert all(p.centers == ((-2.0, -2.0), (2.0, 2.0)) for p in t)
    adv = preset("adversarial10", seed=3)
    assert len(adv) == 10 and all(p.std == 0.3 for p in adv)
    assert all(-5 <= c <= 5 for p in adv for center in p.centers for c in center)
    assert adv[0].centers != preset("adversarial10", seed=4)[0].centers
    h = preset("hemisphere2")
    assert [p.length for p in h] == [5000, 5000]
    assert [p.centers[0] for p in h] == [(0.0, 0.0), (0.75, 0.0)]
    assert len(preset("mild4")) == 4
    assert sum(p.length for p in preset("mild4", scale=0.01)) == 400


def test_unknown_preset_lists_valid_names():
    with pytest.raises(ConfigError) as info:
        preset("nope")
    for name in PRESETS:
        assert name in str(info.value)


def test_zero_noise_sits_on_centers():
    X, _ = generate_arrays([PhaseSpec(200, [(1, 2), (-3, 0)], 0.0, seed=1)])
    assert set(map(tuple, X)) <= {(1.0, 2.0), (-3.0, 0.0)}


def test_truncated_disk_samples_stay_inside():
    X, _ = generate_arrays([PhaseSpec(100_000, [(0.75, 0.0)], 1.0, "truncated_disk_gaussian", seed=2)])
    assert X.shape == (100_000, 2)
    assert np.all(np.einsum("ij,ij->i", X, X) <= 1.0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_phase_mean_matches_mixture_mean(seed):
    spec = PhaseSpec(20000, [(-2, 2), (2, -2), (1, 1)], 0.3, seed=seed)
    X = spec.sample()
    centers = np.array(spec.centers)
    mean = centers.mean(axis=0)
    # mixture variance = noise variance + spread of the centers
    sigma = np.sqrt(0.09 + ((centers - mean) ** 2).mean(axis=0))
    assert np.all(np.abs(X.mean(axis=0) - mean) <= 4 * sigma / np.sqrt(len(X)))


def test_phase_validation():
    for bad in (dict(length=0, centers=[(0, 0)]), dict(length=5, centers=[]),
                dict(length=5, centers=[(0, 0)], std=-1.0),
                dict(length=5, centers=[(0, 0)], kind="uniform"),
                dict(length=5, centers=[(0, 0)], std=0.0, kind="truncated_disk_gaussian")):
        with pytest.raises(ConfigError):
            PhaseSpec(**bad)
    with pytest.raises(ConfigError):
        generate_arrays([])
    with pytest.raises(ConfigError):
        generate_arrays([PhaseSpec(2, [(0, 0)]), PhaseSpec(2, [(0, 0, 0)])])


def test_generation_is_deterministic_and_phase_tagged():
    a = list(generate(preset("mild4", seed=5, scale=0.01)))
    b = list(generate(preset("mild4", seed=5, scale=0.01)))
    assert all(np.array_equal(x.x_raw, y.x_raw) for x, y in zip(a, b))
    assert [e.phase_id for e in a] == sorted(e.phase_id for e in a)
    assert [e.index for e in a] == list(range(len(a)))
    assert all(e.label is None for e in a)


# -- standardization ---------------------------------------------------------

def test_first_point_maps_to_zero():
    _, z = standardize(RunningStandardizer(), np.array([3.0, -1.0]))
    assert np.array_equal(z, [0.0, 0.0])


def test_constant_stream_maps_to_zero():
    assert np.all(standardize_array(np.full((50, 3), 7.5)) == 0.0)


def test_welford_matches_batch():
    X = np.random.default_rng(0).normal(5.0, 3.0, (10_000, 3))
    state = RunningStandardizer()
    for x in X:
        state, _ = standardize(state, x)
    mean, var = batch_mean_var(X)
    assert np.allclose(state.mean, mean, rtol=1e-9)
    assert np.allclose(state.variance, var, rtol=1e-9)


@given(arrays(np.float64, (30, 2), elements=st.floats(-1e6, 1e6)))
def test_welford_m2_non_negative(X):
    state = RunningStandardizer()
    for x in X:
        state, z = standardize(state, x)
        assert np.all(state.m2 >= 0) and np.all(np.isfinite(z))


def test_exclusive_ordering():
    X = np.array([[1.0], [3.0], [5.0]])
    out = standardize_array(X, inclusive=False)
    assert out[0, 0] == 0.0  # nothing seen yet
    assert out[1, 0] == pytest.approx((3 - 1) / 1e-6)  # var floored
    assert out[2, 0] == pytest.approx((5 - 2) / 1.0)
    inc = standardize_array(X)
    assert inc[1, 0] == pytest.approx(1.0)


# -- CSV ---------------------------------------------------------------------------

def test_unlabeled_csv(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("a,b\n1,2\n3,4\n5,6\n")
    events = list(ingest_csv(p))
    assert len(events) == 3 and all(e.label is None for e in events)
    assert events[2].x_raw.tolist() == [5.0, 6.0]


def test_skab_style_csv(tmp_path):
    p = tmp_path / "valve.csv"
    p.write_text("datetime;x1;x2;anomaly;changepoint\n"
                 "2020-03-09 10:14:33;0.1;0.2;0.0;0.0\n"
                 "2020-03-09 10:14:34;0.3;0.4;1.0;1.0\n")
    X, labels, _ = read_csv_arrays(p, None, "anomaly", delimiter=";",
                                   exclude_columns=["datetime", "changepoint"])
    assert X.tolist() == [[0.1, 0.2], [0.3, 0.4]]
    assert labels == [NORMAL, OUTLIER]


def test_empty_file(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    assert list(ingest_csv(p)) == []


def test_bad_rows_report_index(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n1,2\n3,oops\n")
    with pytest.raises(DataError) as info:
        list(ingest_csv(p))
    assert info.value.row == 2
    p.write_text("a,b,label\n1,2,maybe\n")
    with pytest.raises(DataError, match="unmapped"):
        list(ingest_csv(p, label_column="label"))
    p.write_text("a,b\n1,2,3\n")
    with pytest.raises(DataError, match="fields"):
        list(ingest_csv(p))
    with pytest.raises(DataError, match="not in header"):
        list(ingest_csv(p, feature_columns=["zz"]))
    with pytest.raises(DataError):
        list(ingest_csv(tmp_path / "missing.csv"))


def test_write_read_round_trip(tmp_path):
    events = list(generate(preset("transfer2", seed=1, scale=0.002)))
    p = tmp_path / "s.csv"
    write_csv(events, p)
    back = list(ingest_csv(p, phase_column="phase_id"))
    assert len(back) == len(events)
    assert all(np.array_equal(a.x_raw, b.x_raw) for a, b in zip(events, back))
    assert [a.phase_id for a in events] == [b.phase_id for b in back]
    # metadata columns are not mistaken for features
    assert back[0].x_raw.shape == (2,)
