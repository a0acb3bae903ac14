import json
import math

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from src.beam_dynamics import NonlinearitySpec, Scheme
from src.errors import DomainError, InsufficientDataError, ParameterError
from src.experiments import (
    LIFESPAN_COLUMNS,
    MASS_SCAN_COLUMNS,
    csv_text,
    delta_of_p,
    fit_exponent,
    json_text,
    lifespan_sweep,
    mass_scan,
    optimal_p,
    write_csv_atomic,
    write_json_atomic,
)
from src.weighted_spaces import Weight, WeightKind


def test_fit_exponent_exact_power_law():
    deltas = [0.1, 0.05, 0.02, 0.01]
    result = fit_exponent([(d, 1.0 / d) for d in deltas])
    assert_allclose(result.slope, 1.0, rtol=1e-12)
    assert_allclose(result.intercept, 0.0, atol=1e-12)
    assert_allclose(result.r_squared, 1.0, rtol=1e-12)
    assert result.used == 4


def test_fit_exponent_recovers_cubic_law_with_noise():
    rng = np.random.default_rng(0)
    deltas = np.logspace(-3, -1, 12)
    T = 7.0 * deltas ** -3 * np.exp(0.05 * rng.standard_normal(deltas.size))
    result = fit_exponent(pd.DataFrame({"delta": deltas, "T_escape": T, "censored": False}))
    assert abs(result.slope - 3.0) <= 0.1
    assert_allclose(result.intercept, math.log(7.0), atol=0.3)


def test_fit_exponent_excludes_censored_points():
    series = [(0.1, 10.0, False), (0.05, 20.0, False), (0.02, 50.0, False), (0.01, 1000.0, True)]
    result = fit_exponent(series)
    assert result.used == 3
    assert result.excluded == [(0.01, 1000.0)]
    assert result.to_dict()["excluded"] == [[0.01, 1000.0]]
    with pytest.raises(InsufficientDataError):
        fit_exponent([(d, 1.0, True) for d in (0.1, 0.05, 0.02)])
    with pytest.raises(ParameterError):
        fit_exponent([(0.1, 1.0), (0.05, -1.0), (0.02, 3.0)])


def test_optimal_p_limit_and_inverse():
    delta_S = 1.0 / 32.0
    assert_allclose(optimal_p(delta_S * (1 - 1e-12), 0.5, delta_S), 1.0, atol=1e-6)
    for delta in (1e-3, 1e-6, 1e-12):
        p = optimal_p(delta, 0.5, delta_S, c=0.7)
        assert_allclose(delta_of_p(p, 0.5, delta_S, c=0.7), delta, rtol=1e-9)
    values = [optimal_p(d, 0.5, delta_S) for d in np.logspace(-20, -2, 10)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_optimal_p_errors():
    with pytest.raises(DomainError):
        optimal_p(0.1, 0.5, 0.05)
    with pytest.raises(ParameterError):
        optimal_p(0.01, 1.5, 0.05)
    with pytest.raises(ParameterError):
        delta_of_p(0.5, 0.5, 0.05)


def test_lifespan_sweep_is_deterministic():
    M = 2
    w = Weight(WeightKind.sobolev, 2.0, M)
    kwargs = dict(
        deltas=[0.05, 0.02],
        spec=NonlinearitySpec.cubic(),
        M=M,
        m=1.37,
        w=w,
        horizon=0.5,
        dt=1e-2,
        scheme=Scheme.strang,
        sample_every=5,
        seed=3,
    )
    table, trajectories = lifespan_sweep(**kwargs)
    again, _ = lifespan_sweep(**kwargs)
    assert list(table.columns) == LIFESPAN_COLUMNS
    assert list(table["delta"]) == [0.05, 0.02]
    assert table["censored"].all()
    pd.testing.assert_frame_equal(table, again)
    assert set(trajectories) == {0.05, 0.02}
    assert_allclose(trajectories[0.05]["norm_w"].iloc[0], 0.05, rtol=1e-12)
    with pytest.raises(ParameterError):
        lifespan_sweep(**{**kwargs, "deltas": []})


@pytest.mark.slow
def test_lifespan_sweep_parallel_matches_serial():
    M = 2
    w = Weight(WeightKind.sobolev, 2.0, M)
    args = ([0.05, 0.02, 0.01], NonlinearitySpec.cubic(), M, 1.37, w, 0.2, 1e-2)
    serial, _ = lifespan_sweep(*args, sample_every=5, seed=1)
    parallel, _ = lifespan_sweep(*args, sample_every=5, seed=1, n_jobs=2)
    pd.testing.assert_frame_equal(serial, parallel)


def test_mass_scan_rows_follow_grid():
    table = mass_scan([1.1, 1.5, 1.9], 1e-3, 3, 2)
    assert list(table.columns) == MASS_SCAN_COLUMNS
    assert list(table["m"]) == [1.1, 1.5, 1.9]
    assert list(table["index"]) == [0, 1, 2]
    assert table["passed"].all()
    with pytest.raises(ParameterError):
        mass_scan([], 1e-3, 3, 2)


def test_csv_keeps_full_precision(tmp_path):
    df = pd.DataFrame({"x": [1.0 / 3.0, math.pi], "flag": [True, False]})
    text = csv_text(df)
    assert text.splitlines()[0] == "x,flag"
    assert repr(1.0 / 3.0) in text or "0.33333333333333331" in text
    path = write_csv_atomic(df, tmp_path / "nested" / "table.csv")
    loaded = pd.read_csv(path, float_precision="round_trip")
    assert loaded["x"].tolist() == df["x"].tolist()
    assert [p.name for p in path.parent.iterdir()] == ["table.csv"]


def test_json_text_handles_numpy_and_sorts_keys(tmp_path):
    payload = {"b": np.float64(0.5), "a": np.int64(3), "c": np.bool_(True), "z": 1 + 2j}
    text = json_text(payload)
    assert json.loads(text) == {"a": 3, "b": 0.5, "c": True, "z": [1.0, 2.0]}
    assert text.index('"a"') < text.index('"b"')
    path = write_json_atomic(payload, tmp_path / "record.json")
    assert json.loads(path.read_text(encoding="utf-8"))["a"] == 3
    with pytest.raises(TypeError):
        json_text({"bad": object()})
