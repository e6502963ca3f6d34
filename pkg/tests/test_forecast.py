import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from robust_vvc import forecast as fc
from robust_vvc.grid import load_case

# two-sided 95% Gaussian quantile, from scipy as an independent routine
Z95 = 1.959963984540054


def test_z_value_against_scipy():
    from scipy.stats import norm
    for d in (0.5, 0.9, 0.95, 0.99):
        assert fc.z_value(d) == pytest.approx(norm.ppf(0.5 + d / 2), abs=1e-12)
    assert fc.z_value(0.95) == pytest.approx(Z95, abs=1e-12)
    with pytest.raises(fc.ForecastError):
        fc.z_value(1.0)


def test_constant_history_is_degenerate():
    h = np.full((300, 3, 4), 0.7)
    iv = fc.predict_interval(h, 5.0)
    assert np.array_equal(iv.lower, iv.upper) and np.all(iv.upper == 0.7)


def test_half_width_example():
    # innovations alternate +-a with sample std 0.1 exactly
    n = 301
    steps = np.where(np.arange(n - 1) % 2 == 0, 1.0, -1.0)
    a = 0.1 / np.std(steps, ddof=1)
    x = np.concatenate([[5.0], 5.0 + np.cumsum(steps * a)])
    h = np.broadcast_to(x[:, None, None], (n, 3, 1)).copy()
    iv = fc.predict_interval(h, 4.0, 0.95, 1.0)
    half = (iv.upper - iv.lower) / 2
    assert np.allclose(half, 0.391993, atol=1e-6)
    assert np.allclose(half, Z95 * 0.1 * 2, atol=1e-12)


def test_width_grows_with_horizon():
    rng = np.random.default_rng(0)
    h = 10 + np.cumsum(rng.normal(0, 0.1, (300, 3, 5)), axis=0)
    w1 = fc.predict_interval(h, 1.0)
    w10 = fc.predict_interval(h, 10.0)
    assert np.all(w10.upper - w10.lower >= w1.upper - w1.lower)


def test_errors():
    with pytest.raises(fc.ForecastError):
        fc.predict_interval(np.zeros((1, 3, 2)), 1.0)
    with pytest.raises(fc.ForecastError):
        fc.predict_interval(np.zeros((10, 3, 2)), 0.0)
    buf = fc.HistoryBuffer(2, window_s=10)
    buf.push(np.zeros((3, 2)))
    with pytest.raises(fc.ForecastError, match="warm"):
        fc.predict_interval(buf, 1.0)


def test_history_buffer_ring():
    buf = fc.HistoryBuffer(1, window_s=5, period_s=1)
    states = np.arange(8, dtype=float)[:, None, None] * np.ones((8, 3, 1))
    buf.extend(states)
    assert buf.warm and len(buf) == 5
    assert np.array_equal(buf.array()[:, 0, 0], [3, 4, 5, 6, 7])


def test_sample_select_examples():
    iv = fc.PredictionInterval(np.full((3, 1), 0.8), np.full((3, 1), 1.2), 1.0, 0.95)
    ss = fc.sample_select(iv)
    assert np.allclose(ss.states[:, 0, 0], [1.2, 0.8, 1.0])
    x = np.full((3, 2), 0.3)
    ss = fc.sample_select(fc.PredictionInterval(x, x, 1.0, 0.95))
    assert np.all(ss.states == 0.3)


@settings(max_examples=200, deadline=None)
@given(arrays(float, (2, 3, 4), elements=st.floats(-10, 10)))
def test_sample_ordering_and_idempotence(ab):
    lo, hi = np.minimum(ab[0], ab[1]), np.maximum(ab[0], ab[1])
    ss = fc.sample_select(fc.PredictionInterval(lo, hi, 1.0, 0.95))
    assert np.all(ss.lower <= ss.median) and np.all(ss.median <= ss.upper)
    again = fc.sample_select(fc.PredictionInterval(ss.lower, ss.upper, 1.0, 0.95))
    assert np.array_equal(again.states, ss.states)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), horizon=st.floats(0.5, 20), level=st.floats(-1, 2))
def test_clipping_never_inverts(seed, horizon, level):
    rng = np.random.default_rng(seed)
    h = level + np.cumsum(rng.normal(0, 0.3, (50, 3, 3)), axis=0)
    limit = np.full((3, 3), 0.5)
    iv = fc.predict_interval(h, horizon, 0.95, 1.0, limit)
    assert np.all(iv.lower <= iv.upper)
    assert np.all(iv.lower >= 0) and np.all(iv.upper <= limit)


def test_empirical_coverage():
    # the generator's own innovation model: AR(1) with coefficient 0.998
    rng = np.random.default_rng(7)
    n_hist, horizon, draws = 300, 5, 6000
    phi, std = 0.998, 0.004
    x = np.empty((n_hist + horizon, draws))
    x[0] = rng.normal(0, std / np.sqrt(1 - phi * phi), draws)
    for k in range(1, len(x)):
        x[k] = phi * x[k - 1] + rng.normal(0, std, draws)
    x += 1.0
    hist = x[:n_hist].reshape(n_hist, 3, draws // 3)
    iv = fc.predict_interval(hist, float(horizon), 0.95, 1.0)
    real = x[n_hist + horizon - 1].reshape(3, draws // 3)
    cover = np.mean((real >= iv.lower) & (real <= iv.upper))
    assert cover >= 0.93


def test_generate_profiles():
    net = load_case("toy6")
    a = fc.generate_profiles(3, 600, net)
    b = fc.generate_profiles(3, 600, net)
    assert np.array_equal(a.data, b.data) and len(a) == 600 and a.period_s == 1.0
    pmax = np.zeros(net.n_bus)
    for inv in net.inverters:
        pmax[inv.bus - 1] = inv.p_max
    assert np.all(a.data[:, fc.PV_P] >= 0) and np.all(a.data[:, fc.PV_P] <= pmax)
    assert np.all(a.data[:, fc.LOAD_P] >= 0) and np.all(a.data[:, fc.LOAD_Q] >= 0)

    smooth = fc.generate_profiles(3, 600, net, noise_std=0.0)
    t = np.arange(600.0)
    env_pv = np.exp(-(((t - 300.0) / (600.0 / 6.0)) ** 2))
    assert np.allclose(smooth.data[:, fc.PV_P], env_pv[:, None] * pmax[None, :], atol=1e-15)
    env_load = 1 + 0.1 * np.cos(2 * np.pi * t / 600.0)
    assert np.allclose(smooth.data[:, fc.LOAD_P], env_load[:, None] * net.load_p, atol=1e-15)


def test_profile_csv_round_trip(tmp_path):
    net = load_case("toy6")
    prof = fc.generate_profiles(1, 20, net)
    path = tmp_path / "p.csv"
    fc.write_profiles(str(path), prof, net)
    back = fc.read_profiles(str(path), net)
    assert np.array_equal(back.data, prof.data)
    bad = tmp_path / "bad.csv"
    bad.write_text("t_s,bus\n0,1\n")
    with pytest.raises(fc.ForecastError):
        fc.read_profiles(str(bad), net)


def test_window():
    net = load_case("toy6")
    prof = fc.generate_profiles(1, 20, net)
    assert prof.window(9, 5).shape == (5, 3, 6)
    with pytest.raises(fc.ForecastError):
        prof.window(3, 5)
