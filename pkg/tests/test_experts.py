import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowmm.env import ScenarioConfig
from flowmm.errors import InputError
from flowmm.experts import (
    ASParams,
    GLFTParams,
    as_quotes,
    calibrated_params,
    default_candidates,
    expert_code,
    glft_c1_c2,
    glft_drift_quotes,
    glft_quotes,
    random_quotes,
)
from flowmm.seeding import make_rng

mp = pytest.importorskip("mpmath")
mp.mp.dps = 50


def mp_as(q, t, p):
    g, s, k = mp.mpf(p.risk_aversion), mp.mpf(p.volatility), mp.mpf(p.order_decay)
    tau = mp.mpf(p.horizon) - mp.mpf(t)
    base = g * s**2 * tau / 2 + mp.log(1 + g / k) / g
    skew = q * g * s**2 * tau
    return float(base - skew), float(base + skew)


def mp_glft(q, p):
    g, s, k, a = (mp.mpf(p.risk_aversion), mp.mpf(p.volatility),
                  mp.mpf(p.order_decay), mp.mpf(p.base_arrival))
    c1 = mp.log(1 + g / k) / g
    c2 = mp.sqrt(g / (2 * a * k) * (1 + g / k) ** (k / g + 1))
    return float(c1 + s * c2 / 2 + s * c2 * q), float(c1 + s * c2 / 2 - s * c2 * q)


def mp_glft_drift(q, p):
    g, s, k, a, mu = (mp.mpf(p.risk_aversion), mp.mpf(p.volatility),
                      mp.mpf(p.order_decay), mp.mpf(p.base_arrival), mp.mpf(p.drift))
    c1 = mp.log(1 + g / k) / g
    root = mp.sqrt(s**2 / (2 * k * a) * (1 + g / k) ** (1 + k / g))
    bid = c1 + (-mu / (g * s**2) + (2 * q + 1) / mp.mpf(2)) * root
    ask = c1 + (mu / (g * s**2) - (2 * q - 1) / mp.mpf(2)) * root
    return float(bid), float(ask)


# ---------------------------------------------------------------------------
# Terminal-horizon (AS) spreads
# ---------------------------------------------------------------------------

def test_as_symmetric_at_zero_inventory():
    p = ASParams(0.1, 0.3, 1.5, 1.0)
    quote = as_quotes(0, 0.25, p)
    assert quote.delta_bid == quote.delta_ask


def test_as_at_terminal_time():
    p = ASParams(0.1, 0.3, 1.5, 1.0)
    quote = as_quotes(5, 1.0, p)
    expected = math.log1p(0.1 / 1.5) / 0.1
    assert abs(quote.delta_bid - expected) < 1e-14
    assert abs(quote.delta_ask - expected) < 1e-14


def test_as_spot_value():
    p = ASParams(0.1, 0.3, 1.5, 1.0)
    quote = as_quotes(1, 0.5, p)  # tau = 0.5
    bid, ask = mp_as(1, 0.5, p)
    assert abs(quote.delta_bid - bid) < 1e-12
    assert abs(quote.delta_ask - ask) < 1e-12
    assert abs(quote.delta_bid - 0.643135) < 1e-6
    assert abs(quote.delta_ask - 0.652135) < 1e-6


def test_as_symmetry_under_inventory_negation():
    p = ASParams(0.2, 0.4, 2.0, 1.0)
    a = as_quotes(3, 0.2, p)
    b = as_quotes(-3, 0.2, p)
    assert a.delta_bid == b.delta_ask
    assert a.delta_ask == b.delta_bid


def test_as_skew_sign():
    p = ASParams(0.1, 0.3, 1.5, 1.0)
    q_pos = as_quotes(2, 0.0, p)
    assert q_pos.delta_bid < q_pos.delta_ask
    q_neg = as_quotes(-2, 0.0, p)
    assert q_neg.delta_bid > q_neg.delta_ask


def test_as_clamps_at_zero():
    p = ASParams(1.0, 1.0, 1.0, 10.0)
    quote = as_quotes(50, 0.0, p)  # huge positive inventory drives bid negative
    assert quote.delta_bid == 0.0


# ---------------------------------------------------------------------------
# Stationary (GLFT) spreads
# ---------------------------------------------------------------------------

def test_glft_symmetric_at_zero_inventory():
    p = GLFTParams(0.1, 0.3, 1.5, 20.0)
    c1, c2 = glft_c1_c2(p)
    quote = glft_quotes(0, p)
    assert abs(quote.delta_bid - (c1 + 0.3 * c2 / 2)) < 1e-14
    assert quote.delta_bid == quote.delta_ask


def test_glft_total_spread_independent_of_inventory():
    p = GLFTParams(0.1, 0.1, 1.5, 20.0)
    base = glft_quotes(0, p)
    total0 = base.delta_bid + base.delta_ask
    for q in range(-10, 11):
        quote = glft_quotes(q, p)
        assert abs(quote.delta_bid + quote.delta_ask - total0) < 1e-12


def test_glft_spot_value():
    p = GLFTParams(0.1, 0.3, 1.5, 20.0)
    quote = glft_quotes(2, p)
    bid, ask = mp_glft(2, p)
    assert abs(quote.delta_bid - bid) < 1e-12
    assert abs(quote.delta_ask - max(ask, 0.0)) < 1e-12


# ---------------------------------------------------------------------------
# Drift-skewed variant
# ---------------------------------------------------------------------------

def test_glft_drift_reduces_to_symmetric():
    p = GLFTParams(0.1, 0.3, 1.5, 20.0, drift=0.0)
    quote = glft_drift_quotes(0, p)
    c1 = math.log1p(0.1 / 1.5) / 0.1
    root = math.sqrt(0.3**2 / (2 * 1.5 * 20.0) * (1 + 0.1 / 1.5) ** (1 + 15.0))
    assert abs(quote.delta_bid - (c1 + root / 2)) < 1e-12
    assert quote.delta_bid == quote.delta_ask


def test_glft_drift_leans_into_trend():
    p = GLFTParams(0.1, 0.3, 1.5, 20.0, drift=0.05)
    quote = glft_drift_quotes(0, p)
    assert quote.delta_bid < quote.delta_ask


def test_glft_drift_spot_values():
    p = GLFTParams(0.1, 0.2, 1.5, 15.0, drift=0.03)
    for q in (-3, 0, 2, 7):
        quote = glft_drift_quotes(q, p)
        bid, ask = mp_glft_drift(q, p)
        assert abs(quote.delta_bid - max(bid, 0.0)) < 1e-12
        assert abs(quote.delta_ask - max(ask, 0.0)) < 1e-12


def test_glft_drift_rejects_zero_volatility():
    with pytest.raises(InputError):
        glft_drift_quotes(0, GLFTParams(0.1, 0.0, 1.5, 20.0, drift=0.1))


# ---------------------------------------------------------------------------
# Random quoter
# ---------------------------------------------------------------------------

def test_random_quotes_bounds_and_mean():
    rng = make_rng(0, 0)
    n = 100_000
    draws = np.array([(q.delta_bid, q.delta_ask) for q in
                      (random_quotes(rng, 0.5) for _ in range(n))])
    assert np.all(draws >= 0) and np.all(draws <= 0.5)
    se = 0.5 / math.sqrt(12 * n)
    assert abs(draws[:, 0].mean() - 0.25) < 3 * se
    assert abs(draws[:, 1].mean() - 0.25) < 3 * se


def test_random_quotes_deterministic_for_equal_seeds():
    a = random_quotes(make_rng(5, 1), 2.0)
    b = random_quotes(make_rng(5, 1), 2.0)
    assert (a.delta_bid, a.delta_ask) == (b.delta_bid, b.delta_ask)


def test_random_quotes_rejects_bad_range():
    with pytest.raises(InputError):
        random_quotes(make_rng(0, 0), 0.0)


# ---------------------------------------------------------------------------
# Properties over parameter sweeps
# ---------------------------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(
    gamma=st.floats(0.01, 2.0),
    sigma=st.floats(0.0, 1.0),
    k=st.floats(0.1, 10.0),
    tau=st.floats(0.0, 1.0),
    q=st.integers(-10, 10),
)
def test_as_outputs_finite_and_swap_symmetric(gamma, sigma, k, tau, q):
    p = ASParams(gamma, sigma, k, 1.0)
    a = as_quotes(q, 1.0 - tau, p)
    b = as_quotes(-q, 1.0 - tau, p)
    assert math.isfinite(a.delta_bid) and math.isfinite(a.delta_ask)
    assert a.delta_bid >= 0.0 and a.delta_ask >= 0.0
    assert a.delta_bid == b.delta_ask and a.delta_ask == b.delta_bid


@settings(max_examples=100, deadline=None)
@given(
    gamma=st.floats(0.01, 1.0),
    sigma=st.floats(0.0, 0.5),
    k=st.floats(0.5, 5.0),
    a_rate=st.floats(1.0, 50.0),
    q=st.integers(-10, 10),
)
def test_glft_outputs_finite(gamma, sigma, k, a_rate, q):
    p = GLFTParams(gamma, sigma, k, a_rate)
    quote = glft_quotes(q, p)
    assert math.isfinite(quote.delta_bid) and math.isfinite(quote.delta_ask)
    assert quote.delta_bid >= 0.0 and quote.delta_ask >= 0.0


# ---------------------------------------------------------------------------
# Calibration and tags
# ---------------------------------------------------------------------------

def test_calibrated_params_tie_to_scenario():
    cfg = ScenarioConfig(volatility=0.3, spread_sensitivity=2.0,
                         base_intensity_buy=30.0, base_intensity_sell=10.0, drift=0.05)
    as_p, glft_p = calibrated_params(cfg)
    assert as_p.volatility == 0.3 and as_p.order_decay == 2.0 and as_p.horizon == cfg.horizon
    assert glft_p.base_arrival == 20.0 and glft_p.drift == 0.05


def test_default_candidates_order():
    cfg = ScenarioConfig()
    names = [c.name for c in default_candidates(cfg)]
    assert names == ["as", "glft", "glft_drift"]


def test_expert_codes():
    assert expert_code("as") == 0
    assert expert_code("glft") == 1
    with pytest.raises(InputError):
        expert_code("bogus")
