import math

import numpy as np
import pytest

from flowmm.env import (
    HawkesState,
    MarketEnv,
    QuoteAction,
    ScenarioConfig,
    config_from_text,
    config_to_text,
    hawkes_add_event,
    hawkes_decay,
    hawkes_intensity,
    naive_intensity,
    reset,
    simulate_fill_events,
    simulate_price_path,
    simulate_price_paths,
    with_overrides,
    write_trace_csv,
)
from flowmm.errors import InputError, LoadError, UsageError
from flowmm.seeding import make_rng

BIG = 1e9  # wide enough that exp(-k * BIG) underflows to 0


def quiet_config(**kw):
    base = dict(volatility=0.0, jump_intensity=0.0, drift=0.0)
    base.update(kw)
    return ScenarioConfig(**base)


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(InputError):
        ScenarioConfig(dt=0.0)
    with pytest.raises(InputError):
        ScenarioConfig(horizon=1.0, dt=0.03)  # not an integer number of steps
    with pytest.raises(InputError):
        ScenarioConfig(volatility=-0.1)
    with pytest.raises(InputError):
        ScenarioConfig(base_intensity_buy=0.0)
    with pytest.raises(InputError):
        ScenarioConfig(decay=0.0)
    assert ScenarioConfig().n_steps == 100
    assert ScenarioConfig(dt=0.02).n_steps == 50


def test_config_keyed_text_round_trip():
    cfg = ScenarioConfig(drift=0.05, volatility=0.3, dt=0.02, inventory_cap=7)
    text = config_to_text(cfg)
    assert "drift = 0.05" in text
    assert config_from_text(text) == cfg


def test_config_text_rejects_unknown_keys():
    with pytest.raises(LoadError):
        config_from_text("nonsense = 1\n")


# ---------------------------------------------------------------------------
# Price path
# ---------------------------------------------------------------------------

def test_price_path_constant_when_randomness_off():
    cfg = quiet_config()
    path = simulate_price_path(cfg, 0)
    assert np.all(path == cfg.initial_price)


def test_price_path_deterministic_exponential_drift():
    cfg = quiet_config(drift=0.3)
    path = simulate_price_path(cfg, 0)
    i = np.arange(cfg.n_steps + 1)
    expected = cfg.initial_price * np.exp(cfg.drift * i * cfg.dt)
    assert np.allclose(path, expected, rtol=1e-12)


def test_price_path_seed_determinism():
    cfg = ScenarioConfig(volatility=0.2, jump_intensity=0.05)
    a = simulate_price_path(cfg, 123)
    b = simulate_price_path(cfg, 123)
    assert np.array_equal(a, b)
    c = simulate_price_path(cfg, 124)
    assert not np.array_equal(a, c)


def test_price_paths_positive_and_gbm_log_mean():
    cfg = ScenarioConfig(volatility=0.1, drift=0.05, jump_intensity=0.0)
    paths, jumps = simulate_price_paths(cfg, 20000, make_rng(0, 1))
    assert np.all(paths > 0)
    assert np.all(jumps == 0)
    log_ret = np.log(paths[:, -1] / paths[:, 0])
    target = (cfg.drift - 0.5 * cfg.volatility**2) * cfg.horizon
    se = cfg.volatility * math.sqrt(cfg.horizon) / math.sqrt(len(log_ret))
    assert abs(log_ret.mean() - target) < 3 * se


# ---------------------------------------------------------------------------
# Hawkes intensity
# ---------------------------------------------------------------------------

def test_intensity_no_events_is_base_rate():
    cfg = ScenarioConfig()
    assert hawkes_intensity("buy", HawkesState(), cfg) == cfg.base_intensity_buy
    assert hawkes_intensity("sell", HawkesState(), cfg) == cfg.base_intensity_sell


def test_intensity_single_event_kernel():
    cfg = ScenarioConfig()
    delta = 0.37
    state = hawkes_add_event(HawkesState(), "buy", cfg)
    state = hawkes_decay(state, delta, cfg)
    expected = cfg.base_intensity_buy + cfg.self_excite_bb * math.exp(-cfg.decay * delta)
    assert abs(hawkes_intensity("buy", state, cfg) - expected) < 1e-14
    expected_sell = cfg.base_intensity_sell + cfg.cross_excite_ab * math.exp(-cfg.decay * delta)
    assert abs(hawkes_intensity("sell", state, cfg) - expected_sell) < 1e-14


@pytest.mark.parametrize("seed", range(5))
def test_recursive_matches_naive_kernel_sums(seed):
    cfg = ScenarioConfig(decay=0.8, self_excite_bb=0.5, self_excite_aa=0.4,
                         cross_excite_ab=0.2, cross_excite_ba=0.3)
    rng = make_rng(seed, 0)
    n_events = int(rng.integers(1, 100))
    times = np.sort(rng.random(n_events) * 5.0)
    sides = rng.random(n_events) < 0.5
    state = HawkesState()
    t_prev = 0.0
    buys, sells = [], []
    for t, is_buy in zip(times, sides):
        state = hawkes_decay(state, t - t_prev, cfg)
        state = hawkes_add_event(state, "buy" if is_buy else "sell", cfg)
        (buys if is_buy else sells).append(t)
        t_prev = t
    t_query = t_prev + rng.random() * 2.0
    state = hawkes_decay(state, t_query - t_prev, cfg)
    for side in ("buy", "sell"):
        rec = hawkes_intensity(side, state, cfg)
        naive = naive_intensity(side, buys, sells, t_query, cfg)
        assert abs(rec - naive) < 1e-10


# ---------------------------------------------------------------------------
# Episode mechanics
# ---------------------------------------------------------------------------

def test_reset_returns_spec_initial_state():
    cfg = ScenarioConfig()
    state, env = reset(cfg, 0)
    assert (state.t, state.cash, state.inventory) == (0.0, 1000.0, 0)
    assert state.mid_price == cfg.initial_price
    assert state.prev_spread == 0.0
    assert not env.done


def test_reset_same_seed_same_path():
    cfg = ScenarioConfig(volatility=0.2)
    _, env1 = reset(cfg, 42)
    _, env2 = reset(cfg, 42)
    assert np.array_equal(env1.price_path, env2.price_path)


def test_step_wide_quotes_give_zero_reward_at_zero_inventory():
    cfg = quiet_config()
    _, env = reset(cfg, 0)
    out = env.step(QuoteAction(BIG, BIG))
    assert out.fills == (False, False)
    assert out.reward == 0.0
    assert out.next_state.prev_spread == 2 * BIG


def test_step_rejects_bad_actions():
    _, env = reset(ScenarioConfig(), 0)
    with pytest.raises(InputError):
        env.step(QuoteAction(-0.1, 0.1))
    with pytest.raises(InputError):
        env.step(QuoteAction(math.nan, 0.1))
    with pytest.raises(InputError):
        env.step(QuoteAction(math.inf, 0.1))


def test_step_after_done_raises():
    cfg = quiet_config()
    _, env = reset(cfg, 0)
    for _ in range(cfg.n_steps):
        env.step(QuoteAction(BIG, BIG))
    assert env.done
    with pytest.raises(UsageError):
        env.step(QuoteAction(BIG, BIG))


def test_done_flag_set_exactly_at_horizon():
    cfg = quiet_config(dt=0.02)
    _, env = reset(cfg, 0)
    for i in range(cfg.n_steps):
        out = env.step(QuoteAction(BIG, BIG))
        assert out.done == (i == cfg.n_steps - 1)


def test_fill_probability_matches_bernoulli_rate():
    # alpha = 0, k = 0: fills are iid Bernoulli(1 - exp(-mu dt)) per side
    cfg = quiet_config(
        horizon=200.0, dt=0.01, base_intensity_buy=8.0, base_intensity_sell=8.0,
        self_excite_bb=0.0, self_excite_aa=0.0, cross_excite_ab=0.0,
        cross_excite_ba=0.0, spread_sensitivity=0.0, inventory_cap=10**9,
    )
    n = cfg.n_steps
    _, env = reset(cfg, 3)
    fills_b = fills_a = 0
    for _ in range(n):
        out = env.step(QuoteAction(0.7, 0.7))  # spread irrelevant at k=0
        fills_b += out.fills[0]
        fills_a += out.fills[1]
    p = 1.0 - math.exp(-8.0 * 0.01)
    se = math.sqrt(p * (1 - p) * n)
    assert abs(fills_b - p * n) < 3 * se
    assert abs(fills_a - p * n) < 3 * se


def test_fill_independence_chi_square():
    # 2x2 contingency of (bid fill, ask fill) under independent Bernoulli sides
    scipy_stats = pytest.importorskip("scipy.stats")
    cfg = quiet_config(
        horizon=1000.0, dt=0.01, base_intensity_buy=10.0, base_intensity_sell=10.0,
        self_excite_bb=0.0, self_excite_aa=0.0, cross_excite_ab=0.0,
        cross_excite_ba=0.0, spread_sensitivity=0.0, inventory_cap=10**9,
    )
    _, env = reset(cfg, 11)
    counts = np.zeros((2, 2))
    for _ in range(cfg.n_steps):
        out = env.step(QuoteAction(0.0, 0.0))
        counts[int(out.fills[0]), int(out.fills[1])] += 1
    _, p_value, _, _ = scipy_stats.chi2_contingency(counts)
    assert p_value > 0.01
    p = 1.0 - math.exp(-0.1)
    for side in (0, 1):
        hits = counts[1].sum() if side == 0 else counts[:, 1].sum()
        chi, p_gof = scipy_stats.chisquare(
            [hits, cfg.n_steps - hits],
            [p * cfg.n_steps, (1 - p) * cfg.n_steps],
        )
        assert p_gof > 0.01


def test_wealth_identity():
    cfg = ScenarioConfig(volatility=0.2, jump_intensity=0.02)
    _, env = reset(cfg, 7)
    rng = make_rng(7, 1)
    rewards = []
    penalty = 0.0
    w0 = env.state.cash + env.state.inventory * env.state.mid_price
    while not env.done:
        out = env.step(QuoteAction(rng.random(), rng.random()))
        rewards.append(out.reward)
        q = out.next_state.inventory
        penalty += cfg.inventory_penalty * q * q * cfg.volatility**2 * cfg.dt
    w_t = env.state.cash + env.state.inventory * env.state.mid_price
    assert abs(sum(rewards) + penalty - (w_t - w0)) < 1e-9


def test_inventory_never_exceeds_cap():
    cfg = quiet_config(horizon=5.0, base_intensity_buy=50.0, base_intensity_sell=50.0,
                       inventory_cap=2)
    _, env = reset(cfg, 5)
    while not env.done:
        out = env.step(QuoteAction(0.0, 0.0))
        assert abs(out.next_state.inventory) <= 2


def test_suppressed_quotes_full_episode_zero_total_reward():
    cfg = ScenarioConfig(volatility=0.25)
    _, env = reset(cfg, 9)
    total = 0.0
    while not env.done:
        total += env.step(QuoteAction(BIG, BIG)).reward
    assert total == 0.0


def test_env_matches_fill_event_helper_distribution():
    # The stripped-down arrival loop and the full env see the same dynamics.
    cfg = quiet_config(
        horizon=100.0, dt=0.01, base_intensity_buy=5.0, base_intensity_sell=5.0,
        self_excite_bb=0.04, self_excite_aa=0.04, cross_excite_ab=0.04,
        cross_excite_ba=0.04, decay=0.1, inventory_cap=10**9,
    )
    _, env = reset(cfg, 21)
    env_fills = 0
    while not env.done:
        env_fills += sum(env.step(QuoteAction(0.0, 0.0)).fills)
    nb, na = simulate_fill_events(cfg, cfg.n_steps, 0.0, 21)
    # Same law, different streams: compare rates loosely
    assert abs(env_fills - (nb + na)) < 6 * math.sqrt(env_fills + nb + na)


def test_excitation_feeds_back_on_fills():
    cfg = quiet_config(inventory_cap=10**9)
    _, env = reset(cfg, 13)
    lam0 = env.config.base_intensity_buy
    saw_fill = False
    while not env.done:
        out = env.step(QuoteAction(0.0, 0.0))
        if any(out.fills):
            saw_fill = True
            assert env.hawkes.excitation_buy > 0 or env.hawkes.excitation_sell > 0
            assert out.intensities[0] >= lam0
            break
    assert saw_fill


def test_trace_csv(tmp_path):
    rows = [(0, 0.01, 100.0, 0, 1000.0, 0.5, 0.5, 0, 1, 0.42)]
    path = tmp_path / "trace.csv"
    write_trace_csv(path, rows)
    text = path.read_text().splitlines()
    assert text[0].startswith("step,t,S,q,X")
    assert len(text) == 2


def test_with_overrides():
    cfg = ScenarioConfig()
    assert with_overrides(cfg, drift=0.9).drift == 0.9
