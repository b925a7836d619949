"""Market-making MDP.

Mid-price follows a jump-diffusion (GBM increments plus lognormal Poisson
jumps, pre-simulated at reset).  Buy/sell order arrivals follow mutually
exciting Hawkes intensities kept in O(1) recursive form; posting wider spreads
damps each side's intensity by exp(-k * delta).  At most one fill per side per
step (Bernoulli with p = 1 - exp(-intensity * dt)); fills move inventory by
+/-1 at the quoted price and feed the excitation state.  Reward is the wealth
change minus a quadratic inventory penalty.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InputError, LoadError, UsageError
from .seeding import DOMAIN_ENV, make_rng

_TIME_EPS = 1e-12


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioConfig:
    """All simulation parameters for one market configuration."""

    horizon: float = 1.0
    dt: float = 0.01
    drift: float = 0.0
    volatility: float = 0.1
    hurst: float = 0.5
    jump_intensity: float = 0.0
    jump_mean: float = 0.0
    jump_std: float = 0.02
    base_intensity_buy: float = 10.0
    base_intensity_sell: float = 10.0
    self_excite_bb: float = 0.7
    self_excite_aa: float = 0.7
    cross_excite_ab: float = 0.3
    cross_excite_ba: float = 0.3
    decay: float = 0.1
    spread_sensitivity: float = 1.5
    initial_price: float = 100.0
    initial_cash: float = 1000.0
    inventory_cap: int = 10
    inventory_penalty: float = 0.1

    def __post_init__(self):
        if self.dt <= 0 or self.horizon <= 0:
            raise InputError("horizon and dt must be positive")
        steps = self.horizon / self.dt
        if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
            raise InputError(f"horizon/dt = {steps} must be a positive integer")
        if self.volatility < 0 or self.jump_intensity < 0:
            raise InputError("volatility and jump_intensity must be >= 0")
        if self.base_intensity_buy <= 0 or self.base_intensity_sell <= 0:
            raise InputError("base intensities must be > 0")
        if self.decay <= 0:
            raise InputError("decay must be > 0")
        if self.spread_sensitivity < 0:
            raise InputError("spread_sensitivity must be >= 0")
        if self.initial_price <= 0:
            raise InputError("initial_price must be > 0")
        if self.inventory_cap < 1:
            raise InputError("inventory_cap must be >= 1")

    @property
    def n_steps(self) -> int:
        return round(self.horizon / self.dt)


_CONFIG_FIELDS = tuple(ScenarioConfig.__dataclass_fields__)
_INT_FIELDS = {"inventory_cap"}


def config_to_text(config: ScenarioConfig) -> str:
    """Flat keyed text form, one `name = value` line per field."""
    lines = []
    for name in _CONFIG_FIELDS:
        value = getattr(config, name)
        lines.append(f"{name} = {value!r}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> ScenarioConfig:
    """Parse the keyed text produced by :func:`config_to_text`."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise LoadError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _CONFIG_FIELDS:
            raise LoadError(f"line {lineno}: unknown config key {key!r}")
        values[key] = int(raw) if key in _INT_FIELDS else float(raw)
    return ScenarioConfig(**values)


# ---------------------------------------------------------------------------
# Core types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MarketState:
    """Observation: (t, cash, inventory, mid-price, previous quoted spread)."""

    t: float
    cash: float
    inventory: int
    mid_price: float
    prev_spread: float

    def as_vector(self) -> np.ndarray:
        return np.array(
            [self.t, self.cash, float(self.inventory), self.mid_price, self.prev_spread]
        )


@dataclass(frozen=True)
class QuoteAction:
    """Bid/ask spreads quoted relative to the mid-price; both >= 0."""

    delta_bid: float
    delta_ask: float


@dataclass
class HawkesState:
    """Decayed excitation sums for each side (recursive kernel form)."""

    excitation_buy: float = 0.0
    excitation_sell: float = 0.0


@dataclass(frozen=True)
class StepOutcome:
    next_state: MarketState
    reward: float
    done: bool
    fills: tuple
    intensities: tuple


def hawkes_intensity(side: str, state: HawkesState, config: ScenarioConfig) -> float:
    """Current intensity for one side: base rate plus decayed excitation."""
    if side == "buy":
        return config.base_intensity_buy + state.excitation_buy
    if side == "sell":
        return config.base_intensity_sell + state.excitation_sell
    raise InputError(f"side must be 'buy' or 'sell', got {side!r}")


def hawkes_decay(state: HawkesState, interval: float, config: ScenarioConfig) -> HawkesState:
    """Decay both excitation sums over an event-free interval."""
    f = math.exp(-config.decay * interval)
    return HawkesState(state.excitation_buy * f, state.excitation_sell * f)


def hawkes_add_event(state: HawkesState, side: str, config: ScenarioConfig) -> HawkesState:
    """Register an event: own-side and cross-side excitation jumps."""
    if side == "buy":
        return HawkesState(
            state.excitation_buy + config.self_excite_bb,
            state.excitation_sell + config.cross_excite_ab,
        )
    if side == "sell":
        return HawkesState(
            state.excitation_buy + config.cross_excite_ba,
            state.excitation_sell + config.self_excite_aa,
        )
    raise InputError(f"side must be 'buy' or 'sell', got {side!r}")


def naive_intensity(side, buy_times, sell_times, t, config) -> float:
    """Oracle form of the intensity: explicit kernel sums over event times."""
    lam = config.base_intensity_buy if side == "buy" else config.base_intensity_sell
    own, cross = (
        (buy_times, sell_times) if side == "buy" else (sell_times, buy_times)
    )
    alpha_own = config.self_excite_bb if side == "buy" else config.self_excite_aa
    alpha_cross = config.cross_excite_ba if side == "buy" else config.cross_excite_ab
    for ti in own:
        if ti <= t:
            lam += alpha_own * math.exp(-config.decay * (t - ti))
    for tj in cross:
        if tj <= t:
            lam += alpha_cross * math.exp(-config.decay * (t - tj))
    return lam


# ---------------------------------------------------------------------------
# Price path
# ---------------------------------------------------------------------------

def simulate_price_paths(config: ScenarioConfig, n_paths: int, rng):
    """Simulate n_paths jump-diffusion paths. Returns (paths, jump_counts).

    Per step, with probability jump_intensity*dt the price takes a lognormal
    jump S *= exp(J), J ~ N(jump_mean, jump_std^2); otherwise a GBM increment
    S *= exp((mu - sigma^2/2) dt + sigma sqrt(dt) Z).  Draws are batched
    (uniform, jump, gaussian per step) which is distributionally identical to
    drawing lazily per branch.
    """
    n = config.n_steps
    u = rng.random((n_paths, n))
    jumps = rng.normal(config.jump_mean, config.jump_std, size=(n_paths, n))
    z = rng.standard_normal((n_paths, n))
    jump_mask = u < config.jump_intensity * config.dt
    gbm = (
        (config.drift - 0.5 * config.volatility**2) * config.dt
        + config.volatility * math.sqrt(config.dt) * z
    )
    log_incr = np.where(jump_mask, jumps, gbm)
    log_path = np.cumsum(log_incr, axis=1)
    paths = np.empty((n_paths, n + 1))
    paths[:, 0] = config.initial_price
    paths[:, 1:] = config.initial_price * np.exp(log_path)
    return paths, jump_mask.sum(axis=1)


def simulate_price_path(config: ScenarioConfig, seed) -> np.ndarray:
    """One mid-price path of length n_steps + 1 from a seed or Generator."""
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed, DOMAIN_ENV)
    paths, _ = simulate_price_paths(config, 1, rng)
    return paths[0]


# ---------------------------------------------------------------------------
# Episode
# ---------------------------------------------------------------------------

class MarketEnv:
    """A single episode of the market-making MDP.

    Instances are cheap; run many in parallel with independent seeds.  All
    randomness comes from the per-episode generator created at reset.
    """

    def __init__(self, config: ScenarioConfig, seed=0, track_events=False):
        self.config = config
        self.track_events = track_events
        self.reset(seed)

    def reset(self, seed=None) -> MarketState:
        """Start a fresh episode: pre-simulate the price path, clear Hawkes state."""
        if seed is not None:
            self._seed = seed
        c = self.config
        self._rng = (
            self._seed
            if isinstance(self._seed, np.random.Generator)
            else make_rng(self._seed, DOMAIN_ENV)
        )
        self.price_path = simulate_price_path(c, self._rng)
        self._decay_factor = math.exp(-c.decay * c.dt)
        self._step_index = 0
        self.hawkes = HawkesState()
        self.buy_events = [] if self.track_events else None
        self.sell_events = [] if self.track_events else None
        self.state = MarketState(0.0, c.initial_cash, 0, c.initial_price, 0.0)
        self.done = False
        return self.state

    def step(self, action: QuoteAction) -> StepOutcome:
        if self.done:
            raise UsageError("step() called on a finished episode")
        db, da = action.delta_bid, action.delta_ask
        if not (math.isfinite(db) and math.isfinite(da)) or db < 0.0 or da < 0.0:
            raise InputError(f"spreads must be finite and >= 0, got ({db}, {da})")
        c = self.config
        s = self.state
        mid = s.mid_price

        lam_b = c.base_intensity_buy + self.hawkes.excitation_buy
        lam_a = c.base_intensity_sell + self.hawkes.excitation_sell
        k = c.spread_sensitivity
        p_bid = 1.0 - math.exp(-lam_b * math.exp(-k * db) * c.dt)
        p_ask = 1.0 - math.exp(-lam_a * math.exp(-k * da) * c.dt)

        u = self._rng.random(2)
        q = s.inventory
        cash = s.cash
        bid_fill = u[0] < p_bid and q + 1 <= c.inventory_cap
        if bid_fill:
            q += 1
            cash -= mid - db
        ask_fill = u[1] < p_ask and q - 1 >= -c.inventory_cap
        if ask_fill:
            q -= 1
            cash += mid + da

        # Excitation: decay one step, then add this step's fills (stamped at
        # t + dt, so they enter the next evaluation at full weight).
        f = self._decay_factor
        exc_b = self.hawkes.excitation_buy * f
        exc_a = self.hawkes.excitation_sell * f
        if bid_fill:
            exc_b += c.self_excite_bb
            exc_a += c.cross_excite_ab
            if self.buy_events is not None:
                self.buy_events.append(s.t + c.dt)
        if ask_fill:
            exc_b += c.cross_excite_ba
            exc_a += c.self_excite_aa
            if self.sell_events is not None:
                self.sell_events.append(s.t + c.dt)
        self.hawkes = HawkesState(exc_b, exc_a)

        self._step_index += 1
        next_mid = self.price_path[self._step_index]
        t_next = self._step_index * c.dt
        reward = (
            (cash + q * next_mid)
            - (s.cash + s.inventory * mid)
            - c.inventory_penalty * q * q * c.volatility**2 * c.dt
        )
        self.done = t_next >= c.horizon - _TIME_EPS
        self.state = MarketState(t_next, cash, q, next_mid, db + da)
        return StepOutcome(
            next_state=self.state,
            reward=reward,
            done=self.done,
            fills=(bid_fill, ask_fill),
            intensities=(lam_b, lam_a),
        )


def reset(config: ScenarioConfig, seed):
    """Start an episode. Returns (initial MarketState, MarketEnv)."""
    env = MarketEnv(config, seed)
    return env.state, env


def step(env: MarketEnv, action: QuoteAction) -> StepOutcome:
    return env.step(action)


def simulate_fill_events(config: ScenarioConfig, n_steps: int, spread: float, seed):
    """Tight loop over the step dynamics at a fixed symmetric quote.

    Same arithmetic as :meth:`MarketEnv.step` with price/wealth bookkeeping
    stripped and no inventory cap, for long-horizon studies of the arrival
    process itself.  Returns (buy_count, sell_count).
    """
    rng = make_rng(seed, DOMAIN_ENV)
    c = config
    damp = math.exp(-c.spread_sensitivity * spread)
    f = math.exp(-c.decay * c.dt)
    exc_b = exc_a = 0.0
    n_buy = n_sell = 0
    mu_b, mu_a, dt = c.base_intensity_buy, c.base_intensity_sell, c.dt
    a_bb, a_aa = c.self_excite_bb, c.self_excite_aa
    a_ab, a_ba = c.cross_excite_ab, c.cross_excite_ba
    exp = math.exp
    uniforms = rng.random((n_steps, 2))
    for i in range(n_steps):
        p_b = 1.0 - exp(-(mu_b + exc_b) * damp * dt)
        p_a = 1.0 - exp(-(mu_a + exc_a) * damp * dt)
        u = uniforms[i]
        hit_b = u[0] < p_b
        hit_a = u[1] < p_a
        exc_b *= f
        exc_a *= f
        if hit_b:
            n_buy += 1
            exc_b += a_bb
            exc_a += a_ab
        if hit_a:
            n_sell += 1
            exc_b += a_ba
            exc_a += a_aa
    return n_buy, n_sell


# ---------------------------------------------------------------------------
# Trace export
# ---------------------------------------------------------------------------

TRACE_COLUMNS = (
    "step", "t", "S", "q", "X", "delta_bid", "delta_ask", "bid_fill", "ask_fill", "reward",
)


def write_trace_csv(path, rows) -> None:
    """Write an episode trace; rows are tuples in TRACE_COLUMNS order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        writer.writerows(rows)


def with_overrides(config: ScenarioConfig, **kwargs) -> ScenarioConfig:
    """Copy of the config with the given fields replaced."""
    return replace(config, **kwargs)
