"""Closed-form quoting strategies.

Three classical market-making solutions (inventory-aware optimal spreads: the
terminal-horizon model, the stationary approximation, and its drift-skewed
variant) plus random and fixed quoters.  All are pure functions of inventory,
time and parameters; spreads are clamped at zero since the environment rejects
negative quotes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import MarketState, QuoteAction, ScenarioConfig
from .errors import InputError
from .seeding import DOMAIN_STRATEGY, make_rng

# Tags used in dataset metadata and scoreboards.  Order fixes tie-breaking.
EXPERT_TAGS = ("as", "glft", "glft_drift", "ppo", "random", "fixed", "flow", "flow_ft")


def expert_code(name: str) -> int:
    try:
        return EXPERT_TAGS.index(name)
    except ValueError:
        raise InputError(f"unknown expert tag {name!r}") from None


@dataclass(frozen=True)
class ASParams:
    """Terminal-horizon model parameters (risk aversion, vol, order decay, horizon)."""

    risk_aversion: float
    volatility: float
    order_decay: float
    horizon: float

    def __post_init__(self):
        if self.risk_aversion <= 0 or self.order_decay <= 0:
            raise InputError("risk_aversion and order_decay must be > 0")


@dataclass(frozen=True)
class GLFTParams:
    """Stationary-model parameters; drift is used only by the drift variant."""

    risk_aversion: float
    volatility: float
    order_decay: float
    base_arrival: float
    drift: float = 0.0

    def __post_init__(self):
        if self.risk_aversion <= 0 or self.order_decay <= 0 or self.base_arrival <= 0:
            raise InputError("risk_aversion, order_decay and base_arrival must be > 0")


def as_quotes(q: int, t: float, p: ASParams) -> QuoteAction:
    """Terminal-horizon optimal spreads.

    With tau = T - t:
        delta_bid = g*s^2*tau/2 + (1/g) ln(1 + g/k) - q*g*s^2*tau
        delta_ask = g*s^2*tau/2 + (1/g) ln(1 + g/k) + q*g*s^2*tau
    """
    g, s, k = p.risk_aversion, p.volatility, p.order_decay
    tau = p.horizon - t
    base = 0.5 * g * s * s * tau + math.log1p(g / k) / g
    skew = q * g * s * s * tau
    return QuoteAction(max(base - skew, 0.0), max(base + skew, 0.0))


def glft_c1_c2(p: GLFTParams):
    """Constants of the stationary solution.

    c1 = (1/g) ln(1 + g/k)
    c2 = sqrt( g/(2Ak) * (1 + g/k)^(k/g + 1) )
    """
    g, k, a = p.risk_aversion, p.order_decay, p.base_arrival
    c1 = math.log1p(g / k) / g
    c2 = math.sqrt(g / (2.0 * a * k) * (1.0 + g / k) ** (k / g + 1.0))
    return c1, c2


def glft_quotes(q: int, p: GLFTParams) -> QuoteAction:
    """Stationary optimal spreads: c1 + s*c2/2 -+/+- s*c2*q per side."""
    c1, c2 = glft_c1_c2(p)
    s = p.volatility
    half = c1 + 0.5 * s * c2
    return QuoteAction(max(half + s * c2 * q, 0.0), max(half - s * c2 * q, 0.0))


def glft_drift_quotes(q: int, p: GLFTParams) -> QuoteAction:
    """Drift-skewed stationary spreads.

    root = sqrt( s^2/(2kA) * (1 + g/k)^(1 + k/g) )
    delta_bid = (1/g) ln(1 + g/k) + [-mu/(g s^2) + (2q+1)/2] * root
    delta_ask = (1/g) ln(1 + g/k) + [ mu/(g s^2) - (2q-1)/2] * root

    Note the root differs from the symmetric model's s*c2 by a factor
    sqrt(g); both forms are kept verbatim.
    """
    g, k, a, s, mu = p.risk_aversion, p.order_decay, p.base_arrival, p.volatility, p.drift
    if s <= 0:
        raise InputError("drift variant needs volatility > 0 (skew divides by sigma^2)")
    c1 = math.log1p(g / k) / g
    root = math.sqrt(s * s / (2.0 * k * a) * (1.0 + g / k) ** (1.0 + k / g))
    bid = c1 + (-mu / (g * s * s) + (2.0 * q + 1.0) / 2.0) * root
    ask = c1 + (mu / (g * s * s) - (2.0 * q - 1.0) / 2.0) * root
    return QuoteAction(max(bid, 0.0), max(ask, 0.0))


def random_quotes(rng, spread_range: float) -> QuoteAction:
    """Both spreads uniform on [0, spread_range]."""
    if spread_range <= 0:
        raise InputError("spread_range must be > 0")
    u = rng.random(2)
    return QuoteAction(u[0] * spread_range, u[1] * spread_range)


DEFAULT_RISK_AVERSION = 0.1


def calibrated_params(config: ScenarioConfig, risk_aversion=DEFAULT_RISK_AVERSION):
    """Tie expert parameters to the generating scenario.

    gamma fixed, k = spread sensitivity, sigma = scenario volatility,
    A = mean base arrival rate, T = scenario horizon.
    Returns (ASParams, GLFTParams).
    """
    a = 0.5 * (config.base_intensity_buy + config.base_intensity_sell)
    as_p = ASParams(risk_aversion, config.volatility, config.spread_sensitivity, config.horizon)
    glft_p = GLFTParams(
        risk_aversion, config.volatility, config.spread_sensitivity, a, config.drift
    )
    return as_p, glft_p


# ---------------------------------------------------------------------------
# Strategy adapters (common episode interface)
# ---------------------------------------------------------------------------

class Strategy:
    """Quoting policy run by the episode loop.

    ``start_episode(seed)`` is called once per episode with a per-episode
    stream id; ``quotes(state)`` returns the QuoteAction for the current step.
    """

    name = "strategy"

    def start_episode(self, seed) -> None:  # noqa: B027 - optional hook
        pass

    def quotes(self, state: MarketState) -> QuoteAction:
        raise NotImplementedError


class ASStrategy(Strategy):
    def __init__(self, params: ASParams):
        self.name = "as"
        self.params = params

    def quotes(self, state):
        return as_quotes(state.inventory, state.t, self.params)


class GLFTStrategy(Strategy):
    def __init__(self, params: GLFTParams):
        self.name = "glft"
        self.params = params

    def quotes(self, state):
        return glft_quotes(state.inventory, self.params)


class GLFTDriftStrategy(Strategy):
    def __init__(self, params: GLFTParams):
        self.name = "glft_drift"
        self.params = params

    def quotes(self, state):
        return glft_drift_quotes(state.inventory, self.params)


class RandomStrategy(Strategy):
    def __init__(self, spread_range: float):
        self.name = "random"
        self.spread_range = spread_range
        self._rng = make_rng(0, DOMAIN_STRATEGY)

    def start_episode(self, seed):
        self._rng = (
            seed if isinstance(seed, np.random.Generator) else make_rng(seed, DOMAIN_STRATEGY)
        )

    def quotes(self, state):
        return random_quotes(self._rng, self.spread_range)


class FixedStrategy(Strategy):
    def __init__(self, delta: float, name=None):
        self.name = name or f"fixed_{delta:g}"
        self.action = QuoteAction(delta, delta)

    def quotes(self, state):
        return self.action


def default_candidates(config: ScenarioConfig, include_ppo=False) -> list:
    """Teacher candidates calibrated to a scenario, in tie-break order.

    The direct-PPO candidate is opt-in (training cost dominates the
    tournament); when requested it must be supplied by the caller.
    """
    as_p, glft_p = calibrated_params(config)
    candidates = [ASStrategy(as_p), GLFTStrategy(glft_p), GLFTDriftStrategy(glft_p)]
    if include_ppo:
        raise InputError("direct-PPO candidate must be trained and appended by the caller")
    return candidates
