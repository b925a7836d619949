"""Metrics and the four-mode benchmark runner.

Metrics follow the usual definitions: cumulative return is the compounded
product of period returns, Sharpe is sample mean over sample std (ddof=1) of
excess returns, and max drawdown is the largest peak-to-trough fraction of a
positive value series.  The benchmark crosses volatility {0.02, 0.25} with
arrival rate {25, 50} into four market modes (HH/HL/LH/LL) and runs every
strategy on identical seed sequences so rows are directly comparable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .env import MarketEnv, ScenarioConfig
from .errors import FlowMMError, InputError, UsageError
from .seeding import DOMAIN_BENCH, DOMAIN_ENV, DOMAIN_STRATEGY, make_rng


class UndefinedSharpeError(FlowMMError, ArithmeticError):
    """Sharpe is undefined for a return series with zero variance."""


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def cumulative_return(period_returns) -> float:
    """Total compounded change in percent: (prod(1 + r_i) - 1) * 100."""
    r = np.asarray(period_returns, dtype=np.float64)
    if r.size == 0:
        return 0.0
    if np.any(r <= -1.0):
        raise InputError("period return <= -100% (total loss); CR undefined")
    return float((np.prod(1.0 + r) - 1.0) * 100.0)


def sharpe(excess_returns) -> float:
    """Sample mean over sample standard deviation (ddof=1)."""
    r = np.asarray(excess_returns, dtype=np.float64)
    if r.size < 2:
        raise UsageError("sharpe needs at least 2 observations")
    std = float(np.std(r, ddof=1))
    if std == 0.0:
        raise UndefinedSharpeError("zero variance in excess returns")
    return float(np.mean(r)) / std


def max_drawdown(values) -> float:
    """Largest (peak - value) / peak over the series; in [0, 1]."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise InputError("max_drawdown needs at least one value")
    if np.any(v <= 0.0):
        raise InputError("max_drawdown requires strictly positive values")
    peaks = np.maximum.accumulate(v)
    return float(np.max((peaks - v) / peaks))


# ---------------------------------------------------------------------------
# Episode runner
# ---------------------------------------------------------------------------

@dataclass
class EpisodeResult:
    """Wealth path W_t = X_t + q_t * S_t plus per-step returns and terminal PnL."""

    wealth: np.ndarray
    returns: np.ndarray
    pnl: float
    total_reward: float
    states: list = None
    actions: list = None
    trace: list = None


def run_episode(
    config: ScenarioConfig,
    strategy,
    seed,
    episode_key=(),
    keep_states=False,
    keep_trace=False,
) -> EpisodeResult:
    """Roll one strategy through one episode.

    ``episode_key`` extends the seed fan-out so callers can address
    (mode, episode) grids; the environment and the strategy always receive
    distinct streams.
    """
    env_rng = make_rng(seed, DOMAIN_ENV, *episode_key)
    env = MarketEnv(config, env_rng)
    strategy.start_episode(make_rng(seed, DOMAIN_STRATEGY, *episode_key))

    n = config.n_steps
    wealth = np.empty(n + 1)
    wealth[0] = config.initial_cash
    states = [env.state] if keep_states else None
    actions = [] if keep_states else None
    trace = [] if keep_trace else None
    total_reward = 0.0
    state = env.state
    for i in range(n):
        action = strategy.quotes(state)
        out = env.step(action)
        total_reward += out.reward
        state = out.next_state
        wealth[i + 1] = state.cash + state.inventory * state.mid_price
        if keep_states:
            states.append(state)
            actions.append(action)
        if keep_trace:
            trace.append(
                (
                    i, state.t, state.mid_price, state.inventory, state.cash,
                    action.delta_bid, action.delta_ask,
                    int(out.fills[0]), int(out.fills[1]), out.reward,
                )
            )
    returns = wealth[1:] / wealth[:-1] - 1.0
    return EpisodeResult(
        wealth=wealth,
        returns=returns,
        pnl=float(wealth[-1] - wealth[0]),
        total_reward=total_reward,
        states=states,
        actions=actions,
        trace=trace,
    )


# ---------------------------------------------------------------------------
# Benchmark modes
# ---------------------------------------------------------------------------

MODE_NAMES = ("HH", "HL", "LH", "LL")
_MODE_PARAMS = {
    "HH": (0.25, 50.0),
    "HL": (0.25, 25.0),
    "LH": (0.02, 50.0),
    "LL": (0.02, 25.0),
}


def mode_config(name: str) -> ScenarioConfig:
    """Test-environment configuration for one of the four market modes."""
    try:
        vol, rate = _MODE_PARAMS[name]
    except KeyError:
        raise InputError(f"unknown mode {name!r}; expected one of {MODE_NAMES}") from None
    return ScenarioConfig(
        horizon=1.0,
        dt=0.01,
        drift=0.0,
        volatility=vol,
        hurst=0.5,
        jump_intensity=0.0,
        base_intensity_buy=rate,
        base_intensity_sell=rate,
    )


@dataclass
class BenchmarkCell:
    mode: str
    strategy: str
    mean_pnl: float
    sharpe: float
    mdd_pct: float
    episodes: int


@dataclass
class BenchmarkReport:
    cells: list
    episodes: int
    seed: int
    wealth_paths: dict = field(default_factory=dict)

    def cell(self, mode, strategy) -> BenchmarkCell:
        for c in self.cells:
            if c.mode == mode and c.strategy == strategy:
                return c
        raise KeyError((mode, strategy))

    def to_csv_text(self) -> str:
        lines = ["mode,strategy,mean_pnl,sharpe,mdd_pct,episodes,seed"]
        for c in self.cells:
            lines.append(
                f"{c.mode},{c.strategy},{c.mean_pnl!r},{c.sharpe!r},{c.mdd_pct!r},"
                f"{c.episodes},{self.seed}"
            )
        return "\n".join(lines) + "\n"

    def to_json_text(self) -> str:
        payload = {
            "episodes": self.episodes,
            "seed": self.seed,
            "cells": [
                {
                    "mode": c.mode,
                    "strategy": c.strategy,
                    "mean_pnl": c.mean_pnl,
                    "sharpe": c.sharpe,
                    "mdd_pct": c.mdd_pct,
                    "episodes": c.episodes,
                }
                for c in self.cells
            ],
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def evaluate_strategy(config, strategy, episodes, seed, mode_index=0, keep_wealth=False):
    """Run one strategy over a seeded episode grid; returns per-episode PnLs,
    mean drawdown percent, and (optionally) the wealth paths."""
    pnls = np.empty(episodes)
    mdds = np.empty(episodes)
    paths = np.empty((episodes, config.n_steps + 1)) if keep_wealth else None
    for e in range(episodes):
        res = run_episode(config, strategy, seed, episode_key=(DOMAIN_BENCH, mode_index, e))
        pnls[e] = res.pnl
        mdds[e] = max_drawdown(res.wealth)
        if keep_wealth:
            paths[e] = res.wealth
    return pnls, mdds, paths


def run_benchmark(strategies, modes=MODE_NAMES, episodes=200, seed=0, keep_wealth=False):
    """Cross strategies with market modes on identical seed sequences.

    Aggregation per cell: mean terminal PnL (compensated episode-order sum),
    Sharpe over per-episode PnLs (0.0 reported when variance is zero), and the
    mean of per-episode wealth-path max drawdowns in percent.
    """
    names = [s.name for s in strategies]
    if len(set(names)) != len(names):
        raise InputError(f"duplicate strategy names: {names}")
    cells = []
    paths = {}
    for m, mode in enumerate(modes):
        config = mode_config(mode)
        for strat in strategies:
            pnls, mdds, wp = evaluate_strategy(
                config, strat, episodes, seed, mode_index=m, keep_wealth=keep_wealth
            )
            try:
                sr = sharpe(pnls) if episodes >= 2 else 0.0
            except UndefinedSharpeError:
                sr = 0.0
            cells.append(
                BenchmarkCell(
                    mode=mode,
                    strategy=strat.name,
                    mean_pnl=math.fsum(pnls) / episodes,
                    sharpe=sr,
                    mdd_pct=math.fsum(mdds) / episodes * 100.0,
                    episodes=episodes,
                )
            )
            if keep_wealth:
                paths[(mode, strat.name)] = wp
    return BenchmarkReport(cells=cells, episodes=episodes, seed=seed, wealth_paths=paths)
