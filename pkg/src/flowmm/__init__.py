"""flowmm: a desk-scale market-making lab.

Hawkes/jump-diffusion simulator, closed-form quoting experts, a flow-matching
imitation policy with one-step chunk generation, noise-space PPO fine-tuning
against the frozen generator, and a four-mode benchmark harness.
"""

__version__ = "0.1.0"

from .env import MarketEnv, MarketState, QuoteAction, ScenarioConfig, StepOutcome
from .errors import ConfigError, FlowMMError, InputError, LoadError, UsageError

__all__ = [
    "ConfigError",
    "FlowMMError",
    "InputError",
    "LoadError",
    "MarketEnv",
    "MarketState",
    "QuoteAction",
    "ScenarioConfig",
    "StepOutcome",
    "UsageError",
    "__version__",
]
