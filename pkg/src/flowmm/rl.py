"""Noise-space PPO fine-tuning and the direct-action PPO baseline.

The fine-tuned agent keeps the pre-trained flow expert frozen and learns a
diagonal-Gaussian policy over the expert's input noise: w ~ N(mu(s), Sigma).
Each sampled w is pushed through one-step generation, the execution window of
the resulting chunk is played in the environment, and the summed chunk reward
becomes one PPO transition.  The baseline uses the identical machinery with a
Gaussian directly over per-step quotes (chunk length 1, no frozen expert).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import numerics
from .env import MarketEnv, QuoteAction, ScenarioConfig
from .errors import ConfigError, InputError, UsageError
from .evaluation import run_episode
from .experts import FixedStrategy, Strategy
from .meanflow import (
    OBS_DIM,
    FlowModel,
    generate_chunk,
)
from .numerics import DenseNet, dense_net, forward, forward_cached
from .seeding import DOMAIN_ROLLOUT, DOMAIN_STRATEGY, DOMAIN_TRAIN, make_rng

logger = logging.getLogger(__name__)

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Policy and value networks
# ---------------------------------------------------------------------------

@dataclass
class NoisePolicy:
    """Diagonal Gaussian: mean from a small MLP, state-independent log-std."""

    mean_net: DenseNet
    log_std: np.ndarray

    def __post_init__(self):
        self.log_std = np.asarray(self.log_std, dtype=np.float64)
        if self.log_std.shape != (self.mean_net.layer_dims[-1],):
            raise InputError("log_std length must equal the mean net output width")

    @property
    def noise_dim(self) -> int:
        return self.log_std.size

    def clamp_log_std(self):
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)


@dataclass
class ValueNet:
    net: DenseNet

    def __post_init__(self):
        if self.net.layer_dims[-1] != 1:
            raise InputError("value net must output a scalar")


def new_noise_policy(obs_dim, noise_dim, hidden=64, rng=None) -> NoisePolicy:
    rng = rng if rng is not None else np.random.default_rng(0)
    return NoisePolicy(
        mean_net=dense_net((obs_dim, hidden, hidden, noise_dim), rng=rng),
        log_std=np.zeros(noise_dim),
    )


def new_value_net(obs_dim, hidden=64, rng=None) -> ValueNet:
    rng = rng if rng is not None else np.random.default_rng(0)
    return ValueNet(net=dense_net((obs_dim, hidden, hidden, 1), rng=rng))


def policy_params(policy: NoisePolicy) -> list:
    return numerics.net_params(policy.mean_net) + [policy.log_std]


def trainable_params(policy: NoisePolicy, value: ValueNet) -> list:
    return policy_params(policy) + numerics.net_params(value.net)


def set_trainable_params(policy, value, params) -> None:
    n_mean = 2 * len(policy.mean_net.weights)
    numerics.set_net_params(policy.mean_net, params[:n_mean])
    policy.log_std = np.asarray(params[n_mean], dtype=np.float64)
    numerics.set_net_params(value.net, params[n_mean + 1:])
    policy.clamp_log_std()


def sample_noise(policy: NoisePolicy, s_flat, rng):
    """Draw w = mu(s) + exp(log_std) * xi and its diagonal-Gaussian log density."""
    s = np.asarray(s_flat, dtype=np.float64)
    if s.shape != (policy.mean_net.layer_dims[0],):
        raise InputError(f"s_flat must have length {policy.mean_net.layer_dims[0]}")
    mu = forward(policy.mean_net, s)
    sigma = np.exp(policy.log_std)
    w = mu + sigma * rng.standard_normal(policy.noise_dim)
    return w, gaussian_log_prob(w, mu, policy.log_std)


def gaussian_log_prob(w, mu, log_std):
    """Diagonal-Gaussian log density; works on vectors or row batches."""
    sigma = np.exp(log_std)
    z = (w - mu) / sigma
    return (
        -0.5 * np.sum(z * z, axis=-1)
        - np.sum(log_std)
        - 0.5 * w.shape[-1] * _LOG_2PI
    )


def policy_entropy(policy: NoisePolicy) -> float:
    """Closed-form diagonal-Gaussian entropy: sum(log_std) + D/2 (1 + log 2pi)."""
    d = policy.noise_dim
    return float(np.sum(policy.log_std) + 0.5 * d * (1.0 + _LOG_2PI))


def value_of(value: ValueNet, s) -> float:
    return float(forward(value.net, s)[..., 0])


# ---------------------------------------------------------------------------
# Action transforms (frozen expert vs direct actions)
# ---------------------------------------------------------------------------

class FrozenFlowTransform:
    """Noise -> executed quote rows through the frozen one-step generator."""

    def __init__(self, model: FlowModel):
        self.model = model
        self.noise_dim = model.net.noise_dim
        self.exec_start = model.t_obs - 1
        self.exec_len = model.t_exec
        if self.exec_start + self.exec_len > model.t_pred:
            raise ConfigError("execution window overruns the predicted chunk")

    def standardize_window(self, window):
        return self.model.stats.standardize_obs(window).reshape(-1)

    def exec_actions(self, w, window) -> np.ndarray:
        chunk = generate_chunk(self.model, w, window)
        ex = chunk[self.exec_start:self.exec_start + self.exec_len]
        return np.maximum(ex, 0.0)


@dataclass
class ObsScaler:
    """Frozen observation standardization for the direct baseline."""

    mean: np.ndarray
    std: np.ndarray

    def standardize_obs(self, obs):
        return (np.asarray(obs, dtype=np.float64) - self.mean) / np.maximum(self.std, 1e-8)


class DirectActionTransform:
    """Per-step Gaussian quotes: the noise vector is the action itself."""

    def __init__(self, scaler: ObsScaler, t_obs=2):
        self.scaler = scaler
        self.t_obs = t_obs
        self.noise_dim = 2
        self.exec_start = 0
        self.exec_len = 1

    def standardize_window(self, window):
        return self.scaler.standardize_obs(window).reshape(-1)

    def exec_actions(self, w, window) -> np.ndarray:
        return np.maximum(np.asarray(w, dtype=np.float64), 0.0).reshape(1, 2)


def fit_obs_scaler(config: ScenarioConfig, episodes=20, seed=0, probe_delta=0.5) -> ObsScaler:
    """Observation moments from fixed-quote probe episodes (frozen thereafter)."""
    rows = []
    probe = FixedStrategy(probe_delta)
    for e in range(episodes):
        res = run_episode(config, probe, seed, episode_key=(DOMAIN_TRAIN, 99, e), keep_states=True)
        rows.extend(s.as_vector() for s in res.states)
    mat = np.array(rows)
    return ObsScaler(mean=mat.mean(axis=0), std=mat.std(axis=0))


# ---------------------------------------------------------------------------
# Rollout collection (chunk-level MDP)
# ---------------------------------------------------------------------------

@dataclass
class RolloutBuffer:
    """One transition per generated chunk, env-major, with GAE results."""

    obs: np.ndarray          # (n, obs_dim) standardized window
    noise: np.ndarray        # (n, noise_dim)
    log_probs: np.ndarray    # (n,)
    values: np.ndarray       # (n,)
    rewards: np.ndarray      # (n,) summed chunk reward
    dones: np.ndarray        # (n,) episode ended during this chunk
    segments: list           # (start, stop, bootstrap_value) per env sequence
    advantages: np.ndarray = None
    returns: np.ndarray = None

    def __len__(self):
        return self.obs.shape[0]

    @property
    def mean_reward(self) -> float:
        return float(np.mean(self.rewards))


def gae(rewards, values, dones, discount, lam, last_value=0.0):
    """Generalized advantage estimation over one transition sequence.

    delta_t = r_t + discount * (1 - done_t) * V_{t+1} - V_t, advantages are the
    (discount * lam)-weighted sums of deltas, returns are A_t + V_t.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(dones, dtype=np.float64)
    n = r.size
    adv = np.empty(n)
    running = 0.0
    next_value = last_value
    for t in range(n - 1, -1, -1):
        not_done = 1.0 - d[t]
        delta = r[t] + discount * not_done * next_value - v[t]
        running = delta + discount * lam * not_done * running
        adv[t] = running
        next_value = v[t]
    return adv, adv + v


def compute_advantages(buffer: RolloutBuffer, discount, lam) -> None:
    """Fill buffer.advantages/returns segment by segment (before any epoch)."""
    adv = np.empty(len(buffer))
    ret = np.empty(len(buffer))
    for start, stop, bootstrap in buffer.segments:
        a, r = gae(
            buffer.rewards[start:stop], buffer.values[start:stop],
            buffer.dones[start:stop], discount, lam, last_value=bootstrap,
        )
        adv[start:stop] = a
        ret[start:stop] = r
    buffer.advantages = adv
    buffer.returns = ret


class ChunkRollout:
    """Persistent vector of environments collecting chunk-level transitions.

    Episodes continue across collect() calls; each environment draws its
    episode seeds from an independent stream so results do not depend on the
    number of environments running elsewhere.
    """

    def __init__(self, config: ScenarioConfig, transform, n_envs, seed,
                 within_chunk_discount=None):
        self.config = config
        self.transform = transform
        self.seed = seed
        self.within_chunk_discount = within_chunk_discount
        self.t_obs = getattr(transform, "t_obs", None) or transform.model.t_obs
        self.envs = []
        self.windows = []
        self._episode_index = []
        for i in range(n_envs):
            env = MarketEnv(config, make_rng(seed, DOMAIN_ROLLOUT, i, 0))
            self.envs.append(env)
            self.windows.append([env.state.as_vector()] * self.t_obs)
            self._episode_index.append(0)

    def _reset_env(self, i):
        self._episode_index[i] += 1
        env = self.envs[i]
        env.reset(make_rng(self.seed, DOMAIN_ROLLOUT, i, self._episode_index[i]))
        self.windows[i] = [env.state.as_vector()] * self.t_obs

    def collect(self, policy: NoisePolicy, value: ValueNet, chunks_per_env, rng) -> RolloutBuffer:
        if policy.noise_dim != self.transform.noise_dim:
            raise ConfigError(
                f"policy noise dim {policy.noise_dim} != transform {self.transform.noise_dim}"
            )
        obs, noise, logps, values, rewards, dones = [], [], [], [], [], []
        segments = []
        for i, env in enumerate(self.envs):
            start = len(obs)
            for _ in range(chunks_per_env):
                window = np.array(self.windows[i])
                s_flat = self.transform.standardize_window(window)
                w, logp = sample_noise(policy, s_flat, rng)
                actions = self.transform.exec_actions(w, window)
                r_total = 0.0
                done = False
                for k in range(actions.shape[0]):
                    out = env.step(QuoteAction(actions[k, 0], actions[k, 1]))
                    if self.within_chunk_discount is not None:
                        r_total += (self.within_chunk_discount ** k) * out.reward
                    else:
                        r_total += out.reward
                    self.windows[i] = self.windows[i][1:] + [out.next_state.as_vector()]
                    if out.done:
                        done = True
                        break
                obs.append(s_flat)
                noise.append(w)
                logps.append(logp)
                values.append(value_of(value, s_flat))
                rewards.append(r_total)
                dones.append(done)
                if done:
                    self._reset_env(i)
            if dones[-1]:
                bootstrap = 0.0
            else:
                window = np.array(self.windows[i])
                bootstrap = value_of(value, self.transform.standardize_window(window))
            segments.append((start, len(obs), bootstrap))
        return RolloutBuffer(
            obs=np.array(obs), noise=np.array(noise), log_probs=np.array(logps),
            values=np.array(values), rewards=np.array(rewards),
            dones=np.array(dones, dtype=np.float64), segments=segments,
        )


def collect_rollouts(config, policy, value, transform, n_envs, chunks_per_env, seed, rng,
                     within_chunk_discount=None) -> RolloutBuffer:
    """One-shot collection (fresh environments); see ChunkRollout for reuse."""
    runner = ChunkRollout(config, transform, n_envs, seed, within_chunk_discount)
    return runner.collect(policy, value, chunks_per_env, rng)


# ---------------------------------------------------------------------------
# PPO update
# ---------------------------------------------------------------------------

@dataclass
class PPOHyper:
    clip_eps: float = 0.2
    value_coeff: float = 0.5
    entropy_coeff: float = 0.01
    discount: float = 0.99
    gae_lambda: float = 0.95
    epochs: int = 4
    minibatch_size: int = 64
    learning_rate: float = 5e-5

    def __post_init__(self):
        if not (0.0 < self.clip_eps < 1.0):
            raise InputError("clip_eps must be in (0, 1)")
        if not (0.0 <= self.discount <= 1.0) or not (0.0 <= self.gae_lambda <= 1.0):
            raise InputError("discount and gae_lambda must be in [0, 1]")


def normalize_advantages(adv) -> np.ndarray:
    """Zero-mean, unit-std (exact when std > 0)."""
    a = np.asarray(adv, dtype=np.float64)
    centered = a - a.mean()
    std = centered.std()
    return centered / std if std > 0.0 else centered


def ppo_update(policy, value, buffer, hyper: PPOHyper, adam_state, rng):
    """Clipped-surrogate update of the noise policy and critic.

    Runs ``hyper.epochs`` passes over shuffled minibatches; each minibatch
    takes a single combined Adam step over (policy mean net, log_std, value
    net).  Returns diagnostics: surrogate, value_loss, entropy, clip_fraction,
    skipped minibatches, and the Adam state.
    """
    if buffer.advantages is None:
        raise UsageError("advantages must be computed before ppo_update")
    adv = normalize_advantages(buffer.advantages)
    n = len(buffer)
    d = policy.noise_dim
    last_surr = last_vloss = 0.0
    clipped = 0
    seen = 0
    skipped = 0
    for _ in range(hyper.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, hyper.minibatch_size):
            mb = order[lo:lo + hyper.minibatch_size]
            s = buffer.obs[mb]
            w = buffer.noise[mb]
            a_mb = adv[mb]
            m = mb.size

            mu, mean_cache = forward_cached(policy.mean_net, s)
            logp_new = gaussian_log_prob(w, mu, policy.log_std)
            ratio = np.exp(logp_new - buffer.log_probs[mb])
            if not np.all(np.isfinite(ratio)):
                skipped += 1
                logger.warning("non-finite PPO ratio; minibatch skipped")
                continue
            clip_lo, clip_hi = 1.0 - hyper.clip_eps, 1.0 + hyper.clip_eps
            ratio_clip = np.clip(ratio, clip_lo, clip_hi)
            surr_raw = ratio * a_mb
            surr_clip = ratio_clip * a_mb
            surrogate = -np.mean(np.minimum(surr_raw, surr_clip))
            unclipped_active = surr_raw <= surr_clip  # ties keep the gradient
            clipped += int(np.sum(np.abs(ratio - 1.0) > hyper.clip_eps))
            seen += m

            # d surrogate / d logp_new, then chain into mu and log_std
            dlogp = -(unclipped_active * a_mb * ratio) / m
            sigma2 = np.exp(2.0 * policy.log_std)
            zc = w - mu
            g_mu = dlogp[:, None] * (zc / sigma2)
            g_logstd_pi = np.sum(dlogp[:, None] * (zc * zc / sigma2 - 1.0), axis=0)

            vpred, value_cache = forward_cached(value.net, s)
            vpred = vpred[:, 0]
            verr = vpred - buffer.returns[mb]
            vloss = 0.5 * float(np.mean(verr * verr))
            g_v = (hyper.value_coeff * verr / m)[:, None]

            # entropy bonus: d(-c_e * H)/d log_std = -c_e per dimension
            g_logstd = g_logstd_pi - hyper.entropy_coeff * np.ones(d)

            mean_grads = numerics.backward(policy.mean_net, mean_cache, g_mu)
            value_grads = numerics.backward(value.net, value_cache, g_v)
            grads = mean_grads.as_list() + [g_logstd] + value_grads.as_list()
            params = trainable_params(policy, value)
            new_params, adam_state = numerics.adam_step(params, grads, adam_state)
            set_trainable_params(policy, value, new_params)

            last_surr = float(surrogate)
            last_vloss = vloss
    return {
        "surrogate": last_surr,
        "value_loss": last_vloss,
        "entropy": policy_entropy(policy),
        "clip_fraction": clipped / seen if seen else 0.0,
        "skipped_minibatches": skipped,
        "adam_state": adam_state,
    }


# ---------------------------------------------------------------------------
# Deterministic inference and strategy adapters
# ---------------------------------------------------------------------------

def infer_chunk(policy: NoisePolicy, model: FlowModel, window) -> list:
    """Deterministic chunk: w = mu(s), one-step generation, execution slice."""
    transform = FrozenFlowTransform(model)
    s_flat = transform.standardize_window(np.asarray(window, dtype=np.float64))
    w = forward(policy.mean_net, s_flat)
    actions = transform.exec_actions(w, window)
    return [QuoteAction(row[0], row[1]) for row in actions]


class FlowPolicyStrategy(Strategy):
    """Chunked execution of a flow model inside the episode loop.

    noise_mode: 'sample' draws w ~ N(0, I) per chunk (the pre-trained
    generative policy), 'zero' uses w = 0, 'policy' uses the fine-tuned
    deterministic mean w = mu(s).
    """

    def __init__(self, model: FlowModel, noise_mode="sample", policy=None, name=None):
        if noise_mode not in ("sample", "zero", "policy"):
            raise InputError(f"unknown noise_mode {noise_mode!r}")
        if noise_mode == "policy" and policy is None:
            raise InputError("noise_mode='policy' requires a trained policy")
        self.model = model
        self.noise_mode = noise_mode
        self.policy = policy
        self.transform = FrozenFlowTransform(model)
        self.name = name or ("flow_ft" if noise_mode == "policy" else "flow")
        self._rng = None
        self._window = None
        self._pending = []

    def start_episode(self, seed):
        self._rng = seed if isinstance(seed, np.random.Generator) else make_rng(
            seed, DOMAIN_STRATEGY
        )
        self._window = None
        self._pending = []

    def quotes(self, state):
        vec = state.as_vector()
        if self._window is None:
            self._window = [vec] * self.model.t_obs
        else:
            self._window = self._window[1:] + [vec]
        if not self._pending:
            window = np.array(self._window)
            if self.noise_mode == "sample":
                w = self._rng.standard_normal(self.transform.noise_dim)
            elif self.noise_mode == "zero":
                w = np.zeros(self.transform.noise_dim)
            else:
                s_flat = self.transform.standardize_window(window)
                w = forward(self.policy.mean_net, s_flat)
            actions = self.transform.exec_actions(w, window)
            self._pending = [QuoteAction(row[0], row[1]) for row in actions]
        return self._pending.pop(0)


class DirectPolicyStrategy(Strategy):
    """Per-step quotes from a trained direct-action Gaussian policy."""

    def __init__(self, policy: NoisePolicy, transform: DirectActionTransform,
                 deterministic=True, name="ppo"):
        self.policy = policy
        self.transform = transform
        self.deterministic = deterministic
        self.name = name
        self._rng = None
        self._window = None

    def start_episode(self, seed):
        self._rng = seed if isinstance(seed, np.random.Generator) else make_rng(
            seed, DOMAIN_STRATEGY
        )
        self._window = None

    def quotes(self, state):
        vec = state.as_vector()
        if self._window is None:
            self._window = [vec] * self.transform.t_obs
        else:
            self._window = self._window[1:] + [vec]
        s_flat = self.transform.standardize_window(np.array(self._window))
        if self.deterministic:
            w = forward(self.policy.mean_net, s_flat)
        else:
            w, _ = sample_noise(self.policy, s_flat, self._rng)
        act = self.transform.exec_actions(w, np.array(self._window))[0]
        return QuoteAction(act[0], act[1])


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------

@dataclass
class TrainLogRow:
    update: int
    mean_chunk_reward: float
    surrogate: float
    value_loss: float
    entropy: float
    clip_fraction: float


TRAIN_LOG_COLUMNS = (
    "update", "mean_chunk_reward", "surrogate", "value_loss", "entropy", "clip_fraction",
)


def train_log_csv_text(rows) -> str:
    lines = [",".join(TRAIN_LOG_COLUMNS)]
    for r in rows:
        lines.append(
            f"{r.update},{r.mean_chunk_reward!r},{r.surrogate!r},{r.value_loss!r},"
            f"{r.entropy!r},{r.clip_fraction!r}"
        )
    return "\n".join(lines) + "\n"


def run_ppo(config, transform, hyper, updates, n_envs, chunks_per_env, seed,
            policy_hidden=64, value_hidden=64, within_chunk_discount=None):
    """Shared PPO driver. Returns (policy, value, log rows)."""
    rng = make_rng(seed, DOMAIN_TRAIN, 1)
    obs_dim = (getattr(transform, "t_obs", None) or transform.model.t_obs) * OBS_DIM
    policy = new_noise_policy(obs_dim, transform.noise_dim, policy_hidden, rng)
    value = new_value_net(obs_dim, value_hidden, rng)
    adam = numerics.adam_init(trainable_params(policy, value), hyper.learning_rate)
    runner = ChunkRollout(config, transform, n_envs, seed, within_chunk_discount)
    rows = []
    for u in range(updates):
        buffer = runner.collect(policy, value, chunks_per_env, rng)
        compute_advantages(buffer, hyper.discount, hyper.gae_lambda)
        diag = ppo_update(policy, value, buffer, hyper, adam, rng)
        adam = diag["adam_state"]
        rows.append(
            TrainLogRow(
                update=u,
                mean_chunk_reward=buffer.mean_reward,
                surrogate=diag["surrogate"],
                value_loss=diag["value_loss"],
                entropy=diag["entropy"],
                clip_fraction=diag["clip_fraction"],
            )
        )
    return policy, value, rows


def finetune(config, model: FlowModel, hyper=None, updates=300, n_envs=16,
             chunks_per_env=13, seed=0, within_chunk_discount=None):
    """Noise-space fine-tuning against the frozen expert. Returns
    (policy, value, log rows)."""
    hyper = hyper or PPOHyper()
    transform = FrozenFlowTransform(model)
    return run_ppo(
        config, transform, hyper, updates, n_envs, chunks_per_env, seed,
        within_chunk_discount=within_chunk_discount,
    )


def train_direct_ppo(config, hyper=None, updates=200, n_envs=8, steps_per_env=100,
                     seed=0, scaler=None):
    """Direct-action PPO baseline. Returns (policy, value, transform, log rows)."""
    hyper = hyper or PPOHyper()
    scaler = scaler or fit_obs_scaler(config, seed=seed)
    transform = DirectActionTransform(scaler)
    policy, value, rows = run_ppo(
        config, transform, hyper, updates, n_envs, steps_per_env, seed
    )
    return policy, value, transform, rows


# ---------------------------------------------------------------------------
# Fine-tune checkpoint bundle
# ---------------------------------------------------------------------------

def save_finetune_bundle(path, policy, value, expert_hash, model: FlowModel) -> None:
    """Policy + critic + frozen-expert reference hash + stats and horizons."""
    arrays = []
    for i, (w, b) in enumerate(zip(policy.mean_net.weights, policy.mean_net.biases)):
        arrays.append((f"policy_w{i}", w))
        arrays.append((f"policy_b{i}", b))
    arrays.append(("log_std", policy.log_std))
    for i, (w, b) in enumerate(zip(value.net.weights, value.net.biases)):
        arrays.append((f"value_w{i}", w))
        arrays.append((f"value_b{i}", b))
    meta = {
        "kind": "finetune-bundle",
        "policy_dims": list(policy.mean_net.layer_dims),
        "policy_activations": list(policy.mean_net.activations),
        "value_dims": list(value.net.layer_dims),
        "value_activations": list(value.net.activations),
        "expert_hash": expert_hash,
        "t_obs": model.t_obs,
        "t_pred": model.t_pred,
        "t_exec": model.t_exec,
        "stats": model.stats.as_dict(),
    }
    numerics.write_array_bundle(path, arrays, meta=meta)


def save_direct_bundle(path, policy, value, scaler: ObsScaler) -> None:
    """Direct-action baseline checkpoint: policy + critic + frozen obs scaler."""
    arrays = []
    for i, (w, b) in enumerate(zip(policy.mean_net.weights, policy.mean_net.biases)):
        arrays.append((f"policy_w{i}", w))
        arrays.append((f"policy_b{i}", b))
    arrays.append(("log_std", policy.log_std))
    for i, (w, b) in enumerate(zip(value.net.weights, value.net.biases)):
        arrays.append((f"value_w{i}", w))
        arrays.append((f"value_b{i}", b))
    arrays.append(("obs_mean", scaler.mean))
    arrays.append(("obs_std", scaler.std))
    meta = {
        "kind": "direct-bundle",
        "policy_dims": list(policy.mean_net.layer_dims),
        "policy_activations": list(policy.mean_net.activations),
        "value_dims": list(value.net.layer_dims),
        "value_activations": list(value.net.activations),
    }
    numerics.write_array_bundle(path, arrays, meta=meta)


def load_direct_bundle(path):
    """Returns (policy, DirectActionTransform)."""
    arrays, meta = numerics.read_array_bundle(path)
    if meta.get("kind") != "direct-bundle":
        raise InputError(f"{path}: not a direct-PPO bundle")
    pd = meta["policy_dims"]
    policy = NoisePolicy(
        mean_net=DenseNet(
            tuple(pd),
            [arrays[f"policy_w{i}"] for i in range(len(pd) - 1)],
            [arrays[f"policy_b{i}"] for i in range(len(pd) - 1)],
            tuple(meta["policy_activations"]),
        ),
        log_std=arrays["log_std"],
    )
    scaler = ObsScaler(mean=arrays["obs_mean"].reshape(-1), std=arrays["obs_std"].reshape(-1))
    return policy, DirectActionTransform(scaler)


def load_finetune_bundle(path):
    """Returns (policy, value, meta)."""
    arrays, meta = numerics.read_array_bundle(path)
    if meta.get("kind") != "finetune-bundle":
        raise InputError(f"{path}: not a finetune bundle")
    pd = meta["policy_dims"]
    vd = meta["value_dims"]
    policy = NoisePolicy(
        mean_net=DenseNet(
            tuple(pd),
            [arrays[f"policy_w{i}"] for i in range(len(pd) - 1)],
            [arrays[f"policy_b{i}"] for i in range(len(pd) - 1)],
            tuple(meta["policy_activations"]),
        ),
        log_std=arrays["log_std"],
    )
    value = ValueNet(
        net=DenseNet(
            tuple(vd),
            [arrays[f"value_w{i}"] for i in range(len(vd) - 1)],
            [arrays[f"value_b{i}"] for i in range(len(vd) - 1)],
            tuple(meta["value_activations"]),
        )
    )
    return policy, value, meta
