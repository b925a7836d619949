"""Flow-matching chunk policy trained on expert demonstrations.

The model learns the average velocity u(z, r, t | s) of a linear noise-to-data
path z_t = (1-t) a + t eps (so v = eps - a), conditioned on the flattened
observation window through FiLM modulation.  Training regresses the identity

    u(z_t, r, t) = v - (t - r) * d/dt u(z_t, r, t)

with the total derivative taken along (dz, dt) = (v, 1) by symmetric finite
differences and treated as a constant target.  A trained model generates a
whole action chunk in one step: a = clip(w - u(w, r=0, t=1, s), -1, 1),
un-normalized through the dataset stats.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import numerics
from .dataset import T_EXEC, T_OBS, T_PRED, NormStats
from .errors import ConfigError, InputError, LoadError
from .numerics import DenseNet, FiLMLayer, dense_net, forward, forward_cached
from .seeding import DOMAIN_TRAIN, make_rng

logger = logging.getLogger(__name__)

OBS_DIM = 5
ACT_DIM = 2
FD_STEP = 1e-4
BOUNDARY_PROB = 0.75  # probability of sampling r = t


# ---------------------------------------------------------------------------
# FiLM
# ---------------------------------------------------------------------------

def film_modulate(features, condition, layer: FiLMLayer):
    """h' = gamma(condition) * h + beta(condition)."""
    h = np.asarray(features, dtype=np.float64)
    if h.shape[-1] != layer.feature_dim:
        raise InputError(
            f"feature width {h.shape[-1]} != FiLM feature_dim {layer.feature_dim}"
        )
    gb = forward(layer.condition_net, condition)
    gamma, beta = gb[..., : layer.feature_dim], gb[..., layer.feature_dim:]
    return gamma * h + beta


# ---------------------------------------------------------------------------
# Velocity network: trunk + FiLM on one hidden layer
# ---------------------------------------------------------------------------

@dataclass
class VelocityNet:
    """Trunk over (z, r, t) with FiLM conditioning on the observation window.

    The trunk input is the flattened chunk plus the two time scalars; FiLM
    modulates the activation of trunk layer ``film_index``.
    """

    trunk: DenseNet
    film: FiLMLayer
    t_obs: int
    t_pred: int
    film_index: int = 0

    def __post_init__(self):
        nd = self.t_pred * ACT_DIM
        if self.trunk.layer_dims[0] != nd + 2 or self.trunk.layer_dims[-1] != nd:
            raise InputError("trunk dims must map (t_pred*2 + 2) -> (t_pred*2)")
        if self.film.condition_net.layer_dims[0] != self.t_obs * OBS_DIM:
            raise InputError("condition net input must be t_obs * 5")
        if not (0 <= self.film_index < len(self.trunk.weights) - 1):
            raise InputError("film_index must address a hidden trunk layer")
        if self.trunk.layer_dims[self.film_index + 1] != self.film.feature_dim:
            raise InputError("FiLM feature_dim must match the modulated trunk layer")

    @property
    def noise_dim(self) -> int:
        return self.t_pred * ACT_DIM


def new_velocity_net(t_obs=T_OBS, t_pred=T_PRED, hidden=128, cond_hidden=64, rng=None):
    rng = rng if rng is not None else np.random.default_rng(0)
    nd = t_pred * ACT_DIM
    trunk = dense_net((nd + 2, hidden, hidden, nd), rng=rng)
    cond = dense_net((t_obs * OBS_DIM, cond_hidden, 2 * hidden), rng=rng)
    # Identity modulation at init (gamma = 1, beta = 0): zero the final layer
    # and bias the gamma half to one, so conditioning starts as a no-op.
    cond.weights[-1] = np.zeros_like(cond.weights[-1])
    cond.biases[-1] = np.concatenate([np.ones(hidden), np.zeros(hidden)])
    return VelocityNet(trunk=trunk, film=FiLMLayer(cond, hidden), t_obs=t_obs, t_pred=t_pred)


def velocity_params(net: VelocityNet) -> list:
    return numerics.net_params(net.trunk) + numerics.net_params(net.film.condition_net)


def set_velocity_params(net: VelocityNet, params) -> None:
    n_trunk = 2 * len(net.trunk.weights)
    numerics.set_net_params(net.trunk, params[:n_trunk])
    numerics.set_net_params(net.film.condition_net, params[n_trunk:])


def _stack_inputs(net, z, r, t):
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    zb = z[None, :] if single else z
    b = zb.shape[0]
    rb = np.broadcast_to(np.asarray(r, dtype=np.float64), (b,))
    tb = np.broadcast_to(np.asarray(t, dtype=np.float64), (b,))
    x = np.concatenate([zb, rb[:, None], tb[:, None]], axis=1)
    return x, single


def velocity_forward(net: VelocityNet, z, r, t, s_flat, want_cache=False):
    """u(z, r, t | s).  ``z`` flat (noise_dim,) or (batch, noise_dim);
    ``s_flat`` already standardized, (10,) or (batch, 10)."""
    x, single = _stack_inputs(net, z, r, t)
    s = np.asarray(s_flat, dtype=np.float64)
    sb = s[None, :] if s.ndim == 1 else s
    gb, cond_cache = forward_cached(net.film.condition_net, sb)
    fd = net.film.feature_dim
    gamma, beta = gb[:, :fd], gb[:, fd:]

    trunk = net.trunk
    h = x
    inputs, pre, post = [], [], []
    h0 = None
    for i, (w, bias, act) in enumerate(zip(trunk.weights, trunk.biases, trunk.activations)):
        inputs.append(h)
        zpre = h @ w.T + bias
        hpost = numerics._apply_activation(act, zpre)
        pre.append(zpre)
        post.append(hpost)
        if i == net.film_index:
            h0 = hpost
            h = gamma * hpost + beta
        else:
            h = hpost
    u = h[0] if single else h
    if not want_cache:
        return u
    cache = {
        "inputs": inputs, "pre": pre, "post": post, "h0": h0,
        "gamma": gamma, "beta": beta, "cond_cache": cond_cache, "single": single,
    }
    return u, cache


def velocity_backward(net: VelocityNet, cache, output_gradient) -> list:
    """Gradients of <output_gradient, u> in :func:`velocity_params` order."""
    g = np.asarray(output_gradient, dtype=np.float64)
    if cache["single"] and g.ndim == 1:
        g = g[None, :]
    trunk = net.trunk
    n_layers = len(trunk.weights)
    grads_w = [None] * n_layers
    grads_b = [None] * n_layers
    d_gamma = d_beta = None
    for i in range(n_layers - 1, -1, -1):
        if i == net.film_index:
            # g is w.r.t. the modulated features gamma*h0 + beta
            d_gamma = g * cache["h0"]
            d_beta = g
            g = g * cache["gamma"]
        mult = numerics._activation_tangent(trunk.activations[i], cache["pre"][i], cache["post"][i])
        dz = g if mult is None else g * mult
        grads_w[i] = dz.T @ cache["inputs"][i]
        grads_b[i] = dz.sum(axis=0)
        g = dz @ trunk.weights[i]
    cond_g = np.concatenate([d_gamma, d_beta], axis=1)
    cond_grads = numerics.backward(net.film.condition_net, cache["cond_cache"], cond_g)
    out = []
    for w, b in zip(grads_w, grads_b):
        out.append(w)
        out.append(b)
    return out + cond_grads.as_list()


# ---------------------------------------------------------------------------
# Identity target and training
# ---------------------------------------------------------------------------

def meanflow_target(net: VelocityNet, z, r, t, s_flat, v, step=FD_STEP):
    """Regression target u_tgt = v - (t - r) * d/dt u, total derivative along
    (dz, dt) = (v, 1) by symmetric differences; no gradient flows through it."""
    z = np.asarray(z, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    up = velocity_forward(net, z + step * v, r, np.asarray(t) + step, s_flat)
    down = velocity_forward(net, z - step * v, r, np.asarray(t) - step, s_flat)
    total = (up - down) / (2.0 * step)
    gap = np.asarray(t, dtype=np.float64) - np.asarray(r, dtype=np.float64)
    if gap.ndim == 1:
        gap = gap[:, None]
    return v - gap * total


def sample_rt(rng, n, boundary_prob=BOUNDARY_PROB):
    """t ~ U(0,1); r = t with probability boundary_prob, else r ~ U(0, t)."""
    t = rng.random(n)
    coin = rng.random(n)
    r_interior = rng.random(n) * t
    r = np.where(coin < boundary_prob, t, r_interior)
    return r, t


@dataclass
class FlowModel:
    """Velocity net plus the stats and horizons it was trained with."""

    net: VelocityNet
    stats: NormStats
    t_obs: int = T_OBS
    t_pred: int = T_PRED
    t_exec: int = T_EXEC

    def __post_init__(self):
        if self.net.t_obs != self.t_obs or self.net.t_pred != self.t_pred:
            raise ConfigError("FlowModel horizons disagree with the velocity net")
        if not (1 <= self.t_exec <= self.t_pred):
            raise ConfigError("need 1 <= t_exec <= t_pred")


def flatten_window(model: FlowModel, window) -> np.ndarray:
    """Standardize a raw (t_obs, 5) window and flatten it."""
    w = np.asarray(window, dtype=np.float64).reshape(-1, OBS_DIM)
    return model.stats.standardize_obs(w).reshape(-1)


def train_step(model: FlowModel, windows, chunks_norm, adam_state, rng):
    """One sampled-identity regression step over a batch of records.

    windows: raw (B, t_obs, 5); chunks_norm: (B, t_pred, 2) in [-1, 1].
    Returns (loss, adam_state); a non-finite loss skips the update.
    """
    b = windows.shape[0]
    if b == 0:
        raise InputError("empty batch")
    nd = model.net.noise_dim
    s = model.stats.standardize_obs(windows.reshape(b, -1, OBS_DIM)).reshape(b, -1)
    a = chunks_norm.reshape(b, nd)
    eps = rng.standard_normal((b, nd))
    r, t = sample_rt(rng, b)
    z = (1.0 - t)[:, None] * a + t[:, None] * eps
    v = eps - a
    u_tgt = meanflow_target(model.net, z, r, t, s, v)
    u, cache = velocity_forward(model.net, z, r, t, s, want_cache=True)
    diff = u - u_tgt
    loss = float(np.mean(diff * diff))
    if not np.isfinite(loss):
        logger.warning("non-finite flow loss %r; update skipped", loss)
        return loss, adam_state
    grad_out = (2.0 / diff.size) * diff
    grads = velocity_backward(model.net, cache, grad_out)
    params = velocity_params(model.net)
    new_params, adam_state = numerics.adam_step(params, grads, adam_state)
    set_velocity_params(model.net, new_params)
    return loss, adam_state


def generate_chunk_normalized(model: FlowModel, w, window) -> np.ndarray:
    """One-step generation in normalized action space: clip(w - u(w,0,1,s), -1, 1)."""
    nd = model.net.noise_dim
    w = np.asarray(w, dtype=np.float64).reshape(nd)
    if not np.all(np.isfinite(w)):
        raise InputError("noise must be finite")
    s = flatten_window(model, window)
    u = velocity_forward(model.net, w, 0.0, 1.0, s)
    return np.clip(w - u, -1.0, 1.0).reshape(model.t_pred, ACT_DIM)


def generate_chunk(model: FlowModel, w, window) -> np.ndarray:
    """One-step generation, un-normalized to the trading range: (t_pred, 2)."""
    return model.stats.unnormalize_action(generate_chunk_normalized(model, w, window))


def train_flow_model(
    dataset,
    steps=4000,
    batch_size=256,
    learning_rate=1e-3,
    seed=0,
    hidden=128,
    cond_hidden=64,
    t_exec=T_EXEC,
    record_every=50,
):
    """Fit a FlowModel to a DemoDataset. Returns (model, loss_log).

    loss_log rows are (step, smoothed_loss) where smoothing is the running
    mean over the last ``record_every`` steps.
    """
    rng = make_rng(seed, DOMAIN_TRAIN)
    net = new_velocity_net(dataset.t_obs, dataset.t_pred, hidden, cond_hidden, rng)
    model = FlowModel(net, dataset.stats, dataset.t_obs, dataset.t_pred, t_exec)
    adam = numerics.adam_init(velocity_params(net), learning_rate)
    n = len(dataset)
    log, recent = [], []
    for step_i in range(steps):
        idx = rng.integers(0, n, size=min(batch_size, n))
        loss, adam = train_step(model, dataset.windows[idx], dataset.chunks[idx], adam, rng)
        recent.append(loss)
        if (step_i + 1) % record_every == 0 or step_i == steps - 1:
            log.append((step_i + 1, float(np.mean(recent))))
            recent = []
    return model, log


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_flow_model(path, model: FlowModel) -> None:
    """Velocity-net checkpoint with embedded NormStats and horizon metadata."""
    arrays = []
    for i, (w, b) in enumerate(zip(model.net.trunk.weights, model.net.trunk.biases)):
        arrays.append((f"trunk_w{i}", w))
        arrays.append((f"trunk_b{i}", b))
    cond = model.net.film.condition_net
    for i, (w, b) in enumerate(zip(cond.weights, cond.biases)):
        arrays.append((f"cond_w{i}", w))
        arrays.append((f"cond_b{i}", b))
    meta = {
        "kind": "flow-model",
        "trunk_dims": list(model.net.trunk.layer_dims),
        "trunk_activations": list(model.net.trunk.activations),
        "cond_dims": list(cond.layer_dims),
        "cond_activations": list(cond.activations),
        "film_index": model.net.film_index,
        "t_obs": model.t_obs,
        "t_pred": model.t_pred,
        "t_exec": model.t_exec,
        "stats": model.stats.as_dict(),
    }
    numerics.write_array_bundle(path, arrays, meta=meta)


def load_flow_model(path) -> FlowModel:
    arrays, meta = numerics.read_array_bundle(path)
    if meta.get("kind") != "flow-model":
        raise LoadError(f"{path}: not a flow-model checkpoint")
    try:
        trunk = DenseNet(
            tuple(meta["trunk_dims"]),
            [arrays[f"trunk_w{i}"] for i in range(len(meta["trunk_dims"]) - 1)],
            [arrays[f"trunk_b{i}"] for i in range(len(meta["trunk_dims"]) - 1)],
            tuple(meta["trunk_activations"]),
        )
        cond = DenseNet(
            tuple(meta["cond_dims"]),
            [arrays[f"cond_w{i}"] for i in range(len(meta["cond_dims"]) - 1)],
            [arrays[f"cond_b{i}"] for i in range(len(meta["cond_dims"]) - 1)],
            tuple(meta["cond_activations"]),
        )
        net = VelocityNet(
            trunk=trunk,
            film=FiLMLayer(cond, meta["trunk_dims"][meta["film_index"] + 1]),
            t_obs=int(meta["t_obs"]),
            t_pred=int(meta["t_pred"]),
            film_index=int(meta["film_index"]),
        )
        return FlowModel(
            net=net,
            stats=NormStats.from_dict(meta["stats"]),
            t_obs=int(meta["t_obs"]),
            t_pred=int(meta["t_pred"]),
            t_exec=int(meta["t_exec"]),
        )
    except KeyError as exc:
        raise LoadError(f"{path}: missing checkpoint field {exc}") from exc
