"""Minimal dense-network numerics.

Everything learned in this package runs on the small substrate below: plain
dense layers with relu/tanh/identity activations, hand-rolled backprop,
forward-mode directional derivatives, Adam, and a binary checkpoint format.
All math is float64; inputs may be single vectors ``(d,)`` or row batches
``(batch, d)``.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, LoadError, UsageError

ACTIVATIONS = ("relu", "tanh", "identity")

_HEADER_STRUCT = struct.Struct("<Q")  # uint64 little-endian header length


# ---------------------------------------------------------------------------
# Network definition
# ---------------------------------------------------------------------------

@dataclass
class DenseNet:
    """Fully-connected network.

    ``weights[i]`` has shape ``(layer_dims[i+1], layer_dims[i])``,
    ``biases[i]`` has length ``layer_dims[i+1]``.  The final activation is
    always ``identity`` so outputs are unconstrained reals.
    """

    layer_dims: tuple
    weights: list
    biases: list
    activations: tuple

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or any(d <= 0 for d in dims):
            raise InputError(f"layer_dims must be >=2 positive ints, got {dims}")
        acts = tuple(self.activations)
        if len(acts) != len(dims) - 1:
            raise InputError("need one activation per layer")
        if any(a not in ACTIVATIONS for a in acts):
            raise InputError(f"unknown activation in {acts}")
        if acts[-1] != "identity":
            raise InputError("final layer activation must be identity")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
                raise InputError(f"layer {i} parameter shapes do not match layer_dims")
        self.layer_dims = dims
        self.activations = acts

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


def dense_net(layer_dims, activations=None, rng=None) -> DenseNet:
    """Build a DenseNet with Glorot-uniform weights and zero biases.

    Default activations are relu on hidden layers, identity on the output.
    """
    dims = tuple(int(d) for d in layer_dims)
    if activations is None:
        activations = ("relu",) * (len(dims) - 2) + ("identity",)
    if rng is None:
        rng = np.random.default_rng(0)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return DenseNet(dims, weights, biases, tuple(activations))


def net_params(net: DenseNet) -> list:
    """Trainable parameter arrays in fixed order [W0, b0, W1, b1, ...]."""
    out = []
    for w, b in zip(net.weights, net.biases):
        out.append(w)
        out.append(b)
    return out


def set_net_params(net: DenseNet, params) -> None:
    """Install a parameter list produced by :func:`net_params`."""
    if len(params) != 2 * len(net.weights):
        raise InputError("parameter list length mismatch")
    for i in range(len(net.weights)):
        w, b = params[2 * i], params[2 * i + 1]
        if w.shape != net.weights[i].shape or b.shape != net.biases[i].shape:
            raise InputError(f"layer {i} parameter shapes do not match")
        net.weights[i] = w
        net.biases[i] = b


# ---------------------------------------------------------------------------
# Forward / backward / forward-mode
# ---------------------------------------------------------------------------

def _apply_activation(kind, z):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activation_tangent(kind, z, out):
    # Derivative expressed from whichever of (pre-activation, output) is cheap.
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - out * out
    return None  # identity: multiplier 1


@dataclass
class ForwardCache:
    """Activations recorded by :func:`forward_cached`, consumed by backward."""

    net: DenseNet
    x: np.ndarray
    pre: list
    post: list


def _check_input(net, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != net.layer_dims[0]:
        raise InputError(
            f"input width {x.shape[-1] if x.ndim else '?'} != layer_dims[0]={net.layer_dims[0]}"
        )
    return x


def forward(net: DenseNet, x) -> np.ndarray:
    """Evaluate the network. Pure: equal (net, input) gives bitwise-equal output."""
    x = _check_input(net, x)
    h = x
    for w, b, act in zip(net.weights, net.biases, net.activations):
        h = _apply_activation(act, h @ w.T + b)
    return h


def forward_cached(net: DenseNet, x):
    """Forward pass that records pre/post activations for :func:`backward`."""
    x = _check_input(net, x)
    pre, post = [], []
    h = x
    for w, b, act in zip(net.weights, net.biases, net.activations):
        z = h @ w.T + b
        h = _apply_activation(act, z)
        pre.append(z)
        post.append(h)
    return h, ForwardCache(net, x, pre, post)


@dataclass
class Gradients:
    """Parameter gradients plus the gradient w.r.t. the network input."""

    weights: list
    biases: list
    input: np.ndarray

    def as_list(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def backward(net: DenseNet, cache: ForwardCache, output_gradient) -> Gradients:
    """Gradient of <output_gradient, forward(net, x)> w.r.t. all parameters.

    For batched caches the contributions of all rows are summed.  Requires the
    cache produced by ``forward_cached`` for this exact net.
    """
    if not isinstance(cache, ForwardCache) or cache.net is not net:
        raise UsageError("backward requires a ForwardCache from forward_cached on this net")
    g = np.asarray(output_gradient, dtype=np.float64)
    if g.shape != cache.post[-1].shape:
        raise InputError("output_gradient shape does not match cached output")
    batched = g.ndim == 2
    grads_w = [None] * len(net.weights)
    grads_b = [None] * len(net.weights)
    for i in range(len(net.weights) - 1, -1, -1):
        mult = _activation_tangent(net.activations[i], cache.pre[i], cache.post[i])
        dz = g if mult is None else g * mult
        below = cache.post[i - 1] if i > 0 else cache.x
        if batched:
            grads_w[i] = dz.T @ below
            grads_b[i] = dz.sum(axis=0)
        else:
            grads_w[i] = np.outer(dz, below)
            grads_b[i] = dz.copy()
        g = dz @ net.weights[i]
    return Gradients(grads_w, grads_b, g)


def jvp(net: DenseNet, x, direction) -> np.ndarray:
    """Forward-mode Jacobian-vector product J(x) @ direction."""
    x = _check_input(net, x)
    d = np.asarray(direction, dtype=np.float64)
    if d.shape != x.shape:
        raise InputError("direction shape must match input shape")
    h, dh = x, d
    for w, b, act in zip(net.weights, net.biases, net.activations):
        z = h @ w.T + b
        dz = dh @ w.T
        h = _apply_activation(act, z)
        mult = _activation_tangent(act, z, h)
        dh = dz if mult is None else dz * mult
    return dh


def directional_derivative(net: DenseNet, x, direction, mode="forward", step=1e-4):
    """J(x) @ direction, by forward-mode propagation or symmetric differences."""
    if mode == "forward":
        return jvp(net, x, direction)
    if mode == "fd":
        x = _check_input(net, x)
        d = np.asarray(direction, dtype=np.float64)
        if d.shape != x.shape:
            raise InputError("direction shape must match input shape")
        return (forward(net, x + step * d) - forward(net, x - step * d)) / (2.0 * step)
    raise InputError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Adam moments and step counter for a fixed list of parameter arrays."""

    first_moment: list
    second_moment: list
    step_count: int
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_init(params, learning_rate, beta1=0.9, beta2=0.999, epsilon=1e-8) -> AdamState:
    return AdamState(
        first_moment=[np.zeros_like(p) for p in params],
        second_moment=[np.zeros_like(p) for p in params],
        step_count=0,
        learning_rate=float(learning_rate),
        beta1=float(beta1),
        beta2=float(beta2),
        epsilon=float(epsilon),
    )


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update. Returns (new_params, state).

    Non-finite gradients reject the whole update (state untouched) so a single
    bad batch cannot poison the moments.
    """
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise InputError("params/grads/state length mismatch")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise InputError("non-finite gradient; update rejected")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    new_params = []
    for i, (p, g) in enumerate(zip(params, grads)):
        m = b1 * state.first_moment[i] + (1.0 - b1) * g
        v = b2 * state.second_moment[i] + (1.0 - b2) * (g * g)
        state.first_moment[i] = m
        state.second_moment[i] = v
        step = state.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + state.epsilon)
        new_params.append(p - step)
    state.step_count = t
    return new_params, state


# ---------------------------------------------------------------------------
# FiLM
# ---------------------------------------------------------------------------

@dataclass
class FiLMLayer:
    """Feature-wise linear modulation: h' = gamma(c) * h + beta(c).

    ``condition_net`` maps a condition vector to the concatenated
    ``(gamma, beta)`` pair, so its output width must be twice the width of the
    features being modulated.
    """

    condition_net: DenseNet
    feature_dim: int

    def __post_init__(self):
        if self.condition_net.layer_dims[-1] != 2 * self.feature_dim:
            raise InputError("condition net output dim must be 2 * feature_dim")


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------

def fd_gradients(loss_fn, params, step=1e-5) -> list:
    """Central finite-difference gradient of loss_fn(params) per coordinate."""
    grads = []
    for k, p in enumerate(params):
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = loss_fn(params)
            flat[j] = orig - step
            down = loss_fn(params)
            flat[j] = orig
            gflat[j] = (up - down) / (2.0 * step)
        grads.append(g)
    return grads


def max_relative_grad_error(analytic, numeric) -> float:
    """max |a - f| scaled by the largest finite-difference magnitude."""
    worst = 0.0
    for a, f in zip(analytic, numeric):
        scale = max(float(np.max(np.abs(f))), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - f))) / scale)
    return worst


# ---------------------------------------------------------------------------
# Checkpoints: JSON header + flat float64 little-endian payload
# ---------------------------------------------------------------------------

def write_array_bundle(path, arrays, meta=None) -> None:
    """Write named float64 arrays as one binary file.

    Layout: uint64 little-endian header length, UTF-8 JSON header (array names
    and shapes plus caller metadata), then the concatenated float64
    little-endian payload.  Round-trips bit-exactly.
    """
    header = {
        "format": "flowmm-arrays",
        "version": 1,
        "meta": meta or {},
        "arrays": [{"name": str(n), "shape": list(a.shape)} for n, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEADER_STRUCT.pack(len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_array_bundle(path):
    """Inverse of :func:`write_array_bundle`. Returns (dict name->array, meta)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER_STRUCT.size:
        raise LoadError(f"{path}: truncated header")
    (hlen,) = _HEADER_STRUCT.unpack_from(raw, 0)
    body_start = _HEADER_STRUCT.size + hlen
    if len(raw) < body_start:
        raise LoadError(f"{path}: truncated header")
    try:
        header = json.loads(raw[_HEADER_STRUCT.size:body_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise LoadError(f"{path}: corrupt header ({exc})") from exc
    if header.get("format") != "flowmm-arrays" or header.get("version") != 1:
        raise LoadError(f"{path}: unsupported format/version {header.get('format')!r}")
    specs = header["arrays"]
    total = sum(int(np.prod(s["shape"], dtype=np.int64)) for s in specs)
    expected = body_start + 8 * total
    if len(raw) != expected:
        raise LoadError(f"{path}: payload length {len(raw) - body_start}, expected {8 * total}")
    arrays = {}
    offset = body_start
    for s in specs:
        n = int(np.prod(s["shape"], dtype=np.int64))
        a = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).astype(np.float64)
        arrays[s["name"]] = a.reshape(s["shape"])
        offset += 8 * n
    return arrays, header["meta"]


def save_dense_net(path, net: DenseNet, meta=None) -> None:
    """Serialize a DenseNet: JSON header (layer dims, activations) + float64 payload."""
    info = {"layer_dims": list(net.layer_dims), "activations": list(net.activations)}
    if meta:
        info.update(meta)
    arrays = []
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        arrays.append((f"w{i}", w))
        arrays.append((f"b{i}", b))
    write_array_bundle(path, arrays, meta=info)


def load_dense_net(path):
    """Load a DenseNet checkpoint. Returns (net, meta)."""
    arrays, meta = read_array_bundle(path)
    try:
        dims = tuple(meta["layer_dims"])
        acts = tuple(meta["activations"])
        weights = [arrays[f"w{i}"] for i in range(len(dims) - 1)]
        biases = [arrays[f"b{i}"] for i in range(len(dims) - 1)]
    except KeyError as exc:
        raise LoadError(f"{path}: missing checkpoint field {exc}") from exc
    return DenseNet(dims, weights, biases, acts), meta
