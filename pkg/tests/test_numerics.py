import numpy as np
import pytest

from flowmm import numerics
from flowmm.errors import InputError, LoadError, UsageError
from flowmm.numerics import (
    AdamState,
    DenseNet,
    FiLMLayer,
    adam_init,
    adam_step,
    backward,
    dense_net,
    directional_derivative,
    fd_gradients,
    forward,
    forward_cached,
    jvp,
    load_dense_net,
    max_relative_grad_error,
    net_params,
    read_array_bundle,
    save_dense_net,
    write_array_bundle,
)


def identity_net(dim=2):
    return DenseNet(
        (dim, dim), [np.eye(dim)], [np.zeros(dim)], ("identity",)
    )


def test_forward_identity():
    net = identity_net()
    assert np.array_equal(forward(net, [1.0, 2.0]), [1.0, 2.0])


def test_forward_zero_net():
    net = DenseNet((3, 2), [np.zeros((2, 3))], [np.zeros(2)], ("identity",))
    assert np.array_equal(forward(net, [5.0, -1.0, 2.0]), [0.0, 0.0])


def test_forward_relu_kills_negative_preactivation():
    # relu(2*(-3) + 1) = 0, passed through an identity output layer
    net = DenseNet(
        (1, 1, 1),
        [np.array([[2.0]]), np.array([[1.0]])],
        [np.array([1.0]), np.array([0.0])],
        ("relu", "identity"),
    )
    assert forward(net, [-3.0])[0] == 0.0


def test_forward_dimension_mismatch():
    net = identity_net(2)
    with pytest.raises(InputError):
        forward(net, [1.0, 2.0, 3.0])


def test_forward_is_pure():
    net = dense_net((4, 8, 3), rng=np.random.default_rng(1))
    x = np.random.default_rng(2).standard_normal(4)
    a = forward(net, x)
    b = forward(net, x)
    assert np.array_equal(a, b)


def test_final_activation_must_be_identity():
    with pytest.raises(InputError):
        DenseNet((2, 2), [np.eye(2)], [np.zeros(2)], ("relu",))


def test_backward_zero_output_gradient():
    net = dense_net((3, 5, 2), rng=np.random.default_rng(0))
    _, cache = forward_cached(net, np.ones(3))
    grads = backward(net, cache, np.zeros(2))
    assert all(np.all(g == 0.0) for g in grads.as_list())


def test_backward_linear_weight_gradient_is_input():
    # y = w * x, d<1, y>/dw = x
    net = DenseNet((1, 1), [np.array([[2.0]])], [np.array([0.0])], ("identity",))
    _, cache = forward_cached(net, np.array([3.0]))
    grads = backward(net, cache, np.array([1.0]))
    assert grads.weights[0][0, 0] == 3.0


def test_backward_requires_cache():
    net = dense_net((2, 3, 1), rng=np.random.default_rng(0))
    other = dense_net((2, 3, 1), rng=np.random.default_rng(1))
    _, cache = forward_cached(other, np.ones(2))
    with pytest.raises(UsageError):
        backward(net, cache, np.zeros(1))


@pytest.mark.parametrize("seed", range(4))
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    net = dense_net((3, 6, 4, 2), activations=("relu", "tanh", "identity"), rng=rng)
    x = rng.standard_normal(3)
    g = rng.standard_normal(2)
    _, cache = forward_cached(net, x)
    analytic = backward(net, cache, g).as_list()

    def loss(params):
        return float(np.dot(g, forward(net, x)))

    fd = fd_gradients(loss, net_params(net), step=1e-5)
    assert max_relative_grad_error(analytic, fd) < 1e-4


def test_jvp_linear_net_exact():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((3, 4))
    net = DenseNet((4, 3), [a], [np.zeros(3)], ("identity",))
    d = rng.standard_normal(4)
    assert np.allclose(jvp(net, np.zeros(4), d), a @ d, atol=0, rtol=0)


def test_jvp_zero_direction():
    net = dense_net((4, 5, 2), rng=np.random.default_rng(0))
    out = jvp(net, np.ones(4), np.zeros(4))
    assert np.array_equal(out, np.zeros(2))


def test_jvp_matches_fd():
    rng = np.random.default_rng(7)
    net = dense_net((4, 8, 3), activations=("tanh", "identity"), rng=rng)
    x = rng.standard_normal(4)
    d = rng.standard_normal(4)
    fwd = directional_derivative(net, x, d, mode="forward")
    fd = directional_derivative(net, x, d, mode="fd")
    assert np.max(np.abs(fwd - fd)) / max(np.max(np.abs(fd)), 1e-12) < 1e-3


def test_jvp_is_linear_in_direction():
    rng = np.random.default_rng(11)
    net = dense_net((3, 7, 2), activations=("tanh", "identity"), rng=rng)
    x = rng.standard_normal(3)
    d1, d2 = rng.standard_normal(3), rng.standard_normal(3)
    combo = jvp(net, x, 2.5 * d1 - 1.5 * d2)
    parts = 2.5 * jvp(net, x, d1) - 1.5 * jvp(net, x, d2)
    assert np.max(np.abs(combo - parts)) < 1e-10


def test_adam_zero_gradient_is_identity():
    # Zero gradients with zero moments leave parameters untouched.  (Once the
    # moments are nonzero, Adam's momentum keeps moving parameters; that decay
    # is covered by test_adam_update_magnitude_decays_on_zero_gradients.)
    params = [np.array([1.0, -2.0]), np.array([[3.0]])]
    state = adam_init(params, 0.1)
    for _ in range(3):
        params_new, state = adam_step(params, [np.zeros(2), np.zeros((1, 1))], state)
        assert all(np.array_equal(p, q) for p, q in zip(params, params_new))
        params = params_new
    assert state.step_count == 3


def test_adam_first_step_magnitude():
    params = [np.array([0.0])]
    state = adam_init(params, 0.1)
    new, _ = adam_step(params, [np.array([1.0])], state)
    assert abs(new[0][0] + 0.1) < 1e-6


def test_adam_update_magnitude_decays_on_zero_gradients():
    params = [np.array([0.0])]
    state = adam_init(params, 0.1)
    params, state = adam_step(params, [np.array([1.0])], state)
    deltas = []
    for _ in range(3):
        new, state = adam_step(params, [np.array([0.0])], state)
        deltas.append(abs(new[0][0] - params[0][0]))
        params = new
    assert deltas[0] > deltas[1] > deltas[2]


def test_adam_rejects_non_finite_gradients():
    params = [np.array([0.0])]
    state = adam_init(params, 0.1)
    with pytest.raises(InputError):
        adam_step(params, [np.array([np.nan])], state)
    assert state.step_count == 0


def test_film_layer_dimension_invariant():
    cond = dense_net((4, 6), rng=np.random.default_rng(0))
    with pytest.raises(InputError):
        FiLMLayer(cond, feature_dim=4)  # needs output 8
    FiLMLayer(cond, feature_dim=3)


def test_array_bundle_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    arrays = [("a", rng.standard_normal((3, 4))), ("b", rng.standard_normal(7))]
    path = tmp_path / "bundle.bin"
    write_array_bundle(path, arrays, meta={"x": 1})
    loaded, meta = read_array_bundle(path)
    assert meta == {"x": 1}
    for name, arr in arrays:
        assert np.array_equal(loaded[name], arr)


def test_array_bundle_truncated(tmp_path):
    path = tmp_path / "bundle.bin"
    write_array_bundle(path, [("a", np.ones(4))], meta={})
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(LoadError):
        read_array_bundle(path)


def test_dense_net_checkpoint_round_trip(tmp_path):
    net = dense_net((5, 8, 2), activations=("tanh", "identity"), rng=np.random.default_rng(9))
    path = tmp_path / "net.ckpt"
    save_dense_net(path, net)
    loaded, meta = load_dense_net(path)
    assert loaded.layer_dims == net.layer_dims
    assert loaded.activations == net.activations
    x = np.random.default_rng(1).standard_normal(5)
    assert np.array_equal(forward(loaded, x), forward(net, x))


def test_glorot_bounds():
    net = dense_net((10, 20, 3), rng=np.random.default_rng(2))
    for w, (fi, fo) in zip(net.weights, [(10, 20), (20, 3)]):
        bound = np.sqrt(6.0 / (fi + fo))
        assert np.all(np.abs(w) <= bound)
    assert all(np.all(b == 0) for b in net.biases)
