"""Dense nets with explicit backward passes, and the AdamW optimizer."""

import numpy as np
import pytest

from conftest import central_diff, rel_err

from headfield.nn import DenseNet, sh_basis_deg4, sigmoid
from headfield.optim import AdamW, cosine_lr_scale


def make_net(sizes, activation="tanh", seed=0):
    return DenseNet(sizes, activation=activation, rng=np.random.default_rng(seed))


def test_forward_shapes_and_linear_output_layer():
    net = make_net([5, 8, 3])
    x = np.random.default_rng(1).standard_normal((7, 5))
    out = net.forward(x)
    assert out.shape == (7, 3)
    # last layer is affine: doubling the last hidden weight doubles the
    # output shift relative to the bias
    net.biases[-1][:] = 0.0
    base = net.forward(x)
    net.weights[-1] *= 2.0
    assert np.allclose(net.forward(x), 2.0 * base)


def test_single_layer_is_affine():
    net = make_net([4, 2])
    x = np.random.default_rng(2).standard_normal((6, 4))
    assert np.allclose(net.forward(x), x @ net.weights[0] + net.biases[0])


def test_relu_and_identity_activations():
    x = np.array([[-2.0, 3.0]])
    relu = DenseNet([2, 2, 2], activation="relu", rng=np.random.default_rng(0))
    relu.weights[0][:] = np.eye(2)
    relu.weights[1][:] = np.eye(2)
    assert np.allclose(relu.forward(x), [[0.0, 3.0]])
    ident = DenseNet([2, 2, 2], activation="identity", rng=np.random.default_rng(0))
    ident.weights[0][:] = np.eye(2)
    ident.weights[1][:] = np.eye(2)
    assert np.allclose(ident.forward(x), x)


def test_unknown_activation_and_short_layer_list_raise():
    with pytest.raises(ValueError):
        DenseNet([3, 3], activation="gelu")
    with pytest.raises(ValueError):
        DenseNet([3])


@pytest.mark.parametrize("activation", ["tanh", "softplus"])
def test_gradients_match_finite_differences(activation):
    net = make_net([4, 6, 5, 2], activation=activation, seed=3)
    rng = np.random.default_rng(4)
    x = rng.standard_normal((5, 4))
    up = rng.standard_normal((5, 2))

    cache = []
    net.forward(x, cache=cache)
    w_grads, b_grads, dx = net.backward(cache, up)

    def loss_with(arr, replace):
        saved = arr.copy()
        arr[...] = replace
        val = float((net.forward(x) * up).sum())
        arr[...] = saved
        return val

    for grad, param in zip(w_grads + b_grads, net.weights + net.biases):
        fd = central_diff(lambda p, a=param: loss_with(a, p), param, eps=1e-6)
        assert rel_err(grad, fd) < 1e-7

    fd_x = central_diff(lambda v: float((net.forward(v) * up).sum()), x, eps=1e-6)
    assert rel_err(dx, fd_x) < 1e-7


def test_static_tail_matches_materialized_columns():
    net = make_net([7, 6, 3], seed=5)
    rng = np.random.default_rng(6)
    x = rng.standard_normal((8, 4))
    tail = rng.standard_normal(3)
    full = np.hstack([x, np.tile(tail, (8, 1))])

    assert np.allclose(net.forward(x, static_tail=tail), net.forward(full),
                       atol=1e-12)

    ca, cb = [], []
    net.forward(x, cache=ca, static_tail=tail)
    net.forward(full, cache=cb)
    up = rng.standard_normal((8, 3))
    wa, ba, dxa = net.backward(ca, up, static_tail=tail)
    wb, bb, dxb = net.backward(cb, up)
    for ga, gb in zip(wa + ba, wb + bb):
        assert np.allclose(ga, gb, atol=1e-10)
    assert np.allclose(dxa, dxb[:, :4], atol=1e-10)


def test_static_tail_size_mismatch_raises():
    net = make_net([7, 6, 3])
    with pytest.raises(ValueError, match="static tail"):
        net.forward(np.zeros((2, 4)), static_tail=np.zeros(5))


def test_dx_dims_truncates_input_gradient():
    net = make_net([6, 5, 2], seed=7)
    rng = np.random.default_rng(8)
    x = rng.standard_normal((4, 6))
    up = rng.standard_normal((4, 2))
    ca, cb = [], []
    net.forward(x, cache=ca)
    net.forward(x, cache=cb)
    _, _, dx_full = net.backward(ca, up)
    _, _, dx_part = net.backward(cb, up, dx_dims=2)
    assert dx_part.shape == (4, 2)
    assert np.allclose(dx_part, dx_full[:, :2])


def test_sigmoid_is_stable_at_extremes():
    z = np.array([-1000.0, -20.0, 0.0, 20.0, 1000.0])
    s = sigmoid(z)
    assert np.isfinite(s).all()
    assert s[0] == 0.0 and s[-1] == 1.0
    assert abs(s[2] - 0.5) < 1e-15
    assert np.all(np.diff(s) >= 0)


def test_sh_basis_axis_values():
    out = sh_basis_deg4(np.array([[0.0, 0.0, 1.0]]))[0]
    assert out.shape == (16,)
    assert abs(out[0] - 0.28209479177387814) < 1e-15
    assert abs(out[2] - 0.4886025119029199) < 1e-15
    assert abs(out[6] - 2.0 * 0.31539156525252005) < 1e-14
    # bands odd in x or y vanish on the z axis
    for k in (1, 3, 4, 5, 7, 8, 9, 10, 11, 13, 14, 15):
        assert abs(out[k]) < 1e-15


def test_sh_basis_is_degree_three_polynomial():
    # values at +d and -d differ only in the odd bands
    rng = np.random.default_rng(9)
    d = rng.standard_normal((20, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    plus, minus = sh_basis_deg4(d), sh_basis_deg4(-d)
    odd = [1, 2, 3] + list(range(9, 16))
    even = [0] + list(range(4, 9))
    assert np.allclose(plus[:, even], minus[:, even], atol=1e-14)
    assert np.allclose(plus[:, odd], -minus[:, odd], atol=1e-14)


def test_adamw_first_step_matches_closed_form():
    p = np.array([1.0, -2.0, 0.5])
    g = np.array([0.3, -0.1, 0.0])
    lr, eps = 1e-2, 1e-8
    opt = AdamW([{"params": [p], "lr": lr}], eps=eps)
    opt.step([[g.copy()]])
    # bias correction cancels on the first step: update is lr * g / (|g| + eps)
    expect = np.array([1.0, -2.0, 0.5]) - lr * g / (np.abs(g) + eps)
    assert np.allclose(p, expect, atol=1e-15)


def test_adamw_decoupled_weight_decay():
    p = np.array([2.0])
    g = np.array([0.0])
    opt = AdamW([{"params": [p], "lr": 0.1, "weight_decay": 0.5}])
    opt.step([[g]])
    # zero gradient: only the decay term moves the parameter
    assert abs(p[0] - 2.0 * (1.0 - 0.1 * 0.5)) < 1e-15


def test_adamw_updates_in_place_and_skips_none():
    a = np.ones(3)
    b = np.ones(3)
    ref_a, ref_b = a, b
    opt = AdamW([{"params": [a, b], "lr": 0.1}])
    opt.step([[np.full(3, 0.2), None]])
    assert a is ref_a and b is ref_b
    assert not np.allclose(a, 1.0)
    assert np.array_equal(b, np.ones(3))


def test_adamw_lr_scale_and_groups():
    a = np.zeros(1)
    b = np.zeros(1)
    opt = AdamW([{"params": [a], "lr": 1.0}, {"params": [b], "lr": 0.5}])
    opt.step([[np.ones(1)], [np.ones(1)]], lr_scale=0.1)
    assert abs(a[0] + 0.1) < 1e-8   # lr 1.0 * scale 0.1, unit normalized grad
    assert abs(b[0] + 0.05) < 1e-8


def test_cosine_schedule_endpoints():
    assert cosine_lr_scale(0, 100) == pytest.approx(1.0)
    assert cosine_lr_scale(99, 100) == pytest.approx(0.1)
    assert cosine_lr_scale(50, 101) == pytest.approx(0.55)
    assert cosine_lr_scale(0, 1) == 1.0
    scales = [cosine_lr_scale(s, 40) for s in range(40)]
    assert all(y <= x + 1e-12 for x, y in zip(scales, scales[1:]))
