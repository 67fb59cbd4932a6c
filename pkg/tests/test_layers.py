import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import central_diff, power, rel_err, single_channel_conv
from powconv import layers as L
from powconv.errors import ConfigurationError, DataError, DimensionError
from powconv.tensor import conv2d, conv2d_backward


def powconv(C, D, mode, groups, rng, k=3, pad=1, split=False, nonneg=False, params=True):
    layer = L.PowConv2D(C, D, k, 1, pad, mode=mode, groups=groups, split_sign=split,
                        nonneg_input=nonneg, rng=rng)
    if params:
        shape = layer.params["alpha"].shape
        layer.params["alpha"][...] = rng.uniform(-0.5, 1.5, shape)
        layer.params["beta"][...] = rng.uniform(-0.5, 1.0, shape)
    return layer


def in_oracle(x, layer):
    """Materialise psi(T_c) for every (c, d) pair, then direct-sum."""
    w, a, b = layer.params["weight"], layer.params["alpha"], layer.params["beta"]
    C, D = w.shape[:2]
    size = D // layer.groups
    out = None
    for d in range(D):
        g = d // size
        acc = 0.0
        for c in range(C):
            if layer.pow.split_sign:
                t = np.where(x[c] >= 0, power(x[c], a[0, c, g], b[0, c, g]),
                             power(x[c], a[1, c, g], b[1, c, g]))
            else:
                t = power(x[c], a[c, g], b[c, g])
            acc = acc + single_channel_conv(t, w[c, d], layer.stride, layer.padding)
        out = np.zeros((D,) + acc.shape) if out is None else out
        out[d] = acc
    return out


def out_oracle(x, layer):
    """Per-channel convolve, psi-map, then sum over input channels."""
    w, a, b = layer.params["weight"], layer.params["alpha"], layer.params["beta"]
    C, D = w.shape[:2]
    size = C // layer.groups
    out = None
    for d in range(D):
        acc = 0.0
        for c in range(C):
            v = single_channel_conv(x[c], w[c, d], layer.stride, layer.padding)
            acc = acc + power(v, a[c // size, d], b[c // size, d])
        out = np.zeros((D,) + acc.shape) if out is None else out
        out[d] = acc
    return out


def check_layer_grads(layer, x, rng, tol=1e-5, step=1e-5):
    r = rng.standard_normal(layer.forward(x).shape)
    layer.zero_grad()
    gx = layer.backward(r)
    grads = {k: layer.grads[k].copy() for k in layer.params}

    def loss():
        return float(np.sum(r * layer.forward(x)))

    assert rel_err(gx, central_diff(loss, x, step)) < tol
    for k, p in layer.params.items():
        assert rel_err(grads[k], central_diff(loss, p, step)) < tol, k


# -- powered convolution, in-channel ----------------------------------------

def test_in_mode_identity_equals_conv(rng):
    layer = powconv(3, 4, "in", 2, rng, params=False)
    x = rng.standard_normal((2, 3, 6, 6))
    np.testing.assert_allclose(layer.forward(x), conv2d(x, layer.kernel), rtol=0, atol=1e-12)


def test_in_mode_1x1_is_scaled_psi(rng):
    layer = L.PowConv2D(1, 1, 1, 1, 0, mode="in")
    layer.params["weight"][...] = 2.5
    layer.params["alpha"][...] = 0.7
    layer.params["beta"][...] = 0.2
    x = rng.standard_normal((1, 5, 5))
    np.testing.assert_allclose(layer.forward(x), 2.5 * power(x, 0.7, 0.2), rtol=1e-13)


def test_in_mode_matches_materialising_oracle(rng):
    layer = powconv(2, 4, "in", 2, rng)
    x = rng.standard_normal((2, 6, 6))
    np.testing.assert_allclose(layer.forward(x), in_oracle(x, layer), rtol=0, atol=1e-12)


def test_in_mode_split_sign_matches_oracle(rng):
    layer = powconv(2, 4, "in", 2, rng, split=True)
    x = rng.standard_normal((2, 5, 5))
    np.testing.assert_allclose(layer.forward(x), in_oracle(x, layer), rtol=0, atol=1e-12)


def test_nonneg_input_ignores_negative_branch(rng):
    a = powconv(2, 2, "in", 1, rng, nonneg=True)
    b = L.PowConv2D(2, 2, 3, 1, 1, mode="in")
    for k in a.params:
        b.params[k][...] = a.params[k]
    x = rng.standard_normal((2, 2, 5, 5))
    np.testing.assert_array_equal(a.forward(x), b.forward(np.maximum(x, 0)))
    check_layer_grads(a, np.abs(x) + 0.1, rng)


# -- powered convolution, out-channel ---------------------------------------

def test_out_mode_identity_equals_conv(rng):
    layer = powconv(4, 3, "out", 2, rng, params=False)
    x = rng.standard_normal((2, 4, 6, 6))
    np.testing.assert_allclose(layer.forward(x), conv2d(x, layer.kernel), rtol=0, atol=1e-12)


def test_out_mode_single_channel_is_psi_of_conv(rng):
    layer = powconv(1, 3, "out", 1, rng)
    x = rng.standard_normal((1, 6, 6))
    plain = conv2d(x, layer.kernel)
    a, b = layer.params["alpha"][0], layer.params["beta"][0]
    np.testing.assert_allclose(layer.forward(x), power(plain, a[:, None, None], b[:, None, None]),
                               rtol=1e-12, atol=1e-13)


def test_out_mode_matches_decomposed_oracle(rng):
    layer = powconv(2, 2, "out", 1, rng)
    x = rng.standard_normal((2, 6, 6))
    np.testing.assert_allclose(layer.forward(x), out_oracle(x, layer), rtol=0, atol=1e-12)
    layer = powconv(4, 3, "out", 2, rng)
    x = rng.standard_normal((4, 5, 5))
    np.testing.assert_allclose(layer.forward(x), out_oracle(x, layer), rtol=0, atol=1e-12)


def test_out_mode_batch_chunks_do_not_change_results(rng):
    layer = powconv(2, 3, "out", 1, rng)
    x = rng.standard_normal((5, 2, 4, 4))
    g = rng.standard_normal((5, 3, 4, 4))
    layer.batch_chunk = 16
    ref, gref = layer.forward(x), layer.backward(g)
    wref = layer.grads["alpha"].copy()
    layer.batch_chunk = 2
    np.testing.assert_allclose(layer.forward(x), ref, rtol=0, atol=1e-14)
    np.testing.assert_allclose(layer.backward(g), gref, rtol=0, atol=1e-13)
    np.testing.assert_allclose(layer.grads["alpha"], wref, rtol=1e-12, atol=1e-13)


def test_modes_stay_distinct_with_one_group(rng):
    a = powconv(2, 2, "in", 1, rng)
    b = L.PowConv2D(2, 2, 3, 1, 1, mode="out")
    b.params["weight"][...] = a.params["weight"]
    b.params["alpha"][...] = a.params["alpha"][0, 0]
    b.params["beta"][...] = a.params["beta"][0, 0]
    x = rng.standard_normal((1, 2, 5, 5))
    assert not np.allclose(a.forward(x), b.forward(x))


# -- powered convolution, backward ------------------------------------------

@given(st.sampled_from(["in", "out"]), st.sampled_from([1, 2, 4]), st.integers(0, 2**31 - 1))
def test_identity_backward_equals_plain_adjoint(mode, groups, seed):
    rng = np.random.default_rng(seed)
    layer = powconv(4, 4, mode, groups, rng, params=False)
    x = rng.standard_normal((2, 4, 5, 5))
    g = rng.standard_normal((2, 4, 5, 5))
    np.testing.assert_allclose(layer.forward(x), conv2d(x, layer.kernel), rtol=0, atol=1e-12)
    layer.zero_grad()
    gx = layer.backward(g)
    px, pw = conv2d_backward(x, layer.kernel, g)
    np.testing.assert_allclose(gx, px, rtol=0, atol=1e-10)
    np.testing.assert_allclose(layer.grads["weight"], pw, rtol=0, atol=1e-10)


@pytest.mark.parametrize("mode", ["in", "out"])
def test_zero_grad_out_gives_zero_grads(rng, mode):
    layer = powconv(2, 2, mode, 1, rng)
    x = rng.standard_normal((2, 2, 4, 4))
    layer.forward(x)
    layer.zero_grad()
    gx = layer.backward(np.zeros((2, 2, 4, 4)))
    assert not gx.any()
    assert all(not g.any() for g in layer.grads.values())


def _signed_instance(rng, mode, C, D, B=2, H=5):
    # keeps every response (inputs or per-channel convolutions) away from zero
    layer = powconv(C, D, mode, 1, rng)
    if mode == "out":
        t = rng.choice([-1.0, 1.0], (B, C, 1, 1))
        s = rng.choice([-1.0, 1.0], (C, D, 1, 1))
        layer.params["weight"][...] = s * rng.uniform(0.2, 1.0, layer.params["weight"].shape)
        x = t * rng.uniform(0.2, 1.5, (B, C, H, H))
    else:
        x = rng.uniform(0.2, 1.5, (B, C, H, H)) * rng.choice([-1.0, 1.0], (B, C, H, H))
    return layer, x


@pytest.mark.parametrize("mode", ["in", "out"])
@pytest.mark.parametrize("groups", [1, 2])
@pytest.mark.parametrize("split", [False, True])
def test_powconv_grads_match_finite_differences(rng, mode, groups, split):
    layer, x = _signed_instance(rng, mode, 2, 4)
    if groups != 1 or split:
        fresh = powconv(2, 4, mode, groups, rng, split=split)
        fresh.params["weight"][...] = layer.params["weight"]
        layer = fresh
    check_layer_grads(layer, x, rng)


@pytest.mark.parametrize("mode", ["in", "out"])
def test_slot_accounting(rng, mode):
    C, D, groups = 4, 6, 2
    layer = powconv(C, D, mode, groups, rng)
    assert layer.params["alpha"].size == groups * (C if mode == "in" else D)
    x = rng.uniform(0.2, 1.0, (1, C, 5, 5))
    base = layer.forward(x)
    if mode == "in":
        slot, affected = (1, 1), set(range(3, 6))   # channel c=1, group 1 -> outputs 3..5
    else:
        slot, affected = (1, 4), {4}                # input block 1, output 4
    layer.params["alpha"][slot] += 0.3
    changed = {d for d in range(D) if not np.array_equal(layer.forward(x)[0, d], base[0, d])}
    assert changed == affected


def test_group_of(rng):
    layer = powconv(4, 6, "in", 3, rng)
    assert [layer.group_of(d) for d in range(6)] == [0, 0, 1, 1, 2, 2]
    layer = powconv(4, 6, "out", 2, rng)
    assert [layer.group_of(c) for c in range(4)] == [0, 0, 1, 1]


def test_powconv_shape_errors(rng):
    layer = powconv(2, 2, "in", 1, rng)
    with pytest.raises(DimensionError):
        layer.forward(rng.standard_normal((1, 3, 5, 5)))
    with pytest.raises(ConfigurationError):
        L.PowConv2D(3, 4, mode="in", groups=3)


# -- batch norm -------------------------------------------------------------

def test_batchnorm_symmetric_pair():
    bn = L.BatchNorm(3, affine=False)
    a = np.array([0.5, 2.0, 7.0])
    out = bn.forward(np.stack([-a, a]))
    np.testing.assert_allclose(out, [[-1, -1, -1], [1, 1, 1]], rtol=1e-4)


def test_batchnorm_constant_feature_is_zero():
    bn = L.BatchNorm(2, affine=False)
    out = bn.forward(np.full((5, 2), 3.0))
    assert np.all(out == 0.0)


def test_batchnorm_moments(rng):
    bn = L.BatchNorm(4, affine=False)
    out = bn.forward(rng.standard_normal((64, 4)) * 10 + 3)
    assert np.all(np.abs(out.mean(axis=0)) < 1e-10)
    assert np.all(np.abs(out.var(axis=0) - 1) < 1e-6)


def test_batchnorm_per_channel_on_images(rng):
    bn = L.BatchNorm(3, affine=False)
    out = bn.forward(rng.standard_normal((4, 3, 5, 5)) * 10 - 2)
    assert np.all(np.abs(out.mean(axis=(0, 2, 3))) < 1e-10)
    assert np.all(np.abs(out.var(axis=(0, 2, 3)) - 1) < 1e-6)


def test_batchnorm_needs_two_samples(rng):
    with pytest.raises(ConfigurationError):
        L.BatchNorm(2).forward(rng.standard_normal((1, 2)))


def test_batchnorm_eval_uses_running_stats(rng):
    bn = L.BatchNorm(2, affine=False)
    x = rng.standard_normal((32, 2)) * 3 + 1
    bn.forward(x)
    mean = 0.1 * x.mean(axis=0)
    var = 0.9 + 0.1 * x.var(axis=0)
    np.testing.assert_allclose(bn.running_mean, mean, rtol=1e-13)
    np.testing.assert_allclose(bn.running_var, var, rtol=1e-13)
    y = rng.standard_normal((3, 2))
    np.testing.assert_allclose(bn.forward(y, train=False), (y - mean) / np.sqrt(var + 1e-5), rtol=1e-13)


@pytest.mark.parametrize("shape", [(6, 5), (3, 5, 3, 3)])
@pytest.mark.parametrize("train", [True, False])
def test_batchnorm_grads(rng, shape, train):
    bn = L.BatchNorm(5)
    bn.params["gamma"][...] = rng.uniform(0.5, 1.5, 5)
    bn.params["beta"][...] = rng.standard_normal(5)
    bn.running_var = rng.uniform(0.5, 2, 5)
    x = rng.standard_normal(shape) * 2 + 1
    if train:
        check_layer_grads(bn, x, rng)
    else:
        r = rng.standard_normal(shape)
        bn.forward(x, train=False)
        gx = bn.backward(r)
        num = central_diff(lambda: float(np.sum(r * bn.forward(x, train=False))), x)
        assert rel_err(gx, num) < 1e-6


# -- activations ------------------------------------------------------------

def test_activation_values():
    assert list(L.activation_forward("ReLU", [-2.0, 3.0])[0]) == [0.0, 3.0]
    assert list(L.activation_forward("Softsign", [1.0, -1.0])[0]) == [0.5, -0.5]
    assert L.activation_forward("Tanh", [0.5])[0][0] == math.tanh(0.5)


def test_relu_derivative_at_zero_is_zero():
    _, back = L.activation_forward("ReLU", [0.0])
    assert back(np.array([1.0]))[0] == 0.0


@pytest.mark.parametrize("cls", [L.ReLU, L.Tanh, L.Softsign])
def test_activation_grads(rng, cls):
    x = rng.uniform(1e-3, 3, (4, 7)) * rng.choice([-1, 1], (4, 7))
    layer = cls()
    r = rng.standard_normal(x.shape)
    layer.forward(x)
    g = layer.backward(r)
    num = central_diff(lambda: float(np.sum(r * cls().forward(x))), x, 1e-6)
    assert rel_err(g, num) < 1e-6


# -- linear -----------------------------------------------------------------

def test_linear_identity_and_constant(rng):
    lin = L.Linear(4, 4, init="zeros")
    lin.params["weight"][...] = np.eye(4)
    x = rng.standard_normal((3, 4))
    assert np.array_equal(lin.forward(x), x)
    lin.params["weight"][...] = 0
    lin.params["bias"][...] = [1, 2, 3, 4]
    assert np.array_equal(lin.forward(x), np.tile([1.0, 2, 3, 4], (3, 1)))


def test_linear_direct_summation(rng):
    lin = L.Linear(5, 3, rng)
    lin.params["bias"][...] = rng.standard_normal(3)
    x = rng.standard_normal((4, 5))
    w, b = lin.params["weight"], lin.params["bias"]
    ref = np.array([[sum(x[n, i] * w[i, j] for i in range(5)) + b[j] for j in range(3)]
                    for n in range(4)])
    np.testing.assert_allclose(lin.forward(x), ref, rtol=0, atol=1e-12)


def test_linear_grads_and_shape_error(rng):
    lin = L.Linear(5, 3, rng)
    check_layer_grads(lin, rng.standard_normal((4, 5)), rng, tol=1e-6)
    with pytest.raises(DimensionError):
        lin.forward(rng.standard_normal((4, 6)))


# -- loss heads -------------------------------------------------------------

def test_uniform_logits_give_log_k():
    value, _ = L.loss_forward("SoftmaxCrossEntropy", np.zeros((3, 7)), np.array([0, 3, 6]))
    assert value == pytest.approx(math.log(7), rel=1e-15)


def test_mse_perfect_fit(rng):
    p = rng.standard_normal((3, 4))
    assert L.loss_forward("MeanSquaredError", p, p.copy())[0] == 0.0


@pytest.mark.parametrize("head", ["SoftmaxCrossEntropy", "MeanSquaredError"])
def test_loss_grads(rng, head):
    pred = rng.standard_normal((5, 4))
    target = rng.integers(0, 4, 5) if head == "SoftmaxCrossEntropy" else rng.standard_normal((5, 4))
    _, g = L.loss_forward(head, pred, target)
    num = central_diff(lambda: L.loss_forward(head, pred, target)[0], pred)
    assert rel_err(g, num) < 1e-6


def test_label_out_of_range():
    with pytest.raises(DataError):
        L.loss_forward("SoftmaxCrossEntropy", np.zeros((2, 3)), np.array([0, 3]))
    with pytest.raises(DimensionError):
        L.loss_forward("MeanSquaredError", np.zeros((2, 3)), np.zeros((3, 2)))


# -- power layer and duality ------------------------------------------------

@pytest.mark.parametrize("features,split", [(1, False), (1, True), (6, False), (6, True)])
def test_power_layer_grads(rng, features, split):
    layer = L.Power(features, split)
    layer.params["alpha"][...] = rng.uniform(-0.5, 1.0, layer.params["alpha"].shape)
    layer.params["beta"][...] = rng.uniform(-0.5, 1.0, layer.params["beta"].shape)
    x = rng.uniform(0.1, 2, (5, 6)) * rng.choice([-1, 1], (5, 6))
    check_layer_grads(layer, x, rng)


LAYER_FACTORIES = {
    "linear": lambda rng: (L.Linear(5, 3, rng), rng.standard_normal((4, 5))),
    "conv": lambda rng: (L.Conv2D(2, 3, 3, 1, 1, rng, bias=True), rng.standard_normal((2, 2, 4, 4))),
    "powconv-in": lambda rng: _signed_instance(rng, "in", 2, 2),
    "powconv-out": lambda rng: _signed_instance(rng, "out", 2, 2),
    "batchnorm": lambda rng: (L.BatchNorm(3), rng.standard_normal((4, 3)) * 2),
    "tanh": lambda rng: (L.Tanh(), rng.standard_normal((3, 4))),
    "softsign": lambda rng: (L.Softsign(), rng.uniform(0.1, 2, (3, 4)) * rng.choice([-1, 1], (3, 4))),
    "flatten": lambda rng: (L.Flatten(), rng.standard_normal((2, 3, 2, 2))),
}


@given(st.sampled_from(sorted(LAYER_FACTORIES)), st.integers(0, 2**31 - 1))
def test_forward_backward_duality(name, seed):
    rng = np.random.default_rng(seed)
    layer, x = LAYER_FACTORIES[name](rng)
    g = rng.standard_normal(layer.forward(x).shape)
    layer.zero_grad()
    gx = layer.backward(g)
    v = rng.standard_normal(x.shape)
    h = 1e-5
    lhs = (np.sum(g * layer.forward(x + h * v)) - np.sum(g * layer.forward(x - h * v))) / (2 * h)
    rhs = np.sum(gx * v)
    assert abs(lhs - rhs) <= 1e-5 * max(abs(lhs), abs(rhs), 1e-8)
