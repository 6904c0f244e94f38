import numpy as np
import pytest
from scipy import signal, special

from tansal import autodiff as ad
from tansal.autodiff import AdamW, Tensor

from oracles import gradcheck

rng = np.random.default_rng(7)


def test_arithmetic_gradients_with_broadcasting():
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4,)) + 3.0  # keep divisors away from zero

    def fn(x, y):
        return ((x * 2.0 + y / 3.0) * (x - y) / (y + 5.0)).sum()

    assert gradcheck(fn, a, b) < 1e-6


def test_pow_and_sqrt_gradients():
    x = rng.uniform(0.5, 2.0, size=(5,))
    assert gradcheck(lambda t: (t ** 3).sum(), x) < 1e-6
    assert gradcheck(lambda t: t.sqrt().sum(), x) < 1e-6
    assert gradcheck(lambda t: (t ** -1.5).sum(), x) < 1e-6


def test_matmul_gradients_batched():
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(2, 4, 5))
    assert gradcheck(lambda x, y: (x @ y).sum(), a, b) < 1e-6


def test_matmul_gradients_broadcast_rhs():
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(4, 5))  # shared across the batch
    assert gradcheck(lambda x, y: ((x @ y) ** 2).sum(), a, b) < 1e-6


def test_elementwise_function_gradients():
    x = rng.normal(size=(4, 3)) + 0.1  # avoid the relu kink at exactly 0
    assert gradcheck(lambda t: t.exp().sum(), x) < 1e-6
    assert gradcheck(lambda t: t.tanh().sum(), x) < 1e-6
    assert gradcheck(lambda t: t.sigmoid().sum(), x) < 1e-6
    assert gradcheck(lambda t: t.softplus().sum(), x) < 1e-6
    assert gradcheck(lambda t: t.gelu().sum(), x) < 1e-6
    assert gradcheck(lambda t: t.relu().sum(), x + 2.0) < 1e-6
    pos = rng.uniform(0.5, 3.0, size=(6,))
    assert gradcheck(lambda t: t.log().sum(), pos) < 1e-6


def test_reduction_gradients():
    x = rng.normal(size=(3, 4, 5))
    assert gradcheck(lambda t: t.sum(), x) < 1e-6
    assert gradcheck(lambda t: t.sum(axis=1).sum(), x) < 1e-6
    assert gradcheck(lambda t: t.sum(axis=(0, 2), keepdims=True).sum(), x) < 1e-6
    assert gradcheck(lambda t: t.mean(axis=2).sum(), x) < 1e-6
    assert gradcheck(lambda t: (t.max() * 2.0), x) < 1e-6
    assert gradcheck(lambda t: t.max(axis=1).sum(), x) < 1e-6


def test_max_splits_gradient_between_ties():
    x = Tensor(np.array([2.0, 2.0, 1.0]), requires_grad=True)
    x.max().backward()
    assert np.allclose(x.grad, [0.5, 0.5, 0.0])


def test_shape_op_gradients():
    x = rng.normal(size=(2, 3, 4))
    assert gradcheck(lambda t: (t.reshape(6, 4) ** 2).sum(), x) < 1e-6
    assert gradcheck(lambda t: (t.transpose(2, 0, 1) * 3.0).sum(), x) < 1e-6
    assert gradcheck(lambda t: t.swapaxes(0, 2).sum(), x) < 1e-6


def test_getitem_gradients_slice_and_fancy():
    x = rng.normal(size=(4, 5))
    assert gradcheck(lambda t: (t[1:3, ::2] ** 2).sum(), x) < 1e-6
    rows = np.array([0, 2, 2])
    cols = np.array([1, 3, 3])
    # repeated fancy index must accumulate, not overwrite
    assert gradcheck(lambda t: (t[rows, cols] * 2.0).sum(), x) < 1e-6


def test_concat_and_stack_gradients():
    a = rng.normal(size=(2, 3))
    b = rng.normal(size=(4, 3))
    assert gradcheck(lambda x, y: (ad.concat([x, y], axis=0) ** 2).sum(), a, b) < 1e-6
    c = rng.normal(size=(2, 3))
    assert gradcheck(lambda x, y: (ad.stack([x, y], axis=1) * 0.5).sum(), a, c) < 1e-6


def test_softmax_matches_scipy_and_gradient():
    x = rng.normal(size=(3, 6)) * 4.0
    out = ad.softmax(Tensor(x), axis=-1)
    assert np.allclose(out.data, special.softmax(x, axis=-1), atol=1e-12)

    coeff = Tensor(rng.normal(size=x.shape))

    def fn(t):
        return (ad.softmax(t, axis=-1) * coeff).sum()

    assert gradcheck(lambda t: (ad.softmax(t, axis=-1)[:, 0]).sum(), x) < 1e-6
    assert gradcheck(fn, x) < 1e-6


def test_layer_norm_forward_and_gradients():
    x = rng.normal(size=(2, 5, 8))
    gamma = rng.normal(size=(8,))
    beta = rng.normal(size=(8,))
    out = ad.layer_norm(Tensor(x), Tensor(gamma), Tensor(beta), eps=1e-5)
    mu = x.mean(-1, keepdims=True)
    var = x.var(-1, keepdims=True)
    expect = gamma * (x - mu) / np.sqrt(var + 1e-5) + beta
    assert np.allclose(out.data, expect, atol=1e-12)

    def fn(t, g, b):
        return (ad.layer_norm(t, g, b) ** 2).sum()

    assert gradcheck(fn, x, gamma, beta) < 1e-5


def test_conv2d_matches_scipy_and_gradients():
    x = rng.normal(size=(2, 3, 6, 7))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=(4,))
    out = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), padding=1)
    # cross-correlation channel by channel as the oracle
    expect = np.zeros_like(out.data)
    for n in range(2):
        for co in range(4):
            acc = np.zeros((6, 7))
            for ci in range(3):
                acc += signal.correlate2d(x[n, ci], w[co, ci], mode="same")
            expect[n, co] = acc + b[co]
    assert np.allclose(out.data, expect, atol=1e-10)

    def fn(t, wt, bt):
        return (ad.conv2d(t, wt, bt, padding=1) ** 2).sum()

    small_x = rng.normal(size=(1, 2, 5, 5))
    small_w = rng.normal(size=(2, 2, 3, 3))
    small_b = rng.normal(size=(2,))
    assert gradcheck(fn, small_x, small_w, small_b) < 1e-5


def test_conv2d_no_padding_and_1x1():
    x = rng.normal(size=(1, 2, 4, 4))
    w = rng.normal(size=(3, 2, 1, 1))
    assert gradcheck(lambda t, wt: (ad.conv2d(t, wt) ** 2).sum(), x, w) < 1e-6
    w3 = rng.normal(size=(1, 2, 3, 3))
    out = ad.conv2d(Tensor(x), Tensor(w3), padding=0)
    assert out.data.shape == (1, 1, 2, 2)


def test_pool_and_upsample_gradients():
    x = rng.normal(size=(2, 3, 4, 6))
    assert gradcheck(lambda t: (ad.avg_pool2d(t, 2) ** 2).sum(), x) < 1e-6
    assert gradcheck(lambda t: (ad.upsample_nearest2x(t) ** 2).sum(), x) < 1e-6
    up = ad.upsample_nearest2x(Tensor(x))
    assert up.data.shape == (2, 3, 8, 12)
    assert np.allclose(up.data[:, :, ::2, ::2], x)


def test_backward_twice_accumulates():
    x = Tensor(np.array([1.5]), requires_grad=True)
    y = x * 3.0
    y.sum().backward()
    y.sum().backward()
    assert np.allclose(x.grad, [6.0])


def test_diamond_graph_gradient():
    # z = x*y + x: the x gradient must combine both paths
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = Tensor(np.array([5.0]), requires_grad=True)
    z = x * y + x
    z.sum().backward()
    assert np.allclose(x.grad, [6.0])
    assert np.allclose(y.grad, [2.0])


def test_two_losses_add_gradients():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    (x * 2.0).sum().backward()
    (x ** 2).sum().backward()
    assert np.allclose(x.grad, [4.0, 6.0])


def test_no_grad_blocks_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        y = x * 2.0
    assert not y.requires_grad
    with pytest.raises(ValueError):
        y.sum().backward()


def test_backward_needs_scalar_or_seed():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    y = x * 2.0
    with pytest.raises(ValueError):
        y.backward()
    y.backward(np.ones((2, 2)))
    assert np.allclose(x.grad, 2.0)


def test_finite_checks_flag():
    ad.set_finite_checks(True)
    try:
        with pytest.raises(FloatingPointError):
            Tensor(np.array([-1.0]), requires_grad=True).log()
    finally:
        ad.set_finite_checks(False)
    # flag off: the op silently produces nan
    with np.errstate(invalid="ignore"):
        out = Tensor(np.array([-1.0])).log()
    assert np.isnan(out.data).all()


def test_detach_leaves_graph():
    x = Tensor(np.ones(2), requires_grad=True)
    y = (x * 3.0).detach()
    assert not y.requires_grad
    assert np.allclose(y.data, 3.0)


def test_adamw_first_step_matches_hand_formula():
    # with fresh moments the bias-corrected first update is lr * g / (|g| + eps)
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = AdamW([p], lr=0.1, eps=1e-8)
    p.grad = np.array([0.5, -0.25])
    opt.step()
    expect = np.array([1.0, -2.0]) - 0.1 * np.array([0.5, -0.25]) / (
        np.array([0.5, 0.25]) + 1e-8
    )
    assert np.allclose(p.data, expect, atol=1e-12)


def test_adamw_decoupled_weight_decay():
    # zero gradient: the parameter only shrinks by lr * wd each step
    p = Tensor(np.array([10.0]), requires_grad=True)
    opt = AdamW([p], lr=0.01, weight_decay=0.1)
    p.grad = np.zeros(1)
    opt.step()
    assert np.allclose(p.data, [10.0 * (1 - 0.01 * 0.1)], atol=1e-12)
    # no gradient at all: parameter untouched
    opt.zero_grad()
    before = p.data.copy()
    opt.step()
    assert np.array_equal(p.data, before)


def test_adamw_drives_quadratic_down():
    p = Tensor(np.array([3.0, -4.0]), requires_grad=True)
    opt = AdamW([p], lr=0.2)
    for _ in range(200):
        opt.zero_grad()
        loss = (p ** 2).sum()
        loss.backward()
        opt.step()
    assert (p.data ** 2).sum() < 1e-3


def test_adamw_rejects_constants():
    with pytest.raises(ValueError):
        AdamW([Tensor(np.ones(2))])


def test_checkpoint_round_trip(tmp_path):
    params = {
        "w": Tensor(rng.normal(size=(3, 4)), requires_grad=True),
        "b": Tensor(np.zeros(4), requires_grad=True),
    }
    path = str(tmp_path / "ckpt.npz")
    ad.save_checkpoint(path, params, meta={"step": 12, "note": "hello"})
    arrays, meta = ad.load_checkpoint(path)
    assert meta == {"step": 12, "note": "hello"}
    assert np.array_equal(arrays["w"], params["w"].data)

    fresh = {
        "w": Tensor(np.zeros((3, 4)), requires_grad=True),
        "b": Tensor(np.ones(4), requires_grad=True),
    }
    ad.assign_checkpoint(fresh, arrays)
    assert np.array_equal(fresh["w"].data, params["w"].data)


def test_checkpoint_mismatch_errors(tmp_path):
    params = {"w": Tensor(np.zeros((2, 2)), requires_grad=True)}
    path = str(tmp_path / "ckpt.npz")
    ad.save_checkpoint(path, params)
    arrays, _ = ad.load_checkpoint(path)
    with pytest.raises(ValueError):
        ad.assign_checkpoint({"other": params["w"]}, arrays)
    bad = {"w": Tensor(np.zeros((3, 3)), requires_grad=True)}
    with pytest.raises(ValueError):
        ad.assign_checkpoint(bad, arrays)
