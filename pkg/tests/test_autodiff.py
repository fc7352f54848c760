import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from microtrip.neural.autodiff import Tensor, concat, conv1d, diff, no_grad, parameter, repeat_interleave, where
from microtrip.neural.gradcheck import grad_check
from microtrip.neural.layers import GroupNorm, LayerNorm, MultiHeadAttention, attention_weights

rng = np.random.default_rng(0)


def p(*shape, lo=-1.0, hi=1.0):
    return parameter(rng.uniform(lo, hi, size=shape))


def fd_grad(f, x, h=1e-6):
    """Central differences of scalar ``f`` w.r.t. every entry of ndarray ``x``."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


W = np.random.default_rng(9).standard_normal((64,))


def weighted_sum(t):
    """Scalar readout with fixed random weights so every output entry matters."""
    flat = t.reshape(-1)
    return (flat * W[: flat.size]).sum() if flat.size <= W.size else (flat * flat).sum()


CASES = {
    "add_broadcast": lambda a, b: a + b[0],
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / (b * b + 1.0),
    "rdiv": lambda a, b: 2.0 / (a * a + 1.0),
    "pow": lambda a, b: (a * a + 0.5) ** 1.5,
    "matmul": lambda a, b: a @ b.T,
    "sum_axis": lambda a, b: (a * b).sum(axis=0, keepdims=True),
    "mean": lambda a, b: (a * b).mean(axis=1),
    "max": lambda a, b: (a + b).max(axis=1),
    "reshape_transpose": lambda a, b: (a.reshape(4, 3).T * b.reshape(3, 4)),
    "getitem": lambda a, b: a[1:, ::2] * b[:2, 1:3],
    "exp_log": lambda a, b: (a.exp() + b.exp()).log(),
    "sqrt": lambda a, b: (a * a + 1.0).sqrt(),
    "abs": lambda a, b: (a * 3.0).abs(),
    "relu": lambda a, b: (a - b).relu(),
    "tanh": lambda a, b: (a * b).tanh(),
    "sigmoid": lambda a, b: a.sigmoid() * b,
    "silu": lambda a, b: (a + b).silu(),
    "softmax": lambda a, b: (a * 2.0).softmax(axis=-1) * b,
    "concat": lambda a, b: concat([a, b * 2.0], axis=0),
    "where": lambda a, b: where(np.array([[True, False, True, False]] * 3), a, b * b),
    "diff": lambda a, b: diff(diff(a * b)),
    "neg_rsub": lambda a, b: 1.0 - (-a),
}


@pytest.mark.parametrize("name", sorted(CASES))
def test_op_gradients(name):
    a, b = p(3, 4), p(3, 4)
    fn = CASES[name]
    err, n = grad_check(lambda: weighted_sum(fn(a, b)), [a, b], n_samples=24, h=1e-6)
    assert n > 0 and err < 1e-6


def test_gradients_against_full_finite_differences():
    a = p(3, 5)
    w = p(5, 2)

    def f():
        return float(((a @ w).tanh() * (a @ w).sigmoid()).sum().data)

    out = ((a @ w).tanh() * (a @ w).sigmoid()).sum()
    out.backward()
    np.testing.assert_allclose(a.grad, fd_grad(f, a.data), rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(w.grad, fd_grad(f, w.data), rtol=1e-6, atol=1e-9)


@pytest.mark.parametrize("stride,padding", [(1, 1), (2, 1), (1, 0)])
def test_conv1d_gradients_and_values(stride, padding):
    x, w, b = p(2, 3, 9), p(4, 3, 3), p(4)
    y = conv1d(x, w, b, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding)))
    Lout = (xp.shape[-1] - 3) // stride + 1
    ref = np.zeros((2, 4, Lout))
    for bi in range(2):
        for o in range(4):
            for l in range(Lout):
                ref[bi, o, l] = (w.data[o] * xp[bi, :, l * stride : l * stride + 3]).sum() + b.data[o]
    np.testing.assert_allclose(y.data, ref, atol=1e-12)
    err, _ = grad_check(lambda: (conv1d(x, w, b, stride, padding) ** 2).sum(), [x, w, b], 30, h=1e-6)
    assert err < 1e-6


def test_repeat_interleave_gradient():
    x = p(2, 3, 4)
    err, _ = grad_check(lambda: weighted_sum(repeat_interleave(x, 2)[:, :, :5]), [x], 20, h=1e-6)
    assert err < 1e-6


def test_norm_and_attention_gradients():
    r = np.random.default_rng(1)
    gn, ln = GroupNorm(2, 4), LayerNorm(6)
    mha = MultiHeadAttention(6, 2, r)
    x = p(2, 4, 6)
    h = p(2, 5, 6)
    params = [x, h] + gn.parameters() + ln.parameters() + mha.parameters()
    for q in gn.parameters() + ln.parameters():
        q.data += r.normal(0, 0.3, q.shape)

    def loss():
        return weighted_sum(gn(x)) + (ln(mha(h)) ** 2).sum()

    err, n = grad_check(loss, params, n_samples=60, h=1e-6)
    assert n > 40 and err < 1e-4


def test_attention_rows_sum_to_one():
    q, k = Tensor(rng.standard_normal((2, 3, 7, 4))), Tensor(rng.standard_normal((2, 3, 7, 4)))
    w = attention_weights(q, k).data
    np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-6)


def test_gradient_accumulates_over_reuse():
    a = parameter(np.array(3.0))
    (a * a + a).backward()
    assert a.grad == pytest.approx(7.0)


def test_no_grad_blocks_graph():
    a = p(2)
    with no_grad():
        y = a * 2
    assert not y.requires_grad


def test_backward_needs_scalar():
    with pytest.raises(ValueError):
        (p(3) * 2).backward()


def test_grad_check_quadratic():
    x = parameter(np.random.default_rng(2).standard_normal(10))
    A = np.diag(np.arange(1.0, 11.0))
    err, n = grad_check(lambda: (x.reshape(1, 10) @ Tensor(A) * x).sum(), [x], n_samples=10)
    assert n == 10 and err < 1e-8


def test_grad_check_skips_relu_kink():
    x = parameter(np.array([0.0, 1.0]))
    err, n = grad_check(lambda: x.relu().sum(), [x], n_samples=50, h=1e-4)
    assert err < 1e-8 and n < 50


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=12))
def test_softmax_is_a_distribution(vals):
    s = Tensor(np.array(vals)).softmax().data
    assert np.all(s >= 0) and s.sum() == pytest.approx(1.0)
