import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import causal_conv_reference, finite_difference, grads_close
from thermosurrogate import autodiff as ad
from thermosurrogate.errors import NonScalarLoss, ShapeMismatch


def _positive(x):
    return np.abs(x) + 0.5


# name -> (function of tensors, input shapes, optional input transform)
OPS = {
    "add": (lambda a, b: a + b, [(3, 4), (4,)], None),
    "sub": (lambda a, b: a - b, [(2, 3, 4), (3, 1)], None),
    "mul": (lambda a, b: a * b, [(3, 4), (1, 4)], None),
    "neg": (lambda a: -a, [(5,)], None),
    "div": (lambda a, b: a / b, [(3, 2), (3, 2)], {1: _positive}),
    "power": (lambda a: ad.power(a, 1.5), [(4,)], {0: _positive}),
    "exp": (lambda a: ad.exp(a), [(2, 3)], None),
    "sigmoid": (lambda a: ad.sigmoid(a), [(3, 3)], None),
    "tanh": (lambda a: ad.tanh(a), [(3, 3)], None),
    "relu": (lambda a: ad.relu(a), [(4, 4)], {0: lambda x: x + np.sign(x) * 0.05}),
    "softmax": (lambda a: ad.softmax(a, axis=-1), [(3, 5)], None),
    "softmax_axis0": (lambda a: ad.softmax(a, axis=0), [(3, 5)], None),
    "matmul": (lambda a, b: a @ b, [(3, 4), (4, 2)], None),
    "matmul_batched": (lambda a, b: a @ b, [(2, 3, 4), (4, 5)], None),
    "sum": (lambda a: ad.tsum(a, axis=1), [(3, 4)], None),
    "mean": (lambda a: ad.mean(a, axis=0, keepdims=True), [(3, 4)], None),
    "reshape": (lambda a: ad.reshape(a, (6, 2)), [(3, 4)], None),
    "transpose": (lambda a: ad.transpose(a, (1, 0, 2)), [(2, 3, 4)], None),
    "slice": (lambda a: a[:, 1:3], [(3, 4)], None),
    "fancy_index": (lambda a: a[[0, 2, 0]], [(3, 4)], None),
    "concat": (lambda a, b: ad.concat([a, b], axis=-1), [(2, 3), (2, 2)], None),
    "stack": (lambda a, b: ad.stack([a, b], axis=1), [(2, 3), (2, 3)], None),
    "conv1d_causal": (lambda x, w: ad.conv1d_causal(x, w, 2), [(2, 6, 3), (2, 3, 4)], None),
    "layer_norm": (lambda x, g, b: ad.layer_norm(x, g, b), [(3, 5), (5,), (5,)], None),
    "mse_loss": (lambda a, b: ad.mse_loss(a, b), [(4, 3), (4, 3)], None),
}


def gradcheck_op(name, seed):
    fn, shapes, transforms = OPS[name]
    rng = np.random.default_rng(seed)
    arrays = [rng.normal(size=s) for s in shapes]
    for i, f in (transforms or {}).items():
        arrays[i] = f(arrays[i])
    weights = None

    def loss_value():
        out = fn(*[ad.Tensor(a) for a in arrays]).data
        return float(np.sum(out * weights))

    tensors = [ad.parameter(a) for a in arrays]
    out = fn(*tensors)
    weights = rng.normal(size=out.shape)
    ad.tsum(out * weights).backward()
    numeric = finite_difference(loss_value, arrays)
    return [grads_close(t.grad, n) for t, n in zip(tensors, numeric)]


@pytest.mark.parametrize("name", sorted(OPS))
@pytest.mark.parametrize("seed", range(3))
def test_op_gradients(name, seed):
    for ok, excess in gradcheck_op(name, seed):
        assert ok, excess


def test_scalar_basics():
    assert ad.sigmoid(ad.Tensor(0.0)).item() == 0.5
    assert ad.tanh(ad.Tensor(0.0)).item() == 0.0
    y = ad.softmax(ad.Tensor(np.full(7, 2.5)))
    assert np.allclose(y.data, 1 / 7, atol=1e-15)


@given(st.integers(0, 10_000))
def test_softmax_rows_sum_to_one(seed):
    x = np.random.default_rng(seed).normal(scale=20, size=(4, 9))
    assert np.max(np.abs(ad.softmax(ad.Tensor(x)).data.sum(-1) - 1)) < 1e-12


def test_sigmoid_squared_gradient():
    w = ad.parameter(0.0)
    (ad.sigmoid(w) * ad.sigmoid(w)).backward()
    assert w.grad == pytest.approx(0.25, abs=1e-15)


def test_linear_gradient_is_outer_product(rng):
    W = ad.parameter(rng.normal(size=(3, 2)))
    x = rng.normal(size=(1, 3))
    ad.tsum(ad.Tensor(x) @ W).backward()
    assert np.allclose(W.grad, np.outer(x[0], np.ones(2)))


def test_mlp_finite_differences(rng):
    shapes = [(3, 2), (2,), (2, 2), (2,), (2, 2), (2,)]  # 20 parameters
    arrays = [rng.normal(size=s) for s in shapes]
    x = rng.normal(size=(5, 3))

    def net(ps):
        h = ad.tanh(ad.Tensor(x) @ ps[0] + ps[1])
        h = ad.sigmoid(h @ ps[2] + ps[3])
        return ad.mean((h @ ps[4] + ps[5]) ** 2)

    params = [ad.parameter(a) for a in arrays]
    net(params).backward()
    numeric = finite_difference(lambda: net([ad.Tensor(a) for a in arrays]).item(), arrays)
    assert sum(a.size for a in arrays) == 20
    for p, n in zip(params, numeric):
        assert grads_close(p.grad, n)[0]


def test_non_scalar_loss():
    with pytest.raises(NonScalarLoss):
        ad.parameter(np.ones(3)).backward()


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        ad.parameter(np.ones((2, 3))) @ ad.parameter(np.ones((2, 3)))
    with pytest.raises(ShapeMismatch):
        ad.parameter(np.ones((2, 3))) + ad.parameter(np.ones((4,)))
    with pytest.raises(ShapeMismatch):
        ad.conv1d_causal(np.ones((1, 4, 2)), np.ones((2, 3, 1)))


def test_accumulation_and_zero_grad(rng):
    w = ad.parameter(rng.normal(size=(3,)))
    x = rng.normal(size=(3,))

    def run():
        ad.tsum(ad.tanh(w * x)).backward()

    run()
    g1 = w.grad.copy()
    run()
    assert np.array_equal(w.grad, 2 * g1)
    w.zero_grad()
    run()
    assert np.array_equal(w.grad, g1)


def test_shared_subexpression_gradient():
    a = ad.parameter(3.0)
    b = a * a
    (b + b).backward()
    assert a.grad == 12.0


def test_dropout_identity_cases(rng):
    x = ad.Tensor(rng.normal(size=(4, 5)))
    assert ad.dropout(x, 0.3, False, rng) is x
    assert ad.dropout(x, 0.0, True, rng) is x


def test_dropout_determinism_and_scaling():
    x = ad.parameter(np.ones((50, 40)))
    a = ad.dropout(x, 0.25, True, np.random.default_rng(5))
    b = ad.dropout(x, 0.25, True, np.random.default_rng(5))
    assert np.array_equal(a.data, b.data)
    assert set(np.unique(a.data)) <= {0.0, 1 / 0.75}
    ad.tsum(a).backward()
    assert np.array_equal(x.grad, a.data)


def test_conv_identity_kernel(rng):
    x = rng.normal(size=(2, 7, 3))
    assert np.array_equal(ad.conv1d_causal(x, np.eye(3)[None], 1).data, x)


def test_conv_impulse_response():
    x = np.zeros((1, 10, 1))
    x[0, 3, 0] = 1.0
    y = ad.conv1d_causal(x, np.ones((2, 1, 1)), 2).data[0, :, 0]
    assert np.flatnonzero(y).tolist() == [3, 5]


@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 4))
def test_conv_matches_loop_reference(seed, K, dilation):
    rng = np.random.default_rng(seed)
    x, w = rng.normal(size=(2, 9, 3)), rng.normal(size=(K, 3, 2))
    assert np.allclose(ad.conv1d_causal(x, w, dilation).data, causal_conv_reference(x, w, dilation), atol=1e-12)
