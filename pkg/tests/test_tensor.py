import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from saccades import tensor as T
from saccades.tensor import ShapeError, Tensor, grad_check

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def naive_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


# -- forward values ---------------------------------------------------------------------


def test_matmul_identity_and_dot():
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(T.matmul(Tensor(np.eye(2)), m).data, m.data)
    assert T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_matches_triple_loop(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b), rtol=0, atol=1e-12)


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_elementwise_examples():
    assert T.elementwise("sigmoid", Tensor(0.0)).item() == 0.5
    assert T.elementwise("tanh", Tensor(0.0)).item() == 0.0
    assert T.elementwise("add", Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).data.tolist() == [4.0, 6.0]
    with pytest.raises(ShapeError):
        T.elementwise("mul", Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))
    with pytest.raises(ValueError):
        T.elementwise("cosh", Tensor(1.0))


def test_scalar_broadcast_only():
    out = T.mul(Tensor([1.0, 2.0]), Tensor(3.0))
    assert out.data.tolist() == [3.0, 6.0]
    with pytest.raises(ShapeError):
        T.add(Tensor(np.ones((2, 1))), Tensor(np.ones((2, 3))))


def test_nonfinite_is_an_error():
    with pytest.raises(FloatingPointError):
        Tensor([np.nan])
    with pytest.raises(FloatingPointError):
        T.exp(Tensor([1000.0]))


def test_softmax_examples():
    assert T.softmax(Tensor([0.0, 0.0])).data.tolist() == [0.5, 0.5]
    assert T.softmax(Tensor([1000.0, 1000.0])).data.tolist() == [0.5, 0.5]
    out = T.softmax(Tensor(np.log([1.0, 2.0, 3.0]))).data
    np.testing.assert_allclose(out, [1 / 6, 2 / 6, 3 / 6], atol=1e-15)
    with pytest.raises(ValueError):
        T.softmax(Tensor(np.zeros((2, 0))))


def test_layernorm_examples(rng):
    g, b = Tensor(np.ones(4)), Tensor(np.zeros(4))
    assert np.array_equal(T.layernorm(Tensor(np.ones(4)), g, b).data, np.zeros(4))
    out = T.layernorm(Tensor([-1.0, 1.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12).data
    np.testing.assert_allclose(out, [-1.0, 1.0], atol=1e-9)
    row = T.layernorm(Tensor(rng.normal(size=16) * 3 + 2), Tensor(np.ones(16)), Tensor(np.zeros(16)), 1e-5).data
    assert abs(row.mean()) < 1e-10
    assert abs(row.var() - 1) < 1e-3


def test_cross_entropy_examples():
    assert math.isclose(T.cross_entropy(Tensor(np.zeros((1, 4))), [2]).item(), math.log(4), rel_tol=1e-12)
    logits = np.zeros((1, 4))
    logits[0, 1] = 1000.0
    assert T.cross_entropy(Tensor(logits), [1]).item() < 1e-12
    x = np.array([[1.0, 2.0, 0.5], [0.0, -1.0, 3.0]])
    hand = []
    for row, y in zip(x, [0, 2]):
        p = np.exp(row) / np.exp(row).sum()
        hand.append(-math.log(p[y]))
    assert math.isclose(T.cross_entropy(Tensor(x), [0, 2]).item(), sum(hand) / 2, rel_tol=1e-12)
    with pytest.raises(ValueError):
        T.cross_entropy(Tensor(x), [0, 3])


def test_bce_examples():
    assert math.isclose(T.bce(Tensor([0.5]), [1.0]).item(), math.log(2), rel_tol=1e-12)
    assert T.bce(Tensor([0.0, 1.0, 1.0]), [0.0, 1.0, 1.0]).item() <= 1.1e-7
    hand = (-math.log(0.9) - math.log(0.8)) / 2
    assert math.isclose(T.bce(Tensor([0.9, 0.2]), [1.0, 0.0]).item(), hand, rel_tol=1e-12)
    with pytest.raises(ValueError):
        T.bce(Tensor([0.5]), [0.5])


@given(arrays(np.float64, 5, elements=st.floats(0, 1)), arrays(np.int64, 5, elements=st.integers(0, 1)))
def test_bce_finite_on_closed_interval(p, t):
    assert np.isfinite(T.bce(Tensor(p), t.astype(float)).item())


# -- backward ----------------------------------------------------------------------------


def test_backward_examples(rng):
    w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    T.sum(w).backward()
    assert np.array_equal(w.grad, np.ones((3, 2)))
    v = Tensor(rng.normal(size=4), requires_grad=True)
    T.sum(v * v).backward()
    np.testing.assert_allclose(v.grad, 2 * v.data, rtol=1e-15)


def test_backward_rejects_nonscalar():
    with pytest.raises(ShapeError):
        T.backward(Tensor(np.ones(3), requires_grad=True) * 2.0)


def test_backward_twice_doubles_exactly(rng):
    w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    x = Tensor(rng.normal(size=(2, 4)))
    loss = T.sum(T.tanh(T.matmul(x, w)))
    loss.backward()
    first = w.grad.copy()
    loss.backward()
    assert np.array_equal(w.grad, 2 * first)
    w.zero_grad()
    assert not w.grad.any()


def test_no_grad_records_nothing():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with T.no_grad():
        out = w * w
    assert not out.requires_grad and out._parents == ()


def _check(f, params, tol=1e-4):
    rep = grad_check(f, params)
    assert rep.passed, rep.errors
    return rep


def test_grad_check_linear_model_is_near_exact(rng):
    w = Tensor(rng.normal(size=(3, 1)), requires_grad=True)
    x = Tensor(rng.normal(size=(5, 3)))
    rep = grad_check(lambda: T.sum(T.matmul(x, w)), {"w": w})
    assert rep.max_error < 1e-7


@pytest.mark.parametrize("op", ["sigmoid", "tanh", "relu", "exp", "neg"])
def test_unary_gradients(op, rng):
    # keep relu away from its kink
    data = rng.normal(size=(3, 4))
    data[np.abs(data) < 0.05] = 0.5
    a = Tensor(data, requires_grad=True)
    c = Tensor(rng.normal(size=(3, 4)))
    _check(lambda: T.sum(T.elementwise(op, a) * c), {"a": a})


def test_log_gradient(rng):
    a = Tensor(rng.uniform(0.5, 2.0, size=6), requires_grad=True)
    _check(lambda: T.sum(T.log(a)), {"a": a})


def test_structural_op_gradients(rng):
    a = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    bias = Tensor(rng.normal(size=5), requires_grad=True)
    c = Tensor(rng.normal(size=(2, 5, 3)))

    def f():
        x = T.concat([a, b], axis=1)                       # (2, 6, 4)
        y = T.linear(x, w, bias)                           # (2, 6, 5)
        y = T.transpose(y, (0, 2, 1))[:, :, 1:4]           # (2, 5, 3)
        z = T.reshape(T.sub(a, b), (2, 12))
        return T.sum(y * c) + T.mean(T.relu(z) * 1.5) + T.sum(T.mean(a, axis=1, keepdims=True))

    _check(f, {"a": a, "b": b, "w": w, "bias": bias})


def test_gather_repeat_softmax_layernorm_gradients(rng):
    table = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
    g = Tensor(rng.normal(size=4) + 1, requires_grad=True)
    bb = Tensor(rng.normal(size=4), requires_grad=True)
    c = Tensor(rng.normal(size=(3, 2, 4)))
    idx = np.array([[0, 5], [5, 2], [1, 1]])

    def f():
        x = T.gather_rows(table, idx)                 # (3, 2, 4), repeated rows accumulate
        x = T.layernorm(x, g, bb)
        s = T.softmax(x, axis=-1)
        r = T.repeat(T.sum(s * c, axis=0), 2)         # (2, 2, 4)
        return T.sum(r * r)

    _check(f, {"table": table, "g": g, "bb": bb})


def test_batched_matmul_and_loss_gradients(rng):
    q = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    k = Tensor(rng.normal(size=(2, 4, 3)), requires_grad=True)
    logits = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    p = Tensor(rng.uniform(0.1, 0.9, size=5), requires_grad=True)
    _check(lambda: T.sum(T.matmul(q, k) * T.matmul(q, k)), {"q": q, "k": k})
    _check(lambda: T.cross_entropy(logits, [0, 2, 1, 1]), {"logits": logits})
    _check(lambda: T.bce(p, [1.0, 0.0, 1.0, 1.0, 0.0]), {"p": p})


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 5)), elements=finite))
def test_softmax_rows_sum_to_one(x):
    s = T.softmax(Tensor(x), axis=-1).data
    assert np.all(np.abs(s.sum(axis=-1) - 1) <= 1e-12)
    assert np.all(s >= 0)


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 6)), elements=finite))
def test_layernorm_rows_are_centred(x):
    d = x.shape[1]
    out = T.layernorm(Tensor(x), Tensor(np.ones(d)), Tensor(np.zeros(d))).data
    assert np.all(np.abs(out.mean(axis=1)) < 1e-10)


@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 3)), elements=finite),
       st.sampled_from(["sigmoid", "tanh", "relu", "mul", "add"]))
def test_elementwise_gradients_match_finite_differences(x, op):
    x = x.copy()
    x[np.abs(x) < 1e-3] = 0.5   # relu kink
    a = Tensor(x, requires_grad=True)
    b = Tensor(np.cos(x) + 2.0)
    f = (lambda: T.sum(T.elementwise(op, a, b))) if op in ("mul", "add") else (lambda: T.sum(T.elementwise(op, a)))
    assert grad_check(f, {"a": a}).passed
