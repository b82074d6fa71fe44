import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import numeric_grad, rel_error
from pilotprune import tensor as T
from pilotprune.errors import GraphError, ShapeError
from pilotprune.tensor import Tensor, no_grad


def _check(op, *shapes, seed=0, tol=1e-3, weights=None):
    """Compare reverse-mode gradients of sum(op(*xs) * r) with finite differences."""
    rng = np.random.default_rng(seed)
    xs = [rng.uniform(-1, 1, s) for s in shapes]
    out_shape = op(*[Tensor(x) for x in xs]).shape
    r = rng.uniform(-1, 1, out_shape) if weights is None else weights

    def f(*arrays):
        return float(np.sum(op(*[Tensor(a) for a in arrays]).data * r))

    leaves = [Tensor(x.copy(), requires_grad=True) for x in xs]
    T.tsum(T.mul(op(*leaves), r)).backward()
    for i, leaf in enumerate(leaves):
        assert rel_error(leaf.grad, numeric_grad(f, [x.copy() for x in xs], i)) < tol


def test_square_derivative():
    x = T.parameter(3.0, np.float64)
    T.mul(x, x).backward()
    assert x.grad == pytest.approx(6.0)


def test_inactive_relu_has_zero_grad():
    x = T.parameter(-1.0, np.float64)
    T.relu(x).backward()
    assert x.grad == 0.0


def test_three_layer_net_matches_finite_differences():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, (5, 4))
    ws = [rng.uniform(-1, 1, s) for s in ((4, 6), (6, 6), (6, 2))]

    def loss(w1, w2, w3):
        h = T.relu(T.matmul(Tensor(x), w1))
        h = T.relu(T.matmul(h, w2))
        return T.sum_squares(T.matmul(h, w3))

    params = [Tensor(w.copy(), requires_grad=True) for w in ws]
    loss(*params).backward()

    def f(*arrays):
        return loss(*[Tensor(a) for a in arrays]).item()

    for i, p in enumerate(params):
        fd = numeric_grad(f, [w.copy() for w in ws], i, h=1e-3)
        assert rel_error(p.grad, fd) < 1e-3


PRIMITIVES = [
    (T.matmul, [(3, 4), (4, 2)]),
    (T.matmul, [(2, 3, 4), (1, 4, 5)]),
    (T.add, [(3, 4), (4,)]),
    (T.sub, [(2, 3), (2, 3)]),
    (T.mul, [(3, 4), (3, 1)]),
    (T.relu, [(4, 5)]),
    (T.square, [(3, 3)]),
    (lambda a: T.softmax(a, axis=-1), [(3, 5)]),
    (lambda a: T.softmax(a, axis=0), [(4, 2)]),
    (lambda a: T.tsum(a, axis=1, keepdims=True), [(3, 4)]),
    (lambda a: T.mean(a, axis=0), [(3, 4)]),
    (lambda a: T.reshape(a, (6, 2)), [(3, 4)]),
    (lambda a: T.transpose(a, (1, 0, 2)), [(2, 3, 4)]),
    (lambda a: T.expand(a, (3, 2, 4)), [(1, 2, 4)]),
    (lambda a: T.getitem(a, (slice(None), [0, 2, 2])), [(2, 4)]),
    (lambda a, b: T.concat([a, b], axis=1), [(2, 3), (2, 2)]),
    (lambda a, b: T.stack([a, b], axis=-1), [(2, 3), (2, 3)]),
    (lambda x, w, b: T.conv2d(x, w, b), [(2, 4, 5, 3), (3, 3, 3, 2), (2,)]),
    (lambda x, w: T.conv2d(x, w), [(1, 5, 6, 2), (5, 5, 2, 3)]),
]


@pytest.mark.parametrize("op,shapes", PRIMITIVES)
def test_primitive_gradients(op, shapes):
    _check(op, *shapes)


def test_mask_multiply_gradient():
    mask = (np.random.default_rng(5).uniform(size=(3, 4)) > 0.5).astype(float)
    _check(lambda a: T.mul(a, mask), (3, 4))


def test_cycle_is_rejected():
    a = T.parameter(np.ones(2), np.float64)
    b = T.add(a, 1.0)
    c = T.add(b, 1.0)
    b._parents = (c,)
    with pytest.raises(GraphError):
        T.tsum(c).backward()


def test_backward_needs_scalar():
    with pytest.raises(GraphError):
        T.add(T.parameter(np.ones(3)), 1.0).backward()


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_shared_subexpression_accumulates():
    x = T.parameter(2.0, np.float64)
    y = T.mul(x, x)
    T.add(y, y).backward()
    assert x.grad == pytest.approx(8.0)


def test_no_grad_records_nothing():
    x = T.parameter(np.ones(3))
    with no_grad():
        y = T.mul(x, 2.0)
    assert not y.requires_grad and y._parents == ()


def test_float32_preserved():
    x = T.parameter(np.ones((2, 2)), np.float32)
    assert T.matmul(x, x).dtype == np.float32
    assert T.mul(x, 0.5).dtype == np.float32


def _naive_conv(x, w, b):
    bsz, h, wd, c = x.shape
    k, _, _, o = w.shape
    p = k // 2
    out = np.zeros((bsz, h, wd, o))
    for n in range(bsz):
        for i in range(h):
            for j in range(wd):
                for q in range(o):
                    acc = b[q]
                    for di in range(k):
                        for dj in range(k):
                            ii, jj = i + di - p, j + dj - p
                            if 0 <= ii < h and 0 <= jj < wd:
                                acc += np.dot(x[n, ii, jj], w[di, dj, :, q])
                    out[n, i, j, q] = acc
    return out


def test_conv_matches_loop_oracle(rng):
    x = rng.standard_normal((2, 4, 6, 2))
    w = rng.standard_normal((3, 3, 2, 2))
    b = rng.standard_normal(2)
    assert np.allclose(T.conv2d(x, w, b).data, _naive_conv(x, w, b), atol=1e-4)


def test_conv_singleton_pixel():
    x = np.full((1, 1, 1, 1), 2.0)
    w = np.arange(9.0).reshape(3, 3, 1, 1)
    out = T.conv2d(x, w, np.array([0.5])).data
    assert out.shape == (1, 1, 1, 1)
    assert out.item() == pytest.approx(4.0 * 2.0 + 0.5)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_matmul_gradient_property(m, k, n, seed):
    _check(T.matmul, (m, k), (k, n), seed=seed)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_softmax_rows_sum_to_one(n, seed):
    x = np.random.default_rng(seed).uniform(-30, 30, (3, n))
    s = T.softmax(Tensor(x), axis=-1).data
    assert np.allclose(s.sum(axis=-1), 1.0, atol=1e-5)
