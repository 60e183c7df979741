import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from frwkv import tensor as T
from frwkv.errors import ContractError, ShapeError

from conftest import check_op_grad, rel_err

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def loop_matmul(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for q in range(k):
                out[i, j] += a[i, q] * b[q, j]
    return out


class TestMatmul:
    def test_identity(self):
        out = T.matmul(T.tensor([[1, 0], [0, 1]]), T.tensor([[3, 4], [5, 6]]))
        np.testing.assert_array_equal(out.data, [[3, 4], [5, 6]])

    def test_row_by_column(self):
        assert T.matmul(T.tensor([[1, 2]]), T.tensor([[3], [4]])).data.tolist() == [[11.0]]

    def test_triple_loop_oracle(self, rng):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        np.testing.assert_allclose(T.matmul(T.tensor(a), T.tensor(b)).data, loop_matmul(a, b),
                                   rtol=0, atol=1e-12)

    def test_shape_error_names_both(self):
        with pytest.raises(ShapeError) as exc:
            T.matmul(T.zeros((2, 3)), T.zeros((4, 5)))
        assert "(2, 3)" in str(exc.value) and "(4, 5)" in str(exc.value)

    def test_batched_broadcast_grad(self):
        check_op_grad(lambda a, b: a @ b, (2, 3, 4), (4, 5))
        check_op_grad(lambda a, b: a @ b, (2, 1, 3, 4), (3, 4, 2))


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_allclose(T.softmax(T.tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_overflow_safe(self):
        np.testing.assert_allclose(T.softmax(T.tensor([1000.0, 1000.0])).data, [0.5, 0.5])

    def test_closed_form(self):
        np.testing.assert_allclose(T.softmax(T.tensor([0.0, math.log(3)])).data, [0.25, 0.75],
                                   atol=1e-15)

    @given(arrays(np.float64, (3, 5), elements=finite), finite)
    def test_rows_sum_to_one_and_shift_invariant(self, x, c):
        s = T.softmax(T.tensor(x), axis=-1).data
        assert np.all(np.abs(s.sum(-1) - 1) < 1e-12)
        assert np.all((s >= 0) & (s <= 1))
        np.testing.assert_allclose(T.softmax(T.tensor(x + c)).data, s, atol=1e-12)

    def test_grad(self):
        check_op_grad(lambda x: T.softmax(x, axis=-1), (3, 4))
        check_op_grad(lambda x: T.softmax(x, axis=0), (3, 4))


class TestLayerNorm:
    def test_constant_slice_is_zero(self):
        np.testing.assert_array_equal(T.layer_norm(T.tensor([5.0, 5.0, 5.0])).data, [0, 0, 0])

    def test_two_points(self):
        np.testing.assert_allclose(T.layer_norm(T.tensor([1.0, 3.0]), eps=0.0).data, [-1, 1])

    def test_loop_oracle(self, rng):
        x = rng.normal(size=(6, 7)) * 3 + 2
        out = T.layer_norm(T.tensor(x), eps=1e-5).data
        for i in range(6):
            mu = sum(x[i]) / 7
            var = sum((v - mu) ** 2 for v in x[i]) / 7
            ref = [(v - mu) / math.sqrt(var + 1e-5) for v in x[i]]
            np.testing.assert_allclose(out[i], ref, atol=1e-12)
        assert np.all(np.abs(out.mean(-1)) < 1e-9)
        assert np.all(np.abs(out.var(-1) - 1) < 1e-4)  # eps shifts var by O(eps/var)

    def test_grad_with_affine(self):
        check_op_grad(lambda x, w, b: T.layer_norm(x, w, b), (3, 5), (5,), (5,))


class TestBackward:
    def test_sum_gives_ones(self):
        x = T.tensor([1.0, 2.0, 3.0], requires_grad=True)
        T.tsum(x).backward()
        np.testing.assert_array_equal(x.grad, [1, 1, 1])

    def test_square(self):
        x = T.tensor([1.0, 2.0], requires_grad=True)
        T.tsum(x * x).backward()
        np.testing.assert_array_equal(x.grad, [2, 4])

    def test_non_scalar_is_contract_error(self):
        x = T.tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            (x * 2).backward()

    def test_no_grad_leaf_is_contract_error(self):
        with pytest.raises(ContractError):
            T.tsum(T.tensor([1.0])).backward()

    def test_shared_subexpression_accumulates(self):
        x = T.tensor([3.0], requires_grad=True)
        y = x * x
        T.tsum(y + y * x).backward()  # 2x^2... d/dx (x^2 + x^3) = 2x + 3x^2
        np.testing.assert_allclose(x.grad, [6 + 27])

    def test_graph_topological(self):
        x = T.tensor([1.0], requires_grad=True)
        loss = T.tsum(T.exp(x) * T.tanh(x))
        order = loss.graph()
        pos = {id(n): i for i, n in enumerate(order)}
        for node in order:
            for p in node._parents:
                if p.requires_grad:
                    assert pos[id(p)] < pos[id(node)]

    def test_deep_chain_no_recursion_limit(self):
        x = T.tensor([1.0], requires_grad=True)
        y = x
        for _ in range(5000):
            y = y * 1.0
        T.tsum(y).backward()
        assert x.grad[0] == 1.0

    def test_no_grad_records_nothing(self):
        x = T.tensor([1.0], requires_grad=True)
        with T.no_grad():
            y = x * 2
        assert not y.requires_grad


ELEMENTWISE = [
    (lambda a, b: a + b, [(3, 4), (4,)], False),
    (lambda a, b: a - b, [(3, 4), (3, 1)], False),
    (lambda a, b: a * b, [(2, 3), (2, 3)], False),
    (lambda a, b: a / b, [(2, 3), (3,)], True),
    (lambda a: a * 3.0 - 1.5, [(4,)], False),
    (lambda a: 2.0 / a, [(4,)], True),
    (lambda a: a ** 3, [(4,)], False),
    (T.sqrt, [(4,)], True),
    (T.exp, [(4,)], False),
    (T.log, [(4,)], True),
    (T.tanh, [(4,)], False),
    (T.sigmoid, [(4,)], False),
    (T.relu, [(5,)], False),
    (T.tabs, [(5,)], False),
    (lambda a: T.clip(a, -0.5, 0.5), [(6,)], False),
]


@pytest.mark.parametrize("fn,shapes,positive", ELEMENTWISE)
def test_elementwise_grads(fn, shapes, positive):
    check_op_grad(fn, *shapes, positive=positive)


STRUCTURAL = [
    (lambda a: T.tsum(a, axis=1), [(3, 4)]),
    (lambda a: T.tsum(a, axis=(0, 2), keepdims=True), [(2, 3, 4)]),
    (lambda a: T.mean(a, axis=-1), [(3, 4)]),
    (lambda a: T.reshape(a, (4, 3)), [(3, 4)]),
    (lambda a: T.transpose(a, (2, 0, 1)), [(2, 3, 4)]),
    (lambda a: T.broadcast_to(a, (2, 3, 4)), [(3, 1)]),
    (lambda a: a[1:, ::2], [(3, 4)]),
    (lambda a: a[np.array([0, 2, 0])], [(3, 4)]),
    (lambda a: T.take(a, np.array([1, 1, 0, 3]), axis=1), [(2, 4)]),
    (lambda a, b: T.concat([a, b], axis=1), [(2, 3), (2, 2)]),
    (lambda a, b: T.stack([a, b], axis=1), [(2, 3), (2, 3)]),
    (T.outer, [(2, 3), (2, 4)]),
]


@pytest.mark.parametrize("fn,shapes", STRUCTURAL)
def test_structural_grads(fn, shapes):
    check_op_grad(fn, *shapes)


@given(arrays(np.float64, 6, elements=st.floats(-1e6, 1e6)))
def test_sigmoid_tanh_ranges(x):
    s = T.sigmoid(T.tensor(x)).data
    t = T.tanh(T.tensor(x)).data
    assert np.all((s >= 0) & (s <= 1)) and np.all((t >= -1) & (t <= 1))
    mid = np.abs(x) < 30
    assert np.all((s[mid] > 0) & (s[mid] < 1)) and np.all(np.abs(t[np.abs(x) < 15]) < 1)


def test_sigmoid_stable_at_extremes():
    s = T.sigmoid(T.tensor([-1000.0, 1000.0])).data
    assert np.all(np.isfinite(s)) and s[0] == 0.0 and s[1] == 1.0


@settings(max_examples=30)
@given(st.permutations([0, 1, 2]))
def test_reshape_transpose_roundtrip(perm):
    x = np.arange(24.0).reshape(2, 3, 4)
    t = T.transpose(T.tensor(x), tuple(perm))
    back = T.transpose(t, tuple(np.argsort(perm)))
    np.testing.assert_array_equal(back.data, x)
    np.testing.assert_array_equal(T.reshape(T.reshape(T.tensor(x), (6, 4)), (2, 3, 4)).data, x)


def test_abs_subgradient_zero_at_zero():
    x = T.tensor([0.0, -2.0, 2.0], requires_grad=True)
    T.tsum(T.tabs(x)).backward()
    np.testing.assert_array_equal(x.grad, [0, -1, 1])


def test_clip_passes_gradient_only_inside():
    x = T.tensor([-1.0, 0.1, 1.0], requires_grad=True)
    T.tsum(T.clip(x, 0.0, 0.2)).backward()
    np.testing.assert_array_equal(x.grad, [0, 1, 0])


def test_custom_op_roundtrip():
    x = T.tensor([1.0, 2.0], requires_grad=True)
    y = T.custom_op(x.data * 5, (x,), lambda g: (5 * g,), "times5")
    T.tsum(y).backward()
    assert rel_err(x.grad, [5, 5]) == 0
