import sys

import numpy as np
import pytest

from lexdiff.autodiff import (
    Tensor,
    add,
    matmul,
    mul,
    sigmoid,
    silu,
    softmax_last,
    swap_last,
    tanh,
    total_sum,
)


def _fd_grad(fn, x, h=1e-6):
    """Central finite differences of a scalar-valued fn at x."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = grad.ravel()
    base = x.astype(np.float64).copy()
    for i in range(base.size):
        probe = base.ravel().copy()
        probe[i] += h
        up = fn(probe.reshape(x.shape))
        probe[i] -= 2 * h
        down = fn(probe.reshape(x.shape))
        flat[i] = (up - down) / (2 * h)
    return grad


def _check_against_fd(build, x, rtol=1e-6):
    """build(Tensor) -> scalar Tensor; compares backward grads to FD."""
    leaf = Tensor(x, requires_grad=True)
    out = build(leaf)
    out.backward()
    fd = _fd_grad(lambda arr: float(build(Tensor(arr, requires_grad=True)).data), x)
    np.testing.assert_allclose(leaf.grad, fd, rtol=rtol, atol=1e-8)


class TestOps:
    def test_add_broadcast_grad(self, rng):
        x = rng.normal(size=(3, 4))
        bias = rng.normal(size=(4,))
        w = rng.normal(size=(3, 4))
        _check_against_fd(lambda t: total_sum(mul(add(t, bias), w)), x)
        # and the broadcast side reduces correctly
        b = Tensor(bias, requires_grad=True)
        out = total_sum(mul(add(Tensor(x), b), Tensor(w)))
        out.backward()
        np.testing.assert_allclose(b.grad, w.sum(axis=0), rtol=1e-12)

    def test_mul_grad(self, rng):
        x = rng.normal(size=(2, 5))
        other = rng.normal(size=(2, 5))
        _check_against_fd(lambda t: total_sum(mul(mul(t, other), t)), x)

    def test_matmul_grad_both_sides(self, rng):
        a_val = rng.normal(size=(3, 4))
        b_val = rng.normal(size=(4, 2))
        w = rng.normal(size=(3, 2))
        _check_against_fd(lambda t: total_sum(mul(matmul(t, b_val), w)), a_val)
        _check_against_fd(lambda t: total_sum(mul(matmul(Tensor(a_val), t), w)), b_val)

    def test_batched_matmul_grad(self, rng):
        a_val = rng.normal(size=(2, 3, 4))
        b_val = rng.normal(size=(2, 4, 3))
        _check_against_fd(lambda t: total_sum(matmul(t, b_val)), a_val)
        _check_against_fd(lambda t: total_sum(matmul(Tensor(a_val), t)), b_val)

    def test_swap_last_grad(self, rng):
        x = rng.normal(size=(2, 3, 4))
        w = rng.normal(size=(2, 4, 3))
        _check_against_fd(lambda t: total_sum(mul(swap_last(t), w)), x)

    @pytest.mark.parametrize("op", [sigmoid, tanh, silu])
    def test_elementwise_nonlinearity_grads(self, op, rng):
        x = rng.normal(size=(4, 3)) * 2.0
        w = rng.normal(size=(4, 3))
        _check_against_fd(lambda t: total_sum(mul(op(t), w)), x)

    def test_sigmoid_extreme_inputs_do_not_overflow(self):
        x = np.array([-1e4, -50.0, 0.0, 50.0, 1e4])
        with np.errstate(over="raise"):
            y = sigmoid(Tensor(x)).data
        np.testing.assert_allclose(y, [0.0, 0.0, 0.5, 1.0, 1.0], atol=1e-15)

    def test_softmax_last_grad_and_rows_sum_to_one(self, rng):
        x = rng.normal(size=(3, 5)) * 3.0
        w = rng.normal(size=(3, 5))
        y = softmax_last(Tensor(x)).data
        np.testing.assert_allclose(y.sum(axis=-1), np.ones(3), rtol=1e-12)
        _check_against_fd(lambda t: total_sum(mul(softmax_last(t), w)), x)

    def test_operator_overloads_match_functions(self, rng):
        a_val, b_val = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
        a, b = Tensor(a_val, requires_grad=True), Tensor(b_val)
        out = total_sum((a + b) * a @ b - a)
        ref = total_sum(add(matmul(mul(add(a, b), a), b), mul(a, -1.0)))
        np.testing.assert_allclose(out.data, ref.data, rtol=1e-12)


class TestGraph:
    def test_backward_requires_scalar(self):
        t = Tensor(np.zeros(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            add(t, 1.0).backward()

    def test_grad_accumulates_across_reuse(self, rng):
        x = rng.normal(size=(3,))
        t = Tensor(x, requires_grad=True)
        total_sum(add(mul(t, 2.0), mul(t, 3.0))).backward()
        np.testing.assert_allclose(t.grad, np.full(3, 5.0), rtol=1e-15)

    def test_constants_collect_no_grad(self):
        const = Tensor(np.ones(3))
        t = Tensor(np.ones(3), requires_grad=True)
        total_sum(mul(t, const)).backward()
        assert const.grad is None and t.grad is not None

    def test_deep_chain_beyond_recursion_limit(self):
        depth = sys.getrecursionlimit() * 3
        t = Tensor(np.asarray(1.0), requires_grad=True)
        node = t
        for _ in range(depth):
            node = add(node, 1.0)
        node.backward()
        assert t.grad == pytest.approx(1.0)

    def test_diamond_graph_gradient(self, rng):
        x = rng.normal(size=(4,))
        _check_against_fd(lambda t: total_sum(mul(sigmoid(t), tanh(t))), x)
