"""Tensor engine: op semantics, backward correctness, determinism."""

import numpy as np
import pytest

from satl.engine import (
    Prng,
    Tensor,
    add,
    backward,
    conv2d,
    dense,
    exp,
    log,
    matmul,
    maxpool2,
    mul,
    no_grad,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    scale,
    sigmoid,
    slice0,
    square,
    sub,
    transpose,
    upsample2,
    zero_grads,
)
from satl.errors import ContractError, DimensionError, NumericDomainError


def t(data, grad=False, dtype=np.float32):
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=grad)


class TestConv2d:
    def test_constant_field(self):
        x = t(np.ones((1, 1, 3, 3)))
        k = t(np.ones((1, 1, 2, 2)))
        b = t(np.zeros(1))
        out = conv2d(x, k, b)
        assert out.shape == (1, 1, 2, 2)
        assert np.all(out.data == 4.0)

    def test_identity_kernel_is_bit_exact(self):
        rng = np.random.default_rng(0)
        x = t(rng.random((2, 1, 5, 5)))
        k = t(np.ones((1, 1, 1, 1)))
        b = t(np.zeros(1))
        out = conv2d(x, k, b)
        assert np.array_equal(out.data, x.data)

    def test_strided_window_sums(self):
        # brute-force sliding-window oracle on 0..15
        x = t(np.arange(16).reshape(1, 1, 4, 4))
        k = t(np.ones((1, 1, 2, 2)))
        b = t(np.zeros(1))
        out = conv2d(x, k, b, stride=2)
        assert out.data.reshape(2, 2).tolist() == [[10.0, 18.0], [42.0, 50.0]]

    def test_output_shape_formula(self):
        x = t(np.zeros((1, 3, 11, 9)))
        k = t(np.zeros((4, 3, 3, 3)))
        b = t(np.zeros(4))
        out = conv2d(x, k, b, stride=2, padding=1)
        assert out.shape == (1, 4, (11 + 2 - 3) // 2 + 1, (9 + 2 - 3) // 2 + 1)

    def test_channel_mismatch_raises(self):
        with pytest.raises(DimensionError):
            conv2d(t(np.zeros((1, 3, 4, 4))), t(np.zeros((2, 4, 3, 3))), t(np.zeros(2)))

    def test_kernel_larger_than_padded_input_raises(self):
        with pytest.raises(DimensionError):
            conv2d(t(np.zeros((1, 1, 2, 2))), t(np.zeros((1, 1, 5, 5))), t(np.zeros(1)))

    def test_brute_force_oracle_random(self):
        rng = np.random.default_rng(42)
        for stride, padding in [(1, 0), (1, 1), (2, 1), (3, 0)]:
            x = rng.standard_normal((2, 3, 8, 8))
            w = rng.standard_normal((4, 3, 3, 3))
            b = rng.standard_normal(4)
            out = conv2d(
                t(x, dtype=np.float64), t(w, dtype=np.float64), t(b, dtype=np.float64),
                stride=stride, padding=padding,
            ).data
            hp = 8 + 2 * padding
            xp = np.zeros((2, 3, hp, hp))
            xp[:, :, padding : padding + 8, padding : padding + 8] = x
            oh = (hp - 3) // stride + 1
            ref = np.zeros((2, 4, oh, oh))
            for n in range(2):
                for f in range(4):
                    for i in range(oh):
                        for j in range(oh):
                            patch = xp[n, :, i * stride : i * stride + 3, j * stride : j * stride + 3]
                            ref[n, f, i, j] = np.sum(patch * w[f]) + b[f]
            np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


class TestMaxpool:
    def test_single_window(self):
        out = maxpool2(t([[[[1, 2], [3, 4]]]]))
        assert out.data.reshape(()) == 4.0

    def test_constant_input(self):
        out = maxpool2(t(np.full((1, 2, 4, 4), 7.0)))
        assert np.all(out.data == 7.0)

    def test_window_max_oracle(self):
        out = maxpool2(t(np.arange(16).reshape(1, 1, 4, 4)))
        assert out.data.reshape(2, 2).tolist() == [[5.0, 7.0], [13.0, 15.0]]

    def test_odd_dims_raise(self):
        with pytest.raises(DimensionError):
            maxpool2(t(np.zeros((1, 1, 3, 4))))

    def test_tie_routes_to_first_element(self):
        x = t(np.zeros((1, 1, 2, 2)), grad=True)
        backward(reduce_sum(maxpool2(x)))
        assert x.grad.reshape(-1).tolist() == [1.0, 0.0, 0.0, 0.0]


class TestDense:
    def test_identity(self):
        x = t([[1.0, 2.0], [3.0, 4.0]])
        out = dense(x, t(np.eye(2)), t(np.zeros(2)))
        assert np.array_equal(out.data, x.data)

    def test_sum_case(self):
        out = dense(t([[1.0, 2.0]]), t([[1.0], [1.0]]), t([0.0]))
        assert out.data.tolist() == [[3.0]]

    def test_hand_matrix_multiply(self):
        out = dense(t([[1.0, 2.0]]), t([[1.0, 3.0], [2.0, 4.0]]), t([1.0, 1.0]))
        assert out.data.tolist() == [[6.0, 12.0]]

    def test_dim_mismatch(self):
        with pytest.raises(DimensionError):
            dense(t(np.zeros((1, 3))), t(np.zeros((2, 4))), t(np.zeros(4)))


class TestElementwise:
    def test_relu(self):
        assert relu(t([-1.0, 0.0, 2.0])).data.tolist() == [0.0, 0.0, 2.0]

    def test_sigmoid_at_zero(self):
        assert sigmoid(t([0.0])).data[0] == 0.5

    def test_sigmoid_extreme_values_no_overflow(self):
        out = sigmoid(t([1000.0, -1000.0]))
        assert np.all(np.isfinite(out.data))
        assert out.data[0] == 1.0 and out.data[1] == 0.0

    def test_square_backward(self):
        x = t([3.0], grad=True)
        backward(reduce_sum(square(x)))
        assert x.grad.tolist() == [6.0]

    def test_log_domain_error(self):
        with pytest.raises(NumericDomainError):
            log(t([1.0, -0.5]))

    def test_binary_shapes_must_match(self):
        with pytest.raises(DimensionError):
            add(t([1.0]), t([1.0, 2.0]))
        with pytest.raises(DimensionError):
            mul(t([[1.0]]), t([1.0]))

    def test_sub_and_scale(self):
        out = scale(sub(t([5.0, 1.0]), t([2.0, 3.0])), -2.0)
        assert out.data.tolist() == [-6.0, 4.0]


class TestReduce:
    def test_sum(self):
        assert reduce_sum(t([1.0, 2.0, 3.0])).item() == 6.0

    def test_mean_of_constant(self):
        assert reduce_mean(t(np.full((3, 4), 2.5))).item() == 2.5

    def test_axis_sum(self):
        out = reduce_sum(t([[1.0, 2.0], [3.0, 4.0]]), axes=(0,))
        assert out.data.tolist() == [4.0, 6.0]

    def test_empty_axes_is_full_reduction(self):
        assert reduce_sum(t([[1.0, 2.0], [3.0, 4.0]]), axes=()).item() == 10.0

    def test_invalid_axis(self):
        with pytest.raises(DimensionError):
            reduce_sum(t([1.0, 2.0]), axes=(3,))


class TestMatmul:
    def test_identity(self):
        a = np.random.default_rng(1).random((3, 3))
        out = matmul(t(a), t(np.eye(3)))
        np.testing.assert_allclose(out.data, a.astype(np.float32), rtol=1e-6)

    def test_outer_product(self):
        out = matmul(t([[1.0], [2.0]]), t([[1.0, 2.0]]))
        assert out.data.tolist() == [[1.0, 2.0], [2.0, 4.0]]

    def test_naive_loop_oracle(self):
        rng = np.random.default_rng(3)
        a, b = rng.random((3, 4)), rng.random((4, 2))
        out = matmul(t(a, dtype=np.float64), t(b, dtype=np.float64)).data
        ref = np.zeros((3, 2))
        for i in range(3):
            for j in range(2):
                for k in range(4):
                    ref[i, j] += a[i, k] * b[k, j]
        np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)

    def test_inner_dim_mismatch(self):
        with pytest.raises(DimensionError):
            matmul(t(np.zeros((2, 3))), t(np.zeros((4, 2))))


class TestUpsample:
    def test_single_pixel(self):
        out = upsample2(t([[[[1.0]]]]))
        assert np.all(out.data == 1.0) and out.shape == (1, 1, 2, 2)

    def test_block_replication(self):
        out = upsample2(t([[[[1.0, 2.0], [3.0, 4.0]]]]))
        expected = [
            [1.0, 1.0, 2.0, 2.0],
            [1.0, 1.0, 2.0, 2.0],
            [3.0, 3.0, 4.0, 4.0],
            [3.0, 3.0, 4.0, 4.0],
        ]
        assert out.data.reshape(4, 4).tolist() == expected

    def test_backward_sums_duplicates(self):
        x = t(np.random.default_rng(0).random((2, 3, 4, 4)), grad=True)
        backward(reduce_sum(upsample2(x)))
        assert np.all(x.grad == 4.0)


class TestBackward:
    def test_sum_gives_ones(self):
        x = t(np.random.default_rng(0).random((3, 5)), grad=True)
        backward(reduce_sum(x))
        assert np.all(x.grad == 1.0)

    def test_sum_of_squares(self):
        x = t([1.0, 2.0], grad=True)
        backward(reduce_sum(mul(x, x)))
        assert x.grad.tolist() == [2.0, 4.0]

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(ContractError):
            backward(t([1.0, 2.0], grad=True))

    def test_accumulation_across_reuse(self):
        x = t([2.0], grad=True)
        backward(reduce_sum(add(x, x)))
        assert x.grad.tolist() == [2.0]

    def test_linearity_of_gradients(self):
        # backward(l1 + l2) == backward(l1) + backward(l2), elementwise
        rng = np.random.default_rng(7)
        x = Tensor(rng.standard_normal((4, 3)), requires_grad=True, dtype=np.float64)

        def l1():
            return reduce_sum(square(x))

        def l2():
            return reduce_mean(mul(x, exp(scale(x, 0.1))))

        zero_grads([x])
        backward(l1())
        g1 = x.grad.copy()
        zero_grads([x])
        backward(l2())
        g2 = x.grad.copy()
        zero_grads([x])
        backward(add(l1(), l2()))
        np.testing.assert_allclose(x.grad, g1 + g2, rtol=1e-12, atol=1e-12)

    def test_non_participating_leaf_grad_is_zeros(self):
        x = t([1.0, 2.0], grad=True)
        other = t([5.0], grad=True)
        zero_grads([x, other])
        backward(reduce_sum(square(x)))
        assert np.all(other.grad == 0.0)

    def test_graph_indices_are_topological(self):
        x = t([1.0, 2.0], grad=True)
        y = square(x)
        z = add(y, y)
        loss = reduce_sum(z)
        # every recorded node's inputs carry smaller creation indices
        stack, seen = [loss], set()
        while stack:
            cur = stack.pop()
            if id(cur) in seen or cur._node is None:
                continue
            seen.add(id(cur))
            for inp in cur._node.inputs:
                if inp._node is not None:
                    assert inp._node.index < cur._node.index
                    stack.append(inp)

    def test_no_grad_suppresses_graph(self):
        x = t([1.0], grad=True)
        with no_grad():
            y = square(x)
        assert y._node is None and not y.requires_grad


class TestShapePlumbing:
    def test_reshape_roundtrip_grad(self):
        x = t(np.arange(6.0), grad=True)
        backward(reduce_sum(square(reshape(x, (2, 3)))))
        np.testing.assert_allclose(x.grad, 2 * np.arange(6.0, dtype=np.float32))

    def test_transpose(self):
        out = transpose(t([[1.0, 2.0], [3.0, 4.0]]))
        assert out.data.tolist() == [[1.0, 3.0], [2.0, 4.0]]

    def test_slice0_gradient_scatters(self):
        x = t(np.ones((3, 2)), grad=True)
        backward(reduce_sum(square(slice0(x, 1))))
        assert x.grad.tolist() == [[0.0, 0.0], [2.0, 2.0], [0.0, 0.0]]


class TestDeterminism:
    def test_ops_bit_identical_across_runs(self):
        def run():
            rng = Prng(99)
            x = Tensor(rng.normal((2, 3, 8, 8)).astype(np.float32), requires_grad=True)
            w = Tensor(rng.normal((4, 3, 3, 3)).astype(np.float32), requires_grad=True)
            b = Tensor(np.zeros(4, dtype=np.float32), requires_grad=True)
            out = relu(conv2d(x, w, b, padding=1))
            loss = reduce_mean(square(out))
            zero_grads([x, w, b])
            backward(loss)
            return loss.item(), x.grad.copy(), w.grad.copy()

        l1, gx1, gw1 = run()
        l2, gx2, gw2 = run()
        assert l1 == l2
        assert np.array_equal(gx1, gx2)
        assert np.array_equal(gw1, gw2)
