"""Tests for the tape-based autodiff engine."""

import numpy as np
import pytest

from exacfs import autodiff as ad
from exacfs.autodiff import Tape, Tensor
from exacfs.errors import ContractError, DimensionError


class TestMatmul:
    def test_identity(self):
        out = ad.matmul(Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.data, [[3.0], [4.0]])

    def test_inner_product(self):
        out = ad.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.data, [[11.0]])

    def test_gradient_wrt_left(self):
        a = Tensor([[1.0, 2.0]], requires_grad=True)
        b = Tensor([[3.0], [4.0]])
        ad.backward(ad.reduce_sum(ad.matmul(a, b)))
        np.testing.assert_allclose(a.grad, [[3.0, 4.0]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestConv2d:
    def test_scaling_kernel(self):
        out = ad.conv2d(Tensor(np.ones((1, 3, 3))), Tensor([[[[2.0]]]]))
        assert out.shape == (1, 3, 3)
        np.testing.assert_array_equal(out.data, np.full((1, 3, 3), 2.0))

    def test_full_window_sum_and_kernel_gradient(self):
        x = Tensor([[[1.0, 2.0], [3.0, 4.0]]])
        k = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        out = ad.conv2d(x, k)
        np.testing.assert_array_equal(out.data, [[[10.0]]])
        ad.backward(ad.reduce_sum(out))
        np.testing.assert_allclose(k.grad, [[[[1.0, 2.0], [3.0, 4.0]]]])

    def test_output_size_with_stride_and_padding(self):
        out = ad.conv2d(Tensor(np.zeros((2, 5, 5))), Tensor(np.zeros((3, 2, 3, 3))), stride=2, padding=1)
        assert out.shape == (3, 3, 3)

    def test_batched_matches_unbatched(self):
        rng = np.random.default_rng(0)
        x, k = rng.normal(size=(2, 2, 4, 4)), Tensor(rng.normal(size=(3, 2, 3, 3)))
        batched = ad.conv2d(Tensor(x), k, padding=1).data
        for n in range(2):
            np.testing.assert_allclose(batched[n], ad.conv2d(Tensor(x[n]), k, padding=1).data)

    def test_kernel_larger_than_padded_input(self):
        with pytest.raises(DimensionError):
            ad.conv2d(Tensor(np.ones((1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))


class TestRelu:
    def test_forward(self):
        np.testing.assert_array_equal(ad.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_identity_on_positive_input(self):
        x = np.array([0.5, 1.0, 3.0])
        np.testing.assert_array_equal(ad.relu(Tensor(x)).data, x)

    def test_gradient(self):
        x = Tensor([-1.0, 2.0], requires_grad=True)
        ad.backward(ad.reduce_sum(ad.relu(x)))
        np.testing.assert_array_equal(x.grad, [0.0, 1.0])

    def test_subgradient_at_zero_is_zero(self):
        x = Tensor([0.0], requires_grad=True)
        ad.backward(ad.reduce_sum(ad.relu(x)))
        np.testing.assert_array_equal(x.grad, [0.0])


class TestGridMean:
    def test_channel_means(self):
        x = np.stack([np.ones((2, 2)), np.full((2, 2), 3.0)])
        np.testing.assert_array_equal(ad.grid_mean(Tensor(x)).data, [1.0, 3.0])

    def test_degenerate_grid(self):
        np.testing.assert_array_equal(ad.grid_mean(Tensor([[[5.0]]])).data, [5.0])

    def test_gradient(self):
        x = Tensor(np.arange(4.0).reshape(1, 2, 2), requires_grad=True)
        ad.backward(ad.reduce_sum(ad.grid_mean(x)))
        np.testing.assert_allclose(x.grad, np.full((1, 2, 2), 0.25))

    def test_wrong_rank(self):
        with pytest.raises(DimensionError):
            ad.grid_mean(Tensor(np.ones((2, 2))))


class TestBackward:
    def test_sum(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        ad.backward(ad.reduce_sum(x))
        np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])

    def test_square(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        ad.backward(ad.reduce_sum(x * x))
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_repeated_backward_accumulates(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = ad.reduce_sum(x * x)
        ad.backward(loss)
        ad.backward(loss)
        np.testing.assert_array_equal(x.grad, [4.0, 8.0])

    def test_zero_grad_resets(self):
        x = Tensor([1.0], requires_grad=True)
        ad.backward(ad.reduce_sum(x * 3.0))
        x.zero_grad()
        assert x.grad is None

    def test_non_scalar_loss(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            ad.backward(x * 2.0)

    def test_constant_loss_is_a_no_op(self):
        ad.backward(Tensor(3.0))

    def test_broadcast_gradient_is_summed(self):
        a = Tensor(np.ones((3, 4)), requires_grad=True)
        b = Tensor(np.ones(4), requires_grad=True)
        ad.backward(ad.reduce_sum(a + b))
        np.testing.assert_array_equal(b.grad, np.full(4, 3.0))

    def test_independent_subgraphs_merge(self):
        a, b = Tensor([2.0], requires_grad=True), Tensor([3.0], requires_grad=True)
        c, d = Tensor([5.0], requires_grad=True), Tensor([7.0], requires_grad=True)
        left, right = a * b, c * d
        assert left.tape is not right.tape
        total = ad.reduce_sum(left + right)
        assert left.tape is right.tape is total.tape
        ad.backward(total)
        assert (a.grad[0], b.grad[0], c.grad[0], d.grad[0]) == (3.0, 2.0, 7.0, 5.0)


class TestTape:
    def test_inputs_precede_nodes(self):
        x = Tensor(np.linspace(-1, 1, 6).reshape(2, 3), requires_grad=True)
        w = Tensor(np.ones((3, 2)), requires_grad=True)
        with Tape() as tape:
            loss = ad.reduce_mean(ad.relu(ad.matmul(x, w)) * 2.0)
        assert loss.tape is tape
        for index, node in enumerate(tape.nodes):
            for tensor in node.inputs:
                if tensor.tape is tape and tensor.node_id is not None:
                    assert tensor.node_id < index

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with ad.no_grad():
            y = x * 2.0
        assert y.tape is None
        assert not y.requires_grad

    def test_forward_is_deterministic(self):
        rng = np.random.default_rng(4)
        x, k = rng.normal(size=(2, 3, 5, 5)), rng.normal(size=(4, 3, 3, 3))
        first = ad.l2_normalize(ad.conv2d(Tensor(x), Tensor(k), padding=1), axis=-1).data
        second = ad.l2_normalize(ad.conv2d(Tensor(x), Tensor(k), padding=1), axis=-1).data
        assert first.tobytes() == second.tobytes()


class TestLosses:
    def test_cross_entropy_uniform_logits(self):
        losses = ad.cross_entropy(Tensor(np.zeros((2, 4))), [0, 3])
        np.testing.assert_allclose(losses.data, np.log(4.0))

    def test_cross_entropy_label_out_of_range(self):
        with pytest.raises(ContractError):
            ad.cross_entropy(Tensor(np.zeros((1, 3))), [3])

    def test_l2_normalize_unit_rows(self):
        out = ad.l2_normalize(Tensor([[3.0, 4.0], [0.0, 2.0]]), axis=1)
        np.testing.assert_allclose(out.data, [[0.6, 0.8], [0.0, 1.0]])

    def test_l2_normalize_zero_vector_stays_zero(self):
        np.testing.assert_array_equal(ad.l2_normalize(Tensor([[0.0, 0.0]]), axis=1).data, [[0.0, 0.0]])
