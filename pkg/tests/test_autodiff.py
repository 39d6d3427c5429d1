"""Tensor ops: values against hand math, gradients against finite differences."""

import numpy as np
import numpy.testing as npt
import pytest

from rnf import autodiff as ad
from rnf.autodiff import DimensionError, Tape, Tensor

from oracles import numeric_gradient, relative_error

GRAD_TOL = 1e-4


def scalar_loss(out):
    return ad.sum_all(ad.mul(out, out))


def check_grad(build, *leaf_arrays, seeds=range(3)):
    """Compare analytic gradients of sum(out*out) against finite differences."""
    for seed in seeds:
        rng = np.random.default_rng(seed)
        arrays = [rng.uniform(-1, 1, size=shape) for shape in leaf_arrays]
        leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
        with Tape() as tape:
            loss = scalar_loss(build(*leaves))
            tape.backward(loss)
        for leaf, base in zip(leaves, arrays):
            def f(x, leaf=leaf, leaves=leaves, arrays=arrays):
                vals = [Tensor(a) for a in arrays]
                vals[leaves.index(leaf)] = Tensor(x)
                return scalar_loss(build(*vals)).item()

            numeric = numeric_gradient(f, base.copy())
            assert leaf.grad is not None
            assert relative_error(leaf.grad, numeric) < GRAD_TOL


class TestMatmul:
    def test_identity(self):
        out = ad.matmul(Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([[3.0], [4.0]]))
        npt.assert_array_equal(out.data, [[3.0], [4.0]])

    def test_hand_product(self):
        out = ad.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
        npt.assert_array_equal(out.data, [[17.0], [39.0]])

    def test_zero_annihilates(self):
        out = ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.arange(12.0).reshape(3, 4)))
        npt.assert_array_equal(out.data, np.zeros((2, 4)))

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_gradients(self):
        check_grad(lambda a, b: ad.matmul(a, b), (3, 4), (4, 2))
        check_grad(lambda a, b: ad.matmul(a, b), (3, 4), (4,))


class TestElementwise:
    def test_sigmoid_at_zero(self):
        assert ad.sigmoid(Tensor(0.0)).item() == 0.5

    def test_tanh_at_zero(self):
        assert ad.tanh(Tensor(0.0)).item() == 0.0

    def test_relu_definition(self):
        assert ad.relu(Tensor(-3.2)).item() == 0.0
        assert ad.relu(Tensor(3.2)).item() == pytest.approx(3.2)

    def test_dispatcher(self):
        out = ad.elementwise("add", Tensor([1.0, 2.0]), Tensor([3.0, 4.0]))
        npt.assert_array_equal(out.data, [4.0, 6.0])
        with pytest.raises(ValueError, match="unknown elementwise op"):
            ad.elementwise("pow", Tensor([1.0]))

    def test_incompatible_shapes(self):
        with pytest.raises(DimensionError):
            ad.add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))

    def test_scalar_broadcast(self):
        out = ad.mul(Tensor([[1.0, 2.0], [3.0, 4.0]]), 2.0)
        npt.assert_array_equal(out.data, [[2.0, 4.0], [6.0, 8.0]])

    @pytest.mark.parametrize("op", [ad.add, ad.mul, ad.sub])
    def test_binary_gradients(self, op):
        check_grad(lambda a, b: op(a, b), (3, 2), (3, 2))

    @pytest.mark.parametrize("op", [ad.tanh, ad.sigmoid, ad.exp])
    def test_unary_gradients(self, op):
        check_grad(op, (4, 3))

    def test_scalar_broadcast_gradient(self):
        check_grad(lambda a, s: ad.mul(a, s), (3, 2), (1,))


class TestConcat:
    def test_single_input_is_identity(self):
        x = Tensor([[1.0, 2.0]])
        npt.assert_array_equal(ad.concat([x]).data, x.data)

    def test_rows_flatten(self):
        out = ad.concat([Tensor([1.0, 2.0]), Tensor([3.0, 4.0])])
        npt.assert_array_equal(out.data, [1.0, 2.0, 3.0, 4.0])

    def test_empty_list(self):
        with pytest.raises(ValueError, match="empty"):
            ad.concat([])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ad.concat([Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 3)))], axis=0)

    def test_gradient_splits_upstream(self):
        a = Tensor([1.0, 2.0], requires_grad=True)
        b = Tensor([3.0, 4.0], requires_grad=True)
        with Tape() as tape:
            out = ad.concat([a, b])
            loss = ad.dot(out, Tensor([10.0, 20.0, 30.0, 40.0]))
            tape.backward(loss)
        npt.assert_array_equal(a.grad, [10.0, 20.0])
        npt.assert_array_equal(b.grad, [30.0, 40.0])

    def test_gradient_matches_finite_differences(self):
        check_grad(lambda a, b: ad.concat([a, b], axis=1), (2, 3), (2, 2))


class TestMaxOverAxis:
    def test_singleton(self):
        out, idx = ad.max_over_axis(Tensor([[1.0], [7.0]]), axis=1)
        npt.assert_array_equal(out.data, [1.0, 7.0])
        npt.assert_array_equal(idx, [0, 0])

    def test_hand_enumeration(self):
        out, idx = ad.max_over_axis(Tensor([[1.0, 5.0], [7.0, 2.0]]), axis=1)
        npt.assert_array_equal(out.data, [5.0, 7.0])
        npt.assert_array_equal(idx, [1, 0])

    def test_backward_routes_to_argmax(self):
        x = Tensor([[1.0, 5.0], [7.0, 2.0]], requires_grad=True)
        with Tape() as tape:
            out, _ = ad.max_over_axis(x, axis=1)
            tape.backward(ad.sum_all(out))
        npt.assert_array_equal(x.grad, [[0.0, 1.0], [1.0, 0.0]])

    def test_tie_takes_first(self):
        _, idx = ad.max_over_axis(Tensor([[3.0, 3.0]]), axis=1)
        npt.assert_array_equal(idx, [0])

    def test_empty_axis(self):
        with pytest.raises(ValueError, match="empty axis"):
            ad.max_over_axis(Tensor(np.zeros((2, 0))), axis=1)

    def test_gradient_matches_finite_differences(self):
        # keep entries distinct so the argmax is stable under perturbation
        rng = np.random.default_rng(5)
        base = rng.permutation(12).astype(np.float64).reshape(3, 4)
        x = Tensor(base.copy(), requires_grad=True)
        with Tape() as tape:
            out, _ = ad.max_over_axis(x, axis=1)
            tape.backward(scalar_loss(out))
        numeric = numeric_gradient(lambda a: scalar_loss(ad.max_over_axis(Tensor(a), axis=1)[0]).item(),
                                   base.copy())
        assert relative_error(x.grad, numeric) < GRAD_TOL


class TestBackward:
    def test_identity_loss(self):
        x = Tensor(3.0, requires_grad=True)
        with Tape() as tape:
            y = ad.mul(x, 1.0)
            tape.backward(y)
        npt.assert_array_equal(x.grad, 1.0)

    def test_quadratic(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        with Tape() as tape:
            tape.backward(ad.sum_all(ad.mul(x, x)))
        npt.assert_array_equal(x.grad, [2.0, 4.0, 6.0])

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = ad.mul(x, x)
            with pytest.raises(ValueError, match="scalar"):
                tape.backward(y)

    def test_empty_tape_rejected(self):
        with Tape() as tape:
            with pytest.raises(ValueError, match="empty"):
                tape.backward(Tensor(1.0))

    def test_accumulation_over_reuse(self):
        # y = x*x + 3x uses x twice; grad = 2x + 3
        x = Tensor([2.0], requires_grad=True)
        with Tape() as tape:
            y = ad.add(ad.mul(x, x), ad.mul(x, 3.0))
            tape.backward(ad.sum_all(y))
        npt.assert_allclose(x.grad, [7.0])

    def test_accumulation_equals_sum_of_single_paths(self):
        rng = np.random.default_rng(0)
        base = rng.uniform(-1, 1, size=4)

        def single(path):
            x = Tensor(base.copy(), requires_grad=True)
            with Tape() as tape:
                y = ad.tanh(x) if path == 0 else ad.sigmoid(x)
                tape.backward(ad.sum_all(y))
            return x.grad

        x = Tensor(base.copy(), requires_grad=True)
        with Tape() as tape:
            y = ad.add(ad.tanh(x), ad.sigmoid(x))
            tape.backward(ad.sum_all(y))
        npt.assert_allclose(x.grad, single(0) + single(1), rtol=0, atol=1e-15)


class TestOtherOps:
    def test_softmax_sums_to_one(self):
        p = ad.softmax(Tensor([1.0, 2.0, -0.5]))
        assert abs(p.data.sum() - 1.0) < 1e-12

    def test_softmax_gradient(self):
        check_grad(ad.softmax, (5,))

    def test_log_exp_roundtrip_gradient(self):
        check_grad(lambda x: ad.log(ad.add(ad.exp(x), 1.0)), (4,))

    def test_clip_passes_gradient_inside(self):
        x = Tensor([0.5, 2.0, -2.0], requires_grad=True)
        with Tape() as tape:
            tape.backward(ad.sum_all(ad.clip(x, -1.0, 1.0)))
        npt.assert_array_equal(x.grad, [1.0, 0.0, 0.0])

    def test_slice_transpose_reshape_gradients(self):
        check_grad(lambda x: ad.slice_rows(x, 1, 3), (4, 2))
        check_grad(ad.transpose, (3, 4))
        check_grad(lambda x: ad.reshape(x, (6,)), (2, 3))
        check_grad(lambda x: ad.broadcast_rows(x, 4), (3,))
        check_grad(lambda a, b: ad.stack_rows([a, b]), (3,), (3,))
        check_grad(lambda a, b: ad.dot(a, b), (4,), (4,))

    def test_pick(self):
        x = Tensor([5.0, 6.0, 7.0], requires_grad=True)
        with Tape() as tape:
            y = ad.pick(x, 1)
            tape.backward(y)
        assert y.item() == 6.0
        npt.assert_array_equal(x.grad, [0.0, 1.0, 0.0])

    def test_tensor_invariants(self):
        t = Tensor(np.arange(6.0).reshape(2, 3))
        assert t.size == 6
        assert int(np.prod(t.shape)) == t.data.size
        r = ad.reshape(t, (3, 2))
        assert r.size == t.size
        with pytest.raises(DimensionError):
            ad.reshape(t, (4, 2))


class TestDeterminism:
    def test_bit_identical_forward_and_grads(self):
        def run():
            rng = np.random.default_rng(1234)
            x = Tensor(rng.uniform(-1, 1, size=(4, 3)), requires_grad=True)
            w = Tensor(rng.uniform(-1, 1, size=(3, 2)), requires_grad=True)
            with Tape() as tape:
                out = ad.tanh(ad.matmul(x, w))
                loss = ad.sum_all(ad.mul(out, out))
                tape.backward(loss)
            return loss.item(), x.grad.copy(), w.grad.copy()

        l1, gx1, gw1 = run()
        l2, gx2, gw2 = run()
        assert l1 == l2
        npt.assert_array_equal(gx1, gx2)
        npt.assert_array_equal(gw1, gw2)


class TestFiniteDifferenceProperty:
    """Every differentiable op, random inputs in [-1, 1], 20 seeds."""

    def test_composite_graph_many_seeds(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            x = rng.uniform(-1, 1, size=(3, 4))
            w = rng.uniform(-1, 1, size=(4, 3))
            xt = Tensor(x.copy(), requires_grad=True)
            wt = Tensor(w.copy(), requires_grad=True)

            def build(a, b):
                z = ad.matmul(a, b)                      # (3, 3)
                z = ad.add(z, ad.broadcast_rows(Tensor([0.1, -0.2, 0.3]), 3))
                z = ad.sigmoid(z)
                pooled, _ = ad.max_over_axis(z, axis=1)
                return ad.concat([pooled, ad.tanh(pooled)])

            with Tape() as tape:
                loss = scalar_loss(build(xt, wt))
                tape.backward(loss)
            num_x = numeric_gradient(lambda a: scalar_loss(build(Tensor(a), Tensor(w))).item(), x.copy())
            num_w = numeric_gradient(lambda b: scalar_loss(build(Tensor(x), Tensor(b))).item(), w.copy())
            assert relative_error(xt.grad, num_x) < GRAD_TOL
            assert relative_error(wt.grad, num_w) < GRAD_TOL
