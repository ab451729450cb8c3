import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from contrnp import autodiff as ad
from contrnp.autodiff import DomainError, ShapeMismatchError, Tensor

from conftest import check_grads, leaf


class TestForwardValues:
    def test_softplus_at_zero(self):
        assert ad.softplus(Tensor(0.0)).item() == pytest.approx(np.log(2.0))

    def test_softplus_stable_for_large_inputs(self):
        out = ad.softplus(Tensor([-1000.0, 1000.0]))
        assert np.all(np.isfinite(out.data))
        assert out.data[1] == pytest.approx(1000.0)

    def test_relu_negative(self):
        assert ad.relu(Tensor(-3.0)).item() == 0.0

    def test_conv1d_hand_example(self):
        x = Tensor(np.ones((1, 1, 5)))
        k = Tensor(np.ones((1, 1, 3)))
        out = ad.conv1d(x, k, padding=1)
        np.testing.assert_array_equal(out.data.ravel(), [2, 3, 3, 3, 2])

    def test_matmul_matches_numpy(self, rng):
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 5))
        np.testing.assert_allclose((Tensor(a) @ Tensor(b)).data, a @ b)

    def test_concat_and_mean(self, rng):
        a, b = rng.standard_normal((2, 3)), rng.standard_normal((4, 3))
        out = ad.concat([Tensor(a), Tensor(b)], axis=0)
        np.testing.assert_array_equal(out.data, np.concatenate([a, b]))
        assert ad.mean_axis(out).item() == pytest.approx(
            np.concatenate([a, b]).mean())

    def test_forward_determinism(self, rng):
        x = rng.standard_normal((4, 6))
        r1 = ad.softplus(ad.exp(Tensor(x)) @ Tensor(x.T)).data
        r2 = ad.softplus(ad.exp(Tensor(x)) @ Tensor(x.T)).data
        np.testing.assert_array_equal(r1, r2)


class TestErrors:
    def test_matmul_shape_mismatch_names_both(self):
        with pytest.raises(ShapeMismatchError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_add_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            Tensor(np.ones((2, 3))) + Tensor(np.ones((4, 5)))

    def test_log_domain_error(self):
        with pytest.raises(DomainError):
            ad.log(Tensor([1.0, -1.0]))

    def test_conv1d_kernel_too_wide(self):
        with pytest.raises(ShapeMismatchError):
            ad.conv1d(Tensor(np.ones((1, 1, 3))), Tensor(np.ones((1, 1, 8))))

    def test_backward_non_scalar(self):
        x = leaf(np.random.default_rng(0), 3)
        with pytest.raises(ShapeMismatchError):
            (x * x).backward()

    def test_backward_without_tape(self):
        with pytest.raises(RuntimeError, match="tape"):
            Tensor(1.0).backward()

    def test_backward_twice_is_error(self, rng):
        x = leaf(rng, 3)
        loss = ad.sum_axis(x * x)
        loss.backward()
        with pytest.raises(RuntimeError, match="already"):
            loss.backward()


class TestBackwardValues:
    def test_sum_of_squares(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = ad.sum_axis(x * x)
        x.zero_grad()
        loss.backward()
        np.testing.assert_allclose(x.grad, [2.0, 4.0])

    def test_constant_loss_leaves_grads_zero(self, rng):
        x = leaf(rng, 4)
        x.zero_grad()
        loss = ad.sum_axis(x * x) * 0.0
        loss.backward()
        np.testing.assert_array_equal(x.grad, np.zeros(4))

    def test_unreachable_leaf_keeps_zero_grad(self, rng):
        x, y = leaf(rng, 3), leaf(rng, 3)
        x.zero_grad()
        y.zero_grad()
        ad.sum_axis(x * x).backward()
        np.testing.assert_array_equal(y.grad, np.zeros(3))

    def test_grad_accumulates_across_uses(self, rng):
        x = leaf(rng, 2)
        x.zero_grad()
        loss = ad.sum_axis(x * x + x * x)
        loss.backward()
        np.testing.assert_allclose(x.grad, 4 * x.data)


class TestGradientChecks:
    """Finite-difference oracle over every differentiable op."""

    def test_elementwise_ops(self, rng):
        x = leaf(rng, 3, 4)
        y = leaf(rng, 3, 4)
        for build in [
            lambda: ad.sum_axis(x + y),
            lambda: ad.sum_axis(x - y),
            lambda: ad.sum_axis(x * y),
            lambda: ad.sum_axis(x / (y * y + 1.0)),
            lambda: ad.sum_axis(ad.relu(x) * y),
            lambda: ad.sum_axis(ad.softplus(x)),
            lambda: ad.sum_axis(ad.exp(x * 0.3)),
            lambda: ad.sum_axis(ad.log(ad.softplus(x) + 0.1)),
            lambda: ad.sum_axis(ad.sqrt(x * x + 1.0)),
            lambda: ad.sum_axis(-x),
        ]:
            check_grads(build, [x, y])

    def test_broadcasting_ops(self, rng):
        x = leaf(rng, 3, 4)
        row = leaf(rng, 4)
        col = leaf(rng, 3, 1)
        scalar = leaf(rng)
        check_grads(lambda: ad.sum_axis((x + row) * col / (scalar * scalar + 1.0)),
                    [x, row, col, scalar])
        check_grads(lambda: ad.sum_axis(ad.broadcast_to(row, (3, 4)) * x),
                    [row, x])

    def test_reductions_and_structure(self, rng):
        x = leaf(rng, 3, 4)
        y = leaf(rng, 2, 4)
        for build in [
            lambda: ad.sum_axis(ad.mean_axis(x, axis=0) * 2.0),
            lambda: ad.sum_axis(ad.sum_axis(x, axis=1, keepdims=True)),
            lambda: ad.mean_axis(ad.concat([x, y], axis=0)),
            lambda: ad.l2_norm(x),
            lambda: ad.sum_axis(ad.transpose(x) @ x),
            lambda: ad.sum_axis(x.reshape(12) * 0.5),
        ]:
            check_grads(build, [x, y])

    def test_matmul(self, rng):
        a, b = leaf(rng, 3, 4), leaf(rng, 4, 2)
        check_grads(lambda: ad.sum_axis(ad.exp((a @ b) * 0.2)), [a, b])

    @pytest.mark.parametrize("padding", [0, 1, 2])
    def test_conv1d(self, rng, padding):
        x = leaf(rng, 2, 3, 10)
        k = leaf(rng, 4, 3, 3)
        check_grads(lambda: ad.sum_axis(ad.relu(ad.conv1d(x, k, padding))),
                    [x, k])

    def test_randomized_composite_graphs(self):
        # >= 100 random shape/seed combinations across composed ops
        for seed in range(100):
            r = np.random.default_rng(seed)
            n, m = int(r.integers(1, 5)), int(r.integers(1, 5))
            x = Tensor(r.standard_normal((n, m)), requires_grad=True)
            w = Tensor(r.standard_normal((m, 2)), requires_grad=True)

            def build():
                h = ad.softplus(x @ w)
                return ad.mean_axis(h * h + ad.exp(h * -0.5))

            check_grads(build, [x, w])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 10_000))
def test_hypothesis_gradcheck_chain(n, m, seed):
    r = np.random.default_rng(seed)
    x = Tensor(r.standard_normal((n, m)), requires_grad=True)

    def build():
        return ad.mean_axis(ad.softplus(x) * ad.exp(x * 0.1))

    check_grads(build, [x])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_hypothesis_forward_finite(seed):
    r = np.random.default_rng(seed)
    x = Tensor(r.standard_normal((3, 5)) * 5.0)
    out = ad.softplus(ad.relu(x) - ad.exp(x * -1.0))
    assert np.all(np.isfinite(out.data))
