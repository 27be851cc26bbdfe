import numpy as np
import pytest

from sgmap import autodiff as ad
from sgmap.errors import ShapeError


def finite_difference(fn, params, h=1e-6):
    """Central finite differences of a scalar-valued fn over each param."""
    grads = []
    for p in params:
        g = np.zeros_like(p.value)
        flat_val = p.value.reshape(-1)
        flat_g = g.reshape(-1)
        for i in range(flat_val.size):
            old = flat_val[i]
            flat_val[i] = old + h
            up = fn().value
            flat_val[i] = old - h
            dn = fn().value
            flat_val[i] = old
            flat_g[i] = (up - dn) / (2 * h)
        grads.append(g)
    return grads


def check_gradients(fn, params, rtol=1e-6):
    out = fn()
    out.backward()
    numeric = finite_difference(fn, params)
    for p, num in zip(params, numeric):
        analytic = p.grad if p.grad is not None else np.zeros_like(p.value)
        denom = np.maximum(np.abs(analytic) + np.abs(num), 1e-8)
        assert np.max(np.abs(analytic - num) / denom) < rtol, (analytic, num)
        p.grad = None


class TestElementwiseOps:
    def test_arithmetic_values(self):
        a = ad.Tensor([1.0, 2.0])
        b = ad.Tensor([3.0, 5.0])
        np.testing.assert_array_equal((a + b).value, [4, 7])
        np.testing.assert_array_equal((a - b).value, [-2, -3])
        np.testing.assert_array_equal((a * b).value, [3, 10])
        np.testing.assert_allclose((a / b).value, [1 / 3, 2 / 5])

    def test_arithmetic_gradients(self):
        rng = np.random.default_rng(0)
        a = ad.parameter(rng.normal(size=4))
        b = ad.parameter(rng.normal(size=4) + 3.0)
        check_gradients(lambda: ad.sum_all(a * b + a / b - b), [a, b])

    def test_broadcast_scalar_gradients(self):
        s = ad.parameter(0.7)
        v = ad.parameter(np.array([1.0, -2.0, 3.0]))
        check_gradients(lambda: ad.sum_all(s * v), [s, v])

    def test_activations(self):
        rng = np.random.default_rng(1)
        x = ad.parameter(rng.normal(size=6))
        check_gradients(lambda: ad.sum_all(ad.sigmoid(x)), [x])
        check_gradients(lambda: ad.sum_all(ad.tanh(x)), [x])
        check_gradients(lambda: ad.sum_all(ad.exp(x) * ad.Tensor(0.01)), [x])
        y = ad.parameter(np.abs(rng.normal(size=6)) + 0.5)
        check_gradients(lambda: ad.sum_all(ad.log(y)), [y])

    def test_relu_subgradient_away_from_kink(self):
        x = ad.parameter(np.array([-2.0, -0.5, 0.5, 2.0]))
        check_gradients(lambda: ad.sum_all(ad.relu(x)), [x])

    def test_sigmoid_extremes_stay_finite(self):
        x = ad.Tensor([-1000.0, 0.0, 1000.0])
        s = ad.sigmoid(x).value
        assert np.all(np.isfinite(s))
        np.testing.assert_allclose(s, [0.0, 0.5, 1.0], atol=1e-12)


class TestMatmul:
    def test_shapes_and_gradients(self):
        rng = np.random.default_rng(2)
        w = ad.parameter(rng.normal(size=(3, 4)))
        x = ad.parameter(rng.normal(size=4))
        check_gradients(lambda: ad.sum_all(ad.matmul(w, x)), [w, x])

    def test_vector_dot(self):
        rng = np.random.default_rng(3)
        a = ad.parameter(rng.normal(size=5))
        b = ad.parameter(rng.normal(size=5))
        check_gradients(lambda: ad.matmul(a, b), [a, b])

    def test_matrix_matrix(self):
        rng = np.random.default_rng(4)
        a = ad.parameter(rng.normal(size=(4, 3)))
        b = ad.parameter(rng.normal(size=(3, 2)))
        check_gradients(lambda: ad.sum_all(ad.matmul(a, b)), [a, b])


class TestReductionsAndStructure:
    def test_softmax_normalizes_and_differentiates(self):
        rng = np.random.default_rng(5)
        x = ad.parameter(rng.normal(size=7))
        s = ad.softmax(x)
        assert s.value.sum() == pytest.approx(1.0, abs=1e-12)
        weights = ad.Tensor(rng.normal(size=7))
        check_gradients(lambda: ad.sum_all(ad.softmax(x) * weights), [x])

    def test_log_softmax_matches_log_of_softmax(self):
        rng = np.random.default_rng(6)
        x = ad.parameter(rng.normal(size=5) * 3)
        np.testing.assert_allclose(
            ad.log_softmax(x).value, np.log(ad.softmax(x).value), atol=1e-12
        )
        check_gradients(lambda: ad.gather(ad.log_softmax(x), 2), [x])

    def test_concat_routing(self):
        rng = np.random.default_rng(7)
        a = ad.parameter(rng.normal(size=3))
        b = ad.parameter(rng.normal(size=2))
        weights = ad.Tensor(rng.normal(size=5))
        check_gradients(lambda: ad.sum_all(ad.concat([a, b]) * weights), [a, b])

    def test_stack_max_picks_first_on_ties(self):
        a = ad.parameter(np.array([1.0, 5.0]))
        b = ad.parameter(np.array([1.0, 2.0]))
        out = ad.stack_max([a, b])
        np.testing.assert_array_equal(out.value, [1.0, 5.0])
        ad.sum_all(out).backward()
        np.testing.assert_array_equal(a.grad, [1.0, 1.0])
        np.testing.assert_array_equal(b.grad, [0.0, 0.0])

    def test_stack_max_gradients(self):
        rng = np.random.default_rng(8)
        parts = [ad.parameter(rng.normal(size=4)) for _ in range(3)]
        check_gradients(lambda: ad.sum_all(ad.stack_max(parts)), parts)

    def test_max_axis0(self):
        rng = np.random.default_rng(9)
        m = ad.parameter(rng.normal(size=(6, 3)))
        out = ad.max_axis0(m)
        np.testing.assert_array_equal(out.value, m.value.max(axis=0))
        check_gradients(lambda: ad.sum_all(ad.max_axis0(m)), [m])

    def test_mean_and_gather(self):
        rng = np.random.default_rng(10)
        x = ad.parameter(rng.normal(size=6))
        check_gradients(lambda: ad.mean_all(x), [x])
        check_gradients(lambda: ad.gather(x, 3), [x])

    def test_reused_node_accumulates(self):
        x = ad.parameter(np.array([2.0]))
        y = x * x + x * ad.Tensor([3.0])
        ad.sum_all(y).backward()
        np.testing.assert_allclose(x.grad, [7.0])  # d(x^2 + 3x)/dx at 2

    def test_backward_requires_scalar(self):
        x = ad.parameter(np.ones(3))
        with pytest.raises(ShapeError):
            (x * x).backward()


class TestComposite:
    def test_deep_chain_gradcheck(self):
        rng = np.random.default_rng(12)
        w1 = ad.parameter(rng.normal(size=(5, 4)) * 0.5)
        b1 = ad.parameter(rng.normal(size=5) * 0.1)
        w2 = ad.parameter(rng.normal(size=(3, 5)) * 0.5)
        x = ad.Tensor(rng.normal(size=4))

        def fn():
            h = ad.tanh(ad.matmul(w1, x) + b1)
            return -ad.gather(ad.log_softmax(ad.matmul(w2, h)), 1)

        check_gradients(fn, [w1, b1, w2], rtol=1e-5)
