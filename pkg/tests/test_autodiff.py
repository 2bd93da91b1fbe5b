"""Autodiff engine tests: forward examples, finite-difference gradient
checks, and the hand-derived Adam recurrences."""

import numpy as np
import pytest

from fedradar.autodiff import (
    AdamState,
    Parameter,
    Role,
    Tensor,
    adam_step,
    add,
    avg_pool_2x2,
    backward,
    conv2d,
    global_avg_pool,
    linear,
    relu,
    softmax_cross_entropy,
    zero_grads,
)


def numeric_grad(fn, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of one array."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return np.abs(a - b).max() / denom


def check_grads(build_loss, tensors, tol=1e-4):
    """Compare analytic grads of a scalar loss against finite differences."""
    loss = build_loss()
    backward(loss)
    for t in tensors:
        analytic = t.grad.copy()
        numeric = numeric_grad(lambda: build_loss().item(), t.data)
        assert rel_err(analytic, numeric) < tol, f"gradient mismatch: {rel_err(analytic, numeric):.2e}"


class TestRelu:
    def test_forward_values(self):
        out = relu(Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_all_positive_is_identity(self):
        x = np.array([0.5, 1.0, 3.0])
        np.testing.assert_array_equal(relu(Tensor(x)).data, x)

    def test_gradcheck(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, size=(4, 5))
        x[np.abs(x) < 1e-3] = 0.1  # avoid the kink
        xt = Tensor(x)
        check_grads(lambda: softmax_sum(relu(xt)), [xt])


def softmax_sum(t: Tensor) -> Tensor:
    # weighted-sum loss so gradients are not all ones
    w = Tensor(np.linspace(0.3, 1.7, t.size).reshape(t.shape))
    prod = Tensor(t.data * w.data, parents=(t,))

    def backprop(g):
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g * w.data

    prod._backprop = backprop
    out = Tensor(np.float64(prod.data.sum()), parents=(prod,))

    def backprop_sum(g):
        if prod.grad is None:
            prod.grad = np.zeros_like(prod.data)
        prod.grad += g * np.ones_like(prod.data)

    out._backprop = backprop_sum
    return out


class TestConv2d:
    def test_zero_input_zero_output(self):
        x = Tensor(np.zeros((1, 1, 3, 3)))
        k = Tensor(np.random.default_rng(1).standard_normal((2, 1, 3, 3)))
        b = Tensor(np.zeros(2))
        out = conv2d(x, k, b, stride=1, padding=1)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_identity_kernel(self):
        x = Tensor(np.arange(9.0).reshape(1, 1, 3, 3))
        k = Tensor(np.ones((1, 1, 1, 1)))
        b = Tensor(np.zeros(1))
        out = conv2d(x, k, b, stride=1, padding=0)
        np.testing.assert_array_equal(out.data, x.data)

    def test_known_cross_correlation(self):
        # independent evaluation with explicit loops
        rng = np.random.default_rng(2)
        x = rng.standard_normal((1, 2, 4, 4))
        k = rng.standard_normal((3, 2, 2, 2))
        b = rng.standard_normal(3)
        out = conv2d(Tensor(x), Tensor(k), Tensor(b), stride=1, padding=0).data
        expected = np.zeros((1, 3, 3, 3))
        for o in range(3):
            for i in range(3):
                for j in range(3):
                    expected[0, o, i, j] = np.sum(x[0, :, i : i + 2, j : j + 2] * k[o]) + b[o]
        np.testing.assert_allclose(out, expected, rtol=1e-12)

    def test_shape_errors(self):
        with pytest.raises(ValueError, match="channels"):
            conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))), Tensor(np.zeros(1)))
        with pytest.raises(ValueError, match="non-positive output"):
            conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))), Tensor(np.zeros(1)))

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1)])
    def test_gradcheck_all_inputs(self, stride, padding):
        rng = np.random.default_rng(3)
        xt = Tensor(rng.uniform(-1, 1, size=(1, 2, 5, 5)))
        kt = Tensor(rng.uniform(-1, 1, size=(3, 2, 3, 3)))
        bt = Tensor(rng.uniform(-1, 1, size=3))
        check_grads(lambda: softmax_sum(conv2d(xt, kt, bt, stride, padding)), [xt, kt, bt])


class TestLinear:
    def test_identity_weight(self):
        x = np.random.default_rng(4).standard_normal((3, 4))
        out = linear(Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4)))
        np.testing.assert_array_equal(out.data, x)

    def test_zero_weight_gives_bias(self):
        b = np.array([1.0, -2.0])
        out = linear(Tensor(np.ones((3, 4))), Tensor(np.zeros((2, 4))), Tensor(b))
        np.testing.assert_array_equal(out.data, np.tile(b, (3, 1)))

    def test_gradcheck(self):
        rng = np.random.default_rng(5)
        xt = Tensor(rng.uniform(-1, 1, size=(3, 4)))
        wt = Tensor(rng.uniform(-1, 1, size=(2, 4)))
        bt = Tensor(rng.uniform(-1, 1, size=2))
        check_grads(lambda: softmax_sum(linear(xt, wt, bt)), [xt, wt, bt])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="fan-in"):
            linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))), Tensor(np.zeros(2)))


class TestPooling:
    def test_constant_plane(self):
        x = np.full((1, 2, 3, 3), 7.5)
        np.testing.assert_array_equal(global_avg_pool(Tensor(x)).data, np.full((1, 2), 7.5))

    def test_mean_value(self):
        x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2)
        assert global_avg_pool(Tensor(x)).data[0, 0] == pytest.approx(2.5)

    def test_gradcheck(self):
        xt = Tensor(np.random.default_rng(6).uniform(-1, 1, size=(2, 3, 4, 4)))
        check_grads(lambda: softmax_sum(global_avg_pool(xt)), [xt])

    def test_avg_pool_even(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        out = avg_pool_2x2(Tensor(x)).data
        expected = np.array([[2.5, 4.5], [10.5, 12.5]]).reshape(1, 1, 2, 2)
        np.testing.assert_array_equal(out, expected)

    def test_avg_pool_odd_edge(self):
        x = np.arange(9.0).reshape(1, 1, 3, 3)
        out = avg_pool_2x2(Tensor(x)).data
        assert out.shape == (1, 1, 2, 2)
        assert out[0, 0, 1, 1] == pytest.approx(8.0)  # lone corner cell

    @pytest.mark.parametrize("size", [(4, 4), (5, 5), (5, 4)])
    def test_avg_pool_gradcheck(self, size):
        xt = Tensor(np.random.default_rng(7).uniform(-1, 1, size=(1, 2, *size)))
        check_grads(lambda: softmax_sum(avg_pool_2x2(xt)), [xt])


class TestAdd:
    def test_backward_same_gradient_to_both(self):
        a = Tensor(np.ones((2, 2)))
        b = Tensor(np.ones((2, 2)))
        loss = softmax_sum(add(a, b))
        backward(loss)
        np.testing.assert_array_equal(a.grad, b.grad)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            add(Tensor(np.zeros(2)), Tensor(np.zeros(3)))


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss = softmax_cross_entropy(Tensor([[0.0, 0.0]]), np.array([1]))
        assert loss.item() == pytest.approx(np.log(2.0), rel=1e-12)

    def test_saturated_correct_class(self):
        loss = softmax_cross_entropy(Tensor([[-50.0, 50.0]]), np.array([1]))
        assert 0.0 <= loss.item() <= 1e-20
        assert np.isfinite(loss.item())

    def test_matches_direct_binary_cross_entropy(self):
        # direct evaluation with f = exp(z1) / (exp(z0) + exp(z1))
        rng = np.random.default_rng(8)
        z = rng.uniform(-3, 3, size=(4, 2))
        y = rng.integers(0, 2, size=4)
        f = np.exp(z[:, 1]) / (np.exp(z[:, 0]) + np.exp(z[:, 1]))
        expected = -np.mean(y * np.log(f) + (1 - y) * np.log(1 - f))
        loss = softmax_cross_entropy(Tensor(z), y)
        assert loss.item() == pytest.approx(expected, abs=1e-12)

    def test_gradcheck(self):
        rng = np.random.default_rng(9)
        zt = Tensor(rng.uniform(-1, 1, size=(5, 2)))
        y = rng.integers(0, 2, size=5)
        check_grads(lambda: softmax_cross_entropy(zt, y), [zt])

    def test_label_validation(self):
        with pytest.raises(ValueError, match="labels"):
            softmax_cross_entropy(Tensor([[0.0, 0.0]]), np.array([2]))
        with pytest.raises(ValueError, match="integers"):
            softmax_cross_entropy(Tensor([[0.0, 0.0]]), np.array([0.5]))

    def test_non_negative(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            z = Tensor(rng.uniform(-5, 5, size=(3, 2)))
            y = rng.integers(0, 2, size=3)
            assert softmax_cross_entropy(z, y).item() >= 0.0


class TestDeterminism:
    def test_forward_bit_identical(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((2, 3, 8, 8))
        k = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        a = conv2d(Tensor(x), Tensor(k), Tensor(b), stride=2, padding=1).data
        c = conv2d(Tensor(x), Tensor(k), Tensor(b), stride=2, padding=1).data
        assert np.array_equal(a, c)


class TestAdam:
    def _param(self, value):
        return Parameter(id=0, tensor=Tensor(np.array(value)), role=Role.BASE)

    def test_zero_grad_no_move(self):
        p = self._param([1.0, -2.0])
        p.tensor.grad = np.zeros(2)
        state = AdamState.for_params([p])
        adam_step([p], state)
        np.testing.assert_array_equal(p.tensor.data, [1.0, -2.0])
        assert state.step == 1

    def test_first_step_hand_evaluated(self):
        # t=1: m_hat = g, v_hat = g^2, so the step is -lr * g / (|g| + eps)
        p = self._param([0.0])
        p.tensor.grad = np.array([1.0])
        state = AdamState.for_params([p], learning_rate=0.001)
        adam_step([p], state)
        expected = -0.001 * 1.0 / (1.0 + 1e-8)
        assert p.tensor.data[0] == pytest.approx(expected, rel=1e-12)
        assert p.tensor.data[0] == pytest.approx(-0.001, abs=1e-6)

    def test_two_steps_match_scalar_reimplementation(self):
        # independent scalar replay of the update recurrence
        g = 0.7
        lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
        theta, m, v = 0.3, 0.0, 0.0
        for t in (1, 2):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            theta -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)

        p = self._param([0.3])
        state = AdamState.for_params([p], learning_rate=lr)
        for _ in range(2):
            p.tensor.grad = np.array([g])
            adam_step([p], state)
        assert p.tensor.data[0] == pytest.approx(theta, abs=1e-12)
        assert state.step == 2

    def test_missing_grad_raises(self):
        p = self._param([1.0])
        state = AdamState.for_params([p])
        with pytest.raises(ValueError, match="no gradient"):
            adam_step([p], state)

    def test_grads_left_intact(self):
        p = self._param([1.0])
        p.tensor.grad = np.array([0.5])
        adam_step([p], AdamState.for_params([p]))
        np.testing.assert_array_equal(p.tensor.grad, [0.5])
        zero_grads([p])
        assert p.tensor.grad is None
