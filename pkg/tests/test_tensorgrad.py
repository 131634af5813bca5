"""Unit tests for the reverse-mode autodiff engine."""

import numpy as np
import pytest

from signl import tensorgrad as tg


def _fd(f, x, h=1e-5):
    """Central finite differences of a scalar function of one array."""
    g = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float(f().data)
        flat[i] = orig - h
        dn = float(f().data)
        flat[i] = orig
        gflat[i] = (up - dn) / (2 * h)
    return g


def _check_grad(build_loss, params, tol=1e-4):
    for p in params:
        p.grad = None
    with tg.Tape() as tape:
        loss = build_loss()
        tape.backward(loss)
    for p in params:
        fd = _fd(build_loss, p)
        denom = max(np.linalg.norm(fd), 1e-12)
        rel = np.linalg.norm(p.grad - fd) / denom
        assert rel <= tol, f"gradient mismatch: rel err {rel}"


def _t(arr, grad=True):
    return tg.Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


class TestPrimitives:
    def test_matmul_identity(self):
        x = _t([[1.0, 2.0], [3.0, 4.0]], grad=False)
        eye = _t(np.eye(2), grad=False)
        with tg.Tape():
            out = tg.matmul(eye, x)
        assert np.array_equal(out.data, x.data)

    def test_matmul_hand_arithmetic(self):
        a = _t([[1.0, 2.0], [3.0, 4.0]], grad=False)
        b = _t([[1.0], [1.0]], grad=False)
        with tg.Tape():
            out = tg.matmul(a, b)
        assert np.array_equal(out.data, [[3.0], [7.0]])

    def test_matmul_shape_error(self):
        a = _t(np.ones((2, 3)), grad=False)
        b = _t(np.ones((2, 3)), grad=False)
        with tg.Tape(), pytest.raises(tg.ShapeError):
            tg.matmul(a, b)

    def test_matmul_gradient(self, rng):
        a = _t(rng.standard_normal((3, 4)))
        b = _t(rng.standard_normal((4, 2)))
        _check_grad(lambda: tg.tsum(tg.matmul(a, b)), [a, b])

    def test_relu_sign_cases(self):
        x = _t([[-1.0, 0.0, 2.0]], grad=False)
        with tg.Tape():
            out = tg.relu(x)
        assert np.array_equal(out.data, [[0.0, 0.0, 2.0]])

    def test_relu_gradient_away_from_kink(self):
        x = _t([[-1.0, 2.0]])
        with tg.Tape() as tape:
            loss = tg.tsum(tg.relu(x))
            tape.backward(loss)
        assert np.array_equal(x.grad, [[0.0, 1.0]])

    def test_relu_zero_gradient_at_zero(self):
        x = _t([[0.0]])
        with tg.Tape() as tape:
            tape.backward(tg.tsum(tg.relu(x)))
        assert x.grad[0, 0] == 0.0

    def test_add_identity(self, rng):
        x = _t(rng.standard_normal((2, 3)), grad=False)
        z = _t(np.zeros((2, 3)), grad=False)
        with tg.Tape():
            out = tg.add(x, z)
        assert np.array_equal(out.data, x.data)

    def test_add_shape_error(self):
        with tg.Tape(), pytest.raises(tg.ShapeError):
            tg.add(_t(np.ones((2, 2)), grad=False), _t(np.ones((2, 3)), grad=False))

    def test_mul_analytic_gradient(self):
        x = _t([[1.0, 2.0]])
        with tg.Tape() as tape:
            tape.backward(tg.tsum(tg.mul(x, x)))
        assert np.allclose(x.grad, [[2.0, 4.0]])

    def test_scale_sqrt_reciprocal_gradients(self, rng):
        x = _t(rng.uniform(0.5, 2.0, (2, 3)))
        _check_grad(lambda: tg.tsum(tg.scale(x, 3.0)), [x])
        _check_grad(lambda: tg.tsum(tg.sqrt(x)), [x])
        _check_grad(lambda: tg.tsum(tg.reciprocal(x)), [x])

    def test_tsum_axis_gradients(self, rng):
        x = _t(rng.standard_normal((3, 4)))
        _check_grad(lambda: tg.tsum(tg.mul(tg.tsum(x, axis=0), tg.tsum(x, axis=0))), [x])
        _check_grad(lambda: tg.tsum(tg.mul(tg.tsum(x, axis=1), tg.tsum(x, axis=1))), [x])

    def test_reshape_gradient(self, rng):
        x = _t(rng.standard_normal((2, 6)))
        _check_grad(lambda: tg.tsum(tg.mul(tg.reshape(x, (3, 4)), tg.reshape(x, (3, 4)))), [x])

    def test_log_softmax_gradient(self, rng):
        x = _t(rng.standard_normal((4, 2)))
        onehot = np.zeros((4, 2))
        onehot[np.arange(4), [0, 1, 1, 0]] = 1.0
        oh = _t(onehot, grad=False)
        _check_grad(lambda: tg.scale(tg.tsum(tg.mul(oh, tg.log_softmax(x))), -1.0), [x])


class TestConcatSplit:
    def test_concat_axis0(self):
        a = _t([[1.0], [2.0]], grad=False)
        b = _t([[3.0]], grad=False)
        with tg.Tape():
            out = tg.concat([a, b], axis=0)
        assert np.array_equal(out.data, [[1.0], [2.0], [3.0]])

    def test_split_concat_roundtrip(self, rng):
        x = _t(rng.standard_normal((4, 6)), grad=False)
        with tg.Tape():
            parts = tg.split(x, [2, 3, 1], axis=1)
            back = tg.concat(parts, axis=1)
        assert np.array_equal(back.data, x.data)

    def test_concat_mismatch(self):
        with tg.Tape(), pytest.raises(tg.ShapeError):
            tg.concat([_t(np.ones((2, 2)), grad=False),
                       _t(np.ones((3, 3)), grad=False)], axis=0)

    def test_split_bad_counts(self):
        with tg.Tape(), pytest.raises(tg.ShapeError):
            tg.split(_t(np.ones((2, 5)), grad=False), [2, 2], axis=1)

    def test_gradient_routing(self, rng):
        x = _t(rng.standard_normal((4, 6)))
        w = _t(rng.standard_normal((6, 6)), grad=False)

        def loss():
            parts = tg.split(x, [2, 2, 2], axis=1)
            y = tg.concat([parts[2], parts[0], parts[1]], axis=1)
            return tg.tsum(tg.mul(tg.matmul(y, w), tg.matmul(y, w)))

        _check_grad(loss, [x])


class TestBackward:
    def test_sum_gradient_is_ones(self, rng):
        x = _t(rng.standard_normal((3, 5)))
        with tg.Tape() as tape:
            tape.backward(tg.tsum(x))
        assert np.array_equal(x.grad, np.ones((3, 5)))

    def test_non_scalar_loss_rejected(self):
        x = _t(np.ones((2, 2)))
        with tg.Tape() as tape:
            y = tg.add(x, x)
            with pytest.raises(tg.ContractError):
                tape.backward(y)

    def test_accumulation_without_reset(self, rng):
        x = _t(rng.standard_normal((2, 2)))
        with tg.Tape() as tape:
            tape.backward(tg.tsum(x))
        first = x.grad.copy()
        with tg.Tape() as tape:
            tape.backward(tg.tsum(x))
        assert np.array_equal(x.grad, 2 * first)

    def test_deterministic_gradients(self, rng):
        data = rng.standard_normal((4, 4))
        grads = []
        for _ in range(2):
            x = _t(data.copy())
            w = _t(np.ones((4, 4)), grad=False)
            with tg.Tape() as tape:
                tape.backward(tg.tsum(tg.relu(tg.matmul(x, w))))
            grads.append(x.grad.copy())
        assert np.array_equal(grads[0], grads[1])

    def test_composed_network_gradient(self, rng):
        x = _t(rng.standard_normal((5, 3)))
        w1 = _t(rng.standard_normal((3, 4)))
        b1 = _t(rng.standard_normal((1, 4)))
        w2 = _t(rng.standard_normal((4, 2)))

        def loss():
            h = tg.relu(tg.affine(x, w1, b1))
            return tg.tsum(tg.mul(tg.matmul(h, w2), tg.matmul(h, w2)))

        _check_grad(loss, [x, w1, b1, w2])


class TestTensorValidation:
    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            tg.Tensor(np.array([[np.nan]]))

    def test_shape_dtype_views(self):
        t = tg.Tensor(np.zeros((2, 3), dtype=np.float32))
        assert t.shape == (2, 3)
        assert t.dtype == np.float32


class TestAdam:
    def _store_with(self, value):
        store = tg.ParamStore()
        store.add("w", tg.Tensor(np.array([[value]], dtype=np.float64),
                                 requires_grad=True))
        return store

    def test_zero_gradient_keeps_parameter(self):
        store = self._store_with(1.5)
        store["w"].grad = np.zeros((1, 1))
        tg.adam_step(store, lr=0.1)
        assert store["w"].data[0, 0] == 1.5

    def test_first_step_moves_by_lr(self):
        store = self._store_with(0.0)
        store["w"].grad = np.ones((1, 1))
        tg.adam_step(store, lr=0.1)
        # bias-corrected first step is -lr * g / (|g| + eps) ~ -lr
        assert abs(store["w"].data[0, 0] + 0.1) < 1e-6

    def test_missing_grad_rejected(self):
        store = self._store_with(0.0)
        with pytest.raises(tg.ContractError):
            tg.adam_step(store, lr=0.1)

    def test_descent_on_quadratic(self):
        store = self._store_with(0.0)
        values = []
        for _ in range(10):
            with tg.Tape() as tape:
                w = store["w"]
                diff = tg.add(w, tg.Tensor._wrap(np.array([[-3.0]]), False))
                loss = tg.tsum(tg.mul(diff, diff))
                values.append(float(loss.data))
                tape.backward(loss)
            tg.adam_step(store, lr=0.1)
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_grads_cleared_after_step(self):
        store = self._store_with(0.0)
        store["w"].grad = np.ones((1, 1))
        tg.adam_step(store, lr=0.1)
        assert store["w"].grad is None
