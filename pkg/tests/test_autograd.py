import json

import numpy as np
import pytest
import scipy.sparse as sp

from gradcheck import numeric_grad, relative_error
from ximp.autograd import (
    ParameterStore,
    Tensor,
    absolute,
    adam_step,
    add,
    add_n,
    checkpoint_dict,
    concat_cols,
    constant,
    dropout,
    dumps_checkpoint,
    matmul,
    mean_all,
    mean_rows,
    parameter,
    parameters_from_checkpoint,
    relu,
    row_select,
    scale,
    scatter_add,
    sub,
    sum_all,
)
from ximp.errors import MissingGradient, NonFiniteValue, ShapeMismatch


def check_op(build, *shapes, seed=0, h=1e-6, tol=1e-6):
    """Gradcheck a random bilinear functional of ``build`` applied to fresh parameters."""
    rng = np.random.default_rng(seed)
    params = [parameter(rng.normal(size=s)) for s in shapes]
    rows, cols = build(*params).shape
    left = constant(rng.normal(size=(1, rows)))
    right = constant(rng.normal(size=(cols, 1)))

    def loss():
        return sum_all(matmul(matmul(left, build(*params)), right))

    loss().backward()
    for p in params:
        numeric = numeric_grad(lambda: float(loss().value[0, 0]), p.value, h)
        assert relative_error(p.grad, numeric) < tol


class TestOps:
    def test_relu_backward(self):
        x = parameter([[-1.0, 2.0]])
        sum_all(relu(x)).backward()
        assert np.array_equal(x.grad, [[0.0, 1.0]])

    def test_matmul_gradcheck(self):
        check_op(lambda a, b: matmul(a, b), (2, 3), (3, 2))

    def test_matmul_sparse_left(self):
        m = sp.csr_matrix(np.array([[1.0, 0.0, 2.0], [0.0, 3.0, 0.0]]))
        check_op(lambda b: matmul(m, b), (3, 2))

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            matmul(constant(np.ones((2, 3))), constant(np.ones((2, 3))))

    def test_mean_rows_backward(self):
        x = parameter(np.arange(12.0).reshape(4, 3))
        up = np.array([[1.0, 2.0, 3.0]])
        mean_rows(x).backward(up)
        assert np.allclose(x.grad, np.tile(up / 4, (4, 1)))

    @pytest.mark.parametrize(
        "build,shapes",
        [
            (lambda a, b: add(a, b), [(3, 2), (3, 2)]),
            (lambda a, b: add(a, b), [(3, 2), (1, 2)]),
            (lambda a, b: sub(a, b), [(2, 2), (2, 2)]),
            (lambda a: scale(a, 2.5), [(2, 3)]),
            (lambda a, s: scale(a, s, offset=1.0), [(2, 3), (1, 1)]),
            (lambda a: mean_rows(a), [(4, 3)]),
            (lambda a: row_select(a, [2, 0, 2]), [(3, 2)]),
            (lambda a: scatter_add(a, np.array([1, 1, 0, 3]), 4), [(4, 2)]),
            (lambda a, b: concat_cols([a, b]), [(2, 1), (2, 3)]),
            (lambda a, b, c: add_n([a, b, c]), [(2, 2), (2, 2), (2, 2)]),
        ],
    )
    def test_gradcheck(self, build, shapes):
        check_op(build, *shapes)

    def test_absolute_and_relu_away_from_kink(self):
        check_op(lambda a: absolute(add(a, constant(np.full((2, 2), 5.0)))), (2, 2))
        check_op(lambda a: relu(add(a, constant(np.full((2, 2), 5.0)))), (2, 2))

    def test_dropout_inverted_scaling(self):
        x = parameter(np.ones((2, 2)))
        mask = np.array([[True, False], [True, True]])
        y = dropout(x, mask, 0.5)
        assert np.array_equal(y.value, [[2.0, 0.0], [2.0, 2.0]])
        sum_all(y).backward()
        assert np.array_equal(x.grad, [[2.0, 0.0], [2.0, 2.0]])

    def test_non_finite_trips(self):
        with np.errstate(over="ignore"), pytest.raises(NonFiniteValue):
            scale(constant([[1e308]]), 1e10)

    def test_gradients_accumulate_over_shared_use(self):
        x = parameter([[3.0]])
        sum_all(add(x, x)).backward()
        assert x.grad[0, 0] == 2.0

    def test_tape_replay_bit_identical(self):
        def run():
            rng = np.random.default_rng(7)
            a, b = parameter(rng.normal(size=(5, 4))), parameter(rng.normal(size=(4, 3)))
            loss = mean_all(relu(matmul(a, b)))
            loss.backward()
            return loss.value.tobytes(), a.grad.tobytes()

        assert run() == run()


class TestAdam:
    def _store(self, value, grad):
        store = ParameterStore()
        store.add("w", np.array([[value]]))
        store["w"].grad = np.array([[grad]])
        return store

    def test_zero_gradient_zero_decay_unchanged(self):
        store = self._store(1.5, 0.0)
        adam_step(store, lr=1e-3, weight_decay=0.0)
        assert store["w"].value[0, 0] == 1.5

    def test_single_step_reference(self):
        store = self._store(1.0, 1.0)
        adam_step(store, lr=1e-3, weight_decay=0.0)
        # m_hat = 1, v_hat = 1 after bias correction
        assert store["w"].value[0, 0] == pytest.approx(1.0 - 1e-3 / (1.0 + 1e-8), abs=1e-15)

    def test_two_steps_moment_recurrence(self):
        store = self._store(0.0, 0.5)
        adam_step(store, lr=1e-2, weight_decay=0.0)
        adam_step(store, lr=1e-2, weight_decay=0.0)
        g = 0.5
        m = 0.9 * (0.1 * g) + 0.1 * g
        v = 0.999 * (0.001 * g * g) + 0.001 * g * g
        assert store.first_moment["w"][0, 0] == pytest.approx(m, rel=1e-15)
        assert store.second_moment["w"][0, 0] == pytest.approx(v, rel=1e-15)
        assert store.step_count == 2

    def test_decoupled_weight_decay(self):
        store = self._store(2.0, 0.0)
        adam_step(store, lr=0.1, weight_decay=1e-4)
        assert store["w"].value[0, 0] == pytest.approx(2.0 - 0.1 * 1e-4 * 2.0, rel=1e-15)

    def test_missing_gradient(self):
        store = ParameterStore()
        store.add("a", np.ones((1, 1)))
        with pytest.raises(MissingGradient):
            adam_step(store, 1e-3)


class TestParameterStore:
    def test_sorted_iteration(self):
        store = ParameterStore()
        for name in ("b", "a", "c"):
            store.add(name, np.zeros((1, 1)))
        assert store.names() == ["a", "b", "c"]

    def test_duplicate_rejected(self):
        store = ParameterStore()
        store.add("a", np.zeros((1, 1)))
        with pytest.raises(KeyError):
            store.add("a", np.zeros((1, 1)))

    def test_checkpoint_round_trip(self):
        store = ParameterStore()
        store.add("w", np.arange(6.0).reshape(2, 3))
        text = dumps_checkpoint(checkpoint_dict(store, {"hidden": 3}))
        ckpt = json.loads(text)
        assert list(ckpt) == sorted(ckpt)
        assert ckpt["parameters"]["w"]["shape"] == [2, 3]
        assert np.array_equal(parameters_from_checkpoint(ckpt)["w"], store["w"].value)

    def test_load_rejects_wrong_shape(self):
        store = ParameterStore()
        store.add("w", np.zeros((2, 2)))
        with pytest.raises(ShapeMismatch):
            store.load_state_dict({"w": np.zeros((3, 2))})


def test_tensor_is_two_dimensional():
    assert Tensor([1.0, 2.0]).shape == (1, 2)
