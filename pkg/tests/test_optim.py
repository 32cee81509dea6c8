import numpy as np
import pytest

from app.core.errors import OccReidError
from app.engine import ops
from app.engine.optim import Adam, AdamState, adam_step
from app.engine.tensor import Tensor


def test_adam_step_matches_the_bias_corrected_update():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True, dtype=np.float64)
    state = AdamState.for_param(p, learning_rate=0.1)
    grads = [np.array([0.5, -1.0]), np.array([0.25, 2.0])]
    m = v = np.zeros(2)
    expected = p.data.copy()
    for t, g in enumerate(grads, start=1):
        p.grad = g
        adam_step(p, state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        expected -= 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p.data, expected, rtol=1e-12)
    assert state.step_count == 2


def test_first_step_moves_by_learning_rate_against_the_gradient_sign():
    p = Tensor(np.array([0.0, 0.0]), requires_grad=True, dtype=np.float64)
    state = AdamState.for_param(p, learning_rate=0.01)
    p.grad = np.array([3.0, -0.2])
    adam_step(p, state)
    np.testing.assert_allclose(p.data, [-0.01, 0.01], rtol=1e-6)


def test_adam_step_requires_a_gradient():
    p = Tensor(np.zeros(2), requires_grad=True, dtype=np.float64)
    with pytest.raises(OccReidError):
        adam_step(p, AdamState.for_param(p))


def test_adam_minimises_a_simple_objective():
    target = np.array([0.3, -0.7, 1.2])
    p = Tensor(np.zeros(3), requires_grad=True, dtype=np.float64)
    optimizer = Adam([("p", p)], learning_rate=0.05)
    for _ in range(400):
        optimizer.zero_grad()
        ops.mean_all(ops.square(ops.sub(p, Tensor(target, dtype=np.float64)))).backward()
        optimizer.step()
    np.testing.assert_allclose(p.data, target, atol=0.02)


def test_state_tables_restore_an_identical_optimizer():
    rng = np.random.default_rng(0)
    p = Tensor(rng.normal(size=(2, 2)), requires_grad=True, dtype=np.float64)
    optimizer = Adam([("w", p)], learning_rate=0.02, beta1=0.5)
    for _ in range(3):
        p.grad = rng.normal(size=(2, 2))
        optimizer.step()
    tensors, scalars = optimizer.state_tables()
    assert set(tensors) == {"m/w", "v/w"}
    assert scalars["step_counts"] == {"w": 3}

    q = Tensor(p.data.copy(), requires_grad=True, dtype=np.float64)
    restored = Adam([("w", q)], learning_rate=0.02, beta1=0.5)
    restored.load_state_tables(tensors, scalars)
    grad = rng.normal(size=(2, 2))
    p.grad, q.grad = grad, grad.copy()
    optimizer.step()
    restored.step()
    np.testing.assert_array_equal(p.data, q.data)


def test_parameters_without_gradient_still_advance_the_step_count():
    p = Tensor(np.ones(2), requires_grad=True, dtype=np.float64)
    optimizer = Adam([("p", p)])
    optimizer.step()
    assert optimizer.states["p"].step_count == 1
    np.testing.assert_array_equal(p.data, np.ones(2))
