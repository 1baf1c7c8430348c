import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pidheal import dynamics as dyn
from pidheal.analysis import decompose_perturbation
from pidheal.analytic import AnalyticController, GainSchedule
from pidheal.dynamics import LinearStack


def identity_stack(d, T):
    return LinearStack(tuple(np.eye(d) for _ in range(T)), orthogonal=True)


def test_random_orthogonal_one_dimensional():
    np.testing.assert_array_equal(dyn.random_orthogonal(1, 3), [[1.0]])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(0, 2**32 - 1))
def test_random_orthogonal_is_orthogonal(d, seed):
    q = dyn.random_orthogonal(d, seed)
    assert np.max(np.abs(q.T @ q - np.eye(d))) <= 1e-12
    assert abs(abs(np.linalg.det(q)) - 1.0) <= 1e-10


def test_random_orthogonal_deterministic():
    assert dyn.random_orthogonal(8, 42).tobytes() == dyn.random_orthogonal(8, 42).tobytes()


def test_random_orthogonal_rejects_zero_dimension():
    with pytest.raises(ValueError):
        dyn.random_orthogonal(0, 1)


def test_stack_validation():
    with pytest.raises(ValueError, match="layer 1"):
        LinearStack((np.eye(3), 2 * np.eye(3)), orthogonal=True)
    with pytest.raises(ValueError):
        LinearStack((np.eye(3), np.eye(2)))
    with pytest.raises(ValueError):
        LinearStack(())


def test_spawn_is_reproducible():
    a = [g.standard_normal(3) for g in dyn.spawn(5, 2)]
    b = [g.standard_normal(3) for g in dyn.spawn(5, 2)]
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a[0], a[1])


def test_forward_identity_zero_control_is_constant():
    x0 = np.array([1.0, -2.0, 0.5])
    traj = dyn.forward(identity_stack(3, 4), x0)
    np.testing.assert_array_equal(traj.states, np.tile(x0, (5, 1)))
    assert not np.any(traj.controls)


def test_zero_controller_exact_zero():
    assert not np.any(dyn.zero_controller(0, np.ones((1, 4))))


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 12), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_orthogonal_stack_preserves_norm(d, T, seed):
    stack = dyn.random_orthogonal_stack(d, T, seed)
    x0 = np.random.default_rng(seed).standard_normal(d)
    norms = np.linalg.norm(dyn.forward(stack, x0).states, axis=1)
    np.testing.assert_allclose(norms, np.linalg.norm(x0), rtol=1e-10)


def test_zero_control_is_layer_product():
    stack = dyn.random_orthogonal_stack(5, 3, 1)
    x0 = np.arange(5.0)
    product = stack[2] @ stack[1] @ stack[0]
    np.testing.assert_allclose(dyn.forward(stack, x0).states[-1], product @ x0, atol=1e-12)


def test_forward_update_rule_holds_for_any_controller():
    rng = np.random.default_rng(2)
    stack = LinearStack(tuple(rng.standard_normal((4, 4)) for _ in range(3)))
    ctrl = dyn.OpenLoopController(rng.standard_normal((3, 4)))
    traj = dyn.forward(stack, rng.standard_normal(4), ctrl)
    for t in range(3):
        np.testing.assert_allclose(traj.states[t + 1], stack[t] @ (traj.states[t] + traj.controls[t]), atol=1e-12)


def test_forward_batch_matches_single():
    stack = dyn.random_orthogonal_stack(4, 3, 3)
    xs = np.random.default_rng(3).standard_normal((5, 4))
    batch = dyn.forward(stack, xs).states
    for i in range(5):
        np.testing.assert_allclose(batch[:, i], dyn.forward(stack, xs[i]).states, atol=1e-14)


def test_forward_rejects_bad_controller_shape():
    with pytest.raises(RuntimeError, match="layer 0"):
        dyn.forward(identity_stack(3, 2), np.zeros(3), lambda t, h: np.zeros(2))
    with pytest.raises(ValueError):
        dyn.forward(identity_stack(3, 2), np.zeros(4))


def test_analytic_c0_removes_complement_in_one_step():
    rng = np.random.default_rng(4)
    d, r = 6, 2
    stack = dyn.random_orthogonal_stack(d, 3, rng)
    v0 = dyn.random_basis(d, r, rng)
    a = rng.standard_normal(r)
    z = dyn.make_perturbation(v0, 0.0, 1.3, rng)
    gains = GainSchedule.build(dyn.propagate_basis(stack, v0)[:3], 0.0)
    traj = dyn.forward(stack, v0 @ a + z, AnalyticController(gains))
    np.testing.assert_allclose(traj.states[1], stack[0] @ v0 @ a, atol=1e-12)


def test_propagate_basis_identity():
    v0 = dyn.random_basis(5, 2, 0)
    for v in dyn.propagate_basis(identity_stack(5, 3), v0):
        np.testing.assert_array_equal(v, v0)


def test_propagate_basis_transport():
    stack = dyn.random_orthogonal_stack(16, 5, 7)
    bases = dyn.propagate_basis(stack, dyn.random_basis(16, 4, 8))
    assert len(bases) == 6
    for t in range(5):
        assert np.max(np.abs(stack[t].T @ bases[t + 1] - bases[t])) <= 1e-12
        assert np.max(np.abs(bases[t].T @ bases[t] - np.eye(4))) <= 1e-10


def test_propagate_basis_rejects_general_stack():
    with pytest.raises(ValueError):
        dyn.propagate_basis(LinearStack((np.eye(3),)), np.eye(3)[:, :1])


def test_make_perturbation_cases():
    v0 = dyn.random_basis(6, 2, 9)
    assert not np.any(dyn.make_perturbation(v0, 0.0, 0.0, 1))
    z = dyn.make_perturbation(v0, 3.0, 4.0, 1)
    assert abs(np.linalg.norm(z) - 5.0) <= 1e-12
    split = decompose_perturbation(z, v0)
    assert abs(split.par_norm - 3.0) <= 1e-10 and abs(split.perp_norm - 4.0) <= 1e-10


def test_make_perturbation_errors():
    with pytest.raises(ValueError):
        dyn.make_perturbation(np.eye(3), 0.0, 1.0, 0)
    with pytest.raises(ValueError):
        dyn.make_perturbation(np.eye(3)[:, :1], -1.0, 0.0, 0)


def test_synthetic_task_clean_samples_in_subspace():
    task = dyn.make_synthetic_task(10, 3, 4, num_classes=3, seed=1)
    x0, y = task.sample(100, 2)
    resid = x0 - (x0 @ task.data_basis) @ task.data_basis.T
    assert np.max(np.abs(resid)) <= 1e-10
    assert set(np.unique(y)) <= {0, 1, 2}
    # clean uncontrolled inputs are always classified correctly
    assert np.all(task.predict(dyn.forward(task.stack, x0).states[-1]) == y)


def test_synthetic_task_rejects_full_rank_subspace():
    with pytest.raises(ValueError):
        dyn.make_synthetic_task(4, 4, 2)


def test_classify_ties_go_to_lowest_class():
    assert dyn.classify_logits(np.array([[1.0, 3.0, 3.0], [2.0, 2.0, 0.0]])).tolist() == [1, 0]
