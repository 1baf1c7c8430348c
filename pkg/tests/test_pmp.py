import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pidheal import pmp
from pidheal.analytic import AnalyticController, GainSchedule
from pidheal.dynamics import (OpenLoopController, forward, propagate_basis, random_basis,
                              random_orthogonal_stack)


def pid_instance(d=6, T=3, c=0.3, seed=0):
    rng = np.random.default_rng(seed)
    stack = random_orthogonal_stack(d, T, rng)
    bases = {ch: [random_basis(d, 2, rng) for _ in range(T)] for ch in "PID"}
    bases["D"][0] = None
    spec = pmp.RunningLossSpec.from_bases(bases["P"], bases["I"], bases["D"], c=c, T=T, d=d)
    return stack, spec, rng


def objective_from(stack, spec, states, controls, t):
    """Total loss when ``states[t]`` is overwritten and later states are re-propagated."""
    s = states.copy()
    for k in range(t, stack.T):
        s[k + 1] = stack[k] @ (s[k] + controls[k])
    return pmp.total_loss(s, controls, spec)


def central_difference(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_running_loss_hand_value():
    q = np.diag([0.0, 1.0])
    spec = pmp.RunningLossSpec((q,), (None,), (None,), np.array([1.0]))
    assert pmp.running_loss(np.array([[1.0, 1.0]]), np.zeros(2), spec, 0) == 0.5


def test_running_loss_channel_inputs():
    stack, spec, rng = pid_instance(seed=1)
    hist = rng.standard_normal((3, 6))
    u = rng.standard_normal(6)
    t = 2
    w = hist[t] + u
    expected = (0.5 * np.sum((spec.qp[t] @ w) ** 2)
                + 0.5 * np.sum((spec.qi[t] @ (w + hist[0] + hist[1])) ** 2)
                + 0.5 * np.sum((spec.qd[t] @ (w - hist[1])) ** 2)
                + 0.5 * spec.c[t] * np.sum(u ** 2))
    assert abs(pmp.running_loss(hist, u, spec, t) - expected) <= 1e-12


def test_running_loss_zero_on_manifolds():
    v = random_basis(5, 2, 2)
    spec = pmp.RunningLossSpec.from_bases(bases_p=[v], c=1.0)
    assert pmp.running_loss((v @ np.ones(2))[None], np.zeros(5), spec, 0) <= 1e-30


def test_spec_validation():
    with pytest.raises(ValueError):
        pmp.RunningLossSpec((np.ones((2, 2)),), (None,), (None,), np.array([1.0]))
    with pytest.raises(ValueError):
        pmp.RunningLossSpec((None,), (None,), (None,), np.array([-1.0]))
    with pytest.raises(ValueError):
        pmp.RunningLossSpec((None, None), (None,), (None,), np.array([1.0]))


def test_without_integral():
    _, spec, _ = pid_instance()
    assert all(q is None for q in spec.without_integral().qi)


def test_loose_bound_holds_for_p_channel():
    rng = np.random.default_rng(3)
    v = random_basis(5, 2, rng)
    spec = pmp.RunningLossSpec.from_bases(bases_p=[v, v], c=0.5)
    hist = rng.standard_normal((2, 5))
    bound_b = float(np.max(np.sum(hist ** 2, axis=1)))
    for t in range(2):
        u = rng.standard_normal(5)
        assert pmp.running_loss(hist, u, spec, t) <= pmp.running_loss_bound(hist, u, spec, t, 2, bound_b)


def test_loose_bound_fails_with_aligned_integral_input():
    # x_0 = x_1 = a in the I-channel complement: the I term is ||2a||^2 / 2 = 2,
    # while the bound gives ||a||^2 / 2 + T B / 2 = 1.5
    q = np.diag([1.0, 0.0])
    spec = pmp.RunningLossSpec((None, None), (q, q), (None, None), np.zeros(2))
    hist = np.array([[1.0, 0.0], [1.0, 0.0]])
    assert pmp.running_loss(hist, np.zeros(2), spec, 1) == 2.0
    assert pmp.running_loss_bound(hist, np.zeros(2), spec, 1, 2, 1.0) == 1.5


def test_hamiltonian_zero_and_affine_in_p():
    v = random_basis(4, 2, 4)
    spec = pmp.RunningLossSpec.from_bases(bases_p=[v], c=1.0)
    theta = random_orthogonal_stack(4, 1, 4)[0]
    on = (v @ np.ones(2))[None]
    assert abs(pmp.hamiltonian(0, on, np.zeros(4), theta, np.zeros(4), spec)) <= 1e-15
    rng = np.random.default_rng(4)
    hist = rng.standard_normal((1, 4))
    p = rng.standard_normal(4)
    u = rng.standard_normal(4)
    h1 = pmp.hamiltonian(0, hist, p, theta, u, spec)
    h2 = pmp.hamiltonian(0, hist, 2 * p, theta, u, spec)
    assert abs((h2 - 2 * h1) - pmp.running_loss(hist, u, spec, 0)) <= 1e-12


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_hamiltonian_gradient_finite_difference(seed):
    stack, spec, rng = pid_instance(seed=seed)
    hist = rng.standard_normal((3, 6))
    p = rng.standard_normal(6)
    u = rng.standard_normal(6)
    g = pmp.hamiltonian_grad_u(2, hist, p, stack[2], u, spec)
    fd = central_difference(lambda v: pmp.hamiltonian(2, hist, p, stack[2], v, spec), u)
    assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)


@pytest.mark.parametrize("d, T", [(4, 2), (6, 3), (8, 4)])
def test_adjoint_matches_finite_differences(d, T):
    stack, spec, rng = pid_instance(d, T, seed=d)
    u = rng.standard_normal((T, d))
    traj = forward(stack, rng.standard_normal(d), OpenLoopController(u))
    p = pmp.backward_adjoint(stack, traj.states, u, spec)
    assert not np.any(p[T])
    for t in range(T):
        def f(x, t=t):
            s = traj.states.copy()
            s[t] = x
            return objective_from(stack, spec, s, u, t)
        fd = central_difference(f, traj.states[t])
        assert np.linalg.norm(-p[t] - fd) <= 1e-5 * np.linalg.norm(fd)


def test_control_gradient_matches_finite_differences():
    stack, spec, rng = pid_instance(6, 4, seed=11)
    x0 = rng.standard_normal(6)
    u = rng.standard_normal((4, 6))
    traj = forward(stack, x0, OpenLoopController(u))
    g = pmp.control_gradient(stack, traj.states, u, pmp.backward_adjoint(stack, traj.states, u, spec), spec)
    for t in range(4):
        def f(v, t=t):
            w = u.copy()
            w[t] = v
            return pmp.objective(stack, x0, w, spec)
        fd = central_difference(f, u[t])
        assert np.linalg.norm(g[t] - fd) <= 1e-5 * np.linalg.norm(fd)


def test_msa_stationary_on_manifolds():
    stack = random_orthogonal_stack(6, 3, 12)
    bases = propagate_basis(stack, random_basis(6, 2, 12))
    spec = pmp.RunningLossSpec.from_bases(bases_p=bases[:3], c=1.0)
    res = pmp.msa_solve(stack, bases[0] @ np.array([1.0, -1.0]), spec)
    assert np.max(np.abs(res.controls)) <= 1e-12
    assert res.objective <= 1e-12
    assert res.converged


def test_msa_zero_projectors_give_zero_controls():
    stack = random_orthogonal_stack(4, 3, 13)
    zero = (np.zeros((4, 4)),) * 3
    spec = pmp.RunningLossSpec(zero, zero, zero, np.full(3, 0.5))
    res = pmp.msa_solve(stack, np.ones(4), spec)
    assert not np.any(res.controls)


def test_msa_objective_nonincreasing_and_deterministic():
    stack, spec, rng = pid_instance(6, 4, seed=14)
    x0 = rng.standard_normal(6)
    cfg = pmp.MsaConfig(max_outer_iters=30, step_size=1.0)
    a = pmp.msa_solve(stack, x0, spec, cfg)
    b = pmp.msa_solve(stack, x0, spec, cfg)
    assert np.all(np.diff(a.history) <= 0)
    assert a.controls.tobytes() == b.controls.tobytes()


def test_msa_reports_budget_exhaustion():
    stack, spec, rng = pid_instance(seed=15)
    res = pmp.msa_solve(stack, rng.standard_normal(6), spec, pmp.MsaConfig(max_outer_iters=1))
    assert not res.converged and res.iterations == 1


def test_msa_matches_analytic_controls():
    d, T, c = 8, 4, 1.0
    stack = random_orthogonal_stack(d, T, 16)
    bases = propagate_basis(stack, random_basis(d, 2, 16))
    x0 = np.random.default_rng(16).standard_normal(d)
    ref = forward(stack, x0, AnalyticController(GainSchedule.build(bases[:T], c)))
    spec = pmp.RunningLossSpec.from_bases(bases_p=bases[:T], c=c)
    res = pmp.msa_solve(stack, x0, spec, pmp.MsaConfig(max_outer_iters=5000, tol=1e-10))
    assert res.converged
    assert np.max(np.abs(res.controls - ref.controls)) <= 1e-4
    assert abs(res.objective - pmp.total_loss(ref.states, ref.controls, spec)) <= 1e-6


def test_msa_batch_matches_single():
    stack, spec, rng = pid_instance(seed=17)
    xs = rng.standard_normal((3, 6))
    cfg = pmp.MsaConfig(max_outer_iters=8)
    batch = pmp.msa_solve(stack, xs, spec, cfg)
    for i in range(3):
        single = pmp.msa_solve(stack, xs[i], spec, cfg)
        np.testing.assert_allclose(batch.controls[:, i], single.controls, atol=1e-12)


@pytest.mark.parametrize("kwargs", [{"max_outer_iters": 0}, {"step_size": 0.0}, {"tol": -1.0},
                                    {"step_growth": 0.5}])
def test_msa_config_validation(kwargs):
    with pytest.raises(ValueError):
        pmp.MsaConfig(**kwargs)
