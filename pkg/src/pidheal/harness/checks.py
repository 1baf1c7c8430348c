"""Property suite run by ``verify``: each check measures one deviation against a tolerance."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .. import analysis, analytic, dynamics, manifolds, pmp, riccati, tensorkit
from ..analytic import GainSchedule, lambda_schedule
from ..manifolds import ChannelKind
from . import persistence
from .config import ExperimentConfig
from .experiments import orthogonal_instance, instance_grid


@dataclass(frozen=True)
class CheckResult:
    name: str
    deviation: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.deviation <= self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"check={self.name} deviation={self.deviation:.6e} tolerance={self.tolerance:.1e} status={status}"


# ----------------------------------------------------------------------- schedule

def check_lambda(cfg: ExperimentConfig) -> list[CheckResult]:
    terminal = 0.0
    zero = 0.0
    recursion = 0.0
    monotone = 0.0
    for c in (0.01, 0.1, 1.0, 10.0):
        for T in (2, 8, 24):
            s = lambda_schedule(c, T)
            terminal = max(terminal, abs(s.lambdas[T - 1] - c / (1.0 + c)))
            lam_next = s.lambdas[1:]
            recursion = max(recursion, float(np.max(np.abs(s.lambdas[:-1] - (1.0 + lam_next) * s.alphas))))
            # lambda grows as t decreases from T
            monotone = max(monotone, float(np.max(s.lambdas[1:] - s.lambdas[:-1], initial=0.0)))
    for T in (2, 8, 24):
        s = lambda_schedule(0.0, T)
        zero = max(zero, float(np.max(np.abs(s.lambdas))), float(np.max(np.abs(s.alphas))))
    fixed = abs(lambda_schedule(1.0, 60).lambdas[0] - (np.sqrt(5.0) - 1.0) / 2.0)
    return [
        CheckResult("lambda_terminal", terminal, 1e-15),
        CheckResult("lambda_zero_c", zero, 0.0),
        CheckResult("lambda_alpha_recursion", recursion, 1e-15),
        CheckResult("lambda_monotone", monotone, 0.0),
        CheckResult("lambda_fixed_point", fixed, 1e-8),
    ]


# ---------------------------------------------------------------- error theory

def check_error_prediction(cfg: ExperimentConfig) -> list[CheckResult]:
    rel = 0.0
    floor = 0.0
    decay = 0.0
    ric = 0.0
    lqr = 0.0
    bellman = 0.0
    linearity = 0.0
    for i, d, r, T, c in instance_grid(50):
        inst = orthogonal_instance(d, r, T, c, [cfg.seed, 100, i])
        split = analysis.decompose_perturbation(inst.z, inst.bases[0])
        pred = analysis.predict_errors(inst.gains.schedule, split)
        emp = analysis.empirical_error(inst.stack, inst.gains, inst.x0, inst.z)
        rel = max(rel, float(np.max(analysis.relative_gap(emp, pred))))
        floor = max(floor, float(np.max(split.par_norm ** 2 - emp)))
        perp_term = np.cumprod(inst.gains.schedule.alphas ** 2)
        decay = max(decay, float(np.max(perp_term[1:] - perp_term[:-1], initial=0.0)))

        qs = [riccati.merged_projector(v) for v in inst.bases[:T]]
        sched = riccati.riccati_backward(inst.stack, qs, c)
        lams = inst.gains.schedule.lambdas
        for t in range(T + 1):
            closed = analytic.closed_form_p(inst.bases[t], lams[t])
            ric = max(ric, float(np.max(np.abs(sched.p[t] - closed))))
        x = inst.x0 + inst.z
        traj = dynamics.forward(inst.stack, x, analytic.AnalyticController(inst.gains))
        for t in range(T):
            xt = traj.states[t]
            u_lqr = riccati.lqr_feedback(xt, inst.stack[t], sched.p[t + 1], qs[t], c)
            lqr = max(lqr, float(np.max(np.abs(u_lqr - traj.controls[t]))))
            u2 = analytic.analytic_feedback(2.5 * xt, inst.bases[t], inst.gains.schedule.alphas[t])
            linearity = max(linearity, float(np.max(np.abs(u2 - 2.5 * traj.controls[t]))))
        scale = 1.0 + float(np.sum(x * x))
        bellman = max(bellman, riccati.bellman_check(traj, sched, qs, c) / scale)
    return [
        CheckResult("error_prediction_relative_gap", rel, 1e-9),
        CheckResult("parallel_error_floor", floor, 1e-9),
        CheckResult("perpendicular_decay_monotone", decay, 0.0),
        CheckResult("riccati_closed_form", ric, 1e-10),
        CheckResult("lqr_equals_analytic", lqr, 1e-10),
        CheckResult("bellman_residual_relative", bellman, 1e-10),
        CheckResult("feedback_linearity", linearity, 1e-12),
    ]


def check_lemmas(cfg: ExperimentConfig) -> list[CheckResult]:
    worst = {}
    for i in range(20):
        d, T, c = (8, 16, 24)[i % 3], (4, 6, 8)[i % 3], (0.1, 1.0, 10.0)[(i // 3) % 3]
        inst = orthogonal_instance(d, d // 4 + 1, T, c, [cfg.seed, 200, i])
        rep = analysis.verify_lemmas(inst.stack, inst.gains, inst.x0, inst.z)
        for k, v in rep.items():
            worst[k] = max(worst.get(k, 0.0), v)
    return [CheckResult(k, v, 1e-9) for k, v in worst.items()]


# ------------------------------------------------------------------------- PMP

def fd_state_gradient(stack, states, controls, spec, t: int, h: float = 1e-6) -> np.ndarray:
    """Central differences of the total objective wrt ``x_t`` with controls held fixed."""
    d = stack.d
    grad = np.zeros(d)
    for i in range(d):
        vals = []
        for sign in (1.0, -1.0):
            s = states.copy()
            s[t, i] += sign * h
            for k in range(t, stack.T):
                s[k + 1] = (s[k] + controls[k]) @ stack[k].T
            vals.append(pmp.total_loss(s, controls, spec))
        grad[i] = (vals[0] - vals[1]) / (2.0 * h)
    return grad


def fd_control_gradient(stack, x0, controls, spec, t: int, h: float = 1e-6) -> np.ndarray:
    grad = np.zeros(stack.d)
    for i in range(stack.d):
        vals = []
        for sign in (1.0, -1.0):
            u = controls.copy()
            u[t, i] += sign * h
            vals.append(pmp.objective(stack, x0, u, spec))
        grad[i] = (vals[0] - vals[1]) / (2.0 * h)
    return grad


def random_pid_spec(d: int, T: int, c: float, rng) -> pmp.RunningLossSpec:
    bases = {ch: [dynamics.random_basis(d, 2, rng) for _ in range(T)] for ch in "PID"}
    bases["D"][0] = None
    return pmp.RunningLossSpec.from_bases(bases["P"], bases["I"], bases["D"], c=c, T=T, d=d)


def check_adjoint(cfg: ExperimentConfig) -> list[CheckResult]:
    state_rel = 0.0
    control_rel = 0.0
    for i, (d, T) in enumerate([(4, 2), (6, 3), (8, 4), (8, 3)]):
        rng = dynamics.as_rng([cfg.seed, 300, i])
        stack = dynamics.random_orthogonal_stack(d, T, rng)
        spec = random_pid_spec(d, T, 0.3, rng)
        x0 = rng.standard_normal(d)
        u = rng.standard_normal((T, d))
        traj = dynamics.forward(stack, x0, dynamics.OpenLoopController(u))
        p = pmp.backward_adjoint(stack, traj.states, u, spec)
        g = pmp.control_gradient(stack, traj.states, u, p, spec)
        for t in range(T):
            fd = fd_state_gradient(stack, traj.states, u, spec, t)
            state_rel = max(state_rel, float(np.linalg.norm(-p[t] - fd) / np.linalg.norm(fd)))
            fdu = fd_control_gradient(stack, x0, u, spec, t)
            control_rel = max(control_rel, float(np.linalg.norm(g[t] - fdu) / np.linalg.norm(fdu)))
    return [
        CheckResult("adjoint_vs_finite_difference", state_rel, 1e-5),
        CheckResult("control_gradient_vs_finite_difference", control_rel, 1e-5),
    ]


# Plain MSA contracts slowly near the optimum, so the equivalence check runs it
# to a tight tolerance instead of the default iteration budget.
MSA_EQUIVALENCE = pmp.MsaConfig(max_outer_iters=5000, tol=1e-10)


def check_msa(cfg: ExperimentConfig) -> list[CheckResult]:
    control_gap = 0.0
    objective_gap = 0.0
    for i, (d, T, c) in enumerate([(8, 4, 1.0), (16, 8, 0.1), (16, 8, 10.0)]):
        inst = orthogonal_instance(d, d // 4, T, c, [cfg.seed, 400, i])
        x0 = inst.x0 + inst.z
        ref = dynamics.forward(inst.stack, x0, analytic.AnalyticController(inst.gains))
        spec = pmp.RunningLossSpec.from_bases(bases_p=inst.bases[:T], c=c)
        res = pmp.msa_solve(inst.stack, x0, spec, MSA_EQUIVALENCE)
        control_gap = max(control_gap, float(np.max(np.abs(res.controls - ref.controls))))
        j_ref = pmp.total_loss(ref.states, ref.controls, spec)
        objective_gap = max(objective_gap, float(abs(res.objective - j_ref)))
    return [
        CheckResult("msa_controls_vs_analytic", control_gap, 1e-4),
        CheckResult("msa_objective_gap", objective_gap, 1e-6),
    ]


def check_zero_loss_pmp(cfg: ExperimentConfig) -> list[CheckResult]:
    rng = dynamics.as_rng([cfg.seed, 450])
    d, T = 6, 3
    stack = dynamics.random_orthogonal_stack(d, T, rng)
    zero_q = (np.zeros((d, d)),) * T
    spec = pmp.RunningLossSpec(zero_q, zero_q, zero_q, np.full(T, 0.5))
    res = pmp.msa_solve(stack, rng.standard_normal(d), spec, pmp.MsaConfig(max_outer_iters=5))
    return [CheckResult("pmp_zero_projectors_zero_control", float(np.max(np.abs(res.controls))), 0.0)]


# ---------------------------------------------------------------- tensors/bases

def check_tensors(cfg: ExperimentConfig) -> list[CheckResult]:
    rng = dynamics.as_rng([cfg.seed, 500])
    recon = 0.0
    excess = 0.0
    ortho = 0.0
    roundtrip = 0.0
    assoc = 0.0
    for _ in range(100):
        shape = (int(rng.integers(2, 65)), int(rng.integers(1, 9)), int(rng.integers(2, 65)))
        k = int(rng.integers(1, 5))
        t = sum(np.einsum("i,j,k->ijk", *(rng.standard_normal(n) for n in shape)) for _ in range(k))
        t = t + 0.05 * rng.standard_normal(shape)
        f = tensorkit.hosvd(t)
        norm = np.linalg.norm(t)
        recon = max(recon, float(np.linalg.norm(tensorkit.reconstruct(f) - t) / norm))
        for v in f.bases:
            ortho = max(ortho, float(np.max(np.abs(v.T @ v - np.eye(v.shape[1])))))
        ranks = tuple(int(rng.integers(0, r + 1)) for r in f.ranks)
        err = np.linalg.norm(tensorkit.reconstruct(tensorkit.truncate_factors(f, ranks)) - t)
        excess = max(excess, float((err - tensorkit.truncation_bound(f, ranks)) / norm))
        for mode in (1, 2, 3):
            back = tensorkit.fold(tensorkit.unfold(t, mode), mode, t.shape)
            roundtrip = max(roundtrip, float(np.max(np.abs(back - t))))
        a = rng.standard_normal((3, shape[0]))
        b = rng.standard_normal((4, shape[2]))
        lhs = tensorkit.mode_product(tensorkit.mode_product(t, a, 1), b, 3)
        rhs = tensorkit.mode_product(tensorkit.mode_product(t, b, 3), a, 1)
        assoc = max(assoc, float(np.max(np.abs(lhs - rhs)) / max(1.0, np.max(np.abs(lhs)))))
    return [
        CheckResult("hosvd_reconstruction_relative", recon, 1e-8),
        CheckResult("hosvd_basis_orthonormality", ortho, 1e-10),
        CheckResult("hosvd_truncation_bound_excess", max(excess, 0.0), 1e-12),
        CheckResult("fold_unfold_roundtrip", roundtrip, 0.0),
        CheckResult("mode_product_commutes_across_modes", assoc, 1e-12),
    ]


def check_manifolds(cfg: ExperimentConfig) -> list[CheckResult]:
    from .experiments import build_task, fit_bases, training_states

    task = build_task(cfg)
    states, _ = training_states(task, min(cfg.N, 256), 1, [cfg.seed, 600])
    bases = fit_bases(states, cfg.threshold)
    rng = dynamics.as_rng([cfg.seed, 601])
    ortho = 0.0
    capture = -np.inf
    ens = manifolds.TrajectoryEnsemble(tuple(states[:-1]))
    for ch, b in bases.items():
        data = manifolds.channel_ensemble(ens, ch)
        for t, v in enumerate(b.per_layer):
            if v is None:
                continue
            ortho = max(ortho, float(np.max(np.abs(v.T @ v - np.eye(v.shape[1])))))
            # the D ensemble starts at t = 1, where the D basis list starts too
            x = data.layers[t - 1 if ch is ChannelKind.D else t].reshape(-1, v.shape[0])
            noise = rng.standard_normal(x.shape)
            noise *= np.linalg.norm(x, axis=1, keepdims=True) / np.linalg.norm(noise, axis=1, keepdims=True)
            gap = np.mean(manifolds.residual(x, v)) - np.mean(manifolds.residual(noise, v))
            capture = max(capture, float(gap))
    acc = manifolds.accumulate_states(ens)
    diff = manifolds.difference_states(acc)
    inverse = max(float(np.max(np.abs(diff.layers[t - 1] - ens.layers[t]))) for t in range(1, ens.T))
    x0, _ = task.sample(64, rng)
    clean_residual = float(np.max(manifolds.residual(x0, task.data_basis)))
    traj = dynamics.forward(task.stack, x0)
    norms = float(np.max(np.abs(np.linalg.norm(traj.states, axis=-1) - np.linalg.norm(x0, axis=-1))))
    return [
        CheckResult("fitted_basis_orthonormality", ortho, 1e-10),
        CheckResult("training_residual_below_random", max(capture, 0.0), 0.0),
        CheckResult("accumulate_difference_inverse", inverse, 1e-12),
        CheckResult("clean_sample_residual", clean_residual, 1e-10),
        CheckResult("orthogonal_norm_conservation", norms, 1e-10),
    ]


def check_controllers(cfg: ExperimentConfig) -> list[CheckResult]:
    """Practical controller on exact bases reduces to the analytic one; dynamics invariant holds."""
    inst = orthogonal_instance(16, 4, 6, cfg.c, [cfg.seed, 700])
    T = inst.stack.T
    basis = manifolds.EmbeddingBasis(ChannelKind.P, tuple(inst.bases[:T]), 1.0)
    prac = analytic.PracticalController({ChannelKind.P: basis}, (1.0, 0.0, 0.0), inst.gains.schedule)
    x = inst.x0 + inst.z
    a = dynamics.forward(inst.stack, x, analytic.AnalyticController(inst.gains))
    b = dynamics.forward(inst.stack, x, prac)
    reduce_gap = float(np.max(np.abs(a.states - b.states)))
    dyn = 0.0
    for traj in (a, b):
        for t in range(T):
            step = (traj.states[t] + traj.controls[t]) @ inst.stack[t].T
            dyn = max(dyn, float(np.max(np.abs(traj.states[t + 1] - step))))
    return [
        CheckResult("practical_p_only_equals_analytic", reduce_gap, 1e-12),
        CheckResult("trajectory_dynamics_invariant", dyn, 1e-13),
    ]


def check_persistence(cfg: ExperimentConfig) -> list[CheckResult]:
    inst = orthogonal_instance(12, 3, 5, cfg.c, [cfg.seed, 800])
    objs = [
        inst.gains,
        inst.gains.schedule,
        manifolds.EmbeddingBasis(ChannelKind.D, (None,) + tuple(inst.bases[1:5]), cfg.threshold),
    ]
    mismatches = 0
    for obj in objs:
        data = persistence.dumps(obj)
        if persistence.dumps(persistence.loads(data)) != data:
            mismatches += 1
    return [CheckResult("persistence_bitwise_roundtrip", float(mismatches), 0.0)]


SUITE: tuple[Callable[[ExperimentConfig], list[CheckResult]], ...] = (
    check_lambda,
    check_error_prediction,
    check_lemmas,
    check_adjoint,
    check_msa,
    check_zero_loss_pmp,
    check_tensors,
    check_manifolds,
    check_controllers,
    check_persistence,
)


def run_suite(cfg: ExperimentConfig) -> list[CheckResult]:
    out = []
    for check in SUITE:
        out.extend(check(cfg))
    return out
