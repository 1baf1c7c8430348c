"""Experiment drivers behind the CLI subcommands.

Every driver returns plain rows (lists of dicts) so the CLI only formats
and writes them.  All randomness is derived from ``cfg.seed``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .. import analysis, analytic, dynamics, manifolds, pmp, riccati
from ..analytic import GainSchedule, lambda_schedule
from ..dynamics import LinearStack, SyntheticTask
from ..manifolds import ChannelKind, EmbeddingBasis
from .config import ExperimentConfig

CHANNELS = (ChannelKind.P, ChannelKind.I, ChannelKind.D)


# --------------------------------------------------------------------- instances

@dataclass(frozen=True)
class OrthogonalInstance:
    """Orthogonal stack with propagated bases, a clean input and a perturbation."""

    stack: LinearStack
    bases: list  # V_0 .. V_T
    gains: GainSchedule
    x0: np.ndarray
    z: np.ndarray


def orthogonal_instance(d: int, r: int, T: int, c: float, seed, par_norm: float = 1.0,
                        perp_norm: float = 2.0) -> OrthogonalInstance:
    g_stack, g_basis, g_x, g_z = dynamics.spawn(seed, 4)
    stack = dynamics.random_orthogonal_stack(d, T, g_stack)
    v0 = dynamics.random_basis(d, r, g_basis)
    bases = dynamics.propagate_basis(stack, v0)
    gains = GainSchedule.build(bases[:T], c)
    x0 = v0 @ g_x.standard_normal(r)
    z = dynamics.make_perturbation(v0, par_norm, perp_norm, g_z)
    return OrthogonalInstance(stack, bases, gains, x0, z)


def instance_grid(n: int = 50, ds=(16, 32, 64), Ts=(6, 12, 24), cs=(0.1, 1.0, 10.0)):
    """``n`` configurations cycling through every (d, T, c) combination, ``r = d / 4``."""
    for i in range(n):
        d = ds[i % len(ds)]
        T = Ts[(i // len(ds)) % len(Ts)]
        c = cs[(i // (len(ds) * len(Ts))) % len(cs)]
        yield i, d, d // 4, T, c


def perturbation_batch(v0: np.ndarray, par_norm: float, perp_norm: float, n: int, rng) -> np.ndarray:
    """``n`` perturbations with fixed component norms and random directions."""
    d, r = v0.shape
    z = np.zeros((n, d))
    if par_norm > 0:
        a = rng.standard_normal((n, r)) @ v0.T
        z += par_norm * a / np.linalg.norm(a, axis=1, keepdims=True)
    if perp_norm > 0:
        g = rng.standard_normal((n, d))
        b = g - (g @ v0) @ v0.T
        z += perp_norm * b / np.linalg.norm(b, axis=1, keepdims=True)
    return z


# ------------------------------------------------------------------ task + bases

def build_task(cfg: ExperimentConfig) -> SyntheticTask:
    return dynamics.make_synthetic_task(cfg.d, cfg.r, cfg.T, cfg.num_classes, cfg.seed, cfg.perp_gain)


def training_states(task: SyntheticTask, n: int, l: int = 1, seed=None):
    """Uncontrolled clean trajectories ``(T + 1, n, l, d)`` of correctly classified samples."""
    x0, y = task.sample(n * l, seed)
    traj = dynamics.forward(task.stack, x0)
    if l == 1:
        keep = task.predict(traj.states[-1]) == y
        states = traj.states[:, keep][:, :, None, :]
        return states, y[keep]
    states = traj.states.reshape(task.stack.T + 1, n, l, -1)
    return states, y.reshape(n, l)


def fit_bases(states: np.ndarray, threshold: float) -> dict[ChannelKind, EmbeddingBasis]:
    """P/I/D bases from the layer-input states ``x_0..x_{T-1}``."""
    ens = manifolds.TrajectoryEnsemble(tuple(states[:-1]))
    out = {}
    for ch in CHANNELS:
        if ch is ChannelKind.D and ens.T < 2:
            continue
        out[ch] = manifolds.build_basis(ens, ch, threshold)
    return out


def union_basis(mats: Sequence[Optional[np.ndarray]], d: int) -> Optional[np.ndarray]:
    cols = [m for m in mats if m is not None and m.shape[1] > 0]
    if not cols:
        return None
    u, s, _ = np.linalg.svd(np.hstack(cols), full_matrices=False)
    k = int(np.count_nonzero(s > 1e-10 * s[0]))
    return u[:, :k]


def active_channels(scheme: str, gains) -> list[ChannelKind]:
    return [ch for ch, g in zip(CHANNELS, gains) if ch.value in scheme and g > 0]


def masked_gains(scheme: str, gains) -> tuple[float, float, float]:
    return tuple(float(g) if ch.value in scheme else 0.0 for ch, g in zip(CHANNELS, gains))


class _UnionAnalytic:
    def __init__(self, per_layer, schedule):
        self.per_layer = per_layer
        self.schedule = schedule

    def __call__(self, t, history):
        v = self.per_layer[t]
        if v is None:
            return np.zeros_like(history[-1])
        return analytic.analytic_feedback(history[-1], v, self.schedule.alphas[t])


def make_controller(kind: str, scheme: str, cfg: ExperimentConfig, stack: LinearStack,
                    bases: dict[ChannelKind, EmbeddingBasis], x0: Optional[np.ndarray] = None):
    T, d = stack.T, stack.d
    chans = [ch for ch in active_channels(scheme, cfg.gains) if ch in bases]
    sched = lambda_schedule(cfg.c, T)
    if kind == "none" or not chans:
        return dynamics.zero_controller
    if kind == "practical":
        return analytic.PracticalController({ch: bases[ch] for ch in chans},
                                            masked_gains(scheme, cfg.gains), sched)
    per_layer = [union_basis([bases[ch][t] for ch in chans], d) for t in range(T)]
    if kind == "analytic":
        return _UnionAnalytic(per_layer, sched)
    if kind == "riccati":
        qs = [riccati.merged_projector(v, d=d) for v in per_layer]
        return riccati.RiccatiController(stack, qs, cfg.c)
    if kind == "pmp":
        spec = pmp.RunningLossSpec.from_bases(
            bases_p=bases[ChannelKind.P].per_layer if ChannelKind.P in chans else None,
            bases_i=bases[ChannelKind.I].per_layer if ChannelKind.I in chans else None,
            bases_d=bases[ChannelKind.D].per_layer if ChannelKind.D in chans else None,
            c=cfg.c, T=T, d=d)
        res = pmp.msa_solve(stack, x0, spec, pmp.MsaConfig(max_outer_iters=cfg.pmp_iters))
        return dynamics.OpenLoopController(res.controls)
    raise ValueError(f"unknown controller {kind!r}")


# ------------------------------------------------------------------------ drivers

def run_schedule(cfg: ExperimentConfig):
    sched = lambda_schedule(cfg.c, cfg.T)
    rows = [{"seed": cfg.seed, "c": cfg.c, "t": t, "lambda": sched.lambdas[t],
             "alpha": sched.alphas[t] if t < cfg.T else ""} for t in range(cfg.T + 1)]
    return sched, rows


def run_fit(cfg: ExperimentConfig, states: np.ndarray):
    bases = fit_bases(states, cfg.threshold)
    rows = []
    for t in range(states.shape[0] - 1):
        row = {"seed": cfg.seed, "t": t}
        for ch in CHANNELS:
            b = bases.get(ch)
            row[f"rank_{ch.value}"] = "" if b is None or b[t] is None else b[t].shape[1]
        # mean off-subspace residual of the layer's own training states
        x = states[t].reshape(-1, states.shape[-1])
        row["residual_P"] = float(np.mean(manifolds.residual(x, bases[ChannelKind.P][t])))
        rows.append(row)
    return bases, rows


def run_simulate(cfg: ExperimentConfig):
    """Per-step predicted vs measured error on orthogonal instances for each ``c`` in the grid."""
    rows = []
    n_trials = min(cfg.trials, 20)
    for c in cfg.c_grid:
        for trial in range(n_trials):
            inst = orthogonal_instance(cfg.d, cfg.r, cfg.T, c, [cfg.seed, trial])
            split = analysis.decompose_perturbation(inst.z, inst.bases[0])
            pred = analysis.predict_errors(inst.gains.schedule, split)
            emp = analysis.empirical_error(inst.stack, inst.gains, inst.x0, inst.z)
            for t in range(cfg.T):
                rows.append({"seed": cfg.seed, "c": c, "trial": trial, "t": t + 1,
                             "predicted_err": pred[t], "empirical_err": emp[t],
                             "rel_gap": abs(emp[t] - pred[t]) / pred[t]})
    return rows


def _normalized_perturbed_stack(stack: LinearStack, eps: float, rng) -> LinearStack:
    layers = []
    for theta in stack.layers:
        m = theta + eps * rng.standard_normal(theta.shape) / np.sqrt(theta.shape[0])
        layers.append(m / np.linalg.norm(m, 2))
    return LinearStack(tuple(layers), orthogonal=False)


def run_deviation_study(cfg: ExperimentConfig, eps_grid=(0.0, 0.01, 0.05, 0.1, 0.2)):
    """Gap between the closed-form error prediction and simulation on non-orthogonal stacks (reported only)."""
    rows = []
    for eps in eps_grid:
        g_inst, g_eps = dynamics.spawn([cfg.seed, 7], 2)
        inst = orthogonal_instance(cfg.d, cfg.r, cfg.T, cfg.c, g_inst)
        stack = _normalized_perturbed_stack(inst.stack, eps, g_eps) if eps > 0 else inst.stack
        bases = [inst.bases[0]]
        for theta in stack.layers[:-1]:
            q, _ = np.linalg.qr(theta @ bases[-1])
            bases.append(q)
        gains = GainSchedule.build(bases, cfg.c)
        split = analysis.decompose_perturbation(inst.z, inst.bases[0])
        pred = analysis.predict_errors(gains.schedule, split)
        clean = dynamics.forward(stack, inst.x0)
        healed = dynamics.forward(stack, inst.x0 + inst.z, analytic.AnalyticController(gains))
        emp = np.sum((healed.states[1:] - clean.states[1:]) ** 2, axis=-1)
        for t in range(cfg.T):
            rows.append({"seed": cfg.seed, "eps": eps, "t": t + 1, "predicted_err": pred[t],
                         "empirical_err": emp[t], "abs_gap": abs(emp[t] - pred[t])})
    return rows


def run_compare(cfg: ExperimentConfig):
    """Accuracy of each (scheme, controller) under fixed-norm random perturbations."""
    task = build_task(cfg)
    g_train, g_test, g_pert = dynamics.spawn([cfg.seed, 1], 3)
    states, _ = training_states(task, cfg.N, 1, g_train)
    bases = fit_bases(states, cfg.threshold)
    x0, y = task.sample(cfg.trials, g_test)
    pairs = []
    for par in cfg.par_norms:
        for ratio in cfg.perp_ratio:
            pair = (par, ratio * par)
            if pair not in pairs:
                pairs.append(pair)
    perturbations = {}
    for k, (par, perp) in enumerate(pairs):
        perturbations[(par, perp)] = perturbation_batch(task.data_basis, par, perp, cfg.trials,
                                                        dynamics.as_rng([cfg.seed, 2, k]))
    rows = []
    for scheme in cfg.scheme:
        for kind in cfg.controller:
            for par, perp in pairs:
                xin = x0 + perturbations[(par, perp)]
                ctrl = make_controller(kind, scheme, cfg, task.stack, bases, xin)
                traj = dynamics.forward(task.stack, xin, ctrl)
                acc = float(np.mean(task.predict(traj.states[-1]) == y))
                rows.append({"seed": cfg.seed, "scheme": scheme, "controller": kind,
                             "par_norm": par, "perp_norm": perp, "accuracy": acc,
                             "trials": cfg.trials})
    return rows


# ------------------------------------------------------------------------- bench

def _interleaved_medians(fns, repeats: int, warmup: int) -> list[float]:
    """Median wall time of each callable, timing them round-robin.

    Alternating the callables within every repeat exposes them to the same
    machine drift, so their ratios stay stable on a noisy host.
    """
    for _ in range(warmup):
        for fn in fns:
            fn()
    times = [[] for _ in fns]
    for _ in range(repeats):
        for k, fn in enumerate(fns):
            t0 = time.perf_counter()
            fn()
            times[k].append(time.perf_counter() - t0)
    return [float(np.median(ts)) for ts in times]


def _median_time(fn, repeats: int, warmup: int) -> float:
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def closed_loop_maps(stack: LinearStack, gains: GainSchedule) -> list[np.ndarray]:
    """Precomputed ``theta_t (I - K_t)``: the controlled layer as a single linear map."""
    return [stack[t] @ (np.eye(stack.d) - gains.gain_matrix(t)) for t in range(stack.T)]


def run_bench(cfg: ExperimentConfig, ds: Optional[Iterable[int]] = None):
    """Median wall time of base, controlled and PMP forward passes on a batch.

    ``analytic`` runs the controlled stack through precomputed closed-loop
    maps (one matrix product per layer); ``analytic_projector`` applies the
    feedback on the fly.  PMP is timed with its own, smaller repeat count
    because a single solve costs hundreds of base passes.
    """
    rows = []
    for d in (ds if ds is not None else cfg.bench_d):
        T, B = cfg.bench_T, cfg.bench_batch
        r = min(cfg.bench_r, d - 1)
        inst = orthogonal_instance(d, r, T, cfg.c, [cfg.seed, d])
        rng = dynamics.as_rng([cfg.seed, d, 1])
        x0 = rng.standard_normal((B, d))
        stack, gains = inst.stack, inst.gains
        layers_t = [np.ascontiguousarray(th.T) for th in stack.layers]
        maps_t = [np.ascontiguousarray(m.T) for m in closed_loop_maps(stack, gains)]
        alphas = gains.schedule.alphas

        def base():
            x = x0
            for th in layers_t:
                x = x @ th
            return x

        def fused():
            x = x0
            for m in maps_t:
                x = x @ m
            return x

        def projector():
            x = x0
            for t, th in enumerate(layers_t):
                x = (x + analytic.analytic_feedback(x, gains.bases[t], alphas[t])) @ th
            return x

        spec = pmp.RunningLossSpec.from_bases(bases_p=inst.bases[:T], c=cfg.c)
        msa_cfg = pmp.MsaConfig(max_outer_iters=cfg.pmp_iters, tol=0.0)

        def pmp_forward():
            res = pmp.msa_solve(stack, x0, spec, msa_cfg)
            return res.states[-1]

        fast = _interleaved_medians([base, fused, projector], cfg.bench_repeats, cfg.bench_warmup)
        timings = [
            ("base", fast[0], cfg.bench_repeats, cfg.bench_warmup),
            ("analytic", fast[1], cfg.bench_repeats, cfg.bench_warmup),
            ("analytic_projector", fast[2], cfg.bench_repeats, cfg.bench_warmup),
            ("pmp", _median_time(pmp_forward, cfg.bench_pmp_repeats, cfg.bench_pmp_warmup),
             cfg.bench_pmp_repeats, cfg.bench_pmp_warmup),
        ]
        base_s = fast[0]
        for mode, sec, k, w in timings:
            rows.append({"seed": cfg.seed, "d": d, "T": T, "batch": B, "r": r, "mode": mode,
                         "median_s": sec, "ratio_to_base": sec / base_s, "repeats": k, "warmup": w,
                         "pmp_iters": cfg.pmp_iters if mode == "pmp" else ""})
    return rows
