"""Exact error theory for the closed-form controller on orthogonal systems.

With orthogonal layers and propagated bases, a perturbation ``z`` of a
clean input splits into ``z_par`` (inside ``span V_0``) and ``z_perp``; after
``t`` controlled layers the squared deviation from the clean trajectory is

    prod_{s<t} alpha_s^2 * ||z_perp||^2 + ||z_par||^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analytic import AnalyticController, GainSchedule, LambdaSchedule
from .dynamics import LinearStack, as_rng, forward


@dataclass(frozen=True)
class PerturbationSplit:
    z_par: np.ndarray
    z_perp: np.ndarray

    @property
    def par_norm(self) -> float:
        return float(np.linalg.norm(self.z_par))

    @property
    def perp_norm(self) -> float:
        return float(np.linalg.norm(self.z_perp))


def decompose_perturbation(z, v0: np.ndarray) -> PerturbationSplit:
    z = np.asarray(z, dtype=np.float64)
    z_par = (z @ v0) @ v0.T
    return PerturbationSplit(z_par, z - z_par)


def predict_error(sched: LambdaSchedule, split: PerturbationSplit, t: int) -> float:
    """Predicted ``||x_bar_t - x_t||^2`` after ``t >= 1`` controlled layers."""
    if not 1 <= t <= sched.T:
        raise ValueError(f"t must lie in [1, {sched.T}], got {t}")
    decay = np.prod(sched.alphas[:t] ** 2)
    return float(decay * split.perp_norm ** 2 + split.par_norm ** 2)


def predict_errors(sched: LambdaSchedule, split: PerturbationSplit) -> np.ndarray:
    """Predictions for ``t = 1..T``."""
    decay = np.cumprod(sched.alphas ** 2)
    return decay * split.perp_norm ** 2 + split.par_norm ** 2


def empirical_error(stack: LinearStack, gains: GainSchedule, x0, z) -> np.ndarray:
    """Squared distance at ``t = 1..T`` between the perturbed controlled run and the clean uncontrolled run."""
    x0 = np.asarray(x0, dtype=np.float64)
    clean = forward(stack, x0)
    healed = forward(stack, x0 + z, AnalyticController(gains))
    diff = healed.states[1:] - clean.states[1:]
    return np.sum(diff * diff, axis=-1)


def oblique_projectors(stack: LinearStack, gains: GainSchedule, t: int) -> list[np.ndarray]:
    """``P_t^0 .. P_t^t`` with ``P_t^0 = V_t V_t^T`` and ``P_t^{s+1} = theta^{-1} P_t^s theta`` for ``theta = theta_{t-s-1}``."""
    out = [gains.projector(t)]
    for s in range(t):
        theta = stack[t - s - 1]
        out.append(np.linalg.solve(theta, out[-1] @ theta))
    return out


def verify_lemmas(stack: LinearStack, gains: GainSchedule, x0=None, z=None, seed=0) -> dict:
    """Maximum entrywise deviations of the four gain/projection identities.

    ``gain_decomposition``: ``I - K_t = alpha_t I + (1 - alpha_t) P_t``.
    ``oblique_idempotent`` / ``oblique_transport``: every ``P_t^s`` is idempotent
    and ``P_t^t = P_0``.
    ``error_propagation``: ``x_bar_t - x_t = (theta_{t-1}..theta_0)(G_{t-1}^{t-1}..G_0^0) z``.
    ``error_product``: ``G_{t-1}^{t-1}..G_0^0 = A I + (1 - A) P_0`` with ``A = prod alpha_s``.

    ``x0`` defaults to a random point of ``span V_0`` and ``z`` to a random vector.
    """
    if not stack.orthogonal:
        raise ValueError("lemma checks require an orthogonal stack")
    T, d = stack.T, stack.d
    alphas = gains.schedule.alphas
    rng = as_rng(seed)
    v0 = gains.bases[0]
    if x0 is None:
        x0 = v0 @ rng.standard_normal(v0.shape[1])
    if z is None:
        z = rng.standard_normal(d)
    eye = np.eye(d)
    p0 = gains.projector(0)

    l1 = max(gains.gain_decomposition_deviation(t) for t in range(T))

    l2_idem = 0.0
    l2_transport = 0.0
    g_diag = []  # G_t^t
    for t in range(T):
        ps = oblique_projectors(stack, gains, t)
        for p in ps:
            l2_idem = max(l2_idem, float(np.max(np.abs(p @ p - p))))
        l2_transport = max(l2_transport, float(np.max(np.abs(ps[t] - p0))))
        g_diag.append(alphas[t] * eye + (1.0 - alphas[t]) * ps[t])

    clean = forward(stack, x0)
    healed = forward(stack, x0 + z, AnalyticController(gains))
    l3 = 0.0
    l4 = 0.0
    theta_prod = eye
    f = eye
    prod_alpha = 1.0
    for t in range(1, T + 1):
        theta_prod = stack[t - 1] @ theta_prod
        f = g_diag[t - 1] @ f
        prod_alpha *= alphas[t - 1]
        predicted = theta_prod @ f @ z
        l3 = max(l3, float(np.max(np.abs((healed.states[t] - clean.states[t]) - predicted))))
        closed = prod_alpha * eye + (1.0 - prod_alpha) * p0
        l4 = max(l4, float(np.max(np.abs(f - closed))))
    return {
        "gain_decomposition": l1,
        "oblique_idempotent": l2_idem,
        "oblique_transport": l2_transport,
        "error_propagation": l3,
        "error_product": l4,
    }


def relative_gap(empirical: np.ndarray, predicted: np.ndarray) -> np.ndarray:
    return np.abs(empirical - predicted) / np.maximum(predicted, np.finfo(float).tiny)
