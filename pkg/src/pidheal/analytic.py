"""Closed-form controller for orthogonal layers and orthogonal embedding subspaces.

For orthogonal ``theta_t`` with ``theta_t^T V_{t+1} = V_t``, the Riccati
solution collapses to ``P_t = lambda_t / 2 (I - V_t V_t^T)`` where the scalar
``lambda`` obeys ``lambda_T = 0``,
``lambda_t = c (1 + lambda_{t+1}) / (1 + lambda_{t+1} + c)``, and the optimal
feedback becomes ``pi_t(x) = -(1 - alpha_t)(I - V_t V_t^T) x`` with
``alpha_t = c / (1 + lambda_{t+1} + c)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .manifolds import ChannelKind, EmbeddingBasis, complement


@dataclass(frozen=True)
class LambdaSchedule:
    c: float
    lambdas: np.ndarray  # lambda_0 .. lambda_T
    alphas: np.ndarray  # alpha_0 .. alpha_{T-1}

    @property
    def T(self) -> int:
        return len(self.alphas)


def lambda_schedule(c: float, t_horizon: int) -> LambdaSchedule:
    if c < 0:
        raise ValueError(f"c must be nonnegative, got {c}")
    if t_horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {t_horizon}")
    c = float(c)
    lam = np.zeros(t_horizon + 1)
    alpha = np.zeros(t_horizon)
    for t in range(t_horizon - 1, -1, -1):
        nxt = lam[t + 1]
        lam[t] = c * (1.0 + nxt) / (1.0 + nxt + c)
        alpha[t] = c / (1.0 + nxt + c)
    lam.flags.writeable = False
    alpha.flags.writeable = False
    return LambdaSchedule(c, lam, alpha)


def lambda_fixed_point(c: float) -> float:
    """Positive root of ``lambda = c (1 + lambda) / (1 + lambda + c)``, i.e. ``lambda^2 + lambda - c = 0``."""
    return (np.sqrt(1.0 + 4.0 * c) - 1.0) / 2.0


def analytic_feedback(x, v_t: np.ndarray, alpha_t: float) -> np.ndarray:
    """``-(1 - alpha_t) (I - V_t V_t^T) x`` for ``x`` of shape ``(..., d)``."""
    return -(1.0 - alpha_t) * complement(x, v_t)


def closed_form_p(v_t: np.ndarray, lambda_t: float) -> np.ndarray:
    d = v_t.shape[0]
    return 0.5 * lambda_t * (np.eye(d) - v_t @ v_t.T)


@dataclass(frozen=True)
class GainSchedule:
    """Per-layer embedding bases plus the lambda/alpha schedule that drives them."""

    bases: tuple[np.ndarray, ...]  # V_0 .. V_{T-1}
    schedule: LambdaSchedule

    def __post_init__(self):
        if len(self.bases) != self.schedule.T:
            raise ValueError(f"{len(self.bases)} bases for a horizon of {self.schedule.T}")

    @classmethod
    def build(cls, bases: Sequence[np.ndarray], c: float) -> "GainSchedule":
        bases = tuple(np.asarray(v, dtype=np.float64) for v in bases)
        return cls(bases, lambda_schedule(c, len(bases)))

    @property
    def T(self) -> int:
        return self.schedule.T

    def projector(self, t: int) -> np.ndarray:
        v = self.bases[t]
        return v @ v.T

    def gain_matrix(self, t: int) -> np.ndarray:
        """``K_t`` with ``pi_t(x) = -K_t x``."""
        d = self.bases[t].shape[0]
        return (1.0 - self.schedule.alphas[t]) * (np.eye(d) - self.projector(t))

    def gain_decomposition_deviation(self, t: int) -> float:
        a = self.schedule.alphas[t]
        d = self.bases[t].shape[0]
        lhs = np.eye(d) - self.gain_matrix(t)
        rhs = a * np.eye(d) + (1.0 - a) * self.projector(t)
        return float(np.max(np.abs(lhs - rhs)))


class AnalyticController:
    def __init__(self, gains: GainSchedule):
        self.gains = gains

    def __call__(self, t, history):
        return analytic_feedback(history[-1], self.gains.bases[t], self.gains.schedule.alphas[t])


def practical_feedback(history, bases: Mapping[ChannelKind, Optional[np.ndarray]],
                       gains: tuple[float, float, float], alpha_t: float) -> np.ndarray:
    """Weighted sum of per-channel off-subspace residuals, scaled by ``-(1 - alpha_t)``.

    ``history`` stacks ``x_0..x_t``.  The P channel sees ``x_t``, the I channel
    ``x_t + sum_{s<t} x_s`` and the D channel ``x_t - x_{t-1}``.  The D term is
    skipped at ``t = 0`` and wherever its basis is missing.
    """
    history = np.asarray(history, dtype=np.float64)
    kp, ki, kd = gains
    if min(gains) < 0:
        raise ValueError("gains must be nonnegative")
    x = history[-1]
    total = np.zeros_like(x)
    v = bases.get(ChannelKind.P)
    if kp and v is not None:
        total += kp * complement(x, v)
    v = bases.get(ChannelKind.I)
    if ki and v is not None:
        total += ki * complement(history.sum(axis=0), v)
    v = bases.get(ChannelKind.D)
    if kd and v is not None and len(history) >= 2:
        total += kd * complement(x - history[-2], v)
    return -(1.0 - alpha_t) * total


class PracticalController:
    """Multi-channel controller on fitted P/I/D bases with fixed gains."""

    def __init__(self, bases: Mapping[ChannelKind, EmbeddingBasis], gains: tuple[float, float, float],
                 schedule: LambdaSchedule):
        self.bases = {ChannelKind(k): b for k, b in bases.items()}
        self.gains = tuple(float(g) for g in gains)
        self.schedule = schedule

    def __call__(self, t, history):
        layer = {k: b[t] for k, b in self.bases.items()}
        return practical_feedback(history, layer, self.gains, self.schedule.alphas[t])
