"""Riccati recursion and LQR feedback for ``x_{t+1} = theta_t (x_t + u_t)``.

Running loss per layer: ``1/2 (x + u)^T Q_t (x + u) + c/2 ||u||^2``, value
function ``V_t(x) = x^T P_t x`` with ``P_T = 0``.  No orthogonality is assumed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .dynamics import ControlledTrajectory, LinearStack

PIVOT_FLOOR = 1e-12


class DegenerateScheduleError(np.linalg.LinAlgError):
    """The feedback system ``Q + c I + 2 theta^T P theta`` is singular."""


def merged_projector(*bases: np.ndarray, d: int | None = None) -> np.ndarray:
    """Orthogonal projector onto the complement of the span of all given bases.

    ``None`` entries are skipped.  With no bases at all the identity is returned.
    """
    cols = [b for b in bases if b is not None and b.shape[1] > 0]
    if d is None:
        if not bases or all(b is None for b in bases):
            raise ValueError("cannot infer dimension without a basis")
        d = next(b for b in bases if b is not None).shape[0]
    if not cols:
        return np.eye(d)
    u, s, _ = np.linalg.svd(np.hstack(cols), full_matrices=False)
    k = int(np.count_nonzero(s > 1e-10 * s[0]))
    u = u[:, :k]
    return np.eye(d) - u @ u.T


def check_q(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        raise ValueError(f"Q must be square, got {q.shape}")
    if np.max(np.abs(q - q.T)) > 1e-12:
        raise ValueError("Q must be symmetric")
    if np.linalg.eigvalsh(q)[0] < -1e-10:
        raise ValueError("Q must be positive semidefinite")
    return q


@dataclass(frozen=True)
class RiccatiSchedule:
    p: tuple[np.ndarray, ...]  # P_0 .. P_T
    c: float
    degenerate: bool = False

    @property
    def T(self) -> int:
        return len(self.p) - 1


def _solve_spd(m: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Cholesky solve; raises if a pivot falls below the floor."""
    try:
        cf = scipy.linalg.cho_factor(m, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise DegenerateScheduleError(str(exc)) from exc
    piv = np.abs(np.diag(cf[0])) ** 2
    if piv.min() < PIVOT_FLOOR * max(piv.max(), 1.0):
        raise DegenerateScheduleError(f"pivot {piv.min():.2e} below floor")
    return scipy.linalg.cho_solve(cf, rhs, check_finite=False)


def _pinv_solve(m: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    return np.linalg.pinv(m, rcond=1e-10, hermitian=True) @ rhs


def riccati_backward(stack: LinearStack, qs: Sequence[np.ndarray], c: float) -> RiccatiSchedule:
    """Backward recursion

    ``P_t = Q/2 + A - 1/2 N^T (N + c I)^{-1} N`` with ``A = theta^T P_{t+1} theta``
    and ``N = Q + 2 A``, starting from ``P_T = 0``.

    With ``c = 0`` a singular system falls back to the pseudo-inverse and the
    schedule is flagged degenerate.
    """
    if c < 0:
        raise ValueError(f"c must be nonnegative, got {c}")
    if len(qs) != stack.T:
        raise ValueError(f"need {stack.T} Q matrices, got {len(qs)}")
    d = stack.d
    eye = np.eye(d)
    p_next = np.zeros((d, d))
    ps = [p_next]
    degenerate = False
    for t in range(stack.T - 1, -1, -1):
        theta = stack[t]
        q = np.asarray(qs[t], dtype=np.float64)
        a = theta.T @ p_next @ theta
        n = q + 2.0 * a
        m = n + c * eye
        try:
            sol = _solve_spd(m, n)
        except DegenerateScheduleError:
            if c > 0:
                raise
            degenerate = True
            sol = _pinv_solve(m, n)
        p = 0.5 * q + a - 0.5 * n.T @ sol
        p = 0.5 * (p + p.T)
        ps.append(p)
        p_next = p
    return RiccatiSchedule(tuple(reversed(ps)), float(c), degenerate)


def feedback_gain(theta: np.ndarray, p_next: np.ndarray, q: np.ndarray, c: float,
                  pinv_fallback: bool = False) -> np.ndarray:
    """Matrix ``K`` with ``pi(x) = -K x``: ``K = (Q + c I + 2 A)^{-1} (Q + 2 A)``."""
    n = q + 2.0 * theta.T @ p_next @ theta
    m = n + c * np.eye(n.shape[0])
    try:
        return _solve_spd(m, n)
    except DegenerateScheduleError:
        if not pinv_fallback:
            raise
        return _pinv_solve(m, n)


def lqr_feedback(x, theta, p_next, q, c: float, pinv_fallback: bool = False) -> np.ndarray:
    """Optimal control ``-(Q + c I + 2 theta^T P theta)^{-1} (Q + 2 theta^T P theta) x``."""
    x = np.asarray(x, dtype=np.float64)
    k = feedback_gain(theta, p_next, q, c, pinv_fallback)
    return -(x @ k.T)


class RiccatiController:
    """Closed-loop LQR controller with gains precomputed per layer."""

    def __init__(self, stack: LinearStack, qs: Sequence[np.ndarray], c: float,
                 schedule: RiccatiSchedule | None = None):
        self.schedule = schedule if schedule is not None else riccati_backward(stack, qs, c)
        fallback = self.schedule.degenerate or c == 0
        self.gains = [
            feedback_gain(stack[t], self.schedule.p[t + 1], np.asarray(qs[t]), c, fallback)
            for t in range(stack.T)
        ]

    def __call__(self, t, history):
        return -(history[-1] @ self.gains[t].T)


def quadratic_loss(x, u, q, c: float):
    w = x + u
    return 0.5 * np.einsum("...i,ij,...j->...", w, q, w) + 0.5 * c * np.sum(u * u, axis=-1)


def bellman_check(traj: ControlledTrajectory, sched: RiccatiSchedule, qs: Sequence[np.ndarray],
                  c: float) -> float:
    """Largest violation of ``x_t^T P_t x_t = loss_t + x_{t+1}^T P_{t+1} x_{t+1}`` along ``traj``."""
    worst = 0.0
    for t in range(sched.T):
        x, u, xn = traj.states[t], traj.controls[t], traj.states[t + 1]
        v_t = np.einsum("...i,ij,...j->...", x, sched.p[t], x)
        v_n = np.einsum("...i,ij,...j->...", xn, sched.p[t + 1], xn)
        gap = np.abs(v_t - quadratic_loss(x, u, np.asarray(qs[t]), c) - v_n)
        worst = max(worst, float(np.max(gap)))
    return worst
