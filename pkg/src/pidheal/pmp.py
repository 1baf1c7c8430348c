"""Pontryagin-principle solver (method of successive approximations) for the PID running loss.

The running loss at layer ``t`` is

    1/2 ||Q^P_t (x_t + u_t)||^2
  + 1/2 ||Q^I_t (x_t + u_t + sum_{s<t} x_s)||^2
  + 1/2 ||Q^D_t (x_t + u_t - x_{t-1})||^2        (t >= 1)
  + c_t/2 ||u_t||^2

and the total objective is its sum over layers (no terminal loss).  The I and
D terms couple a layer's loss to earlier states, so the adjoint ``p_t`` is
the negated total derivative of the downstream objective with respect to
``x_t``, cross-time terms included.  Every function accepts a single state
``(d,)`` or a batch ``(B, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dynamics import LinearStack, forward, OpenLoopController


@dataclass(frozen=True)
class RunningLossSpec:
    qp: tuple[Optional[np.ndarray], ...]
    qi: tuple[Optional[np.ndarray], ...]
    qd: tuple[Optional[np.ndarray], ...]
    c: np.ndarray
    bound: Optional[float] = None

    def __post_init__(self):
        T = len(self.c)
        c = np.asarray(self.c, dtype=np.float64)
        if np.any(c < 0):
            raise ValueError("regularization c_t must be nonnegative")
        object.__setattr__(self, "c", c)
        for name in ("qp", "qi", "qd"):
            qs = tuple(getattr(self, name))
            if len(qs) != T:
                raise ValueError(f"{name}: expected {T} entries, got {len(qs)}")
            for t, q in enumerate(qs):
                if q is None:
                    continue
                if np.max(np.abs(q @ q - q)) > 1e-10:
                    raise ValueError(f"{name}[{t}] is not idempotent")
            object.__setattr__(self, name, qs)

    @property
    def T(self) -> int:
        return len(self.c)

    @classmethod
    def from_bases(cls, bases_p=None, bases_i=None, bases_d=None, c=0.0, T=None, d=None,
                   bound=None) -> "RunningLossSpec":
        """Complement projectors ``I - V V^T`` for each supplied per-layer basis list."""
        lists = [b for b in (bases_p, bases_i, bases_d) if b is not None]
        if T is None:
            T = len(lists[0])
        if d is None:
            d = next(v.shape[0] for b in lists for v in b if v is not None)

        def proj(bases):
            if bases is None:
                return (None,) * T
            return tuple(None if v is None else np.eye(d) - v @ v.T for v in bases[:T])

        c_arr = np.broadcast_to(np.asarray(c, dtype=np.float64), (T,)).copy()
        return cls(proj(bases_p), proj(bases_i), proj(bases_d), c_arr, bound)

    def without_integral(self) -> "RunningLossSpec":
        return RunningLossSpec(self.qp, (None,) * self.T, self.qd, self.c, self.bound)


@dataclass(frozen=True)
class MsaConfig:
    max_outer_iters: int = 50
    inner_steps: int = 5
    step_size: float = 0.1
    max_halvings: int = 20
    tol: float = 1e-8
    step_growth: float = 1.0  # multiplier applied to the step after an accepted iteration
    max_step: float = 1.0

    def __post_init__(self):
        if self.max_outer_iters < 1 or self.inner_steps < 1 or self.max_halvings < 1:
            raise ValueError("iteration counts must be positive")
        if self.step_size <= 0 or self.tol < 0 or self.step_growth < 1.0:
            raise ValueError("invalid step configuration")


@dataclass
class MsaResult:
    controls: np.ndarray
    states: np.ndarray
    adjoints: np.ndarray
    objective: np.ndarray
    converged: bool
    iterations: int
    history: list = field(default_factory=list)  # total objective after each outer iteration
    step_sizes: list = field(default_factory=list)


def _apply(q, v):
    return v @ q.T


def _terms(history, u, spec: RunningLossSpec, t: int):
    """Channel residuals ``(r_P, r_I, r_D)`` at layer ``t`` (``None`` for absent channels)."""
    x = history[t]
    w = x + u
    rp = None if spec.qp[t] is None else _apply(spec.qp[t], w)
    ri = None
    if spec.qi[t] is not None:
        past = history[:t].sum(axis=0) if t > 0 else 0.0
        ri = _apply(spec.qi[t], w + past)
    rd = None
    if spec.qd[t] is not None and t >= 1:
        rd = _apply(spec.qd[t], w - history[t - 1])
    return rp, ri, rd


def _sq(v):
    return 0.0 if v is None else 0.5 * np.sum(v * v, axis=-1)


def running_loss(history, u, spec: RunningLossSpec, t: int):
    """Layer-``t`` running loss; ``history`` stacks at least ``x_0..x_t``."""
    history = np.asarray(history, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    rp, ri, rd = _terms(history, u, spec, t)
    return _sq(rp) + _sq(ri) + _sq(rd) + 0.5 * spec.c[t] * np.sum(u * u, axis=-1)


def running_loss_bound(history, u, spec: RunningLossSpec, t: int, T: int, bound: float):
    """Right-hand side of the loose running-loss bound

    ``sum_ch 1/2 ||Q^ch (x_t + u_t)||^2 + c_t/2 ||u_t||^2 + T B / 2``.
    """
    x = np.asarray(history, dtype=np.float64)[t]
    w = x + u
    out = 0.5 * spec.c[t] * np.sum(u * u, axis=-1) + 0.5 * T * bound
    for q in (spec.qp[t], spec.qi[t], spec.qd[t] if t >= 1 else None):
        if q is not None:
            out = out + _sq(_apply(q, w))
    return out


def _channel_grads(rp, ri, rd, spec, t):
    gp = None if rp is None else rp @ spec.qp[t]
    gi = None if ri is None else ri @ spec.qi[t]
    gd = None if rd is None else rd @ spec.qd[t]
    return gp, gi, gd


def loss_grad_u(history, u, spec: RunningLossSpec, t: int):
    """Gradient of the layer-``t`` running loss with respect to ``u_t``."""
    rp, ri, rd = _terms(history, u, spec, t)
    g = spec.c[t] * u
    for gc in _channel_grads(rp, ri, rd, spec, t):
        if gc is not None:
            g = g + gc
    return g


def hamiltonian(t: int, history, p_next, theta, u, spec: RunningLossSpec):
    """``p_{t+1}^T theta (x_t + u) - L_t``."""
    history = np.asarray(history, dtype=np.float64)
    x = history[t]
    return np.sum(p_next * ((x + u) @ theta.T), axis=-1) - running_loss(history, u, spec, t)


def hamiltonian_grad_u(t: int, history, p_next, theta, u, spec: RunningLossSpec):
    return p_next @ theta - loss_grad_u(history, u, spec, t)


def objective(stack: LinearStack, x0, controls, spec: RunningLossSpec):
    traj = forward(stack, x0, OpenLoopController(controls))
    return total_loss(traj.states, traj.controls, spec)


def total_loss(states, controls, spec: RunningLossSpec):
    return sum(running_loss(states, controls[t], spec, t) for t in range(spec.T))


def backward_adjoint(stack: LinearStack, states, controls, spec: RunningLossSpec) -> np.ndarray:
    """Adjoints ``p_0..p_T`` with ``p_T = 0`` and ``p_t = -dJ/dx_t``."""
    T = stack.T
    lam = np.zeros_like(states)
    carry_i = np.zeros_like(states[0])  # sum over t' > t of I-channel state gradients
    carry_d = np.zeros_like(states[0])  # D-channel gradient of layer t+1 wrt x_t
    for t in range(T - 1, -1, -1):
        rp, ri, rd = _terms(states, controls[t], spec, t)
        gp, gi, gd = _channel_grads(rp, ri, rd, spec, t)
        direct = lam[t + 1] @ stack[t] + carry_i - carry_d
        for gc in (gp, gi, gd):
            if gc is not None:
                direct = direct + gc
        lam[t] = direct
        if gi is not None:
            carry_i = carry_i + gi
        carry_d = gd if gd is not None else np.zeros_like(carry_d)
    return -lam


def control_gradient(stack: LinearStack, states, controls, adjoints, spec: RunningLossSpec):
    """``dJ/du_t`` for every layer, ``(T, ..., d)``."""
    return np.stack([
        loss_grad_u(states, controls[t], spec, t) - adjoints[t + 1] @ stack[t]
        for t in range(stack.T)
    ])


def _ascend(stack, states, adjoints, controls, spec, cfg, eta):
    new = controls.copy()
    for t in range(stack.T):
        drive = adjoints[t + 1] @ stack[t]
        u = new[t]
        for _ in range(cfg.inner_steps):
            u = u + eta[..., None] * (drive - loss_grad_u(states, u, spec, t))
        new[t] = u
    return new


def msa_solve(stack: LinearStack, x0, spec: RunningLossSpec, cfg: MsaConfig = MsaConfig(),
              controls0=None) -> MsaResult:
    """Successive approximations on the Hamiltonian with step halving.

    Each outer iteration runs a forward pass, a backward adjoint pass and
    ``cfg.inner_steps`` gradient-ascent steps on every layer's Hamiltonian
    with states and adjoints frozen.  A trial whose objective rises is
    rejected and retried with half the step (per sample for batches), so the
    objective never increases.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    single = x0.ndim == 1
    xb = x0[None] if single else x0
    B = xb.shape[0]
    u = np.zeros((stack.T,) + xb.shape) if controls0 is None else np.array(controls0, dtype=np.float64).reshape((stack.T,) + xb.shape)
    eta = np.full(B, cfg.step_size)
    traj = forward(stack, xb, OpenLoopController(u))
    J = total_loss(traj.states, u, spec)
    hist = [float(np.sum(J))]
    steps = [eta.copy()]
    converged = False
    it = 0
    for it in range(1, cfg.max_outer_iters + 1):
        p = backward_adjoint(stack, traj.states, u, spec)
        active = np.ones(B, dtype=bool)
        new_u = u.copy()
        new_states = traj.states.copy()
        new_J = J.copy()
        for _ in range(cfg.max_halvings + 1):
            trial = _ascend(stack, traj.states, p, u, spec, cfg, eta)
            tt = forward(stack, xb, OpenLoopController(trial))
            tJ = total_loss(tt.states, trial, spec)
            ok = active & (tJ <= J)
            new_u[:, ok] = trial[:, ok]
            new_states[:, ok] = tt.states[:, ok]
            new_J[ok] = tJ[ok]
            active &= ~ok
            if not active.any():
                break
            eta = np.where(active, 0.5 * eta, eta)
        change = np.max(np.abs(new_u - u), initial=0.0)
        eta = np.where(active, eta, np.minimum(eta * cfg.step_growth, cfg.max_step))
        u, J = new_u, new_J
        traj = type(traj)(new_states, u)
        hist.append(float(np.sum(J)))
        steps.append(eta.copy())
        if change < cfg.tol:
            converged = True
            break
    p = backward_adjoint(stack, traj.states, u, spec)
    if single:
        return MsaResult(u[:, 0], traj.states[:, 0], p[:, 0], J[0], converged, it, hist, steps)
    return MsaResult(u, traj.states, p, J, converged, it, hist, steps)
