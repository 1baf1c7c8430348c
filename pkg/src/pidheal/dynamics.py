"""Layered linear systems ``x_{t+1} = theta_t (x_t + u_t)`` and synthetic test systems.

States are row vectors: a single state has shape ``(d,)`` and a batch has
shape ``(B, d)``.  A controller is any callable ``ctrl(t, history)`` where
``history`` stacks the states ``x_0..x_t`` along axis 0 and the return value
has the shape of ``history[-1]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

Controller = Callable[[int, np.ndarray], np.ndarray]


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def spawn(seed, n: int) -> list[np.random.Generator]:
    """Independent child generators derived from one seed."""
    if isinstance(seed, np.random.Generator):
        return list(seed.spawn(n))
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass(frozen=True)
class LinearStack:
    layers: tuple[np.ndarray, ...]
    orthogonal: bool = False

    def __post_init__(self):
        layers = tuple(np.asarray(th, dtype=np.float64) for th in self.layers)
        if not layers:
            raise ValueError("a stack needs at least one layer")
        d = layers[0].shape[0]
        for t, th in enumerate(layers):
            if th.shape != (d, d):
                raise ValueError(f"layer {t}: expected ({d}, {d}), got {th.shape}")
            if self.orthogonal:
                dev = np.max(np.abs(th.T @ th - np.eye(d)))
                if dev > 1e-10:
                    raise ValueError(f"layer {t} is not orthogonal (deviation {dev:.2e})")
        object.__setattr__(self, "layers", layers)

    @property
    def T(self) -> int:
        return len(self.layers)

    @property
    def d(self) -> int:
        return self.layers[0].shape[0]

    def __getitem__(self, t: int) -> np.ndarray:
        return self.layers[t]


@dataclass(frozen=True)
class ControlledTrajectory:
    states: np.ndarray  # (T + 1, ..., d)
    controls: np.ndarray  # (T, ..., d)


def random_orthogonal(d: int, seed=None) -> np.ndarray:
    """Haar-like orthogonal matrix from a seeded QR factorization."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    rng = as_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def random_orthogonal_stack(d: int, T: int, seed=None) -> LinearStack:
    rngs = spawn(seed, T)
    return LinearStack(tuple(random_orthogonal(d, g) for g in rngs), orthogonal=True)


def random_basis(d: int, r: int, seed=None) -> np.ndarray:
    """``d x r`` matrix with orthonormal columns."""
    if not 0 <= r <= d:
        raise ValueError(f"need 0 <= r <= d, got r={r}, d={d}")
    if r == 0:
        return np.zeros((d, 0))
    return random_orthogonal(d, seed)[:, :r]


def zero_controller(t: int, history: np.ndarray) -> np.ndarray:
    return np.zeros_like(history[-1])


class OpenLoopController:
    """Replays a precomputed control sequence ``u_0..u_{T-1}``."""

    def __init__(self, controls: np.ndarray):
        self.controls = np.asarray(controls, dtype=np.float64)

    def __call__(self, t, history):
        return self.controls[t]


def forward(stack: LinearStack, x0, ctrl: Controller = zero_controller) -> ControlledTrajectory:
    """Propagate ``x0`` through the stack under ``ctrl``."""
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape[-1] != stack.d:
        raise ValueError(f"state dimension {x0.shape[-1]} does not match stack dimension {stack.d}")
    states = np.empty((stack.T + 1,) + x0.shape)
    controls = np.empty((stack.T,) + x0.shape)
    states[0] = x0
    for t, theta in enumerate(stack.layers):
        u = np.asarray(ctrl(t, states[: t + 1]), dtype=np.float64)
        if u.shape != x0.shape:
            raise RuntimeError(f"controller returned shape {u.shape} at layer {t}, expected {x0.shape}")
        controls[t] = u
        states[t + 1] = (states[t] + u) @ theta.T
    return ControlledTrajectory(states, controls)


def propagate_basis(stack: LinearStack, v0: np.ndarray) -> list[np.ndarray]:
    """Transport ``V_0`` through the layers: ``V_{t+1} = theta_t V_t`` (``T + 1`` matrices)."""
    if not stack.orthogonal:
        raise ValueError("basis propagation requires an orthogonal stack")
    out = [np.asarray(v0, dtype=np.float64)]
    for theta in stack.layers:
        out.append(theta @ out[-1])
    return out


def make_perturbation(v0: np.ndarray, par_norm: float, perp_norm: float, seed=None) -> np.ndarray:
    """Random ``z = z_par + z_perp`` with prescribed norms inside / orthogonal to ``span(V_0)``."""
    if par_norm < 0 or perp_norm < 0:
        raise ValueError("perturbation norms must be nonnegative")
    d, r = v0.shape
    if perp_norm > 0 and r >= d:
        raise ValueError("no orthogonal complement: basis already spans the whole space")
    if par_norm > 0 and r == 0:
        raise ValueError("empty basis cannot carry a parallel component")
    rng = as_rng(seed)
    z = np.zeros(d)
    if par_norm > 0:
        a = v0 @ rng.standard_normal(r)
        z += par_norm * a / np.linalg.norm(a)
    if perp_norm > 0:
        g = rng.standard_normal(d)
        while True:
            b = g - v0 @ (v0.T @ g)
            nb = np.linalg.norm(b)
            if nb > 1e-8 * np.linalg.norm(g):
                break
            g = rng.standard_normal(d)
        z += perp_norm * b / nb
    return z


@dataclass(frozen=True)
class SyntheticTask:
    """Classification task whose clean inputs lie in ``span(V_0)``.

    The readout acts on the terminal state's coordinates in the full basis
    ``[V_T | V_T^perp]``: ``logits = W_par a + W_perp b``.  Labels come from
    the clean coefficients, so a clean uncontrolled pass is always correct and
    only off-subspace energy reaching the readout can flip a decision.
    """

    stack: LinearStack
    data_basis: np.ndarray
    complement_basis: np.ndarray
    readout_par: np.ndarray  # (K, r)
    readout_perp: np.ndarray  # (K, d - r)
    seed: int

    @property
    def num_classes(self) -> int:
        return self.readout_par.shape[0]

    @property
    def terminal_bases(self) -> tuple[np.ndarray, np.ndarray]:
        theta_all = np.eye(self.stack.d)
        for theta in self.stack.layers:
            theta_all = theta @ theta_all
        return theta_all @ self.data_basis, theta_all @ self.complement_basis

    def sample(self, n: int, seed=None) -> tuple[np.ndarray, np.ndarray]:
        """``n`` clean inputs ``x_0 = V_0 a`` and their labels."""
        rng = as_rng(seed)
        a = rng.standard_normal((n, self.data_basis.shape[1]))
        return a @ self.data_basis.T, classify_logits(a @ self.readout_par.T)

    def predict(self, x_T: np.ndarray) -> np.ndarray:
        v_par, v_perp = self.terminal_bases
        logits = (x_T @ v_par) @ self.readout_par.T + (x_T @ v_perp) @ self.readout_perp.T
        return classify_logits(logits)


def classify_logits(logits: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximal index, i.e. ties go to the lowest class
    return np.argmax(logits, axis=-1)


def make_synthetic_task(d: int, r: int, T: int, num_classes: int = 4, seed: int = 0,
                        perp_gain: float = 1.0) -> SyntheticTask:
    """Orthogonal stack, random data subspace and random readout.

    ``perp_gain`` scales how strongly the readout reacts to off-subspace
    energy relative to on-subspace energy.
    """
    if not 0 < r < d:
        raise ValueError(f"need 0 < r < d, got r={r}, d={d}")
    g_stack, g_basis, g_read = spawn(seed, 3)
    stack = random_orthogonal_stack(d, T, g_stack)
    full = random_orthogonal(d, g_basis)
    w_par = g_read.standard_normal((num_classes, r)) / np.sqrt(r)
    w_perp = perp_gain * g_read.standard_normal((num_classes, d - r)) / np.sqrt(d - r)
    return SyntheticTask(stack, full[:, :r].copy(), full[:, r:].copy(), w_par, w_perp, seed)
