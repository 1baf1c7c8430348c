"""Per-layer P/I/D embedding subspaces built from trajectory ensembles."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensorkit


class ChannelKind(str, enum.Enum):
    P = "P"  # state
    I = "I"  # accumulated past states
    D = "D"  # difference of consecutive states


@dataclass(frozen=True)
class TrajectoryEnsemble:
    """Hidden states of ``N`` samples, one ``(N, l, d)`` tensor per layer."""

    layers: tuple[np.ndarray, ...]

    def __post_init__(self):
        layers = tuple(tensorkit.as_tensor3(x) for x in self.layers)
        if not layers:
            raise ValueError("ensemble needs at least one layer")
        shapes = {x.shape for x in layers}
        if len(shapes) != 1:
            raise ValueError(f"layer tensors disagree in shape: {sorted(shapes)}")
        object.__setattr__(self, "layers", layers)

    @classmethod
    def from_states(cls, states: np.ndarray) -> "TrajectoryEnsemble":
        """Build from a ``(T, N, d)`` or ``(T, N, l, d)`` array of states."""
        states = np.asarray(states, dtype=np.float64)
        if states.ndim == 3:
            states = states[:, :, None, :]
        return cls(tuple(states))

    @property
    def T(self) -> int:
        return len(self.layers)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.layers[0].shape


@dataclass(frozen=True)
class EmbeddingBasis:
    """Orthonormal embedding bases ``V_t`` (``d x r_t``) for one channel.

    For the D channel ``per_layer[0]`` is ``None``: no difference exists at
    the first layer.
    """

    channel: ChannelKind
    per_layer: tuple[Optional[np.ndarray], ...]
    threshold: float
    temporal: Optional[tuple[Optional[np.ndarray], ...]] = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "channel", ChannelKind(self.channel))
        for t, v in enumerate(self.per_layer):
            if v is None:
                continue
            if v.ndim != 2 or v.shape[1] > v.shape[0]:
                raise ValueError(f"layer {t}: basis shape {v.shape} is not d x r with r <= d")
            dev = np.max(np.abs(v.T @ v - np.eye(v.shape[1])), initial=0.0)
            if dev > 1e-10:
                raise ValueError(f"layer {t}: basis columns not orthonormal (deviation {dev:.2e})")

    @property
    def T(self) -> int:
        return len(self.per_layer)

    @property
    def ranks(self) -> list[Optional[int]]:
        return [None if v is None else v.shape[1] for v in self.per_layer]

    def __getitem__(self, t: int) -> Optional[np.ndarray]:
        return self.per_layer[t]


def accumulate_states(e: TrajectoryEnsemble) -> TrajectoryEnsemble:
    """Layer ``t`` of the result is the sum of input layers ``0..t``."""
    return TrajectoryEnsemble(tuple(np.cumsum(np.stack(e.layers), axis=0)))


def difference_states(e: TrajectoryEnsemble) -> TrajectoryEnsemble:
    """``T - 1`` layers ``X_t - X_{t-1}`` for ``t = 1..T-1``."""
    if e.T < 2:
        raise ValueError("difference_states needs at least two layers")
    return TrajectoryEnsemble(tuple(b - a for a, b in zip(e.layers[:-1], e.layers[1:])))


def channel_ensemble(e: TrajectoryEnsemble, ch: ChannelKind) -> TrajectoryEnsemble:
    ch = ChannelKind(ch)
    if ch is ChannelKind.P:
        return e
    if ch is ChannelKind.I:
        return accumulate_states(e)
    return difference_states(e)


def _layer_basis(x: np.ndarray, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    f = tensorkit.hosvd(x)
    k_emb = tensorkit.truncate_basis(f.singular_values[2], threshold)
    k_tmp = tensorkit.truncate_basis(f.singular_values[1], threshold)
    return f.bases[2][:, :k_emb].copy(), f.bases[1][:, :k_tmp].copy()


def build_basis(e: TrajectoryEnsemble, ch: ChannelKind, threshold: float = 0.99) -> EmbeddingBasis:
    """Fit one channel's per-layer embedding bases by Tucker decomposition.

    The embedding (mode-3) spectrum is truncated at ``threshold`` of its
    energy; the temporal (mode-2) bases are kept alongside.
    """
    ch = ChannelKind(ch)
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    if ch is ChannelKind.D and e.T < 2:
        raise ValueError("the D channel needs at least two layers")
    src = channel_ensemble(e, ch)
    fitted = [_layer_basis(x, threshold) for x in src.layers]
    per_layer = [v for v, _ in fitted]
    temporal = [w for _, w in fitted]
    if ch is ChannelKind.D:
        per_layer.insert(0, None)
        temporal.insert(0, None)
    return EmbeddingBasis(ch, tuple(per_layer), threshold, tuple(temporal))


def residual(x, v) -> np.ndarray | float:
    """Distance ``||(I - V V^T) x||`` from ``x`` (``(..., d)``) to ``span(V)``."""
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    r = x - (x @ v) @ v.T
    out = np.linalg.norm(r, axis=-1)
    return float(out) if out.ndim == 0 else out


def complement(x, v) -> np.ndarray:
    """``(I - V V^T) x`` for row-stacked ``x``."""
    x = np.asarray(x, dtype=np.float64)
    return x - (x @ v) @ v.T


def project_matrix_state(x: np.ndarray, v: np.ndarray, w: Optional[np.ndarray] = None) -> np.ndarray:
    """Project an ``l x d`` state row-wise onto ``span(V)``; with ``w`` also onto ``span(W)`` temporally."""
    out = (x @ v) @ v.T
    if w is not None:
        out = w @ (w.T @ out)
    return out


def rank_table(bases: Sequence[EmbeddingBasis]) -> list[dict]:
    """Per-layer ranks of each channel (``None`` where the channel is undefined)."""
    T = max(b.T for b in bases)
    rows = []
    for t in range(T):
        row = {"t": t}
        for b in bases:
            row[f"rank_{b.channel.value}"] = b.ranks[t] if t < b.T else None
        rows.append(row)
    return rows
