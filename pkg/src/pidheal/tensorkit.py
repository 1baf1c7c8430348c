"""Mode-n tensor algebra and HOSVD (Tucker) decomposition of 3-way arrays.

Unfolding convention: the chosen mode indexes the rows; columns run over the
remaining modes in lexicographic order with the lower-numbered mode varying
slowest.  This is numpy's C-order reshape after moving the mode to the front.
Modes are numbered 1, 2, 3.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RANK_CUTOFF = 1e-12


def as_tensor3(data) -> np.ndarray:
    """Validate and return ``data`` as a float64 3-way array."""
    t = np.asarray(data, dtype=np.float64)
    if t.ndim != 3:
        raise ValueError(f"expected a 3-way array, got ndim={t.ndim}")
    if min(t.shape) < 1:
        raise ValueError(f"all dimensions must be >= 1, got {t.shape}")
    if not np.all(np.isfinite(t)):
        raise ValueError("tensor contains non-finite entries")
    return t


def _check_mode(mode: int) -> int:
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")
    return mode - 1


def unfold(t, mode: int) -> np.ndarray:
    """Matricize ``t`` along ``mode``."""
    axis = _check_mode(mode)
    t = as_tensor3(t)
    return np.moveaxis(t, axis, 0).reshape(t.shape[axis], -1)


def fold(m: np.ndarray, mode: int, shape: tuple[int, int, int]) -> np.ndarray:
    """Inverse of :func:`unfold` for a target tensor ``shape``."""
    axis = _check_mode(mode)
    m = np.asarray(m, dtype=np.float64)
    moved = (shape[axis],) + tuple(s for i, s in enumerate(shape) if i != axis)
    if m.shape != (moved[0], int(np.prod(moved[1:]))):
        raise ValueError(f"matrix of shape {m.shape} cannot fold into {shape} along mode {mode}")
    return np.moveaxis(m.reshape(moved), 0, axis)


def mode_product(t, m, mode: int) -> np.ndarray:
    """Mode-n product ``t x_n m``: contracts mode ``n`` of ``t`` with the columns of ``m``.

    ``b[.., j, ..] = sum_i a[.., i, ..] * m[j, i]``.
    """
    axis = _check_mode(mode)
    t = np.asarray(t, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if t.ndim != 3:
        raise ValueError(f"expected a 3-way array, got ndim={t.ndim}")
    if m.ndim != 2 or m.shape[1] != t.shape[axis]:
        raise ValueError(
            f"matrix of shape {m.shape} incompatible with mode {mode} of size {t.shape[axis]}"
        )
    out = np.tensordot(m, t, axes=(1, axis))
    return np.moveaxis(out, 0, axis)


@dataclass(frozen=True)
class TuckerFactors:
    """Core tensor, per-mode orthonormal bases and per-mode singular values."""

    core: np.ndarray
    bases: tuple[np.ndarray, np.ndarray, np.ndarray]
    singular_values: tuple[np.ndarray, np.ndarray, np.ndarray]

    @property
    def ranks(self) -> tuple[int, int, int]:
        return tuple(b.shape[1] for b in self.bases)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(b.shape[0] for b in self.bases)


def numerical_rank(s: np.ndarray) -> int:
    s = np.asarray(s)
    if s.size == 0 or s[0] <= 0:
        return 0
    return int(np.count_nonzero(s >= RANK_CUTOFF * s[0]))


def hosvd(t) -> TuckerFactors:
    """Higher-order SVD with each basis kept at full numerical rank.

    The core is obtained by projecting onto each basis (``V^T``), so that
    :func:`reconstruct` returns the input.
    """
    t = as_tensor3(t)
    bases = []
    spectra = []
    for mode in (1, 2, 3):
        u, s, _ = np.linalg.svd(unfold(t, mode), full_matrices=False)
        k = numerical_rank(s)
        s = s.copy()
        s[k:] = 0.0
        bases.append(np.ascontiguousarray(u[:, :k]))
        spectra.append(s)
    core = t
    for mode, v in zip((1, 2, 3), bases):
        core = mode_product(core, v.T, mode)
    return TuckerFactors(core=core, bases=tuple(bases), singular_values=tuple(spectra))


def truncate_basis(singular_values, threshold: float) -> int:
    """Smallest rank whose squared singular values hold ``threshold`` of the total energy."""
    s = np.asarray(singular_values, dtype=np.float64)
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    if s.ndim != 1:
        raise ValueError("singular values must be a vector")
    if np.any(s < 0):
        raise ValueError("singular values must be nonnegative")
    if np.any(np.diff(s) > 0):
        raise ValueError("singular values must be sorted nonincreasing")
    if s.size == 0 or s[0] == 0.0:
        return 0
    s = np.where(s < RANK_CUTOFF * s[0], 0.0, s)
    energy = np.cumsum(s * s)
    return int(np.searchsorted(energy, threshold * energy[-1], side="left") + 1)


def truncate_factors(f: TuckerFactors, ranks: tuple[int, int, int]) -> TuckerFactors:
    """Keep the leading ``ranks`` columns of each basis and the matching core block."""
    if any(r < 0 or r > fr for r, fr in zip(ranks, f.ranks)):
        raise ValueError(f"ranks {ranks} exceed available ranks {f.ranks}")
    r1, r2, r3 = ranks
    return TuckerFactors(
        core=f.core[:r1, :r2, :r3].copy(),
        bases=tuple(b[:, :r] for b, r in zip(f.bases, ranks)),
        singular_values=f.singular_values,
    )


def reconstruct(f: TuckerFactors) -> np.ndarray:
    """Multiply the core by every basis: ``G x_1 V1 x_2 V2 x_3 V3``."""
    if f.core.shape != f.ranks:
        raise ValueError(f"core shape {f.core.shape} does not match basis ranks {f.ranks}")
    out = f.core
    for mode, v in zip((1, 2, 3), f.bases):
        out = mode_product(out, v, mode)
    return out


def truncation_bound(f: TuckerFactors, ranks: tuple[int, int, int]) -> float:
    """sqrt of the energy discarded over all modes when truncating to ``ranks``."""
    return float(np.sqrt(sum(np.sum(s[r:] ** 2) for s, r in zip(f.singular_values, ranks))))
