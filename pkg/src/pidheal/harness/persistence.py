"""Binary persistence for embedding bases, gain schedules and lambda schedules.

Layout (all integers u32 and all reals f64, little-endian):

    b"SHC1" | version | tag (1 byte)
    tag P/I/D  basis:     threshold | T | (d, r) * T | layer data | has_temporal (1 byte)
                          [ (l, s) * T | temporal data ]
    tag G      gains:     c | T | (d, r) * T | layer data | lambda_0..lambda_T
    tag L      lambdas:   c | T | lambda_0..lambda_T

Layer data is each matrix in row-major order.  A missing layer (the D
channel at t = 0) is written as ``(0, 0)`` with no data.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ..analytic import GainSchedule, LambdaSchedule
from ..manifolds import ChannelKind, EmbeddingBasis

MAGIC = b"SHC1"
VERSION = 1


class FormatError(ValueError):
    pass


def _matrices(buf: io.BytesIO, mats) -> None:
    for m in mats:
        if m is None:
            buf.write(struct.pack("<II", 0, 0))
        else:
            buf.write(struct.pack("<II", *m.shape))
    for m in mats:
        if m is not None:
            buf.write(np.ascontiguousarray(m, dtype="<f8").tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("truncated file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)

    def matrices(self, T: int) -> list[Optional[np.ndarray]]:
        shapes = [self.unpack("<II") for _ in range(T)]
        out = []
        for rows, cols in shapes:
            if rows == 0 and cols == 0:
                out.append(None)
            else:
                out.append(self.floats(rows * cols).reshape(rows, cols))
        return out


def dumps(obj: Union[EmbeddingBasis, GainSchedule, LambdaSchedule]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    if isinstance(obj, EmbeddingBasis):
        buf.write(obj.channel.value.encode("ascii"))
        buf.write(struct.pack("<dI", obj.threshold, obj.T))
        _matrices(buf, obj.per_layer)
        buf.write(struct.pack("<B", obj.temporal is not None))
        if obj.temporal is not None:
            _matrices(buf, obj.temporal)
    elif isinstance(obj, GainSchedule):
        buf.write(b"G")
        buf.write(struct.pack("<dI", obj.schedule.c, obj.T))
        _matrices(buf, obj.bases)
        buf.write(np.asarray(obj.schedule.lambdas, dtype="<f8").tobytes())
    elif isinstance(obj, LambdaSchedule):
        buf.write(b"L")
        buf.write(struct.pack("<dI", obj.c, obj.T))
        buf.write(np.asarray(obj.lambdas, dtype="<f8").tobytes())
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")
    return buf.getvalue()


def _schedule(c: float, lambdas: np.ndarray) -> LambdaSchedule:
    alphas = c / (1.0 + lambdas[1:] + c)
    lambdas.flags.writeable = False
    alphas.flags.writeable = False
    return LambdaSchedule(c, lambdas, alphas)


def loads(data: bytes):
    rd = _Reader(data)
    if rd.take(4) != MAGIC:
        raise FormatError("bad magic bytes")
    (version,) = rd.unpack("<I")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    tag = rd.take(1).decode("ascii", errors="replace")
    if tag in ("P", "I", "D"):
        threshold, T = rd.unpack("<dI")
        per_layer = rd.matrices(T)
        (has_temporal,) = rd.unpack("<B")
        temporal = tuple(rd.matrices(T)) if has_temporal else None
        obj = EmbeddingBasis(ChannelKind(tag), tuple(per_layer), threshold, temporal)
    elif tag == "G":
        c, T = rd.unpack("<dI")
        bases = rd.matrices(T)
        if any(b is None for b in bases):
            raise FormatError("gain schedule with a missing layer")
        obj = GainSchedule(tuple(bases), _schedule(c, rd.floats(T + 1)))
    elif tag == "L":
        c, T = rd.unpack("<dI")
        obj = _schedule(c, rd.floats(T + 1))
    else:
        raise FormatError(f"unknown tag {tag!r}")
    if rd.pos != len(data):
        raise FormatError("trailing bytes after payload")
    return obj


def save(path, obj) -> None:
    Path(path).write_bytes(dumps(obj))


def load(path):
    return loads(Path(path).read_bytes())


def check_against_stack(obj, d: int, T: Optional[int] = None) -> None:
    """Raise with the offending layer index if a loaded basis does not fit a ``d``-dimensional stack."""
    mats = obj.per_layer if isinstance(obj, EmbeddingBasis) else obj.bases
    if T is not None and len(mats) < T:
        raise ValueError(f"basis has {len(mats)} layers, stack needs {T}")
    for t, m in enumerate(mats):
        if m is not None and m.shape[0] != d:
            raise ValueError(f"layer {t}: basis dimension {m.shape[0]} does not match stack dimension {d}")
