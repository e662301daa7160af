"""Reproducible random probe matrices.

Every probe matrix is produced by a Philox-4x64 counter-based bit generator
keyed by ``(seed, stream)``.  Entries are generated column by column: the
stream is consumed as a C-ordered ``(count, dim)`` array which is then
transposed, so column ``j`` of a wide draw equals column ``j`` of any
narrower draw with the same key.  Gaussian entries come from numpy's
``standard_normal``; Rademacher entries take the lowest bit of one raw 64-bit
word per entry (bit 0 -> +1, bit 1 -> -1).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

__all__ = [
    "ProbeKind",
    "ProbeMatrix",
    "draw_probes",
    "probe_generator",
    "draw_from",
    "GAUSSIAN",
    "RADEMACHER",
    "RESIDUAL_STREAM",
    "SKETCH_STREAM",
]

_MASK64 = (1 << 64) - 1

# Stream identifiers: residual / Hutchinson probes (G, v) and sketch probes (S)
# drawn from the same seed never share random bits.
RESIDUAL_STREAM = 0
SKETCH_STREAM = 1


class ProbeKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    RADEMACHER = "rademacher"

    @classmethod
    def parse(cls, value) -> "ProbeKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ContractError(
                f"unknown probe kind {value!r}; expected 'gaussian' or 'rademacher'"
            ) from None


GAUSSIAN = ProbeKind.GAUSSIAN
RADEMACHER = ProbeKind.RADEMACHER


@dataclass(frozen=True, eq=False)
class ProbeMatrix:
    dim: int
    count: int
    kind: ProbeKind
    seed: int
    entries: np.ndarray
    stream: int = RESIDUAL_STREAM

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.entries
        return self.entries.astype(dtype)


def probe_generator(seed: int, stream: int = RESIDUAL_STREAM) -> np.random.Generator:
    """Generator keyed by ``(seed, stream)``; negative seeds wrap modulo 2**64."""
    key = np.array([int(seed) & _MASK64, int(stream) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def draw_from(gen: np.random.Generator, shape, kind: ProbeKind) -> np.ndarray:
    """Draw raw probe entries of ``shape`` (C order) from an existing generator."""
    if kind is ProbeKind.GAUSSIAN:
        return gen.standard_normal(shape)
    n = int(np.prod(shape))
    bits = gen.bit_generator.random_raw(n).reshape(shape)
    return 1.0 - 2.0 * (bits & np.uint64(1)).astype(np.float64)


def draw_probes(
    dim: int,
    count: int,
    kind: ProbeKind | str = ProbeKind.GAUSSIAN,
    seed: int = 0,
    stream: int = RESIDUAL_STREAM,
) -> ProbeMatrix:
    """Draw a ``dim x count`` matrix of i.i.d. probe columns.

    The result is a pure function of ``(dim, count, kind, seed, stream)``.
    """
    if dim < 1 or count < 1:
        raise ContractError(f"probe matrix needs dim >= 1 and count >= 1, got {dim}x{count}")
    kind = ProbeKind.parse(kind)
    raw = draw_from(probe_generator(seed, stream), (count, dim), kind)
    entries = np.ascontiguousarray(raw.T)
    entries.setflags(write=False)
    return ProbeMatrix(dim=dim, count=count, kind=kind, seed=int(seed), entries=entries, stream=stream)
