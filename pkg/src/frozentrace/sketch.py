"""Randomized range finding and the complement projector ``I - Q Q^T``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ContractError
from .linop import DenseOperator, LinearOperator
from .probes import ProbeMatrix

__all__ = [
    "SketchBasis",
    "range_find",
    "orthonormal_basis",
    "project_complement",
    "split_trace_exact",
    "RANK_TOL",
]

# Columns whose R-diagonal falls below RANK_TOL * ||A S||_F are dropped.
RANK_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SketchBasis:
    """Orthonormal ``dim x rank`` basis of a sketched range.

    ``born_step`` records the trajectory step whose operator produced the
    basis, when it is reused by a frozen schedule.
    """

    dim: int
    q: np.ndarray
    source_seed: int | None = None
    born_step: int | None = None

    @property
    def rank(self) -> int:
        return self.q.shape[1]

    @classmethod
    def empty(cls, dim: int, source_seed=None, born_step=None) -> "SketchBasis":
        q = np.zeros((dim, 0))
        q.setflags(write=False)
        return cls(dim, q, source_seed, born_step)


def orthonormal_basis(y: np.ndarray) -> np.ndarray:
    """Orthonormal basis for the numerical column space of ``y``.

    Householder QR with column pivoting, so the R-diagonal is non-increasing
    and truncation at ``RANK_TOL`` keeps a basis of the true span.
    """
    y = np.asarray(y, dtype=np.float64)
    dim, k = y.shape
    scale = np.linalg.norm(y)
    if k == 0 or scale == 0.0:
        return np.zeros((dim, 0))
    q, r, _ = scipy.linalg.qr(y, mode="economic", pivoting=True, check_finite=False)
    keep = np.abs(np.diagonal(r)) > RANK_TOL * scale
    k_eff = int(np.count_nonzero(keep))
    return np.ascontiguousarray(q[:, :k_eff])


def range_find(op: LinearOperator, s, born_step: int | None = None) -> SketchBasis:
    """Orthonormal basis Q for the range of ``op @ s``.

    One block application of ``op`` (``s.count`` matvecs) followed by a QR
    factorization; rank-deficient sketches yield fewer than ``s.count`` columns.
    """
    entries = s.entries if isinstance(s, ProbeMatrix) else np.asarray(s, dtype=np.float64)
    if entries.ndim != 2 or entries.shape[0] != op.dim:
        raise ContractError(f"sketch of shape {entries.shape} does not match operator dim {op.dim}")
    if entries.shape[1] < 1:
        raise ContractError("sketch needs at least one column")
    q = orthonormal_basis(op.apply_block(entries))
    q.setflags(write=False)
    seed = s.seed if isinstance(s, ProbeMatrix) else None
    return SketchBasis(op.dim, q, source_seed=seed, born_step=born_step)


def project_complement(basis: SketchBasis, x) -> np.ndarray:
    """Return ``x - Q (Q^T x)`` for a vector or a ``dim x k`` block."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != basis.dim or x.ndim not in (1, 2):
        raise ContractError(f"input of shape {x.shape} does not match basis dim {basis.dim}")
    if basis.rank == 0:
        return x.copy()
    q = basis.q
    return x - q @ (q.T @ x)


def split_trace_exact(op: DenseOperator, basis: SketchBasis) -> tuple[float, float]:
    """Dense head/tail split ``(Tr(Q^T A Q), Tr(P A P))`` with ``P = I - Q Q^T``."""
    if basis.dim != op.dim:
        raise ContractError(f"basis dim {basis.dim} does not match operator dim {op.dim}")
    a = op.matrix
    q = basis.q
    head = float(np.trace(q.T @ a @ q)) if basis.rank else 0.0
    p = np.eye(op.dim) - q @ q.T
    tail = float(np.trace(p @ a @ p))
    return head, tail
