"""Hutchinson, Hutch++ and deflated (frozen-basis) trace estimators.

Probe budget for Hutch++ with ``m`` matvec queries: ``m // 3`` sketch columns,
``rank(Q)`` applies for the exact head ``sum_j q_j^T A q_j``, and
``m // 3 + m % 3`` residual probes.  Residual probes are projected before the
operator is applied, so each costs a single matvec.

Seeding: Hutchinson probes and Hutch++ residual probes come from
``(seed, RESIDUAL_STREAM)``; sketch probes from ``(seed, SKETCH_STREAM)``.
Hence ``deflated_hutchinson`` with an empty basis reproduces ``hutchinson``
bit for bit.

The ``*_batch`` functions evaluate many seeds at once and agree with the
single-call functions up to floating-point summation order.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError
from .linop import LinearOperator, exact_trace
from .probes import (
    GAUSSIAN,
    RESIDUAL_STREAM,
    SKETCH_STREAM,
    ProbeKind,
    draw_from,
    draw_probes,
    probe_generator,
)
from .sketch import RANK_TOL, SketchBasis, range_find

__all__ = [
    "EstimateReport",
    "exact",
    "hutchinson",
    "hutchpp",
    "approx_hutchpp",
    "deflated_hutchinson",
    "hutchinson_batch",
    "hutchpp_batch",
    "deflated_batch",
    "hutchpp_budget",
    "relative_error",
    "ESTIMATOR_TAGS",
    "HUTCHPP_MIN_M",
]

ESTIMATOR_TAGS = ("exact", "hutchinson", "hutchpp", "deflated")
HUTCHPP_MIN_M = 6

# Upper bound on floats held by one probe stack in the batched paths.
_BATCH_FLOATS = 1 << 22


@dataclass(frozen=True)
class EstimateReport:
    value: float
    matvecs_used: int
    probes: tuple  # (sketch_count, hutchinson_count)
    seed: int | None
    wall_time: float
    estimator_tag: str
    head: float | None = None
    tail: float | None = None
    rank: int | None = None


def hutchpp_budget(m: int) -> tuple[int, int]:
    """``(sketch_count, residual_count)`` for a Hutch++ budget of ``m`` queries."""
    return m // 3, m // 3 + m % 3


def relative_error(value, trace, zero_tol: float = 1e-12):
    """``|value - trace| / |trace|``; absolute error when ``|trace| < zero_tol``."""
    err = np.abs(np.asarray(value, dtype=np.float64) - trace)
    if abs(trace) < zero_tol:
        return err
    return err / abs(trace)


def _check_m(m, minimum, name):
    if int(m) != m or m < minimum:
        raise ContractError(f"{name} requires m >= {minimum}, got m={m}")


def exact(op: LinearOperator) -> EstimateReport:
    t0 = time.perf_counter()
    value = exact_trace(op)
    return EstimateReport(value, op.dim, (0, 0), None, time.perf_counter() - t0, "exact")


def hutchinson(op: LinearOperator, m: int, kind=GAUSSIAN, seed: int = 0) -> EstimateReport:
    """Mean of ``m`` quadratic forms ``v^T A v`` over i.i.d. probes."""
    _check_m(m, 1, "hutchinson")
    t0 = time.perf_counter()
    v = draw_probes(op.dim, m, kind, seed, RESIDUAL_STREAM).entries
    value = float(np.sum(v * op.apply_block(v)) / m)
    return EstimateReport(value, m, (0, m), seed, time.perf_counter() - t0, "hutchinson", tail=value)


def _deflated_core(op, basis: SketchBasis, g: np.ndarray):
    q = basis.q
    if basis.rank:
        head = float(np.sum(q * op.apply_block(q)))
        pg = g - q @ (q.T @ g)
    else:
        head = 0.0
        pg = g
    tail = float(np.sum(pg * op.apply_block(pg)) / g.shape[1])
    return head + tail, head, tail


def deflated_hutchinson(
    op: LinearOperator,
    basis: SketchBasis,
    m_resid: int,
    kind=GAUSSIAN,
    seed: int = 0,
) -> EstimateReport:
    """``Tr(Q^T A Q)`` plus Hutchinson on ``(I - QQ^T) A (I - QQ^T)``.

    ``basis`` may come from a different operator, e.g. an earlier snapshot of
    a time-varying family; the estimate is unbiased for ``Tr(op)`` regardless.
    """
    if basis.dim != op.dim:
        raise ContractError(f"basis dim {basis.dim} does not match operator dim {op.dim}")
    _check_m(m_resid, 1, "deflated_hutchinson")
    t0 = time.perf_counter()
    g = draw_probes(op.dim, m_resid, kind, seed, RESIDUAL_STREAM).entries
    value, head, tail = _deflated_core(op, basis, g)
    return EstimateReport(
        value,
        basis.rank + m_resid,
        (0, m_resid),
        seed,
        time.perf_counter() - t0,
        "deflated",
        head=head,
        tail=tail,
        rank=basis.rank,
    )


def hutchpp(op: LinearOperator, m: int, kind=GAUSSIAN, seed: int = 0) -> EstimateReport:
    """Hutch++ with ``m >= 6`` matvec queries."""
    return _hutchpp(op, op, m, kind, seed, "hutchpp")


def approx_hutchpp(
    op: LinearOperator, stale_op: LinearOperator, m: int, kind=GAUSSIAN, seed: int = 0
) -> EstimateReport:
    """Hutch++ for ``op`` whose basis is sketched from ``stale_op`` instead."""
    if stale_op.dim != op.dim:
        raise ContractError(f"stale operator dim {stale_op.dim} does not match {op.dim}")
    return _hutchpp(op, stale_op, m, kind, seed, "deflated")


def _hutchpp(op, sketch_op, m, kind, seed, tag):
    _check_m(m, HUTCHPP_MIN_M, "hutchpp")
    t0 = time.perf_counter()
    n_sketch, n_resid = hutchpp_budget(m)
    s = draw_probes(op.dim, n_sketch, kind, seed, SKETCH_STREAM)
    basis = range_find(sketch_op, s)
    g = draw_probes(op.dim, n_resid, kind, seed, RESIDUAL_STREAM).entries
    value, head, tail = _deflated_core(op, basis, g)
    return EstimateReport(
        value,
        n_sketch + basis.rank + n_resid,
        (n_sketch, n_resid),
        seed,
        time.perf_counter() - t0,
        tag,
        head=head,
        tail=tail,
        rank=basis.rank,
    )


# -- batched evaluation over many seeds -------------------------------------------


def _draw_stack(dim, count, kind, seeds, stream) -> np.ndarray:
    """``(len(seeds), dim, count)`` stack equal to per-seed ``draw_probes`` entries."""
    kind = ProbeKind.parse(kind)
    out = np.empty((len(seeds), count, dim))
    for n, s in enumerate(seeds):
        out[n] = draw_from(probe_generator(s, stream), (count, dim), kind)
    return out.transpose(0, 2, 1)


def _apply_stacked(op: LinearOperator, x: np.ndarray) -> np.ndarray:
    n, d, k = x.shape
    if n * k == 0:
        return np.zeros_like(x)
    flat = x.transpose(1, 0, 2).reshape(d, n * k)
    return op.apply_block(flat).reshape(d, n, k).transpose(1, 0, 2)


def _chunks(seeds, width, dim):
    per = max(1, _BATCH_FLOATS // max(1, width * dim))
    seeds = list(seeds)
    for i in range(0, len(seeds), per):
        yield seeds[i : i + per]


def hutchinson_batch(op: LinearOperator, m: int, kind=GAUSSIAN, seeds: Sequence[int] = (0,)) -> np.ndarray:
    _check_m(m, 1, "hutchinson")
    out = []
    for chunk in _chunks(seeds, m, op.dim):
        v = _draw_stack(op.dim, m, kind, chunk, RESIDUAL_STREAM)
        out.append(np.einsum("ndk,ndk->n", v, _apply_stacked(op, v)) / m)
    return np.concatenate(out) if out else np.zeros(0)


def _stacked_tail(op, q, g):
    if q.shape[2]:
        g = g - q @ (q.transpose(0, 2, 1) @ g)
    return np.einsum("ndk,ndk->n", g, _apply_stacked(op, g)) / g.shape[2]


def deflated_batch(
    op: LinearOperator, basis: SketchBasis, m_resid: int, kind=GAUSSIAN, seeds: Sequence[int] = (0,)
) -> np.ndarray:
    if basis.dim != op.dim:
        raise ContractError(f"basis dim {basis.dim} does not match operator dim {op.dim}")
    _check_m(m_resid, 1, "deflated_hutchinson")
    q = basis.q
    head = float(np.sum(q * op.apply_block(q))) if basis.rank else 0.0
    out = []
    for chunk in _chunks(seeds, m_resid + basis.rank, op.dim):
        g = _draw_stack(op.dim, m_resid, kind, chunk, RESIDUAL_STREAM)
        qs = np.broadcast_to(q, (len(chunk),) + q.shape)
        out.append(head + _stacked_tail(op, qs, g))
    return np.concatenate(out) if out else np.zeros(0)


def batched_bases(sketch_op: LinearOperator, s: np.ndarray):
    """Stacked orthonormal bases of ``sketch_op @ s[n]``.

    Returns ``(q, full_rank)``; entries of ``q`` where ``full_rank`` is False
    must be recomputed with the pivoted single-sketch path.
    """
    y = _apply_stacked(sketch_op, s)
    q, r = np.linalg.qr(y)
    diag = np.abs(np.diagonal(r, axis1=1, axis2=2))
    scale = np.linalg.norm(y, axis=(1, 2))
    full_rank = np.all(diag > RANK_TOL * scale[:, None], axis=1)
    return q, full_rank


def hutchpp_batch(
    op: LinearOperator,
    m: int,
    kind=GAUSSIAN,
    seeds: Sequence[int] = (0,),
    sketch_op: LinearOperator | None = None,
) -> np.ndarray:
    _check_m(m, HUTCHPP_MIN_M, "hutchpp")
    sketch_op = op if sketch_op is None else sketch_op
    n_sketch, n_resid = hutchpp_budget(m)
    out = []
    for chunk in _chunks(seeds, n_sketch + n_resid, op.dim):
        s = _draw_stack(op.dim, n_sketch, kind, chunk, SKETCH_STREAM)
        q, full_rank = batched_bases(sketch_op, s)
        head = np.einsum("ndk,ndk->n", q, _apply_stacked(op, q))
        g = _draw_stack(op.dim, n_resid, kind, chunk, RESIDUAL_STREAM)
        vals = head + _stacked_tail(op, q, g)
        for n in np.flatnonzero(~full_rank):
            vals[n] = _hutchpp(op, sketch_op, m, kind, chunk[n], "hutchpp").value
        out.append(vals)
    return np.concatenate(out) if out else np.zeros(0)
