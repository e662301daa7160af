"""Trace integrals over time-varying operators with a frozen-QR schedule.

A trajectory ``t -> A_t`` on ``[0, T]`` is sampled on the uniform grid
``t_i = i * T / L``.  The integral of ``Tr(A_t)`` is approximated by the
left-endpoint rule, each step's trace by Hutch++ whose basis ``Q`` is only
recomputed at anchor steps ``0, L_s, 2 L_s, ...`` and reused (frozen) in
between.

Probe layout per seed: sketch blocks are drawn sequentially from
``(seed, SKETCH_STREAM)``, one ``dim x m//3`` block per anchor (or a single
block reused by every anchor when ``redraw_sketch`` is off).  Residual blocks
come from ``(seed, RESIDUAL_STREAM)``, one per step, or a single block when
``fix_probes`` is on.  Block 0 of each stream is exactly the matrix ``hutchpp``
draws for the same seed.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError
from .estimators import (
    GAUSSIAN,
    HUTCHPP_MIN_M,
    EstimateReport,
    _apply_stacked,
    _deflated_core,
    _stacked_tail,
    batched_bases,
    hutchpp_budget,
)
from .linop import DenseOperator, LinearOperator, exact_trace, random_symmetric
from .probes import RESIDUAL_STREAM, SKETCH_STREAM, ProbeKind, draw_from, probe_generator
from .sketch import orthonormal_basis, range_find

__all__ = [
    "OperatorTrajectory",
    "FrozenSchedule",
    "IntegralEstimateReport",
    "CostRow",
    "make_affine_trajectory",
    "traceless_direction",
    "make_constant_trajectory",
    "trajectory_from_snapshots",
    "estimate_trace_integral",
    "estimate_trace_integral_batch",
    "estimate_log_density_delta",
    "left_endpoint_exact",
    "cost_profile",
]

_TRAJ_BATCH_FLOATS = 1 << 24


@dataclass(frozen=True, eq=False)
class OperatorTrajectory:
    """Snapshots ``at(i)`` of an operator family on a uniform grid of ``steps`` intervals.

    ``lipschitz_bound`` bounds ``||A_t - A_s||_F / |t - s|`` and ``trace_bound``
    is ``max_t |Tr(A_t)|``.  ``exact_integral`` is the closed form of the trace
    integral when one is known.
    """

    dim: int
    horizon: float
    steps: int
    at: Callable[[int], LinearOperator]
    lipschitz_bound: float
    trace_bound: float
    exact_integral: float | None = None

    def __post_init__(self):
        if not self.horizon > 0:
            raise ContractError(f"horizon must be positive, got {self.horizon}")
        if int(self.steps) < 1:
            raise ContractError(f"trajectory needs at least one step, got {self.steps}")

    @property
    def eta(self) -> float:
        return self.horizon / self.steps

    def time(self, i: int) -> float:
        return i * self.eta


def make_affine_trajectory(a0: DenseOperator, b: DenseOperator, horizon: float, steps: int) -> OperatorTrajectory:
    """``A_t = A0 + t B``; Lipschitz constant ``||B||_F``."""
    if a0.dim != b.dim:
        raise ContractError(f"dimension mismatch: A0 is {a0.dim}, B is {b.dim}")
    horizon = float(horizon)
    if not horizon > 0:
        raise ContractError(f"horizon must be positive, got {horizon}")
    eta = horizon / steps
    a, bm = a0.matrix, b.matrix
    symmetric = a0.is_symmetric and b.is_symmetric
    tr0, trb = a0.exact_trace, b.exact_trace

    def at(i: int) -> DenseOperator:
        if not 0 <= i <= steps:
            raise ContractError(f"step {i} outside 0..{steps}")
        return DenseOperator(a + (i * eta) * bm, is_symmetric=symmetric)

    return OperatorTrajectory(
        dim=a0.dim,
        horizon=horizon,
        steps=int(steps),
        at=at,
        lipschitz_bound=b.frobenius_norm,
        trace_bound=max(abs(tr0), abs(tr0 + horizon * trb)),
        exact_integral=horizon * tr0 + 0.5 * horizon**2 * trb,
    )


def traceless_direction(dim: int, seed: int, frobenius: float) -> DenseOperator:
    """Seeded symmetric, trace-free direction ``B`` with ``||B||_F = frobenius``.

    With ``Tr(B) = 0`` the left-endpoint rule integrates ``Tr(A0 + t B)`` exactly.
    """
    b = random_symmetric(dim, seed).matrix
    b = b - (np.trace(b) / dim) * np.eye(dim)
    if frobenius == 0:
        return DenseOperator(np.zeros((dim, dim)), is_symmetric=True)
    norm = np.linalg.norm(b, "fro")
    if norm == 0.0:
        raise ContractError(f"no non-zero traceless direction in dimension {dim}")
    return DenseOperator(b * (frobenius / norm), is_symmetric=True)


def make_constant_trajectory(a0: DenseOperator, horizon: float, steps: int) -> OperatorTrajectory:
    return make_affine_trajectory(a0, DenseOperator(np.zeros((a0.dim, a0.dim))), horizon, steps)


def trajectory_from_snapshots(snapshots: Sequence[DenseOperator], horizon: float) -> OperatorTrajectory:
    """Trajectory from ``L + 1`` dense snapshots at the grid points.

    ``lipschitz_bound`` is the largest observed ``||A_{i+1} - A_i||_F / eta``.
    """
    snaps = list(snapshots)
    if len(snaps) < 2:
        raise ContractError("need at least two snapshots")
    dim = snaps[0].dim
    if any(s.dim != dim for s in snaps):
        raise ContractError("snapshots differ in dimension")
    steps = len(snaps) - 1
    eta = float(horizon) / steps
    jumps = [np.linalg.norm(b.matrix - a.matrix, "fro") for a, b in zip(snaps, snaps[1:])]
    return OperatorTrajectory(
        dim=dim,
        horizon=float(horizon),
        steps=steps,
        at=snaps.__getitem__,
        lipschitz_bound=max(jumps) / eta,
        trace_bound=max(abs(s.exact_trace) for s in snaps),
    )


def left_endpoint_exact(traj: OperatorTrajectory, weights=None) -> float:
    """Left-endpoint quadrature of the exact snapshot traces."""
    w = _weights(traj, weights)
    return traj.eta * math.fsum(w[i] * exact_trace(traj.at(i)) for i in range(traj.steps))


@dataclass(frozen=True)
class FrozenSchedule:
    """Basis refresh schedule: step ``i`` reuses the basis from ``anchor_of(i)``."""

    steps: int
    shared: int = 10

    def __post_init__(self):
        if int(self.steps) < 1:
            raise ContractError(f"schedule needs at least one step, got {self.steps}")
        if not 1 <= int(self.shared) <= int(self.steps):
            raise ContractError(f"shared steps must lie in 1..{self.steps}, got {self.shared}")

    @classmethod
    def clamped(cls, steps: int, shared: int) -> tuple["FrozenSchedule", bool]:
        """Schedule with ``shared`` clamped into ``1..steps``; flag set when clamping occurred."""
        s = min(max(int(shared), 1), int(steps))
        return cls(steps, s), s != shared

    def anchor_of(self, i: int) -> int:
        return (i // self.shared) * self.shared

    def is_anchor(self, i: int) -> bool:
        return i % self.shared == 0

    @property
    def anchors(self) -> range:
        return range(0, self.steps, self.shared)

    @property
    def qr_count(self) -> int:
        return -(-self.steps // self.shared)


@dataclass(frozen=True)
class IntegralEstimateReport:
    value: float
    per_step: list = field(repr=False)
    qr_count: int
    total_matvecs: int
    wall_time_qr: float
    wall_time_total: float


def _weights(traj, weights):
    if weights is None:
        return np.ones(traj.steps)
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim == 0:
        return np.full(traj.steps, float(w))
    if w.shape != (traj.steps,):
        raise ContractError(f"expected {traj.steps} step weights, got shape {w.shape}")
    return w


def _check_inputs(traj, sched, m):
    if int(m) != m or m < HUTCHPP_MIN_M:
        raise ContractError(f"hutchpp requires m >= {HUTCHPP_MIN_M}, got m={m}")
    if sched.steps != traj.steps:
        raise ContractError(f"schedule has {sched.steps} steps but trajectory has {traj.steps}")


def estimate_trace_integral(
    traj: OperatorTrajectory,
    sched: FrozenSchedule,
    m: int,
    kind=GAUSSIAN,
    seed: int = 0,
    fix_probes: bool = True,
    redraw_sketch: bool = True,
    weights=None,
) -> IntegralEstimateReport:
    """Estimate ``int_0^T w(t) Tr(A_t) dt`` with a frozen Hutch++ basis.

    ``weights`` holds one scalar per step (e.g. ``sqrt(beta_t)``) and defaults
    to all ones.
    """
    _check_inputs(traj, sched, m)
    kind = ProbeKind.parse(kind)
    w = _weights(traj, weights)
    n_sketch, n_resid = hutchpp_budget(m)
    gen_s = probe_generator(seed, SKETCH_STREAM)
    gen_g = probe_generator(seed, RESIDUAL_STREAM)
    s_block = g_block = basis = None
    per_step = []
    wall_qr = 0.0
    t_start = time.perf_counter()
    for i in range(traj.steps):
        t0 = time.perf_counter()
        op = traj.at(i)
        anchor = sched.is_anchor(i)
        if anchor:
            if s_block is None or redraw_sketch:
                s_block = np.ascontiguousarray(draw_from(gen_s, (n_sketch, traj.dim), kind).T)
            tq = time.perf_counter()
            basis = range_find(op, s_block, born_step=i)
            wall_qr += time.perf_counter() - tq
        if g_block is None or not fix_probes:
            g_block = np.ascontiguousarray(draw_from(gen_g, (n_resid, traj.dim), kind).T)
        value, head, tail = _deflated_core(op, basis, g_block)
        per_step.append(
            EstimateReport(
                value,
                (n_sketch if anchor else 0) + basis.rank + n_resid,
                (n_sketch if anchor else 0, n_resid),
                seed,
                time.perf_counter() - t0,
                "hutchpp" if anchor else "deflated",
                head=head,
                tail=tail,
                rank=basis.rank,
            )
        )
    vals = np.array([r.value for r in per_step])
    total = traj.eta * float(np.dot(w, vals))
    return IntegralEstimateReport(
        value=total,
        per_step=per_step,
        qr_count=sched.qr_count,
        total_matvecs=sum(r.matvecs_used for r in per_step),
        wall_time_qr=wall_qr,
        wall_time_total=time.perf_counter() - t_start,
    )


def estimate_trace_integral_batch(
    traj: OperatorTrajectory,
    sched: FrozenSchedule,
    m: int,
    kind=GAUSSIAN,
    seeds: Sequence[int] = (0,),
    fix_probes: bool = True,
    redraw_sketch: bool = True,
    weights=None,
) -> np.ndarray:
    """``estimate_trace_integral(...).value`` for every seed, vectorised over seeds."""
    _check_inputs(traj, sched, m)
    kind = ProbeKind.parse(kind)
    w = _weights(traj, weights)
    d = traj.dim
    n_sketch, n_resid = hutchpp_budget(m)
    n_sblocks = sched.qr_count if redraw_sketch else 1
    n_gblocks = 1 if fix_probes else traj.steps
    per_seed = (n_sblocks * n_sketch + n_gblocks * n_resid) * d
    chunk = max(1, _TRAJ_BATCH_FLOATS // per_seed)
    seeds = list(seeds)
    out = []
    for c0 in range(0, len(seeds), chunk):
        cs = seeds[c0 : c0 + chunk]
        s_all = np.stack([draw_from(probe_generator(s, SKETCH_STREAM), (n_sblocks, n_sketch, d), kind) for s in cs])
        g_all = np.stack([draw_from(probe_generator(s, RESIDUAL_STREAM), (n_gblocks, n_resid, d), kind) for s in cs])
        acc = np.zeros(len(cs))
        q = None
        for i in range(traj.steps):
            op = traj.at(i)
            if sched.is_anchor(i):
                blk = i // sched.shared if redraw_sketch else 0
                q, full_rank = batched_bases(op, s_all[:, blk].transpose(0, 2, 1))
                for n in np.flatnonzero(~full_rank):
                    qn = orthonormal_basis(op.apply_block(np.ascontiguousarray(s_all[n, blk].T)))
                    q[n] = 0.0
                    q[n, :, : qn.shape[1]] = qn
            g = g_all[:, 0 if fix_probes else i].transpose(0, 2, 1)
            head = np.einsum("ndk,ndk->n", q, _apply_stacked(op, q))
            acc += w[i] * (head + _stacked_tail(op, q, g))
        out.append(traj.eta * acc)
    return np.concatenate(out) if out else np.zeros(0)


def estimate_log_density_delta(
    traj: OperatorTrajectory,
    sched: FrozenSchedule,
    m: int,
    seed: int = 0,
    log_q0: float = 0.0,
    kind=GAUSSIAN,
    fix_probes: bool = True,
    redraw_sketch: bool = True,
) -> float:
    """``log_q0 - int Tr(A_t) dt`` with the trace integral estimated as above."""
    rep = estimate_trace_integral(traj, sched, m, kind, seed, fix_probes, redraw_sketch)
    return log_q0 - rep.value


@dataclass(frozen=True)
class CostRow:
    l_s: int
    requested_l_s: int
    qr_count: int
    wall_time_qr: float
    wall_time_total: float
    clamped: bool = False


def cost_profile(
    traj: OperatorTrajectory,
    m: int,
    l_s_grid: Sequence[int],
    kind=GAUSSIAN,
    seed: int = 0,
    repeats: int = 3,
) -> list[CostRow]:
    """Wall-clock cost of one trace integral per shared-step setting.

    Times are the minimum over ``repeats`` runs.  Settings above the
    trajectory length are clamped to it with a warning.
    """
    grid = list(l_s_grid)
    if not grid:
        raise ContractError("empty L_s grid")
    rows = []
    for req in grid:
        sched, clamped = FrozenSchedule.clamped(traj.steps, req)
        if clamped:
            warnings.warn(f"L_s={req} clamped to {sched.shared}", RuntimeWarning, stacklevel=2)
        best_qr = best_total = math.inf
        for _ in range(max(1, repeats)):
            rep = estimate_trace_integral(traj, sched, m, kind, seed)
            best_qr = min(best_qr, rep.wall_time_qr)
            best_total = min(best_total, rep.wall_time_total)
        rows.append(CostRow(sched.shared, int(req), sched.qr_count, best_qr, best_total, clamped))
    return rows
