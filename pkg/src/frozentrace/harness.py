"""Statistical verification: empirical moments, bound checks and sample-complexity sweeps.

Trial ``i`` of a run always uses seed ``base_seed + i`` so any single trial can
be replayed.  Means and variances are accumulated with ``math.fsum``, which is
exactly rounded and therefore independent of the order trials complete in.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, SearchFailure
from .estimators import (
    GAUSSIAN,
    HUTCHPP_MIN_M,
    EstimateReport,
    approx_hutchpp,
    deflated_batch,
    deflated_hutchinson,
    exact,
    hutchinson,
    hutchinson_batch,
    hutchpp,
    hutchpp_batch,
    relative_error,
)
from .linop import DenseOperator, LinearOperator, exact_trace
from .probes import SKETCH_STREAM, ProbeKind, draw_probes
from .sketch import SketchBasis, project_complement, range_find
from .trajectory import FrozenSchedule, OperatorTrajectory, estimate_trace_integral, estimate_trace_integral_batch

__all__ = [
    "MomentSummary",
    "BoundCheck",
    "ComplexityCurve",
    "EstimatorSpec",
    "IntegralSpec",
    "run_trials",
    "check_bound",
    "check_low_rank_tail",
    "check_range_finder",
    "sample_complexity_sweep",
    "default_slack",
    "BOUND_NAMES",
    "PSD_ONLY",
]

BOUND_NAMES = (
    "unbiased",
    "hutchinson-variance",
    "hutchinson-frobenius",
    "hutchpp-variance",
    "deflated-variance",
    "log-density-variance",
)
PSD_ONLY = frozenset({"hutchinson-variance", "hutchpp-variance", "deflated-variance", "low-rank-tail", "range-finder"})


@dataclass(frozen=True)
class MomentSummary:
    trials: int
    mean: float
    variance: float
    ci_halfwidth: float
    z: float = 4.0
    samples: np.ndarray = field(default=None, repr=False, compare=False)

    @classmethod
    def from_samples(cls, samples, z: float = 4.0) -> "MomentSummary":
        x = np.asarray(samples, dtype=np.float64)
        n = x.size
        if n < 2:
            raise ContractError(f"need at least 2 trials for a variance, got {n}")
        mean = math.fsum(x) / n
        var = math.fsum((x - mean) ** 2) / (n - 1)
        return cls(n, mean, var, z * math.sqrt(var / n), z, x)


@dataclass(frozen=True)
class BoundCheck:
    """``passed`` is ``empirical <= theoretical * slack``."""

    name: str
    theoretical: float
    empirical: float
    slack: float
    passed: bool
    detail: str = ""

    @classmethod
    def make(cls, name, theoretical, empirical, slack, detail=""):
        return cls(name, float(theoretical), float(empirical), float(slack),
                   bool(empirical <= theoretical * slack), detail)


@dataclass(frozen=True)
class ComplexityCurve:
    estimator_tag: str
    points: list  # [(epsilon, m_required), ...] with epsilon strictly decreasing
    fitted_loglog_slope: float


@dataclass(frozen=True)
class EstimatorSpec:
    """A trace estimator with fixed parameters, callable as ``spec(op, seed)``.

    For ``tag='deflated'`` either ``basis`` is given (``m`` is then the residual
    probe count) or ``stale_op`` is (approximate Hutch++ with total budget ``m``:
    the basis is sketched from ``stale_op`` in every trial).
    """

    tag: str
    m: int
    kind: ProbeKind = GAUSSIAN
    basis: SketchBasis | None = None
    stale_op: LinearOperator | None = None

    def __post_init__(self):
        if self.tag not in ("exact", "hutchinson", "hutchpp", "deflated"):
            raise ContractError(f"unknown estimator {self.tag!r}")
        if self.tag == "deflated" and (self.basis is None) == (self.stale_op is None):
            raise ContractError("deflated estimator needs exactly one of basis or stale_op")
        object.__setattr__(self, "kind", ProbeKind.parse(self.kind))

    def report(self, op, seed: int) -> EstimateReport:
        if self.tag == "hutchinson":
            return hutchinson(op, self.m, self.kind, seed)
        if self.tag == "hutchpp":
            return hutchpp(op, self.m, self.kind, seed)
        if self.tag == "deflated":
            if self.basis is not None:
                return deflated_hutchinson(op, self.basis, self.m, self.kind, seed)
            return approx_hutchpp(op, self.stale_op, self.m, self.kind, seed)
        return exact(op)

    def __call__(self, op, seed: int) -> float:
        return self.report(op, seed).value

    def batch(self, op, seeds) -> np.ndarray:
        if self.tag == "hutchinson":
            return hutchinson_batch(op, self.m, self.kind, seeds)
        if self.tag == "hutchpp":
            return hutchpp_batch(op, self.m, self.kind, seeds)
        if self.tag == "deflated":
            if self.basis is not None:
                return deflated_batch(op, self.basis, self.m, self.kind, seeds)
            return hutchpp_batch(op, self.m, self.kind, seeds, sketch_op=self.stale_op)
        return np.full(len(seeds), exact_trace(op))


@dataclass(frozen=True)
class IntegralSpec:
    """Frozen-schedule trace-integral estimator, callable as ``spec(traj, seed)``."""

    sched: FrozenSchedule
    m: int
    kind: ProbeKind = GAUSSIAN
    fix_probes: bool = True
    redraw_sketch: bool = True
    weights: tuple | None = None

    def __call__(self, traj: OperatorTrajectory, seed: int) -> float:
        return estimate_trace_integral(
            traj, self.sched, self.m, self.kind, seed, self.fix_probes, self.redraw_sketch, self.weights
        ).value

    def batch(self, traj: OperatorTrajectory, seeds) -> np.ndarray:
        return estimate_trace_integral_batch(
            traj, self.sched, self.m, self.kind, seeds, self.fix_probes, self.redraw_sketch, self.weights
        )


def run_trials(
    estimator: Callable,
    op,
    trials: int,
    base_seed: int = 0,
    z: float = 4.0,
    batched: bool = True,
    workers: int | None = None,
) -> MomentSummary:
    """Run ``trials`` independent estimates with seeds ``base_seed .. base_seed + trials - 1``.

    Estimators exposing ``batch(op, seeds)`` are evaluated vectorised unless
    ``batched`` is False; otherwise each call may run on a thread pool.
    """
    if int(trials) < 2:
        raise ContractError(f"need at least 2 trials for a variance, got {trials}")
    seeds = list(range(base_seed, base_seed + int(trials)))
    if batched and hasattr(estimator, "batch"):
        values = np.asarray(estimator.batch(op, seeds), dtype=np.float64)
    else:
        def one(seed):
            out = estimator(op, seed)
            return out.value if isinstance(out, EstimateReport) else float(out)

        if workers and workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                values = np.array(list(pool.map(one, seeds)))
        else:
            values = np.array([one(s) for s in seeds])
    return MomentSummary.from_samples(values, z)


def default_slack(trials: int) -> float:
    return 1.1 + 8.0 / math.sqrt(trials)


def _require_psd(name, op):
    if op is None or not getattr(op, "is_psd_claimed", False):
        raise ContractError(f"bound {name!r} applies only to PSD-claimed operators")


def _require_m(name, m, minimum):
    if m is None or m <= minimum:
        raise ContractError(f"bound {name!r} needs m > {minimum}, got m={m}")


def check_bound(
    name: str,
    summary: MomentSummary,
    op: DenseOperator | None = None,
    m: int | None = None,
    l_s: int = 1,
    eta: float = 0.0,
    lipschitz: float = 0.0,
    slack: float | None = None,
    perturbation: float | None = None,
    horizon: float | None = None,
    trace_bound: float | None = None,
    target: float | None = None,
) -> BoundCheck:
    """Compare an empirical moment with the theoretical bound called ``name``.

    Names and theoretical values (``Tr`` and ``||.||_F`` of ``op``):

    - ``unbiased``: ``|mean - target| <= ci_halfwidth`` (target defaults to ``Tr``).
    - ``hutchinson-variance``: ``(2/m) Tr^2``; PSD only.
    - ``hutchinson-frobenius``: relative deviation of the variance from
      ``(2/m) ||A||_F^2`` (Gaussian probes), tolerance ``0.1 * slack``.
    - ``hutchpp-variance``: ``18 / (m (m - 3)) Tr^2``; PSD only.
    - ``deflated-variance``: ``36 / (m (m - 3)) Tr^2 + (12/m) d^2`` with ``d``
      either ``perturbation`` (``||A~ - A||_F``) or ``lipschitz * (l_s - 1) * eta``;
      ``op`` is the operator the basis was sketched from; PSD only.
    - ``log-density-variance``: ``T^2 [36 M^2 / (m (m - 3)) + (12/m) (lipschitz (l_s - 1) eta)^2]``.

    Variance checks default to ``slack = 1.1 + 8 / sqrt(N)``.
    """
    if name not in BOUND_NAMES:
        raise ContractError(f"unknown bound {name!r}; expected one of {BOUND_NAMES}")
    if name in PSD_ONLY:
        _require_psd(name, op)
    n = summary.trials

    if name == "unbiased":
        tgt = exact_trace(op) if target is None else float(target)
        s = 1.0 if slack is None else slack
        return BoundCheck.make(name, summary.ci_halfwidth, abs(summary.mean - tgt), s,
                               f"mean={summary.mean:.6g} target={tgt:.6g}")

    s = default_slack(n) if slack is None else slack
    if name == "hutchinson-variance":
        _require_m(name, m, 0)
        theo = 2.0 / m * exact_trace(op) ** 2
    elif name == "hutchinson-frobenius":
        _require_m(name, m, 0)
        ref = 2.0 / m * op.frobenius_norm**2
        tol_slack = 1.0 if slack is None else slack
        dev = abs(summary.variance / ref - 1.0) if ref > 0 else summary.variance
        return BoundCheck.make(name, 0.1, dev, tol_slack, f"variance={summary.variance:.6g} identity={ref:.6g}")
    elif name == "hutchpp-variance":
        _require_m(name, m, 3)
        theo = 18.0 / (m * (m - 3)) * exact_trace(op) ** 2
    elif name == "deflated-variance":
        _require_m(name, m, 3)
        d = lipschitz * (l_s - 1) * eta if perturbation is None else perturbation
        theo = 36.0 / (m * (m - 3)) * exact_trace(op) ** 2 + 12.0 / m * d**2
    else:
        _require_m(name, m, 3)
        if horizon is None or trace_bound is None:
            raise ContractError("log-density-variance needs horizon and trace_bound")
        d = lipschitz * (l_s - 1) * eta
        theo = horizon**2 * (36.0 * trace_bound**2 / (m * (m - 3)) + 12.0 / m * d**2)
    return BoundCheck.make(name, theo, summary.variance, s)


def _tail_frobenius(op: DenseOperator, k: int) -> float:
    """``||A - A_k||_F`` for the best rank-``k`` approximation (symmetric ``A``)."""
    lam = np.sort(np.abs(op.eigenvalues()))[::-1]
    return float(math.sqrt(math.fsum(lam[k:] ** 2)))


def check_low_rank_tail(op: DenseOperator, k: int) -> BoundCheck:
    """Deterministic check ``||A - A_k||_F <= Tr(A) / (2 sqrt(k))`` for PSD ``A``."""
    _require_psd("low-rank-tail", op)
    if k < 1:
        raise ContractError(f"rank must be >= 1, got {k}")
    return BoundCheck.make("low-rank-tail", op.exact_trace / (2.0 * math.sqrt(k)), _tail_frobenius(op, k), 1.0,
                           f"k={k}")


def check_range_finder(
    op: DenseOperator,
    k: int,
    p: int | None = None,
    trials: int = 200,
    base_seed: int = 0,
    slack: float = 1.15,
) -> BoundCheck:
    """Mean of ``||(I - QQ^T) A||_F^2`` over Gaussian sketches of width ``k + p``
    against ``(1 + k / (p - 1)) ||A - A_k||_F^2``.
    """
    _require_psd("range-finder", op)
    p = k + 1 if p is None else p
    if k < 1 or p < 2:
        raise ContractError(f"range-finder bound needs k >= 1 and p >= 2, got k={k}, p={p}")
    if k + p > op.dim:
        raise ContractError(f"sketch width {k + p} exceeds dimension {op.dim}")
    errs = []
    for seed in range(base_seed, base_seed + trials):
        basis = range_find(op, draw_probes(op.dim, k + p, GAUSSIAN, seed, SKETCH_STREAM))
        resid = project_complement(basis, op.matrix)
        errs.append(float(np.sum(resid * resid)))
    theo = (1.0 + k / (p - 1)) * _tail_frobenius(op, k) ** 2
    return BoundCheck.make("range-finder", theo, math.fsum(errs) / trials, slack, f"k={k} p={p}")


def sample_complexity_sweep(
    op: LinearOperator,
    estimator_tag: str,
    epsilon_grid: Sequence[float],
    delta: float = 0.1,
    trials_per_point: int = 200,
    base_seed: int = 0,
    kind=GAUSSIAN,
    m_max: int = 1 << 14,
) -> ComplexityCurve:
    """Smallest ``m`` whose empirical ``(1 - delta)``-quantile of relative error is below each epsilon.

    Search doubles ``m`` from the previous grid point's answer and then bisects,
    so ``m_required`` is non-decreasing along the (descending) epsilon grid.
    """
    if estimator_tag not in ("hutchinson", "hutchpp"):
        raise ContractError(f"sweep supports 'hutchinson' and 'hutchpp', got {estimator_tag!r}")
    eps = [float(e) for e in epsilon_grid]
    if not eps:
        raise ContractError("empty epsilon grid")
    if any(not 0.0 < e < 1.0 for e in eps):
        raise ContractError(f"every epsilon must lie in (0, 1), got {eps}")
    if not 0.0 < delta < 1.0:
        raise ContractError(f"delta must lie in (0, 1), got {delta}")
    eps = sorted(set(eps), reverse=True)
    if len(eps) < len(epsilon_grid):
        raise ContractError("epsilon grid has duplicates")

    spec = EstimatorSpec(estimator_tag, HUTCHPP_MIN_M, kind)
    trace = exact_trace(op)
    seeds = list(range(base_seed, base_seed + trials_per_point))
    cache: dict[int, float] = {}

    def quantile(m: int) -> float:
        if m not in cache:
            vals = (hutchinson_batch if estimator_tag == "hutchinson" else hutchpp_batch)(op, m, spec.kind, seeds)
            cache[m] = float(np.quantile(relative_error(vals, trace), 1.0 - delta))
        return cache[m]

    m_lo = 1 if estimator_tag == "hutchinson" else HUTCHPP_MIN_M
    points = []
    for e in eps:
        m = m_lo
        if quantile(m) >= e:
            fail = m
            m = max(m * 2, m + 1)
            while quantile(m) >= e:
                fail = m
                m *= 2
                if m > m_max:
                    raise SearchFailure(
                        f"{estimator_tag}: epsilon={e} not reached with m <= {m_max} "
                        f"(quantile {quantile(fail):.4g} at m={fail})"
                    )
            while m - fail > 1:
                mid = (m + fail) // 2
                if quantile(mid) < e:
                    m = mid
                else:
                    fail = mid
        points.append((e, m))
        m_lo = m
    x = np.log([p[0] for p in points])
    y = np.log([p[1] for p in points])
    slope = float(np.polyfit(x, y, 1)[0]) if len(points) > 1 else float("nan")
    return ComplexityCurve(estimator_tag, points, slope)
