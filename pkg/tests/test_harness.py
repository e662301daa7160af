import math

import numpy as np
import pytest

from frozentrace import (
    GAUSSIAN,
    RADEMACHER,
    ContractError,
    EstimatorSpec,
    IntegralSpec,
    FrozenSchedule,
    MomentSummary,
    SearchFailure,
    SpectrumSpec,
    check_bound,
    check_low_rank_tail,
    check_range_finder,
    default_slack,
    hutchpp_budget,
    make_dense,
    make_spectral,
    random_symmetric,
    run_trials,
    sample_complexity_sweep,
)
from frozentrace.harness import BOUND_NAMES
from suites import affine_trajectory, psd_suite, wishart


def _var_se(samples):
    """Standard error of the unbiased sample variance from the fourth central moment."""
    x = np.asarray(samples) - np.mean(samples)
    n = x.size
    return math.sqrt(max(np.mean(x**4) - np.mean(x**2) ** 2, 0.0) / n)


def test_moment_summary():
    s = MomentSummary.from_samples([1.0, 2.0, 3.0, 4.0])
    assert s.trials == 4 and s.mean == 2.5
    assert s.variance == pytest.approx(5.0 / 3.0)
    assert s.ci_halfwidth == pytest.approx(4 * math.sqrt(s.variance / 4))
    assert MomentSummary.from_samples([2.0, 2.0]).variance == 0.0
    with pytest.raises(ContractError):
        MomentSummary.from_samples([1.0])


def test_run_trials_examples():
    s = run_trials(EstimatorSpec("hutchinson", 5, RADEMACHER), make_dense(np.eye(13)), 100)
    assert s.mean == 13.0 and s.variance == 0.0

    op = make_spectral(SpectrumSpec.low_rank(20, [6.0, 2.0], 0.0, rotation_seed=1))
    s = run_trials(EstimatorSpec("hutchpp", 12), op, 100)
    assert s.variance < 1e-24
    assert s.mean == pytest.approx(8.0, rel=1e-12)

    op = make_spectral(SpectrumSpec.power_law(40, 1.0, 2))
    s = run_trials(EstimatorSpec("hutchinson", 12, GAUSSIAN), op, 10_000)
    ref = 2.0 / 12 * op.frobenius_norm**2
    assert 0.9 * ref <= s.variance <= 1.1 * ref


def test_run_trials_rejects_too_few():
    with pytest.raises(ContractError):
        run_trials(EstimatorSpec("hutchinson", 3), make_dense(np.eye(2)), 1)


def test_run_trials_deterministic_and_order_independent():
    op = random_symmetric(10, 4)
    spec = EstimatorSpec("hutchpp", 9)
    a = run_trials(spec, op, 64, base_seed=17)
    b = run_trials(spec, op, 64, base_seed=17)
    assert (a.mean, a.variance) == (b.mean, b.variance)
    seq = run_trials(spec, op, 64, base_seed=17, batched=False)
    par = run_trials(spec, op, 64, base_seed=17, batched=False, workers=4)
    assert (seq.mean, seq.variance) == (par.mean, par.variance)
    assert seq.mean == pytest.approx(a.mean, rel=1e-12)
    # trial i uses seed base_seed + i
    assert seq.samples[5] == spec(op, 22)


def test_run_trials_plain_callable():
    op = make_dense(np.diag([1.0, 2.0]))
    s = run_trials(lambda o, seed: float(seed % 2), op, 10)
    assert s.mean == 0.5


def test_estimator_spec_validation():
    with pytest.raises(ContractError):
        EstimatorSpec("bogus", 4)
    with pytest.raises(ContractError):
        EstimatorSpec("deflated", 4)
    assert EstimatorSpec("exact", 1)(make_dense(np.eye(3)), 0) == 3.0


def test_integral_spec_batch_matches_call():
    traj, _ = affine_trajectory(make_spectral(SpectrumSpec.power_law(12, 1.0, 1)), 0.5, 2, steps=10)
    spec = IntegralSpec(FrozenSchedule(10, 5), 9)
    batch = spec.batch(traj, [3, 4])
    assert batch == pytest.approx([spec(traj, 3), spec(traj, 4)], rel=1e-12)


def test_check_bound_hutchinson_example():
    op = make_dense(np.diag([1.0, 2.0, 3.0]), is_psd_claimed=True)
    s = run_trials(EstimatorSpec("hutchinson", 6, GAUSSIAN), op, 10_000)
    chk = check_bound("hutchinson-variance", s, op, m=6)
    assert chk.theoretical == pytest.approx(12.0)
    assert s.variance == pytest.approx(2 / 6 * 14, rel=0.1)
    assert chk.passed and chk.slack == default_slack(10_000)
    frob = check_bound("hutchinson-frobenius", s, op, m=6)
    assert frob.passed and frob.empirical < 0.1


def test_check_bound_refusals():
    psd = make_dense(np.diag([1.0, 2.0, 3.0]), is_psd_claimed=True)
    s = MomentSummary.from_samples([1.0, 2.0, 3.0])
    with pytest.raises(ContractError):
        check_bound("hutchpp-variance", s, psd, m=3)
    with pytest.raises(ContractError):
        check_bound("hutchpp-variance", s, make_dense(np.diag([1.0, -2.0])), m=12)
    with pytest.raises(ContractError):
        check_bound("no-such-bound", s, psd, m=12)
    with pytest.raises(ContractError):
        check_bound("log-density-variance", s, None, m=12)
    with pytest.raises(ContractError):
        check_low_rank_tail(make_dense(np.diag([1.0, -2.0])), 1)


def test_deflated_bound_reduces_at_unit_share():
    op = make_dense(np.diag([1.0, 2.0, 3.0]), is_psd_claimed=True)
    s = MomentSummary.from_samples([1.0, 2.0])
    chk = check_bound("deflated-variance", s, op, m=12, l_s=1, eta=0.01, lipschitz=5.0)
    assert chk.theoretical == pytest.approx(36 / (12 * 9) * 36)
    chk = check_bound("deflated-variance", s, op, m=12, l_s=11, eta=0.01, lipschitz=5.0)
    assert chk.theoretical == pytest.approx(36 / (12 * 9) * 36 + 1.0 * 0.5**2)


def test_bound_check_pass_rule():
    op = make_dense(np.diag([1.0, 2.0, 3.0]), is_psd_claimed=True)
    s = MomentSummary.from_samples([0.0, 10.0])
    chk = check_bound("hutchinson-variance", s, op, m=6, slack=1.0)
    assert chk.passed == (chk.empirical <= chk.theoretical * chk.slack)
    assert set(BOUND_NAMES) >= {"unbiased", "hutchpp-variance", "deflated-variance"}


def test_low_rank_tail_and_range_finder_checks():
    op = make_spectral(SpectrumSpec.power_law(30, 1.0, 3))
    for k in (1, 2, 4, 8):
        assert check_low_rank_tail(op, k).passed
    chk = check_range_finder(op, 3, trials=100)
    assert chk.passed and chk.theoretical > 0
    with pytest.raises(ContractError):
        check_range_finder(op, 20)


def test_hutchpp_not_worse_on_decaying_spectra():
    """One-sided 4 sigma test of Var[H++] <= Var[H] where the sketch captures the spectrum's mass."""
    ops = dict(psd_suite())
    names = ["power_law128_p2", "power_law200_p1.5", "low_rank64", "low_rank128", "stretched64"]
    seeds = range(4000)
    for name in names:
        op = ops[name]
        for m in (6, 12, 48):
            h = EstimatorSpec("hutchinson", m).batch(op, seeds)
            p = EstimatorSpec("hutchpp", m).batch(op, seeds)
            gap = p.var(ddof=1) - h.var(ddof=1)
            assert gap <= 4 * math.hypot(_var_se(p), _var_se(h)), (name, m)


@pytest.mark.parametrize("dim, m", [(32, 6), (100, 12), (64, 48)])
def test_hutchpp_variance_on_flat_spectrum(dim, m):
    """Flat spectra are the case where Hutch++ loses to Hutchinson at equal budget.

    For ``A = c I`` with Gaussian probes, Var[H_m] = 2 D c^2 / m and the
    residual term of Hutch++ gives 2 (D - k) c^2 / r with k sketch columns and
    r residual probes, so the ratio is m (D - k) / (D r), close to 3.
    """
    c = 2.5
    op = make_spectral(SpectrumSpec.flat(dim, c, rotation_seed=1))
    k, r = hutchpp_budget(m)
    seeds = range(10_000)
    h = EstimatorSpec("hutchinson", m).batch(op, seeds).var(ddof=1)
    p = EstimatorSpec("hutchpp", m).batch(op, seeds).var(ddof=1)
    assert h == pytest.approx(2 * dim * c**2 / m, rel=0.08)
    assert p == pytest.approx(2 * (dim - k) * c**2 / r, rel=0.08)
    assert p / h == pytest.approx(m * (dim - k) / (dim * r), rel=0.12)
    assert p > h


def test_sweep_small_problem():
    op = make_spectral(SpectrumSpec.power_law(32, 1.0, 2))
    curve = sample_complexity_sweep(op, "hutchinson", [0.3, 0.15], 0.2, 100, base_seed=5)
    ms = [m for _, m in curve.points]
    assert [e for e, _ in curve.points] == [0.3, 0.15]
    assert ms == sorted(ms) and ms[0] >= 1
    assert curve.fitted_loglog_slope < 0
    again = sample_complexity_sweep(op, "hutchinson", [0.3, 0.15], 0.2, 100, base_seed=5)
    assert again.points == curve.points


def test_sweep_minimality():
    op = wishart(16, 2)
    curve = sample_complexity_sweep(op, "hutchpp", [0.2], 0.1, 60, base_seed=0)
    (eps, m), = curve.points
    seeds = range(60)
    q = lambda mm: np.quantile(np.abs(EstimatorSpec("hutchpp", mm).batch(op, seeds) - op.exact_trace)
                               / op.exact_trace, 0.9)
    assert q(m) < eps
    if m > 6:
        assert q(m - 1) >= eps


@pytest.mark.parametrize("grid, delta", [([2.0], 0.1), ([0.0], 0.1), ([0.1], 1.0), ([], 0.1), ([0.1, 0.1], 0.1)])
def test_sweep_preconditions(grid, delta):
    with pytest.raises(ContractError):
        sample_complexity_sweep(make_dense(np.eye(4), is_psd_claimed=True), "hutchinson", grid, delta, 10)


def test_sweep_search_failure_is_reported():
    op = random_symmetric(20, 3)
    with pytest.raises(SearchFailure):
        sample_complexity_sweep(op, "hutchinson", [0.001], 0.1, 50, m_max=64)
    with pytest.raises(ContractError):
        sample_complexity_sweep(op, "exact", [0.1], 0.1, 50)
