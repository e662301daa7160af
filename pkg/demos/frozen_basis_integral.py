"""
Trace integrals with a frozen sketch basis
==========================================

The log-density of a continuous normalizing flow contains the integral of a
Jacobian trace along the trajectory.  Here the Jacobian is replaced by the
affine family A_t = A0 + t B, whose integral is known in closed form, and the
integral is estimated with Hutch++ on a uniform grid of L = 100 steps.

Recomputing the sketch basis at every step costs one QR per step.  Sharing one
basis across L_s consecutive steps cuts the QR count to ceil(L / L_s) at the
price of a slightly larger variance, because later steps in each block deflate
with a basis computed for an older operator.
"""

import math

from frozentrace import (
    FrozenSchedule,
    IntegralSpec,
    SpectrumSpec,
    cost_profile,
    make_affine_trajectory,
    make_spectral,
    run_trials,
    traceless_direction,
)

dim, steps, horizon, m = 64, 100, 1.0, 12
a0 = make_spectral(SpectrumSpec.low_rank(dim, [20.0, 10.0, 5.0, 2.5], 0.5, rotation_seed=11))
# A trace-free direction keeps Tr(A_t) constant, so left-endpoint quadrature is exact.
b = traceless_direction(dim, seed=7, frobenius=1.0)
traj = make_affine_trajectory(a0, b, horizon, steps)
print(f"closed-form integral {traj.exact_integral:.4f}, Lipschitz bound {traj.lipschitz_bound:.3f}")

print(f"\n{'L_s':>4} {'QRs':>4} {'mean':>10} {'variance':>10} {'bound':>10}")
for l_s in (1, 10, 25, 50):
    spec = IntegralSpec(FrozenSchedule(steps, l_s), m)
    s = run_trials(spec, traj, 4000)
    drift = traj.lipschitz_bound * (l_s - 1) * traj.eta
    bound = horizon**2 * (36 * traj.trace_bound**2 / (m * (m - 3)) + 12 / m * drift**2)
    print(f"{l_s:>4} {math.ceil(steps / l_s):>4} {s.mean:10.4f} {s.variance:10.4f} {bound:10.2f}")

# The variance creeps up with L_s while staying far below the bound, whose
# first term is a worst case over all PSD operators with this trace.

# Wall-clock cost on a larger operator, where the QR phase dominates.
big = make_affine_trajectory(
    make_spectral(SpectrumSpec.power_law(512, 1.0, rotation_seed=3)), traceless_direction(512, 4, 1.0), 1.0, 100
)
print(f"\n{'L_s':>4} {'QRs':>4} {'QR time':>9} {'total':>9}")
for row in cost_profile(big, 48, [1, 10, 25, 50]):
    print(f"{row.l_s:>4} {row.qr_count:>4} {row.wall_time_qr:9.4f} {row.wall_time_total:9.4f}")
