"""The rescaled limit problem, the diffusion coefficient and the drift.

Run: python demos/03_limit_problem.py
"""
import numpy as np

from fracfp.limit_problem import RescaledGrid, check_log_asymptote, drift_j, regime_of, solve_H0_1d
from fracfp.equilibria import make_power_law

# %% solve (m^2 u')' = i s m^2 u on each half-line, u = 1 near 0 and u = 0 far out
m = make_power_law(1, 2.0)
sol = solve_H0_1d(m)
print(f"regime {sol.regime}: kappa unified {sol.kappa_unified:.6f}, branch {sol.kappa_branch.real:.6f}")

# the symmetric power law has a closed form through modified Bessel functions;
# its coefficient for gamma = 2 is 0.378134747..., and the finite inner cut costs O(s_min)
for s_min in (1e-3, 1e-4):
    n = int(4000 * np.log(30 / s_min) / np.log(3e4))
    print(f"  s_min={s_min:g}: kappa {solve_H0_1d(m, RescaledGrid(s_min=s_min, n=n)).kappa_unified:.6f}")

# %% kappa across gamma: 1/3 exactly at the critical gamma = 1
for gamma in (0.75, 1.0, 1.5, 2.0, 2.25):
    mm = make_power_law(1, gamma)
    print(f"gamma={gamma:4g} {regime_of(mm):9s} kappa={solve_H0_1d(mm).kappa_unified:.6f}")

# %% drift: zero for symmetric models, a finite moment above, logarithmic growth at the critical exponent
print("asymmetric gamma=2, j1 =", drift_j(make_power_law(1, 2.0, 1.5, 0.5), 1e-6).j1)
crit = make_power_law(1, 1.0, 1.5, 0.5)
eps = [1e-4, 1e-6, 1e-8, 1e-10, 1e-12]
for e, r in zip(eps, check_log_asymptote(crit, eps)):
    print(f"  eps={e:.0e}  j1={drift_j(crit, e).j1:.5f}  ratio to (|ln eps|/3) j_m = {r:.4f}")
