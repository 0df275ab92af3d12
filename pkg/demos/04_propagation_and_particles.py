"""From the kinetic equation to fractional diffusion: one Fourier mode and many particles.

Run: python demos/04_propagation_and_particles.py   (about a minute)
"""
import numpy as np

from fracfp.equilibria import make_power_law
from fracfp.montecarlo import (EquilibriumCDF, empirical_cf, ks_distance, macro_horizon, rescaled_displacement,
                               simulate_sde)
from fracfp.propagator import InitialSpec, convergence_study, limit_reference, propagate_mode

m = make_power_law(1, 2.0)
ref = limit_reference(m)      # exp(-kappa t |xi|^alpha), kappa from the limit problem

# %% a single mode: rho(t, xi) approaches exp(-kappa t |xi|^alpha) as eps shrinks
for eps in (1e-2, 3e-3, 1e-3):
    tr = propagate_mode(InitialSpec(), 1.0, eps, [1.0], m, ref)
    print(f"eps={eps:.0e}  rho={tr.rho[0].real:.6f}  limit={tr.reference[0].real:.6f}  "
          f"projection identity err={tr.projection_error:.1e}")

# %% the full 3 x 3 table
st = convergence_study(m, [0.5, 1.0, 2.0], [0.5, 1.0, 2.0], [1e-2, 3e-3, 1e-3], ref)
print("monotone fraction", st.monotone_fraction)

# %% particles: Langevin velocities, positions integrated, rescaled by eps at time eps^-alpha
eps = 0.03
ens = simulate_sde(m, 20_000, 1e-2, macro_horizon(m, eps, 1.0), seed=1)
x = rescaled_displacement(ens, m, eps, 1.0)
cf = empirical_cf(x, [0.5, 1.0, 2.0], n_boot=100)
for c in cf:
    print(f"xi={c.xi}: cf={c.value.real:.4f} +- {c.ci_radius:.4f}   limit {ref.value(1.0, c.xi).real:.4f}")
print("velocity KS distance to F:", round(ks_distance(ens.V, EquilibriumCDF(m)), 4))
