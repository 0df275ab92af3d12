"""Heavy-tailed equilibria and the discrete Fokker-Planck operator.

Run: python demos/01_equilibria_and_operator.py
"""
import numpy as np

from fracfp.discretization import assemble_Q, build_grid, verify_hardy_poincare
from fracfp.equilibria import check_assumptions, make_oscillatory, make_power_law

# %% three equilibria: the symmetric power law, an asymmetric one, and an oscillating profile
models = {
    "power law, gamma=2": make_power_law(1, 2.0),
    "asymmetric, gamma=1.4": make_power_law(1, 1.4, 1.5, 0.5),
    "oscillatory, sigma=3": make_oscillatory(1, 2.0, 3.0, 0.5),
}
for name, m in models.items():
    rep = check_assumptions(m)
    print(f"{name:24s} beta={m.beta:g} alpha={m.alpha:.4f} assumptions pass={rep.passed}")

# %% M decays like |v|^-gamma, and the potential W = M''/M like |v|^-2
m = models["power law, gamma=2"]
v = np.array([0.0, 1.0, 10.0, 100.0, 1000.0])
print("M(v) |v|^gamma :", np.round(m.M(v) * np.maximum(np.abs(v), 1) ** m.gamma, 6))
print("W(v) <v>^2     :", np.round(m.W(v) * (1 + v**2), 6))

# %% the discrete Q is self-adjoint in the weighted product and annihilates M_h
grid = build_grid(1, 50.0, 512)
Q = assemble_Q(m, grid)
print("max |Q M_h|     :", np.max(np.abs(Q.apply(Q.M_h))))
g = np.random.default_rng(0).standard_normal(grid.size)
print("Dirichlet form  :", Q.dirichlet(g), "(non-negative)")

# %% no spectral gap, but a weighted Poincare inequality: the constant is bounded below
est = verify_hardy_poincare(m, grid, n_samples=64)
print(f"Hardy-Poincare constant {est.Lambda:.5f}, smallest random quotient {est.min_sample:.5f}")
