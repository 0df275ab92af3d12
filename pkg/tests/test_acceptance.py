"""Acceptance criteria, one printed PASS/FAIL line each.

Run with `pytest tests/test_acceptance.py -v` (add `-m "not slow"` to skip the
Monte Carlo cross-check).
"""
import json
import time
from pathlib import Path

import numpy as np
import pytest

from fracfp.cli import main as cli_main
from fracfp.discretization import assemble_Q, build_grid, hardy_poincare_constant, verify_hardy_poincare
from fracfp.eigensolver import GridPolicy, eigenpair, oracle_eigenpair, run_sweep, setup, fit_sweep, find_lambda
from fracfp.equilibria import first_moment, make_power_law
from fracfp.limit_problem import check_log_asymptote, drift_j, solve_H0_1d
from fracfp.montecarlo import (EquilibriumCDF, empirical_cf, ks_distance, macro_horizon, rescaled_displacement,
                               simulate_sde)
from fracfp.propagator import convergence_study, limit_reference

GOLDEN = Path(__file__).parent / "golden"
ETAS = [1e-2 * 2.0**-k for k in range(8)]


def verdict(request, number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    with request.config.pluginmanager.getplugin("capturemanager").global_and_fixture_disabled():
        print("\n" + line)
    assert ok, line


@pytest.fixture(scope="module")
def model():
    return make_power_law(1, 2.0)


@pytest.fixture(scope="module")
def sweep_fit(model):
    t0 = time.perf_counter()
    points = run_sweep(model, ETAS, GridPolicy(n=512))
    mu = [p.result.mu for p in points]
    fit = fit_sweep(model, ETAS, mu)
    return points, fit, time.perf_counter() - t0


def test_criterion_1_exponent(request, model, sweep_fit):
    _, fit, secs = sweep_fit
    rel = abs(fit.alpha_hat - 5 / 3) / (5 / 3)
    verdict(request, 1, rel <= 0.05 and secs < 120,
            f"alpha_hat={fit.alpha_hat:.6f} vs 5/3, rel err {rel:.2e} (tol 5e-2), sweep {secs:.1f}s (limit 120s)")


def test_criterion_2_oracle(request, model):
    t0 = time.perf_counter()
    worst_polished, worst_raw = 0.0, 0.0
    etas = ETAS[:6]
    for eta in etas:
        _, L, Phi = setup(model, eta, GridPolicy(n=256))
        mu = find_lambda(L, Phi).mu
        o = oracle_eigenpair(L)
        worst_polished = max(worst_polished, abs(o.polished - mu) / abs(mu))
        worst_raw = max(worst_raw, abs(o.raw - mu) / abs(mu))
    secs = time.perf_counter() - t0
    verdict(request, 2, worst_polished <= 1e-8 and secs < 60,
            f"{len(etas)} points, max rel diff {worst_polished:.2e} (tol 1e-8; unpolished dense value "
            f"{worst_raw:.2e}), {secs:.1f}s (limit 60s)")


def test_criterion_3_kappa_triangle(request, model, sweep_fit):
    _, fit, _ = sweep_fit
    sol = solve_H0_1d(model, check_real=False)
    vals = {"sweep": fit.kappa_hat, "unified": sol.kappa_unified, "branch": sol.kappa_branch.real}
    names = list(vals)
    spread = max(abs(vals[a] - vals[b]) / min(vals[a], vals[b]) for i, a in enumerate(names) for b in names[i + 1:])
    im_ratio = abs(sol.kappa_branch.imag) / abs(sol.kappa_branch.real)
    ok = spread <= 0.05 and min(vals.values()) > 0 and im_ratio <= 0.01
    verdict(request, 3, ok, ", ".join(f"{k}={v:.6f}" for k, v in vals.items())
            + f", max pairwise spread {spread:.2e} (tol 5e-2), |Im|/Re of branch {im_ratio:.1e} (tol 1e-2)")


def test_criterion_4_identities(request, sweep_fit):
    points, _, _ = sweep_fit
    re_err = max(p.result.re_identity_error for p in points)
    im_err = max(p.result.im_identity_error for p in points)
    res = max(p.result.residual for p in points)
    verdict(request, 4, re_err <= 1e-12 and im_err <= 1e-12 and res <= 1e-10,
            f"{len(points)} eigenpairs: Re identity {re_err:.1e}, Im identity {im_err:.1e} (tol 1e-12), "
            f"residual {res:.1e} (tol 1e-10)")


def test_criterion_5_drift(request):
    sym = [drift_j(make_power_law(1, g), 1e-6).j1 for g in (0.75, 1.0, 2.0, 3.0)]
    asym = make_power_law(1, 2.0, 1.5, 0.5)
    j, _ = first_moment(asym)
    eta = ETAS[-1]
    slope = eigenpair(asym, eta).mu.imag / eta
    rel = abs(slope - j) / abs(j)
    crit = make_power_law(1, 1.0, 1.5, 0.5)
    ratio = check_log_asymptote(crit, [1e-12])[0]
    ok = all(v == 0 for v in sym) and rel <= 0.02 and abs(ratio - 1) <= 0.05
    verdict(request, 5, ok,
            f"symmetric j1={max(abs(v) for v in sym):g}; asymmetric gamma=2: Im mu/eta={slope:.6f} vs "
            f"{j:.6f} at eta={eta:.3g}, rel {rel:.2e} (tol 2e-2); critical ratio at 1e-12 = {ratio:.4f} (tol 5e-2)")


def _study(model, ref):
    t0 = time.perf_counter()
    study = convergence_study(model, [0.5, 1.0, 2.0], [0.5, 1.0, 2.0], [1e-2, 3e-3, 1e-3], ref)
    secs = time.perf_counter() - t0
    failed = [c.error for c in study.cells if c.error]
    perr = study.max_projection_error
    frac = study.monotone_fraction
    ok = not failed and perr <= 1e-6 and frac >= 0.8 and secs < 300
    detail = (f"projection identity max err {perr:.1e} (tol 1e-6), monotone cells {frac:.2f} (need 0.80), "
              f"reference kappa={ref.kappa:.5f} alpha={ref.alpha:.5f} ({ref.source}), {secs:.1f}s (limit 300s)")
    return ok, detail + (f", failures {failed}" if failed else "")


def test_criterion_5_info_gamma_1_4(request):
    # not gated: beta = 2.8 sits close to d + 1 and the complex limit coefficient
    # makes Im mu / eta approach the moment only like eta^(alpha - 1)
    m = make_power_law(1, 1.4, 1.5, 0.5)
    j, _ = first_moment(m)
    eta = ETAS[-1]
    rel = abs(eigenpair(m, eta).mu.imag / eta - j) / abs(j)
    line = (f"criterion 5 (info, asymmetric gamma=1.4): Im mu/eta vs moment rel {rel:.2e} at eta={eta:.3g}, "
            f"predicted gap ~ eta^(alpha-1) = {eta ** (m.alpha - 1):.2e}")
    with request.config.pluginmanager.getplugin("capturemanager").global_and_fixture_disabled():
        print("\n" + line)


def test_criterion_6_semigroup(request, model, sweep_fit):
    # reference built from the sweep fit, as the criterion states
    _, fit, _ = sweep_fit
    ok, detail = _study(model, limit_reference(model, "fitted", fit))
    verdict(request, 6, ok, detail)


def test_criterion_6_limit_reference(request, model):
    # supplementary: the same table against kappa from the limit profile and the exact exponent
    ok, detail = _study(model, limit_reference(model, "analytic"))
    verdict(request, "6 (supplementary, limit-profile reference)", ok, detail)


def test_criterion_7_hardy_poincare(request, model):
    est = verify_hardy_poincare(model, build_grid(1, 50.0, 512), n_samples=200, seed=11)
    doubled = hardy_poincare_constant(assemble_Q(model, build_grid(1, 100.0, 1024)))
    change = abs(doubled - est.Lambda) / est.Lambda
    ok = est.Lambda > 0 and est.min_sample >= est.Lambda and change <= 0.1
    verdict(request, 7, ok, f"Lambda={est.Lambda:.6f}, min sample quotient {est.min_sample:.6f} over "
                            f"{est.sample_quotients.size} samples, doubled grid {doubled:.6f} ({change:.2e}, tol 1e-1)")


@pytest.mark.slow
def test_criterion_8_monte_carlo(request, model, sweep_fit):
    _, fit, _ = sweep_fit
    eps, n = 3e-3, 100_000
    t0 = time.perf_counter()
    ens = simulate_sde(model, n, 1e-2, macro_horizon(model, eps, 1.0), seed=0)
    x = rescaled_displacement(ens, model, eps, 1.0)
    cf = empirical_cf(x, [1.0])[0]
    target = np.exp(-fit.kappa_hat)
    dev = abs(cf.value - target)
    cdf = EquilibriumCDF(model)
    ks = ks_distance(ens.V, cdf)
    ok = dev <= cf.ci_radius + 0.1 * target and ks < 0.02
    verdict(request, 8, ok, f"cf(1)={cf.value.real:.5f}{cf.value.imag:+.5f}i vs exp(-kappa_hat)={target:.5f}, "
                            f"|diff|={dev:.4f} (allowed {cf.ci_radius:.4f} + {0.1 * target:.4f}), KS={ks:.4f} "
                            f"(tol 0.02), {time.perf_counter() - t0:.0f}s")


def test_criterion_9_determinism(request, tmp_path):
    cfg = str(GOLDEN / "golden.ini")
    runs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        codes = [cli_main([v, "--config", cfg, "--out", str(out)]) for v in ("eigensweep", "report")]
        assert codes == [0, 0]
        runs.append(out)
    names = ["sweep.csv", "fit.json", "report.json", "report.txt"]
    same = all((runs[0] / f).read_bytes() == (runs[1] / f).read_bytes() for f in names)
    old = json.loads((GOLDEN / "fit.json").read_text())
    new = json.loads((runs[0] / "fit.json").read_text())
    golden = abs(new["alpha_hat"] - old["alpha_hat"]) <= 1e-9 * old["alpha_hat"] and \
        abs(new["kappa_hat"] - old["kappa_hat"]) <= 1e-9 * old["kappa_hat"]
    verdict(request, 9, same and golden, f"reruns byte-identical: {same} ({', '.join(names)}); "
                                         f"golden alpha_hat/kappa_hat match: {golden}")
