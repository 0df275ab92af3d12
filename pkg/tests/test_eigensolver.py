import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fracfp.eigensolver import (GridPolicy, compute_B, default_etas, eigenpair, find_lambda, fit_sweep,
                                oracle_eigenpair, run_sweep, setup, solve_penalized, sweep_and_fit)
from fracfp.equilibria import first_moment, make_power_law
from fracfp.errors import EtaZero, FitDegenerate, LambdaOutOfDisk


def test_trivial_point(classical):
    _, L, Phi = setup(classical, 0.0)
    sol = solve_penalized(L, 0.0, Phi)
    assert np.max(np.abs(sol.psi - L.M_h)) == 0.0 and sol.b == 0
    assert compute_B(sol).B == 0
    with pytest.raises(EtaZero):
        compute_B(sol, strict=True)
    with pytest.raises(EtaZero):
        find_lambda(L, Phi)


def test_deviation_shrinks(classical):
    dev = []
    for eta in (1e-2, 1e-3, 1e-4):
        _, L, Phi = setup(classical, eta)
        sol = solve_penalized(L, 0.0, Phi)
        assert sol.residual <= 1e-10
        dev.append(np.sqrt(np.sum(L.weights * np.abs(sol.deviation) ** 2)))
    assert dev[0] > dev[1] > dev[2]


def test_B_two_routes(operators):
    _, L, Phi = operators
    Bv = compute_B(solve_penalized(L, 0.1 + 0.1j, Phi))
    assert abs(Bv.B - Bv.B_int) <= 1e-9


def test_dB_dlambda_tends_to_one(classical):
    errs = []
    for eta in (1e-2, 1e-3, 1e-4):
        _, L, Phi = setup(classical, eta)
        h = 1e-4
        dB = (compute_B(solve_penalized(L, h, Phi)).B - compute_B(solve_penalized(L, -h, Phi)).B) / (2 * h)
        errs.append(abs(dB - 1))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.05


def test_holomorphy_probe(operators):
    _, L, Phi = operators
    lam = 0.05 + 0.02j

    def B(z):
        return compute_B(solve_penalized(L, z, Phi)).B

    b0 = B(lam)
    for direction in (1.0, 1j):
        second = [abs(B(lam + h * direction) + B(lam - h * direction) - 2 * b0) for h in (2e-2, 1e-2)]
        assert second[0] / second[1] == pytest.approx(4.0, rel=0.05)
    # Cauchy-Riemann: the derivative does not depend on the direction
    h = 1e-4
    d_re = (B(lam + h) - B(lam - h)) / (2 * h)
    d_im = (B(lam + 1j * h) - B(lam - 1j * h)) / (2j * h)
    assert abs(d_re - d_im) <= 1e-6 * abs(d_re)


def test_disk_guard(operators):
    _, L, Phi = operators
    with pytest.raises(LambdaOutOfDisk):
        solve_penalized(L, 0.6, Phi)


def test_matches_dense_oracle(classical):
    _, L, Phi = setup(classical, 1e-3, GridPolicy(n=256))
    r = find_lambda(L, Phi)
    o = oracle_eigenpair(L)
    assert abs(o.polished - r.mu) <= 1e-8 * abs(r.mu)
    assert o.residual <= 1e-10
    assert abs(o.raw - r.mu) <= 1e-6 * abs(r.mu)


def test_oracle_kernel(classical):
    _, L, _ = setup(classical, 0.0, GridPolicy(n=128))
    o = oracle_eigenpair(L)
    assert abs(o.raw) < 1e-10
    x = o.vector.real / np.linalg.norm(o.vector)
    m = L.M_h / np.linalg.norm(L.M_h)
    assert abs(abs(x @ m) - 1) < 1e-10


def test_eigenpair_identities(sweep):
    for p in sweep:
        r = p.result
        assert r is not None
        assert r.re_identity_error <= 1e-12
        assert r.im_identity_error <= 1e-12
        assert r.residual <= 1e-10
        assert abs(r.B - r.B_int) <= 1e-9 * max(1.0, abs(r.B))


@given(st.floats(1e-5, 1e-2), st.sampled_from([(2.0, 1.0, 1.0), (1.4, 1.5, 0.5), (2.2, 0.8, 1.2)]))
def test_identities_property(eta, params):
    m = make_power_law(1, *params)
    r = eigenpair(m, eta, GridPolicy(n=256))
    assert r.re_identity_error <= 1e-12
    assert r.im_identity_error <= 1e-12
    assert r.residual <= 1e-10


def test_symmetric_real(sweep):
    for p in sweep:
        assert abs(p.result.mu.imag) <= 1e-12 * p.result.mu.real


def test_scaled_lambda_shrinks(sweep):
    lam = [abs(p.result.lam) for p in sweep]
    assert all(a > b for a, b in zip(lam, lam[1:]))


def test_fit(classical, sweep):
    fit = fit_sweep(classical, [p.eta for p in sweep], [p.result.mu for p in sweep])
    assert 1.58 <= fit.alpha_hat <= 1.75
    assert fit.kappa_hat > 0
    assert fit.full is not None and fit.used in ("full", "lower")


def test_fit_grid_independent(classical, sweep):
    a = fit_sweep(classical, [p.eta for p in sweep], [p.result.mu for p in sweep]).alpha_hat
    b, _ = sweep_and_fit(classical, default_etas(), policy=GridPolicy(n=1024, r0=100.0, c=16.0))
    assert abs(b.alpha_hat - a) <= 0.02 * a


def test_grid_convergence_mu(classical):
    a = eigenpair(classical, 1e-3, GridPolicy(n=512)).mu
    b = eigenpair(classical, 1e-3, GridPolicy(n=1024, r0=100.0, c=16.0)).mu
    assert abs(a - b) <= 0.01 * abs(a)


def test_fit_degenerate(classical):
    with pytest.raises(FitDegenerate):
        fit_sweep(classical, [1e-3], [1e-5])
    with pytest.raises(FitDegenerate):
        fit_sweep(classical, [1e-3, 2e-3, 4e-3], [1e-5, 2e-5, 3e-5])


def test_drift_slope_trend():
    # asymmetric, beta = 2.8 > d + 1: Im mu / eta approaches the first moment as eta decreases
    m = make_power_law(1, 1.4, 1.5, 0.5)
    j, _ = first_moment(m)
    errs = [abs(eigenpair(m, eta).mu.imag / eta - j) / abs(j) for eta in (1e-2, 1e-3, 1e-4)]
    assert errs[0] > errs[1] > errs[2]


def test_sweep_threads_deterministic(classical):
    etas = default_etas(4)
    a = run_sweep(classical, etas, GridPolicy(n=256))
    b = run_sweep(classical, etas, GridPolicy(n=256), threads=3)
    assert [p.eta for p in a] == list(etas)
    assert all(x.result.mu == y.result.mu for x, y in zip(a, b))
