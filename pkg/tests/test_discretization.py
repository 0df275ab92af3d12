import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given
from hypothesis import strategies as st

from fracfp.discretization import (assemble_L_eta, assemble_Phi, assemble_Q, auto_vmax, build_grid, dump_coo,
                                   hardy_poincare_constant, hardy_poincare_quotient, verify_hardy_poincare)
from fracfp.equilibria import make_anisotropic, make_power_law
from fracfp.errors import DegenerateSample, InvalidGrid


def test_grid_endpoints():
    g = build_grid(1, 50.0, 512, 1.0)
    assert g.size == 512
    assert abs(g.nodes[0]) == 50.0 and abs(g.nodes[-1]) == 50.0
    assert g.mirror_symmetric


def test_uniform_grid():
    g = build_grid(1, 50.0, 512, 0.0)
    assert np.allclose(np.diff(g.nodes), 100 / 511, rtol=0, atol=1e-12)
    assert g.weights.sum() == pytest.approx(100.0, rel=1e-14)


@pytest.mark.parametrize("args", [(1, np.nan, 64, 1.0), (1, 50.0, 16, 1.0), (1, 0.5, 64, 1.0), (3, 50.0, 64, 1.0),
                                  (1, 50.0, 64, -1.0)])
def test_invalid_grid(args):
    with pytest.raises(InvalidGrid):
        build_grid(*args)


def test_auto_vmax():
    assert auto_vmax(1e-2) == 50.0
    assert auto_vmax(1e-6) == pytest.approx(800.0)


@pytest.fixture(scope="module", params=["classical", "asymmetric", "aniso2d"])
def Q(request):
    if request.param == "classical":
        return assemble_Q(make_power_law(1, 2.0), build_grid(1, 50.0, 256))
    if request.param == "asymmetric":
        return assemble_Q(make_power_law(1, 1.4, 1.5, 0.5), build_grid(1, 60.0, 300, 0.5))
    return assemble_Q(make_anisotropic(2, 2.0), build_grid(2, 20.0, 40))


def test_exact_kernel(Q):
    assert np.max(np.abs(Q.apply(Q.M_h))) <= 1e-13 * np.max(np.abs(Q.M_h))


def test_self_adjoint(Q, rng):
    for _ in range(5):
        x, y = rng.standard_normal(Q.grid.size), rng.standard_normal(Q.grid.size)
        a, b = np.sum(Q.weights * Q.apply(x) * y), np.sum(Q.weights * x * Q.apply(y))
        assert abs(a - b) <= 1e-12 * max(abs(a), 1.0) * 10


def test_dirichlet_form(Q, rng):
    x = rng.standard_normal(Q.grid.size)
    qf = np.sum(Q.weights * Q.apply(x) * x)
    assert qf == pytest.approx(Q.dirichlet(x), rel=1e-11)
    assert Q.dirichlet(x) >= 0


def test_matrix_agrees_with_matrix_free(Q, rng):
    x = rng.standard_normal(Q.grid.size)
    y = Q.matrix @ x
    assert np.max(np.abs(y - Q.apply(x))) <= 1e-10 * np.max(np.abs(y))


def test_spectrum_bottom():
    m = make_power_law(1, 2.0)
    Q = assemble_Q(m, build_grid(1, 50.0, 128))
    # symmetrize: W^(1/2) Q W^(-1/2)
    s = np.sqrt(Q.weights)
    A = (s[:, None] * Q.matrix.toarray()) / s[None, :]
    ev, vec = sla.eigh(0.5 * (A + A.T))
    assert abs(ev[0]) < 1e-10 * ev[-1]
    v0 = vec[:, 0] / s
    assert abs(abs(np.dot(v0, Q.M_h * Q.weights)) / (np.sqrt(np.sum(Q.weights * v0**2))
                                                     * np.sqrt(np.sum(Q.weights * Q.M_h**2))) - 1) < 1e-10
    assert ev[1] > 0


def test_no_spectral_gap_trend():
    m = make_power_law(1, 2.0)
    gaps = []
    for n, V in ((128, 25.0), (256, 50.0), (512, 100.0)):
        Q = assemble_Q(m, build_grid(1, V, n))
        s = np.sqrt(Q.weights)
        A = (s[:, None] * Q.matrix.toarray()) / s[None, :]
        gaps.append(sla.eigh(0.5 * (A + A.T), eigvals_only=True, subset_by_index=[0, 1])[1])
    assert gaps[0] > gaps[1] > gaps[2] > 0


def test_L_eta_split(operators, rng):
    Q, L, _ = operators
    x = rng.standard_normal(L.grid.size) + 1j * rng.standard_normal(L.grid.size)
    val = np.sum(L.weights * L.apply(x) * np.conj(x))
    assert val.real == pytest.approx(L.dirichlet(x), rel=1e-11)
    assert val.imag == pytest.approx(L.eta * np.sum(L.weights * L.grid.v1 * np.abs(x) ** 2), rel=1e-11, abs=1e-15)


def test_L_zero_is_Q(operators):
    Q = operators[0]
    L0 = assemble_L_eta(Q, 0.0)
    assert (abs(L0.matrix - Q.matrix)).max() == 0


def test_phi(classical):
    for n, V in ((256, 50.0), (512, 100.0), (1024, 200.0)):
        g = build_grid(1, V, n)
        Phi = assemble_Phi(classical, g)
        M = classical.M(g.nodes)
        assert abs(np.sum(g.weights * Phi.values * M) - 1) <= 1e-14
        assert np.all(Phi.values >= 0)
    norms = []
    for n, V in ((512, 50.0), (1024, 100.0)):
        g = build_grid(1, V, n)
        Phi = assemble_Phi(classical, g)
        norms.append(np.sum(g.weights * g.japanese**2 * Phi.values**2))
    assert norms[1] == pytest.approx(norms[0], rel=1e-2)


def test_dump_coo(tmp_path, operators):
    L = operators[1]
    p = tmp_path / "L.txt"
    dump_coo(L, p)
    rows = np.loadtxt(p)
    assert rows.shape == (L.matrix.nnz, 4)


def test_hp_skip_kernel(classical):
    Q = assemble_Q(classical, build_grid(1, 50.0, 128))
    with pytest.raises(DegenerateSample):
        hardy_poincare_quotient(Q.M_h.copy(), Q)


def test_hp_lower_bound(classical):
    est = verify_hardy_poincare(classical, build_grid(1, 50.0, 256), n_samples=64, seed=3)
    assert est.Lambda > 0
    assert est.min_sample >= est.Lambda * (1 - 1e-10)


def test_hp_stable_under_doubling(classical):
    a = hardy_poincare_constant(assemble_Q(classical, build_grid(1, 50.0, 512)))
    b = hardy_poincare_constant(assemble_Q(classical, build_grid(1, 100.0, 1024)))
    assert abs(a - b) <= 0.1 * a


@given(st.integers(0, 2**31 - 1))
def test_hp_random_samples(seed):
    m = make_power_law(1, 1.4, 1.5, 0.5)
    Q = assemble_Q(m, build_grid(1, 50.0, 128))
    lam = hardy_poincare_constant(Q)
    g = np.random.default_rng(seed).standard_normal(Q.grid.size)
    assert hardy_poincare_quotient(g, Q) >= lam * (1 - 1e-9)
