"""Eigen-couple (mu(eta), M_eta) of L_eta bifurcating from (0, M).

The penalized problem is solved as a bordered sparse system in the deviation
N = psi - M and the scalar b:

    (L - lam eta^(2/3)) N + b Phi = -(i eta v1 - lam eta^(2/3)) M
    <N, Phi>_w - b = 0

which is (L - lam eta^(2/3)) psi + b Phi = 0, <psi, Phi>_w - b = 1.  Working
with N keeps b accurate to full relative precision even when it is tiny.
The eigenvalue is the zero of B(lam) = eta^(-2/3) b(lam, eta), located by a
complex secant iteration.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import (DiscreteOperator, PenalizationVector, assemble_L_eta, assemble_Phi, assemble_Q,
                             auto_vmax, build_grid)
from .equilibria import EquilibriumModel
from .errors import (EtaZero, FitDegenerate, LambdaOutOfDisk, NewtonDiverged, NoConvergence,
                     SingularBorderedSystem)

LAMBDA0 = 0.5


@dataclass
class PenalizedSolution:
    psi: np.ndarray
    deviation: np.ndarray
    b: complex
    lam: complex
    eta: float
    residual: float
    op: DiscreteOperator = field(repr=False)


@dataclass
class BValue:
    B: complex
    B_int: complex
    eta_zero: bool = False


def _bordered(L: DiscreteOperator, shift: complex, phi: np.ndarray):
    n = L.grid.size
    A = (L.matrix - shift * sp.identity(n, format="csr")).tocsc()
    col = sp.csc_matrix(phi.astype(complex)[:, None])
    row = sp.csc_matrix((L.weights * phi).astype(complex)[None, :])
    K = sp.bmat([[A, col], [row, sp.csc_matrix(np.array([[-1.0 + 0j]]))]], format="csc")
    return K


def solve_penalized(L: DiscreteOperator, lam: complex, Phi: PenalizationVector,
                    M_h: Optional[np.ndarray] = None, lambda0: float = LAMBDA0) -> PenalizedSolution:
    """Bordered solve of the penalized equation at (lam, eta)."""
    if abs(lam) > lambda0:
        raise LambdaOutOfDisk(f"|lambda|={abs(lam):.3g} exceeds the disk radius {lambda0}")
    M = L.M_h if M_h is None else M_h
    eta = L.eta
    shift = lam * eta ** (2.0 / 3.0)
    phi = Phi.values
    K = _bordered(L, shift, phi)
    rhs = np.concatenate([-(1j * eta * L.grid.v1 - shift) * M, [0.0]]).astype(complex)
    try:
        lu = spla.splu(K, permc_spec="COLAMD")
        x = lu.solve(rhs)
    except RuntimeError as exc:
        x = None
        err = exc
    if x is None or not np.all(np.isfinite(x)):
        # iterative fallback
        try:
            x, info = spla.gmres(K, rhs, rtol=1e-13, restart=200, maxiter=50)
        except Exception as exc:  # pragma: no cover - defensive
            raise SingularBorderedSystem(str(exc)) from exc
        if info != 0 or not np.all(np.isfinite(x)):
            if x is not None and info > 0:
                raise NoConvergence("iterative bordered solve did not converge")
            raise SingularBorderedSystem(f"factorization failed: {err}")
    N = x[:-1]
    b = complex(x[-1])
    r = K @ x - rhs
    scale = np.linalg.norm(rhs) + np.linalg.norm(K @ np.abs(x))
    residual = float(np.linalg.norm(r) / scale) if scale > 0 else 0.0
    return PenalizedSolution(psi=M + N, deviation=N, b=b, lam=complex(lam), eta=eta, residual=residual, op=L)


def compute_B(sol: PenalizedSolution, strict: bool = False) -> BValue:
    """B = eta^(-2/3) b and the integral form sum w (lam - i eta^(1/3) v1) psi M."""
    L = sol.op
    w, v1, M = L.weights, L.grid.v1, L.M_h
    if sol.eta == 0.0:
        if strict:
            raise EtaZero("B is undefined at eta = 0")
        lin = sol.lam * np.sum(w * M * M)
        return BValue(B=complex(lin), B_int=complex(lin), eta_zero=True)
    B = sol.b * sol.eta ** (-2.0 / 3.0)
    # the integral form split so that the O(1) part sum w M^2 is summed exactly once
    c = sol.eta ** (1.0 / 3.0)
    B_int = sol.lam * np.sum(w * M * M) - 1j * c * np.sum(w * v1 * M * M) + np.sum(w * (sol.lam - 1j * c * v1) * sol.deviation * M)
    return BValue(B=complex(B), B_int=complex(B_int))


@dataclass
class EigenResult:
    eta: float
    mu: complex
    lam: complex
    eigvec: np.ndarray
    b: complex
    B: complex
    B_int: complex
    dirichlet: float
    norm2: float
    norm_dev: float
    iterations: int
    residual: float
    drift_term: float        # eta * sum w v1 |M_eta|^2
    grid_n: int = 0
    vmax: float = 0.0

    @property
    def re_identity_error(self) -> float:
        return abs(self.mu.real * self.norm2 - self.dirichlet) / self.dirichlet

    @property
    def im_identity_error(self) -> float:
        """Relative to |mu| ||M_eta||^2 (Im mu may vanish identically)."""
        return abs(self.mu.imag * self.norm2 - self.drift_term) / (abs(self.mu) * self.norm2)


def find_lambda(L: DiscreteOperator, Phi: PenalizationVector, tol: float = 1e-12,
                lambda0: float = LAMBDA0, max_iter: int = 50) -> EigenResult:
    """Secant iteration on lam -> B(lam, eta) started from the linearized root.

    Once |B| <= tol the iteration continues until the step stalls at
    roundoff, so that the exact identities hold to ~1e-13.
    """
    eta = L.eta
    if eta <= 0:
        raise EtaZero("find_lambda needs eta > 0 (the eigenvalue at eta = 0 is 0)")
    s0 = solve_penalized(L, 0.0, Phi, lambda0=lambda0)
    B0 = compute_B(s0).B
    la = -B0 / np.sum(L.weights * s0.psi * L.M_h)
    if abs(la) > lambda0:
        raise LambdaOutOfDisk(f"initial guess |lambda|={abs(la):.3g} outside the disk (eta too large)")
    lb = la * (1.0 + 1e-3)
    sa, sb = solve_penalized(L, la, Phi, lambda0=lambda0), solve_penalized(L, lb, Phi, lambda0=lambda0)
    fa, fb = compute_B(sa).B, compute_B(sb).B
    best = (abs(fb), lb, sb) if abs(fb) < abs(fa) else (abs(fa), la, sa)
    it, stall = 0, 0
    for it in range(1, max_iter + 1):
        if fb == fa:
            break
        lc = lb - fb * (lb - la) / (fb - fa)
        if not np.isfinite(lc):
            break
        if abs(lc) > lambda0:
            raise LambdaOutOfDisk(f"secant iterate |lambda|={abs(lc):.3g} left the disk")
        la, fa, sa = lb, fb, sb
        lb = lc
        sb = solve_penalized(L, lb, Phi, lambda0=lambda0)
        fb = compute_B(sb).B
        if abs(fb) < best[0]:
            best, stall = (abs(fb), lb, sb), 0
        else:
            stall += 1
        if best[0] <= tol and (abs(lb - la) <= 4e-16 * abs(lb) or stall >= 3):
            break
    if best[0] > tol:
        raise NewtonDiverged(f"|B| = {best[0]:.3e} > tol after {it} iterations")
    sol = best[2]
    if _conjugation_symmetric(L):
        # v1 -> -v1 combined with complex conjugation commutes with L_eta, so the
        # exact discrete eigenvalue is real; drop the roundoff imaginary part
        real = solve_penalized(L, complex(sol.lam.real, 0.0), Phi, lambda0=lambda0)
        if abs(compute_B(real).B) <= max(tol, best[0]):
            sol = real
    return _eigen_result(L, sol, it)


def _conjugation_symmetric(L: DiscreteOperator) -> bool:
    if not (L.model.symmetric and L.grid.mirror_symmetric):
        return False
    return bool(np.array_equal(L.M_h, L.M_h[L.grid.mirror_index()]))


def _eigen_result(L: DiscreteOperator, sol: PenalizedSolution, iterations: int) -> EigenResult:
    eta = L.eta
    mu = sol.lam * eta ** (2.0 / 3.0)
    psi = sol.psi
    w = L.weights
    norm2 = float(np.sum(w * np.abs(psi) ** 2))
    dirichlet = L.dirichlet(sol.deviation)   # M contributes no jumps
    drift = float(eta * np.sum(w * L.grid.v1 * np.abs(psi) ** 2))
    r = L.apply(psi) - mu * psi
    residual = float(np.sqrt(np.sum(w * np.abs(r) ** 2) / norm2))
    Bv = compute_B(sol)
    return EigenResult(eta=eta, mu=complex(mu), lam=complex(sol.lam), eigvec=psi, b=sol.b, B=Bv.B, B_int=Bv.B_int,
                       dirichlet=dirichlet, norm2=norm2, norm_dev=float(np.sqrt(np.sum(w * np.abs(sol.deviation) ** 2))),
                       iterations=iterations, residual=residual, drift_term=drift, grid_n=L.grid.size,
                       vmax=L.grid.vmax)


@dataclass
class GridPolicy:
    n: int = 512
    stretch: float = 1.0
    r0: float = 50.0
    c: float = 8.0
    vmax: Optional[float] = None     # fixed extent overrides the auto policy

    def vmax_for(self, eta: float) -> float:
        return float(self.vmax) if self.vmax else auto_vmax(eta, self.r0, self.c)


def setup(model: EquilibriumModel, eta: float, policy: GridPolicy = GridPolicy()):
    grid = build_grid(model.d, policy.vmax_for(eta), policy.n, policy.stretch)
    Q = assemble_Q(model, grid)
    L = assemble_L_eta(Q, eta)
    Phi = assemble_Phi(model, grid, Q.M_h)
    return Q, L, Phi


def eigenpair(model: EquilibriumModel, eta: float, policy: GridPolicy = GridPolicy(), tol: float = 1e-12) -> EigenResult:
    _, L, Phi = setup(model, eta, policy)
    return find_lambda(L, Phi, tol=tol)


@dataclass
class OracleResult:
    raw: complex          # eigenvalue of minimal modulus from the dense solver
    polished: complex     # energy-form Rayleigh quotient of the dense eigenvector
    vector: np.ndarray
    residual: float


def oracle_eigenpair(L: DiscreteOperator) -> OracleResult:
    """Dense non-Hermitian eigendecomposition, independent of the bordered path.

    The raw eigenvalue carries an absolute error of order eps ||L||, which is
    far above 1e-8 |mu| for small eta; it is therefore refined by the
    stationary quotient (D(x, x) + i eta sum w v1 x^2) / sum w x^2 (no complex
    conjugation: L is symmetric for the bilinear weighted pairing), where
    D(x, x) is the face-difference Dirichlet form.
    """
    if L.grid.size > 1024:
        raise ValueError("dense oracle limited to 1024 unknowns")
    A = L.matrix.toarray()
    ev, X = sla.eig(A)
    k = int(np.argmin(np.abs(ev)))
    x = X[:, k]
    w = L.weights
    pair = np.sum(w * x * L.M_h)
    x = x * (abs(pair) / pair)
    num = L.dirichlet_bilinear(x, x) + 1j * L.eta * np.sum(w * L.grid.v1 * x * x)
    pol = complex(num / np.sum(w * x * x))
    r = L.apply(x) - pol * x
    res = float(np.sqrt(np.sum(w * np.abs(r) ** 2) / np.sum(w * np.abs(x) ** 2)))
    return OracleResult(raw=complex(ev[k]), polished=pol, vector=x, residual=res)


# -- sweep and fit -------------------------------------------------------------

def default_etas(n: int = 8, top: float = 1e-2) -> np.ndarray:
    return top * 2.0 ** -np.arange(n)


@dataclass
class SweepPoint:
    eta: float
    result: Optional[EigenResult]
    error: Optional[str] = None


def run_sweep(model: EquilibriumModel, etas: Sequence[float], policy: GridPolicy = GridPolicy(),
              tol: float = 1e-12, threads: int = 1) -> list:
    """Solve every eta; failures are recorded per point.  Output is in input order."""

    def one(eta):
        try:
            return SweepPoint(float(eta), eigenpair(model, float(eta), policy, tol))
        except Exception as exc:  # recorded, not raised
            return SweepPoint(float(eta), None, f"{type(exc).__name__}: {exc}")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(one, etas))
    return [one(e) for e in etas]


@dataclass
class LineFit:
    alpha: float
    kappa: float
    residual: float
    n: int


@dataclass
class DiffusionFit:
    etas: np.ndarray
    mu: np.ndarray
    drift: np.ndarray
    alpha_hat: float
    kappa_hat: float
    fit_residual: float
    alpha_ref: float
    full: LineFit
    lower: Optional[LineFit]
    used: str
    remainder_ratio: np.ndarray   # |mu - i eta j - kappa eta^alpha| / eta^(2 alpha)


def _line(etas, remu) -> LineFit:
    x, y = np.log(etas), np.log(remu)
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    return LineFit(alpha=float(coef[0]), kappa=float(np.exp(coef[1])),
                   residual=float(np.sqrt(np.mean(res**2))), n=int(x.size))


def fit_sweep(model: EquilibriumModel, etas, mu, drift_values=None, curvature_tol: float = 1e-3) -> DiffusionFit:
    """Least squares of log Re mu against log eta.

    The lower half of the sweep (smallest eta) is used when the slopes of the
    two halves differ by more than curvature_tol relative, i.e. when the
    O(eta^alpha) correction visibly bends the line.
    """
    etas = np.asarray(etas, dtype=float)
    mu = np.asarray(mu, dtype=complex)
    drift = np.zeros_like(etas) if drift_values is None else np.asarray(drift_values, dtype=float)
    if etas.size < 2 or etas.max() / etas.min() < 10.0:
        raise FitDegenerate(f"dynamic range of eta too small ({etas.size} points)")
    if np.any(mu.real <= 0):
        raise FitDegenerate("non-positive Re mu in sweep")
    order = np.argsort(etas)
    etas, mu, drift = etas[order], mu[order], drift[order]
    full = _line(etas, mu.real)
    lower, used, chosen = None, "full", full
    half = (etas.size + 1) // 2
    if etas.size >= 4 and etas[half - 1] / etas[0] >= 4.0:
        lower = _line(etas[:half], mu.real[:half])
        upper = _line(etas[-half:], mu.real[-half:])
        if abs(upper.alpha - lower.alpha) > curvature_tol * abs(lower.alpha):
            used, chosen = "lower", lower
    rem = np.abs(mu - 1j * etas * drift - chosen.kappa * etas**chosen.alpha) / etas ** (2 * chosen.alpha)
    return DiffusionFit(etas=etas, mu=mu, drift=drift, alpha_hat=chosen.alpha, kappa_hat=chosen.kappa,
                        fit_residual=chosen.residual, alpha_ref=model.alpha, full=full, lower=lower, used=used,
                        remainder_ratio=rem)


def sweep_and_fit(model: EquilibriumModel, eta_list, drift_values=None, policy: GridPolicy = GridPolicy(),
                  threads: int = 1):
    points = run_sweep(model, eta_list, policy, threads=threads)
    ok = [p for p in points if p.result is not None]
    fit = fit_sweep(model, [p.eta for p in ok], [p.result.mu for p in ok],
                    None if drift_values is None else [d for p, d in zip(points, drift_values) if p.result is not None])
    return fit, points
