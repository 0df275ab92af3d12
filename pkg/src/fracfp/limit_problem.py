"""Rescaled limit problem, diffusion coefficient and drift.

In ratio form u = H0/m the limit equation on each half-line reads
(m^2 u')' = i s m^2 u with u -> 1 at the origin and u -> 0 at infinity.
With t = ln|s| this becomes ((m^2/|s|) u_t)_t = i s |s| m^2 u on a uniform
t-mesh, solved by a conservative three-point scheme.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .equilibria import EquilibriumModel, first_moment
from .errors import (ImaginaryResidual, QuadratureFailure, RangeMismatch, SolveFailure, TruncationUnstable,
                     ZeroJm)

REGIME_TOL = 1e-12


def regime_of(model: EquilibriumModel) -> str:
    """Compare 2 gamma = beta with d + 1."""
    gap = model.beta - (model.d + 1)
    if abs(gap) <= REGIME_TOL:
        return "critical"
    return "above" if gap > 0 else "below"


@dataclass(frozen=True)
class RescaledGrid:
    s_min: float = 1e-3
    s_max: float = 30.0
    n: int = 4000            # nodes per half-line

    def __post_init__(self):
        if not (0 < self.s_min < 1 <= self.s_max) or self.s_max < 30 or self.n < 16:
            raise ValueError(f"invalid rescaled grid {self}")

    @property
    def t(self) -> np.ndarray:
        return np.linspace(np.log(self.s_min), np.log(self.s_max), self.n)

    @property
    def r(self) -> np.ndarray:
        return np.exp(self.t)


@dataclass
class HalfLine:
    sign: int
    r: np.ndarray          # |s| nodes
    u: np.ndarray          # H0 / m
    m: np.ndarray
    residual: float


@dataclass
class LimitSolution:
    grid: RescaledGrid
    plus: HalfLine
    minus: HalfLine
    gamma: float
    d: int
    regime: str
    kappa_unified: float = np.nan
    kappa_branch: complex = complex(np.nan)
    notes: list = field(default_factory=list)

    @property
    def s(self) -> np.ndarray:
        return np.concatenate([-self.minus.r[::-1], self.plus.r])

    @property
    def m(self) -> np.ndarray:
        return np.concatenate([self.minus.m[::-1], self.plus.m])

    @property
    def u(self) -> np.ndarray:
        return np.concatenate([self.minus.u[::-1], self.plus.u])

    @property
    def H0(self) -> np.ndarray:
        return self.m * self.u

    def H0_at(self, s):
        """Interpolate H0 (linear in ln|s|, ratio form) at nonzero points."""
        s = np.asarray(s, dtype=float)
        out = np.empty(s.shape, dtype=complex)
        for half, mask in ((self.plus, s > 0), (self.minus, s < 0)):
            if np.any(mask):
                t = np.log(np.abs(s[mask]))
                tt = np.log(half.r)
                ure = np.interp(t, tt, half.u.real)
                uim = np.interp(t, tt, half.u.imag)
                mm = np.exp(np.interp(t, tt, np.log(half.m)))
                out[mask] = mm * (ure + 1j * uim)
        return out


def _solve_half(m_fn, sign: int, grid: RescaledGrid) -> HalfLine:
    t = grid.t
    h = t[1] - t[0]
    r = np.exp(t)
    m = np.asarray(m_fn(sign * r), dtype=float)
    rf = np.exp(0.5 * (t[1:] + t[:-1]))
    mf = np.asarray(m_fn(sign * rf), dtype=float)
    a = mf * mf / rf                      # face coefficient m^2/|s|
    n = r.size
    # unknowns are the interior nodes; u[0] = 1 and u[n-1] = 0
    ab = np.zeros((3, n - 2), dtype=complex)
    ab[0, 1:] = a[1:-1] / h**2
    ab[1] = -(a[:-1] + a[1:]) / h**2 - 1j * sign * r[1:-1] ** 2 * m[1:-1] ** 2
    ab[2, :-1] = a[1:-1] / h**2
    rhs = np.zeros(n - 2, dtype=complex)
    rhs[0] = -a[0] / h**2
    try:
        inner = sla.solve_banded((1, 1), ab, rhs)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolveFailure(str(exc)) from exc
    if not np.all(np.isfinite(inner)):
        raise SolveFailure("non-finite tridiagonal solution")
    u = np.concatenate([[1.0 + 0j], inner, [0.0 + 0j]])
    # componentwise backward error of the tridiagonal equations, res / (|A| |u|)
    flux = a * np.diff(u) / h
    source = 1j * sign * r[1:-1] ** 2 * m[1:-1] ** 2 * u[1:-1]
    res = (flux[1:] - flux[:-1]) / h - source
    au = np.abs(u)
    size = (a[:-1] * (au[:-2] + au[1:-1]) + a[1:] * (au[1:-1] + au[2:])) / h**2 + np.abs(source)
    residual = float(np.max(np.abs(res) / np.maximum(size, 1e-300)))
    return HalfLine(sign=sign, r=r, u=u, m=m, residual=residual)


def solve_H0_1d(model: EquilibriumModel, grid: RescaledGrid = RescaledGrid(), check_truncation: bool = False,
                check_real: bool = True, cut: float = 1.0) -> LimitSolution:
    """Two half-line solves with u = 1 at s_min and u = 0 at s_max."""
    if model.d != 1:
        raise ValueError("solve_H0_1d needs d = 1")
    m_fn = model.m
    sol = LimitSolution(grid=grid, plus=_solve_half(m_fn, +1, grid), minus=_solve_half(m_fn, -1, grid),
                        gamma=model.gamma, d=1, regime=regime_of(model))
    if model.gamma >= (model.d + 4) / 2:
        sol.notes.append("gamma >= (d+4)/2: s m Im H0 is not integrable at 0, kappa depends on s_min")
    sol.kappa_unified = kappa_unified(sol)
    sol.kappa_branch = kappa_branch(sol, cut=cut)
    if check_truncation:
        wide = RescaledGrid(grid.s_min, 2 * grid.s_max, int(grid.n * np.log(2 * grid.s_max / grid.s_min)
                                                            / np.log(grid.s_max / grid.s_min)) + 1)
        k2 = solve_H0_1d(model, wide, check_real=False).kappa_unified
        if abs(k2 - sol.kappa_unified) > 0.01 * abs(sol.kappa_unified):
            raise TruncationUnstable(f"kappa moves from {sol.kappa_unified} to {k2} when s_max doubles")
    if check_real:
        _check_real(sol.kappa_branch)
    return sol


def _check_real(kb: complex, rel: float = 0.01):
    if abs(kb.imag) > rel * abs(kb.real):
        raise ImaginaryResidual(f"branch value {kb} has |Im| > {rel} |Re|")


# -- quadrature on the log mesh ------------------------------------------------------

def _powerlaw_tail(r0, f0, r1, f1, side: str) -> float:
    """Integral of a power law through (r0, f0), (r1, f1) over (0, r0] or [r1, inf)."""
    if f0 == 0 or f1 == 0 or np.sign(f0) != np.sign(f1):
        return 0.0
    p = np.log(abs(f1) / abs(f0)) / np.log(r1 / r0)
    if side == "inner":
        if p <= -1:
            raise QuadratureFailure("integrand not integrable at the origin")
        return f0 * r0 / (p + 1.0)
    if p >= -1:
        raise QuadratureFailure("integrand not integrable at infinity")
    return -f1 * r1 / (p + 1.0)


def _half_integral(half: HalfLine, g: np.ndarray, inner_tail=True, outer_tail=True, lo=None, hi=None) -> complex:
    """int g(|s|) d|s| over the half line; g sampled on the nodes."""
    t = np.log(half.r)
    f = g * half.r
    total = np.trapezoid(f, t)
    if lo is not None or hi is not None:
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(t))])
        a = np.interp(np.log(lo), t, cum.real) + 1j * np.interp(np.log(lo), t, cum.imag) if lo else 0.0
        b = (np.interp(np.log(hi), t, cum.real) + 1j * np.interp(np.log(hi), t, cum.imag)) if hi else cum[-1]
        total = b - a
    if inner_tail and lo is None:
        total += _powerlaw_tail(half.r[0], g[0].real, half.r[1], g[1].real, "inner") \
            + 1j * _powerlaw_tail(half.r[0], g[0].imag, half.r[1], g[1].imag, "inner")
    if outer_tail and hi is None:
        total += _powerlaw_tail(half.r[-2], g[-2].real, half.r[-1], g[-1].real, "outer") \
            + 1j * _powerlaw_tail(half.r[-2], g[-2].imag, half.r[-1], g[-1].imag, "outer")
    return complex(total)


def kappa_unified(sol: LimitSolution) -> float:
    """-int s m Im H0 ds over both half-lines."""
    tot = 0.0
    for half in (sol.plus, sol.minus):
        g = half.sign * half.r * half.m**2 * half.u.imag
        tot += _half_integral(half, g, outer_tail=False).real
    return float(-tot)


def kappa_branch(sol: LimitSolution, cut: float = 1.0) -> complex:
    """Regime-dependent formula, with H0 - m subtracted where s m^2 is not integrable."""
    tot = 0.0 + 0.0j
    for half in (sol.plus, sol.minus):
        sgn, r, m, u = half.sign, half.r, half.m, half.u
        if sol.regime == "above":
            tot += _half_integral(half, sgn * r * m**2 * (u - 1.0))
        elif sol.regime == "below":
            tot += _half_integral(half, sgn * r * m**2 * u, outer_tail=False)
        else:
            g = sgn * r * m**2 * (u - 1.0)
            inner = _half_integral(half, g, hi=cut)
            outer = _half_integral(half, sgn * r * m**2 * u, lo=cut)
            tot += inner + outer
    return complex(1j * tot)


def kappa_from_H0(sol: LimitSolution, check_real: bool = True) -> float:
    """Unified coefficient; the branch value is stored on the solution."""
    if check_real:
        _check_real(sol.kappa_branch)
    return sol.kappa_unified


# -- drift ------------------------------------------------------------------------

@dataclass
class DriftValue:
    beta: float
    eps: float
    regime: str
    j1: float
    asymptote: Optional[float] = None
    ratio: Optional[float] = None


def drift_j(model: EquilibriumModel, epsilon: float) -> DriftValue:
    """Drift component along v1 in the three regimes."""
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    reg = regime_of(model)
    if reg == "below" or model.symmetric:
        return DriftValue(model.beta, epsilon, reg, 0.0)
    radius = epsilon ** (-1.0 / 3.0) if reg == "critical" else np.inf
    val, err = first_moment(model, radius)
    if not np.isfinite(val) or err > 1e-8 * max(1.0, abs(val)):
        raise QuadratureFailure(f"first moment quadrature failed (val={val}, err={err})")
    out = DriftValue(model.beta, epsilon, reg, float(val))
    if reg == "critical":
        jm = jm_limit(model)[0]
        out.asymptote = abs(np.log(epsilon)) / 3.0 * jm
        out.ratio = val / out.asymptote if jm != 0 else None
    return out


def jm_limit(model: EquilibriumModel, n_theta: int = 4096) -> np.ndarray:
    """Spherical moment int_{S^(d-1)} s m(s)^2 dsigma."""
    if model.d == 1:
        return np.array([model.m(np.array([1.0]))[0] ** 2 - model.m(np.array([-1.0]))[0] ** 2])
    if model.d != 2:
        raise ValueError("jm_limit supports d = 1, 2")
    th = np.linspace(0.0, 2 * np.pi, n_theta, endpoint=False)
    pts = np.stack([np.cos(th), np.sin(th)], axis=1)
    m2 = model.m(pts) ** 2
    return np.array([np.mean(pts[:, 0] * m2), np.mean(pts[:, 1] * m2)]) * 2 * np.pi


def check_log_asymptote(model: EquilibriumModel, eps_list: Sequence[float]) -> list:
    """Ratios j^eps / ((|ln eps|/3) jm) in the critical regime."""
    if regime_of(model) != "critical":
        raise ValueError("log asymptote applies only to beta = d + 1")
    jm = jm_limit(model)[0]
    if abs(jm) < 1e-14:
        raise ZeroJm("the spherical moment vanishes (symmetric limit profile)")
    return [drift_j(model, e).ratio for e in eps_list]


# -- H_eta versus H0 ----------------------------------------------------------------

@dataclass
class HEtaComparison:
    eta: float
    l2_error: float
    sup_error: float
    l2_norm: float
    m_eta_error: float


def compare_H_eta(penalized, limit: LimitSolution, eta: float, r: float = 0.5, R: float = 5.0,
                  n: int = 400) -> HEtaComparison:
    """Rescale the lambda = 0 penalized solution and compare with H0 on r <= |s| <= R."""
    grid = penalized.op.grid
    model = penalized.op.model
    k = eta ** (-1.0 / 3.0)
    if k * R > grid.vmax:
        raise RangeMismatch(f"eta^(-1/3) R = {k * R:.3g} exceeds the velocity extent {grid.vmax:.3g}")
    rr = np.linspace(r, R, n)
    s = np.concatenate([-rr[::-1], rr])
    v = grid.axes[0]
    psi = penalized.psi
    scale = eta ** (-model.gamma / 3.0)
    H_eta = scale * (np.interp(k * s, v, psi.real) + 1j * np.interp(k * s, v, psi.imag))
    H0 = limit.H0_at(s)
    diff = np.abs(H_eta - H0)
    ds = rr[1] - rr[0]
    weights = np.full(s.size, ds)
    l2 = float(np.sqrt(np.sum(weights * diff**2)))
    m_err = float(np.max(np.abs(model.m_eta(s, eta) - model.m(s))))
    return HEtaComparison(eta=eta, l2_error=l2, sup_error=float(diff.max()),
                          l2_norm=float(np.sqrt(np.sum(weights * np.abs(H0) ** 2))), m_eta_error=m_err)


# -- experimental annulus solver (d = 2) ------------------------------------------------

@dataclass
class AnnulusSolution:
    r: np.ndarray
    theta: np.ndarray
    u: np.ndarray          # shape (n_r, n_theta)
    m: np.ndarray
    kappa_unified: float
    experimental: bool = True


def solve_H0_2d(model: EquilibriumModel, s_min: float = 1e-2, s_max: float = 30.0, n_r: int = 400,
                n_theta: int = 64) -> AnnulusSolution:
    """Polar finite volumes in (ln r, theta): (a u_t)_t + (a u_th)_th = i r^3 cos(th) a u."""
    if model.d != 2:
        raise ValueError("solve_H0_2d needs d = 2")
    t = np.linspace(np.log(s_min), np.log(s_max), n_r)
    th = np.linspace(0.0, 2 * np.pi, n_theta, endpoint=False)
    ht, hth = t[1] - t[0], th[1] - th[0]
    r = np.exp(t)

    def a_at(tt, thth):
        rr = np.exp(tt)
        pts = np.stack([np.multiply.outer(rr, np.cos(thth)).ravel(), np.multiply.outer(rr, np.sin(thth)).ravel()], 1)
        return (model.m(pts) ** 2).reshape(np.size(tt), np.size(thth))

    a_node = a_at(t, th)
    a_tf = a_at(0.5 * (t[1:] + t[:-1]), th)          # radial faces
    a_thf = a_at(t, th + 0.5 * hth)                   # angular faces (j, j+1)
    ni = n_r - 2
    idx = np.arange(ni * n_theta).reshape(ni, n_theta)
    rows, cols, vals = [], [], []
    rhs = np.zeros(ni * n_theta, dtype=complex)
    for i in range(ni):
        g = i + 1
        for j in range(n_theta):
            p = idx[i, j]
            diag = -(a_tf[g - 1, j] + a_tf[g, j]) / ht**2 - (a_thf[g, j] + a_thf[g, j - 1]) / hth**2
            diag -= 1j * r[g] ** 3 * np.cos(th[j]) * a_node[g, j]
            rows.append(p)
            cols.append(p)
            vals.append(diag)
            if i > 0:
                rows.append(p)
                cols.append(idx[i - 1, j])
                vals.append(a_tf[g - 1, j] / ht**2)
            else:
                rhs[p] -= a_tf[g - 1, j] / ht**2
            if i < ni - 1:
                rows.append(p)
                cols.append(idx[i + 1, j])
                vals.append(a_tf[g, j] / ht**2)
            rows.append(p)
            cols.append(idx[i, (j + 1) % n_theta])
            vals.append(a_thf[g, j] / hth**2)
            rows.append(p)
            cols.append(idx[i, j - 1])
            vals.append(a_thf[g, j - 1] / hth**2)
    A = sp.csc_matrix((vals, (rows, cols)), shape=(ni * n_theta,) * 2)
    try:
        x = spla.spsolve(A, rhs)
    except RuntimeError as exc:
        raise SolveFailure(str(exc)) from exc
    u = np.vstack([np.ones(n_theta), x.reshape(ni, n_theta), np.zeros(n_theta)])
    # kappa = -int s1 m^2 Im u dA, dA = r^2 dt dth
    integrand = (r[:, None] * np.cos(th)[None, :]) * a_node * u.imag * r[:, None] ** 2
    kap = -float(np.trapezoid(np.sum(integrand, axis=1) * hth, t))
    return AnnulusSolution(r=r, theta=th, u=u, m=np.sqrt(a_node), kappa_unified=kap)
