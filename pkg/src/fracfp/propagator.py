"""Per-mode evolution of the rescaled kinetic equation and the fractional limit.

For a Fourier mode xi (magnitude) and scaling eps the velocity profile obeys

    d/dt g = -eps^(-alpha) (L_eta - i eta j1) g,      eta = eps |xi|,

and the density transform is rho(t) = sum w g M.  The drift term is a scalar
shift, so g = exp(i t eps^(-alpha) eta j1) h with h evolved by Crank-Nicolson
on A = eps^(-alpha) L_eta.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import VelocityGrid
from .eigensolver import EigenResult, GridPolicy, find_lambda, setup
from .equilibria import EquilibriumModel
from .errors import SolverFailure, StepCollapse, UnboundedRatio
from .limit_problem import drift_j, kappa_unified, solve_H0_1d


@dataclass
class InitialSpec:
    kind: str = "well_prepared"                  # or "profile"
    rho0: complex = 1.0
    profile: Optional[Callable] = None           # f0(v) on node arrays, shape (n, d)
    cap: float = 1e6


def gaussian_packet(xi) -> np.ndarray:
    """Transform of a unit Gaussian in x."""
    return np.exp(-0.5 * np.asarray(xi, dtype=float) ** 2)


def project_initial(spec: InitialSpec, grid: VelocityGrid, model: EquilibriumModel, M_h=None) -> np.ndarray:
    if M_h is None:
        M_h = np.asarray(model.M(grid.nodes), dtype=float).ravel()
    if spec.kind == "well_prepared":
        return complex(spec.rho0) * M_h.astype(complex)
    if spec.kind != "profile" or spec.profile is None:
        raise ValueError(f"unknown initial data kind {spec.kind!r}")
    g0 = np.asarray(spec.profile(grid.nodes), dtype=complex).ravel() / M_h
    big = float(np.max(np.abs(g0)))
    if not np.isfinite(big) or big > spec.cap:
        raise UnboundedRatio(f"|f0/M| reaches {big:.3g} > cap {spec.cap:.3g}")
    return g0


@dataclass
class Reference:
    kappa: float
    alpha: float
    source: str        # "analytic" | "fitted"

    def value(self, t, xi, rho0=1.0):
        return np.exp(-self.kappa * np.asarray(t) * abs(xi) ** self.alpha) * rho0


def limit_reference(model: EquilibriumModel, source: str = "analytic", fit=None) -> Reference:
    """analytic: exact alpha with kappa from the limit profile; fitted: sweep values."""
    if source == "fitted":
        if fit is None:
            raise ValueError("fitted reference needs a DiffusionFit")
        return Reference(float(fit.kappa_hat), float(fit.alpha_hat), "fitted")
    if source != "analytic":
        raise ValueError(f"unknown reference source {source!r}")
    if model.d != 1:
        raise ValueError("analytic kappa is available for d = 1; use the fitted reference")
    return Reference(kappa_unified(solve_H0_1d(model)), model.alpha, "analytic")


@dataclass
class StepControl:
    rel_change: float = 1e-3      # bound on |rho_{n+1} - rho_n| / |rho_n|
    safety: float = 0.5
    dt_min: float = 1e-12
    smoothing_steps: int = 4      # backward Euler half steps replacing the first two CN steps
    steps_xi0: int = 64           # steps per output interval when eta = 0
    refine: int = 1               # refinement sweeps against the matrix-free operator


@dataclass
class ModeTrajectory:
    xi: float
    eps: float
    t: np.ndarray
    g: list = field(repr=False)
    rho: np.ndarray
    rho0: complex
    reference: np.ndarray
    projection: np.ndarray          # sum w g(t) M_eta
    projection_exact: np.ndarray    # exp(-t eps^-alpha (mu - i eta j1)) * projection at t=0
    projection_error: float
    mass_drift: float               # max |rho(t_k) - rho0| when xi = 0, else nan
    dt: float
    n_steps: int
    max_rel_change: float
    mu: complex = 0j
    j1: float = 0.0


class _Stepper:
    """Factorized CN / backward Euler step for one step size.

    Right-hand sides and refinement residuals use the matrix-free flux form of
    the operator, which annihilates M exactly, so the sparse factors only act
    as a preconditioner and mass is conserved to roundoff at eta = 0.
    """

    def __init__(self, apply, A, dt, refine):
        n = A.shape[0]
        I = sp.identity(n, format="csc", dtype=complex)
        try:
            self.lu = spla.splu((I + 0.5 * dt * A).tocsc())
        except RuntimeError as exc:
            raise SolverFailure(f"factorization failed at dt={dt:.3e}: {exc}") from exc
        self.apply, self.half, self.refine = apply, 0.5 * dt, refine

    def _solve(self, b):
        x = self.lu.solve(b)
        for _ in range(self.refine):
            x = x + self.lu.solve(b - x - self.half * self.apply(x))
        return x

    def cn_step(self, h):
        return self._solve(h - self.half * self.apply(h))

    def be_half(self, h):
        return self._solve(h)


def _march(apply, A, h0, t_list, dt_target, ctl: StepControl, observe):
    """CN marching hitting every t_k exactly; returns states at t_k and diagnostics."""
    h, t_prev = h0.copy(), 0.0
    out, n_steps, worst = [], 0, 0.0
    obs_prev = observe(h)
    steppers = {}
    first = True
    for tk in t_list:
        span = tk - t_prev
        if span > 0:
            n = max(int(np.ceil(span / dt_target - 1e-9)), 1)
            dt = span / n
            key = round(dt / dt_target, 12)
            if key not in steppers:
                steppers[key] = _Stepper(apply, A, dt, ctl.refine)
            st = steppers[key]
            k = 0
            if first and ctl.smoothing_steps and n >= ctl.smoothing_steps // 2:
                for _ in range(ctl.smoothing_steps):
                    h = st.be_half(h)
                k = ctl.smoothing_steps // 2
                obs = observe(h)
                worst = max(worst, abs(obs - obs_prev) / max(abs(obs_prev), 1e-300) / k)
                obs_prev = obs
            first = False
            for _ in range(k, n):
                h = st.cn_step(h)
                obs = observe(h)
                worst = max(worst, abs(obs - obs_prev) / max(abs(obs_prev), 1e-300))
                obs_prev = obs
            if not np.all(np.isfinite(h)):
                raise SolverFailure("non-finite state during time stepping")
            n_steps += n
        out.append(h.copy())
        t_prev = tk
    return out, n_steps, worst


def propagate_mode(g0, xi: float, eps: float, t_list: Sequence[float], model: EquilibriumModel,
                   reference: Reference, policy: GridPolicy = GridPolicy(), control: StepControl = StepControl(),
                   L=None, eig: Optional[EigenResult] = None, j1: Optional[float] = None) -> ModeTrajectory:
    """Evolve one mode; g0 may be an InitialSpec or a grid vector on the policy grid."""
    t = np.asarray(t_list, dtype=float)
    if t.ndim != 1 or np.any(np.diff(t) <= 0) or t[0] < 0:
        raise ValueError("t_list must be increasing and non-negative")
    xi = abs(float(xi))
    eta = eps * xi
    alpha = model.alpha
    scale = eps ** (-alpha)
    if L is None:
        _, L, Phi = setup(model, eta, policy)
        if eta > 0 and eig is None:
            eig = find_lambda(L, Phi)
    if isinstance(g0, InitialSpec):
        g0 = project_initial(g0, L.grid, model, L.M_h)
    g0 = np.asarray(g0, dtype=complex)
    if j1 is None:
        j1 = drift_j(model, eps).j1 if eta > 0 else 0.0
    w, M_h = L.weights, L.M_h
    A = (L.matrix * scale).tocsc()

    def apply(h):
        return scale * L.apply(h)
    rho0 = complex(np.sum(w * g0 * M_h))

    if eta > 0:
        rate = scale * abs(eig.mu)
        dt_target = control.safety * control.rel_change / rate
    else:
        spans = np.diff(np.concatenate([[0.0], t]))
        dt_target = float(np.min(spans[spans > 0])) / control.steps_xi0

    def observe(h):
        return complex(np.sum(w * h * M_h))

    while True:
        if dt_target < control.dt_min:
            raise StepCollapse(f"step control needs dt < dt_min={control.dt_min:.1e}")
        states, n_steps, worst = _march(apply, A, g0, t, dt_target, control, observe)
        if worst <= control.rel_change:
            break
        dt_target *= 0.5

    phase = np.exp(1j * t * scale * eta * j1)
    g = [p * h for p, h in zip(phase, states)]
    rho = np.array([np.sum(w * gk * M_h) for gk in g])
    ref = reference.value(t, xi, rho0)
    if eta > 0:
        proj = np.array([np.sum(w * gk * eig.eigvec) for gk in g])
        p0 = np.sum(w * g0 * eig.eigvec)
        exact = np.exp(-t * scale * (eig.mu - 1j * eta * j1)) * p0
        perr = float(np.max(np.abs(proj - exact)) / abs(p0))
        mass = float("nan")
        mu = eig.mu
    else:
        # at eta = 0 the eigenmode is M itself and the factor is 1
        proj = rho.copy()
        exact = np.full_like(rho, rho0)
        perr = float(np.max(np.abs(proj - exact)) / max(abs(rho0), 1e-300))
        mass = float(np.max(np.abs(rho - rho0)))
        mu = 0j
    return ModeTrajectory(xi=xi, eps=eps, t=t, g=g, rho=rho, rho0=rho0, reference=ref, projection=proj,
                          projection_exact=exact, projection_error=perr, mass_drift=mass, dt=dt_target,
                          n_steps=n_steps, max_rel_change=worst, mu=complex(mu), j1=j1)


@dataclass
class StudyCell:
    eps: float
    xi: float
    t: float
    rho: complex
    ref: complex
    abs_err: float
    projection_error: float
    error: Optional[str] = None


@dataclass
class ConvergenceStudy:
    eps: np.ndarray
    xi: np.ndarray
    t: np.ndarray
    E: np.ndarray                 # E[eps, xi, t]
    monotone: np.ndarray          # [xi, t] bool
    cells: list = field(repr=False)
    reference: Optional[Reference] = None

    @property
    def monotone_fraction(self) -> float:
        return float(np.mean(self.monotone))

    @property
    def max_err_at_smallest_eps(self) -> float:
        k = int(np.argmin(self.eps))
        return float(np.nanmax(self.E[k]))

    @property
    def max_projection_error(self) -> float:
        vals = [c.projection_error for c in self.cells if c.error is None]
        return float(max(vals)) if vals else float("nan")

    def summary(self) -> dict:
        return {"monotone_fraction": self.monotone_fraction,
                "max_err_at_smallest_eps": self.max_err_at_smallest_eps}


def convergence_study(model: EquilibriumModel, xi_list, t_list, eps_list, reference: Optional[Reference] = None,
                      initial: InitialSpec = InitialSpec(), policy: GridPolicy = GridPolicy(),
                      control: StepControl = StepControl(), threads: int = 1) -> ConvergenceStudy:
    """Error table |rho^eps - exp(-kappa t |xi|^alpha) rho0| with per-cell failure capture."""
    if reference is None:
        reference = limit_reference(model)
    eps = np.asarray(eps_list, dtype=float)
    xis = np.asarray(xi_list, dtype=float)
    ts = np.asarray(t_list, dtype=float)
    jobs = [(e, x) for e in eps for x in xis]

    def one(job):
        e, x = job
        try:
            return propagate_mode(initial, x, e, ts, model, reference, policy, control), None
        except Exception as exc:   # recorded per cell
            return None, f"{type(exc).__name__}: {exc}"

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(one, jobs))
    else:
        results = [one(j) for j in jobs]

    E = np.full((len(eps), len(xis), len(ts)), np.nan)
    cells = []
    for (e, x), (traj, err) in zip(jobs, results):
        a, b = int(np.where(eps == e)[0][0]), int(np.where(xis == x)[0][0])
        for k, tk in enumerate(ts):
            if traj is None:
                cells.append(StudyCell(e, x, tk, complex("nan"), complex("nan"), float("nan"), float("nan"), err))
                continue
            d = abs(traj.rho[k] - traj.reference[k])
            E[a, b, k] = d
            cells.append(StudyCell(e, x, tk, complex(traj.rho[k]), complex(traj.reference[k]), float(d),
                                   traj.projection_error))
    order = np.argsort(-eps)          # largest eps first
    Es = E[order]
    monotone = np.all(np.diff(Es, axis=0) < 0, axis=0) & np.all(np.isfinite(Es), axis=0)
    return ConvergenceStudy(eps=eps, xi=xis, t=ts, E=E, monotone=monotone, cells=cells, reference=reference)
