"""Heavy-tailed equilibrium families.

An equilibrium is stored through M = sqrt(F), with M(v) comparable to <v>^-gamma,
gamma = beta/2.  All built-in families depend on v only through (v_1, |v|^2),
which keeps normalization quadratures two-dimensional in any dimension.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate
from scipy.special import gamma as gamma_fn

from .errors import GammaOutOfRange, NormalizationFailure, OriginEvaluation, PositivityViolation

FD_REL_STEP = 1e-5
BLEND_WIDTH = 1.0


def _as_points(v, d: int):
    """Return (points of shape (n, d), output shape)."""
    v = np.asarray(v)
    if d == 1:
        shape = v.shape[:-1] if (v.ndim >= 1 and v.shape[-1] == 1 and v.ndim > 1) else v.shape
        return v.reshape(-1, 1), shape
    if v.shape[-1] != d:
        raise ValueError(f"expected trailing axis of length {d}, got shape {v.shape}")
    return v.reshape(-1, d), v.shape[:-1]


def japanese(v, d: int = 1):
    """<v> = sqrt(1 + |v|^2)."""
    pts, shape = _as_points(v, d)
    return np.sqrt(1.0 + np.sum(pts * pts, axis=1)).reshape(shape)


def sphere_area(k: int) -> float:
    """Surface measure of the unit sphere S^k in R^(k+1); S^0 has two points."""
    return 2.0 * np.pi ** ((k + 1) / 2) / gamma_fn((k + 1) / 2)


# -- family profiles, written on (v1, r2 = |v|^2) --------------------------

def _blend(v1, a_plus, a_minus):
    t = np.tanh(v1 / BLEND_WIDTH)
    A = a_minus + 0.5 * (a_plus - a_minus) * (1.0 + t)
    s2 = 1.0 - t * t
    dA = 0.5 * (a_plus - a_minus) * s2 / BLEND_WIDTH
    d2A = -(a_plus - a_minus) * s2 * t / BLEND_WIDTH**2
    return A, dA, d2A


@dataclass(frozen=True)
class _PowerLaw:
    gamma: float
    a_plus: float
    a_minus: float

    def profile(self, v1, r2):
        A, _, _ = _blend(v1, self.a_plus, self.a_minus)
        return A * (1.0 + r2) ** (-0.5 * self.gamma)

    def grad_log(self, pts):
        v1 = pts[:, 0]
        r2 = np.sum(pts * pts, axis=1)
        A, dA, _ = _blend(v1, self.a_plus, self.a_minus)
        g = -self.gamma * pts / (1.0 + r2)[:, None]
        g[:, 0] += dA / A
        return g

    def W(self, pts):
        d = pts.shape[1]
        v1 = pts[:, 0]
        r2 = np.sum(pts * pts, axis=1)
        jb2 = 1.0 + r2
        g = self.gamma
        A, dA, d2A = _blend(v1, self.a_plus, self.a_minus)
        radial = (g * (g - d + 2.0) * r2 - g * d) / (jb2 * jb2)
        return radial + d2A / A - 2.0 * g * v1 * dA / (A * jb2)

    def limit(self, s1, r2):
        amp = np.where(s1 > 0, self.a_plus, np.where(s1 < 0, self.a_minus, 0.5 * (self.a_plus + self.a_minus)))
        return amp * r2 ** (-0.5 * self.gamma)


@dataclass(frozen=True)
class _Anisotropic:
    gamma: float

    def profile(self, v1, r2):
        return (1.0 + r2 + v1 * v1) * (1.0 + r2) ** (-0.5 * self.gamma - 1.0)

    def grad_log(self, pts):
        v1 = pts[:, 0]
        r2 = np.sum(pts * pts, axis=1)
        p = 1.0 + r2 + v1 * v1
        dp = 2.0 * pts
        dp[:, 0] *= 2.0
        return dp / p[:, None] - (self.gamma + 2.0) * pts / (1.0 + r2)[:, None]

    def W(self, pts):
        d = pts.shape[1]
        v1 = pts[:, 0]
        r2 = np.sum(pts * pts, axis=1)
        jb2 = 1.0 + r2
        p = jb2 + v1 * v1
        k = self.gamma + 2.0
        cross = 4.0 * v1 * v1 + 2.0 * (r2 - v1 * v1)
        return (2.0 * d + 2.0) / p - 2.0 * k * cross / (p * jb2) + (k * (k - d + 2.0) * r2 - k * d) / (jb2 * jb2)

    def limit(self, s1, r2):
        return (r2 + s1 * s1) * r2 ** (-0.5 * self.gamma - 1.0)


@dataclass(frozen=True)
class _Oscillatory:
    gamma: float
    sigma: float
    amplitude: float

    def profile(self, v1, r2):
        r = np.sqrt(1.0 + r2)
        return (2.0 + self.amplitude * np.cos(r) * r ** (-self.sigma)) * r ** (-self.gamma)

    def grad_log(self, pts):
        r = np.sqrt(1.0 + np.sum(pts * pts, axis=1))
        a, s = self.amplitude, self.sigma
        g = 2.0 + a * np.cos(r) * r**-s
        dg = a * (-np.sin(r) * r**-s - s * np.cos(r) * r ** (-s - 1.0))
        return ((dg / g - self.gamma / r) / r)[:, None] * pts

    W = None

    def limit(self, s1, r2):
        return 2.0 * r2 ** (-0.5 * self.gamma)


@dataclass(frozen=True)
class EquilibriumModel:
    """Normalized equilibrium M with int M^2 = 1.

    Evaluators accept shape (n,) arrays when d == 1 and (..., d) arrays otherwise.
    """

    d: int
    beta: float
    family: str
    C: float
    c1: float
    c2: float
    symmetric: bool
    params: dict = field(default_factory=dict)
    _profile: Callable = field(default=None, repr=False)
    _grad_log: Optional[Callable] = field(default=None, repr=False)
    _W: Optional[Callable] = field(default=None, repr=False)
    _limit: Optional[Callable] = field(default=None, repr=False)

    @property
    def gamma(self) -> float:
        return 0.5 * self.beta

    @property
    def alpha(self) -> float:
        return (self.beta - self.d + 2.0) / 3.0

    @property
    def has_analytic_W(self) -> bool:
        return self._W is not None

    def M(self, v):
        pts, shape = _as_points(v, self.d)
        return (self.C * self._profile_pts(pts)).reshape(shape)

    def _profile_pts(self, pts):
        return self._profile(pts[:, 0], np.sum(pts * pts, axis=1))

    def grad_log_M(self, pts):
        if self._grad_log is not None:
            return self._grad_log(pts)
        # central differences of log M
        out = np.empty_like(pts, dtype=float)
        h = 1e-6 * np.sqrt(1.0 + np.sum(pts * pts, axis=1))
        for k in range(pts.shape[1]):
            e = np.zeros(pts.shape[1])
            e[k] = 1.0
            fp = np.log(self._profile_pts(pts + h[:, None] * e))
            fm = np.log(self._profile_pts(pts - h[:, None] * e))
            out[:, k] = (fp - fm) / (2.0 * h)
        return out

    def drift(self, v):
        """b(v) = 2 grad M / M = grad F / F."""
        pts, shape = _as_points(v, self.d)
        b = 2.0 * self.grad_log_M(pts)
        return b[:, 0].reshape(shape) if self.d == 1 else b.reshape(shape + (self.d,))

    def W(self, v):
        if self._W is not None:
            pts, shape = _as_points(v, self.d)
            return self._W(pts).reshape(shape)
        return self.W_fd(v)

    def W_fd(self, v):
        """Central-difference Laplacian of M over M, step 1e-5 <v>.

        The stencil is evaluated in extended precision whenever the profile
        accepts long doubles; this keeps the cancellation error near 1e-9.
        """
        pts, shape = _as_points(v, self.d)
        ld = pts.astype(np.longdouble)
        h = np.longdouble(FD_REL_STEP) * np.sqrt(1 + np.sum(ld * ld, axis=1))
        centre = self._profile_pts(ld)
        if np.asarray(centre).dtype != np.longdouble:
            ld = pts.astype(float)
            h = h.astype(float)
            centre = self._profile_pts(ld)
        lap = np.zeros_like(centre)
        for k in range(self.d):
            step = np.zeros_like(ld)
            step[:, k] = h
            lap = lap + (self._profile_pts(ld + step) - 2 * centre + self._profile_pts(ld - step)) / (h * h)
        return np.asarray(lap / centre, dtype=float).reshape(shape)

    def m(self, s):
        """Limit profile m(s) = lim lam^-gamma M(s/lam); undefined at s = 0."""
        pts, shape = _as_points(s, self.d)
        r2 = np.sum(pts * pts, axis=1)
        if np.any(r2 == 0.0):
            raise OriginEvaluation("the limit profile is not defined at s = 0")
        if self._limit is None:
            lam = 1e-7
            return (self.C * lam ** (-self.gamma) * self._profile_pts(pts / lam)).reshape(shape)
        return (self.C * self._limit(pts[:, 0], r2)).reshape(shape)

    def m_eta(self, s, eta: float):
        """Rescaled equilibrium eta^(-gamma/3) M(eta^(-1/3) s)."""
        k = eta ** (-1.0 / 3.0)
        return eta ** (-self.gamma / 3.0) * self.M(np.asarray(s) * k)


# -- quadrature --------------------------------------------------------------

def _sinh_extent(decay: float) -> float:
    return float(min(700.0, 45.0 / max(decay, 1e-3)))


def integrate_reduced(f: Callable, d: int, beta_decay: float, radius: float = np.inf, epsrel: float = 1e-12):
    """Integrate f(v1, r2) over {|v| <= radius} in R^d.

    f must depend on v only through (v1, |v|^2).  Uses v = sinh(x) in each
    reduced coordinate so heavy tails become exponentially decaying.
    """
    if d == 1:
        X = _sinh_extent(beta_decay - 1.0) if not np.isfinite(radius) else float(np.arcsinh(radius))

        def g(x):
            v = np.sinh(x)
            with np.errstate(over="ignore", under="ignore", invalid="ignore"):
                val = f(np.atleast_1d(v), np.atleast_1d(v * v))[0] * np.cosh(x)
            return 0.0 if not np.isfinite(val) else val

        tot, err = 0.0, 0.0
        for a, b in ((-X, -1.0), (-1.0, 0.0), (0.0, 1.0), (1.0, X)):
            if a >= b:
                continue
            val, e = integrate.quad(g, a, b, limit=800, epsabs=0.0, epsrel=epsrel)
            tot += val
            err += e
        return tot, err
    # polar coordinates in the (v1, |v'|) half plane
    area = sphere_area(d - 2)
    if np.isfinite(radius):
        X = float(np.arcsinh(radius))
    else:
        X = _sinh_extent(beta_decay - d)

    def radial(x):
        r = np.sinh(x)
        jac = np.cosh(x) * r ** (d - 1)

        def ang(th):
            c, s = np.cos(th), np.sin(th)
            with np.errstate(over="ignore", under="ignore", invalid="ignore"):
                val = f(np.atleast_1d(r * c), np.atleast_1d(r * r))[0] * s ** (d - 2)
            return 0.0 if not np.isfinite(val) else val

        val, _ = integrate.quad(ang, 0.0, np.pi, limit=200, epsabs=0.0, epsrel=epsrel)
        return area * val * jac

    tot, err = 0.0, 0.0
    for a, b in ((0.0, 1.0), (1.0, X)):
        val, e = integrate.quad(radial, a, b, limit=400, epsabs=0.0, epsrel=epsrel)
        tot += val
        err += e
    return tot, err


def _normalize(profile: Callable, d: int, beta: float) -> float:
    integral, err = integrate_reduced(lambda v1, r2: profile(v1, r2) ** 2, d, beta)
    if not np.isfinite(integral) or integral <= 0 or err > 1e-9 * integral:
        raise NormalizationFailure(f"normalization quadrature did not converge (I={integral}, err={err})")
    return 1.0 / np.sqrt(integral)


# -- constructors --------------------------------------------------------------

def make_power_law(d: int, gamma: float, asymmetry_plus: float = 1.0, asymmetry_minus: float = 1.0) -> EquilibriumModel:
    """C A(v1) <v>^-gamma with A blending the two half-space amplitudes."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if not gamma > d / 2:
        raise GammaOutOfRange(f"gamma={gamma} must exceed d/2={d / 2}")
    if asymmetry_plus <= 0 or asymmetry_minus <= 0:
        raise PositivityViolation("asymmetry factors must be positive")
    fam = _PowerLaw(float(gamma), float(asymmetry_plus), float(asymmetry_minus))
    C = _normalize(fam.profile, d, 2 * gamma)
    lo, hi = sorted((asymmetry_plus, asymmetry_minus))
    return EquilibriumModel(
        d=d, beta=2.0 * gamma, family="classical", C=C, c1=C * lo, c2=C * hi,
        symmetric=asymmetry_plus == asymmetry_minus,
        params={"gamma": gamma, "asymmetry_plus": asymmetry_plus, "asymmetry_minus": asymmetry_minus},
        _profile=fam.profile, _grad_log=fam.grad_log, _W=fam.W, _limit=fam.limit,
    )


def make_anisotropic(d: int, gamma: float) -> EquilibriumModel:
    """C (1 + 2 v1^2 + |v'|^2) <v>^(-gamma-2): no radial limit of |v|^gamma M."""
    if not gamma > d / 2:
        raise GammaOutOfRange(f"gamma={gamma} must exceed d/2={d / 2}")
    fam = _Anisotropic(float(gamma))
    C = _normalize(fam.profile, d, 2 * gamma)
    return EquilibriumModel(
        d=d, beta=2.0 * gamma, family="anisotropic", C=C, c1=C, c2=2.0 * C, symmetric=True,
        params={"gamma": gamma}, _profile=fam.profile, _grad_log=fam.grad_log, _W=fam.W, _limit=fam.limit,
    )


def make_oscillatory(d: int, gamma: float, sigma_osc: float, amplitude: float = 1.0) -> EquilibriumModel:
    """C (2 + amplitude cos<v> / <v>^sigma) <v>^-gamma; W by finite differences."""
    if amplitude >= 2.0:
        raise PositivityViolation(f"amplitude {amplitude} >= 2 makes M negative somewhere")
    if sigma_osc < 0:
        raise ValueError("sigma_osc must be non-negative")
    if not gamma > d / 2:
        raise GammaOutOfRange(f"gamma={gamma} must exceed d/2={d / 2}")
    fam = _Oscillatory(float(gamma), float(sigma_osc), float(amplitude))
    C = _normalize(fam.profile, d, 2 * gamma)
    r = np.linspace(1.0, 1e3, 2_000_001)
    g = 2.0 + amplitude * np.cos(r) * r**-sigma_osc
    return EquilibriumModel(
        d=d, beta=2.0 * gamma, family="oscillatory", C=C, c1=C * g.min(), c2=C * g.max(), symmetric=True,
        params={"gamma": gamma, "sigma_osc": sigma_osc, "amplitude": amplitude},
        _profile=fam.profile, _grad_log=fam.grad_log, _W=None,
        _limit=fam.limit if sigma_osc > 0 else (lambda s1, r2: np.full_like(r2, np.nan)),
    )


def make_user(d: int, beta: float, M_fn: Callable, limit_fn: Optional[Callable] = None,
              symmetric: bool = False, scan_radius: float = 1e3) -> EquilibriumModel:
    """Wrap a user-supplied M(v1, |v|^2) (radially reduced form).

    M_fn is normalized here; limit_fn, if given, must be the limit of the
    unnormalized M_fn.  C1, C2 are measured on a scan.
    """
    gamma = 0.5 * beta
    if not gamma > d / 2:
        raise GammaOutOfRange(f"gamma={gamma} must exceed d/2={d / 2}")
    C = _normalize(M_fn, d, beta)
    r = np.concatenate([[0.0], np.geomspace(1e-3, scan_radius, 4000)])
    vals = []
    for c in np.linspace(-1.0, 1.0, 9 if d > 1 else 2):
        v1 = r * c
        vals.append(M_fn(v1, r * r) * (1 + r * r) ** (0.5 * gamma))
    vals = np.concatenate(vals)
    if np.any(vals <= 0):
        raise PositivityViolation("user-supplied M is not positive on the scan")
    return EquilibriumModel(
        d=d, beta=float(beta), family="user", C=C, c1=C * vals.min(), c2=C * vals.max(), symmetric=symmetric,
        params={}, _profile=M_fn, _grad_log=None, _W=None, _limit=limit_fn,
    )


def eval_W(model: EquilibriumModel, v):
    return model.W(v)


def limit_profile(model: EquilibriumModel, s):
    return model.m(s)


def first_moment(model: EquilibriumModel, radius: float = np.inf) -> float:
    """int_{|v| <= radius} v1 M^2 dv (the drift component along v1)."""
    f = lambda v1, r2: v1 * model._profile(v1, r2) ** 2  # noqa: E731
    val, err = integrate_reduced(f, model.d, model.beta - 1.0, radius=radius, epsrel=1e-12)
    return model.C**2 * val, model.C**2 * err


# -- assumption checks -----------------------------------------------------------

@dataclass
class ScanSpec:
    radius: float = 1e3
    n: int = 4001
    n_angles: int = 33
    annulus: tuple = (0.5, 5.0)
    etas: tuple = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)


@dataclass
class AssumptionReport:
    beta: float
    d: int
    c1: float
    c2: float
    a1_pass: bool
    a2_integral: float
    a2_tail: float
    a2_pass: bool
    a3_samples: list
    a3_pass: bool
    sigma: float
    a5_pass: bool
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.a1_pass and self.a2_pass and self.a3_pass and self.a5_pass

    def to_dict(self) -> dict:
        return {
            "a1": {"c1": self.c1, "c2": self.c2, "pass": self.a1_pass},
            "a2": {"integral": self.a2_integral, "pass": self.a2_pass},
            "a3": {"samples": list(self.a3_samples), "pass": self.a3_pass},
            "a5": {"sigma": self.sigma, "pass": self.a5_pass},
            "beta": self.beta,
            "d": self.d,
            "pass": self.passed,
            "notes": list(self.notes),
        }


def scan_points(d: int, radius: float, n: int, n_angles: int):
    """Points on a log-radial scan (plus the origin) in the (v1, v2) plane."""
    r = np.concatenate([[0.0], np.geomspace(1e-3, radius, n)])
    if d == 1:
        return np.concatenate([-r[::-1], r[1:]])[:, None]
    th = np.linspace(0.0, np.pi, n_angles)
    pts = np.zeros((r.size * th.size, d))
    pts[:, 0] = np.outer(r, np.cos(th)).ravel()
    pts[:, 1] = np.outer(r, np.sin(th)).ravel()
    return pts


def _radial_density(model, f, r, n_angles=65):
    """Integral of f over the sphere of radius r (f on (n, d) points)."""
    d = model.d
    if d == 1:
        return f(np.array([[r]]))[0] + f(np.array([[-r]]))[0]
    th = np.linspace(0.0, np.pi, n_angles)
    pts = np.zeros((th.size, d))
    pts[:, 0] = r * np.cos(th)
    pts[:, 1] = r * np.sin(th)
    vals = f(pts) * np.sin(th) ** (d - 2)
    return sphere_area(d - 2) * r ** (d - 1) * np.trapezoid(vals, th)


def check_assumptions(model: EquilibriumModel, scan: Optional[ScanSpec] = None) -> AssumptionReport:
    scan = scan or ScanSpec()
    d, beta, g = model.d, model.beta, model.gamma
    notes = []
    pts = scan_points(d, scan.radius, scan.n, scan.n_angles)
    jb = np.sqrt(1.0 + np.sum(pts * pts, axis=1))
    weighted = jb**g * model.M(pts if d > 1 else pts[:, 0])
    c1, c2 = float(weighted.min()), float(weighted.max())
    in_range = d < beta < d + 4
    if not in_range:
        notes.append(f"beta={beta} outside the fractional range ({d}, {d + 4})")
    a1 = bool(c1 > 0 and np.isfinite(c2) and in_range)

    # A2: <v>^2 |grad(M/<v>^2)|^2 = M^2 |grad log M - 2v/<v>^2|^2 / <v>^2
    def a2_density(p):
        r2 = np.sum(p * p, axis=1)
        jb2 = 1.0 + r2
        q = model.grad_log_M(p) - 2.0 * p / jb2[:, None]
        return (model.C * model._profile_pts(p)) ** 2 * np.sum(q * q, axis=1) / jb2

    R = scan.radius
    if d == 1:
        bulk, _ = integrate.quad(lambda x: a2_density(np.array([[np.sinh(x)]]))[0] * np.cosh(x)
                                 + a2_density(np.array([[-np.sinh(x)]]))[0] * np.cosh(x),
                                 0.0, np.arcsinh(R), limit=400, epsrel=1e-10)
    else:
        bulk, _ = integrate.quad(lambda x: _radial_density(model, a2_density, np.sinh(x)) * np.cosh(x),
                                 0.0, np.arcsinh(R), limit=400, epsrel=1e-9)
    g_hi = _radial_density(model, a2_density, R)
    g_lo = _radial_density(model, a2_density, R / 2)
    p = np.log(g_lo / g_hi) / np.log(2.0) if g_hi > 0 and g_lo > 0 else np.inf
    tail = g_hi * R / (p - 1.0) if p > 1.0 else np.inf
    a2 = bool(np.isfinite(bulk) and tail < 0.01 * bulk)

    # A3: sup over an annulus of |m_eta - m| relative to sup m
    r_lo, r_hi = scan.annulus
    rr = np.linspace(r_lo, r_hi, 64)
    if d == 1:
        s = np.concatenate([-rr[::-1], rr])
    else:
        th = np.linspace(0.0, np.pi, 17)
        s = np.zeros((rr.size * th.size, d))
        s[:, 0] = np.outer(rr, np.cos(th)).ravel()
        s[:, 1] = np.outer(rr, np.sin(th)).ravel()
    samples = []
    a3 = True
    try:
        ms = model.m(s)
        if not np.all(np.isfinite(ms)):
            raise ValueError
        scale = np.max(np.abs(ms))
        for eta in scan.etas:
            samples.append(float(np.max(np.abs(model.m_eta(s, eta) - ms)) / scale))
        a3 = bool(all(b <= a * (1 + 1e-9) for a, b in zip(samples, samples[1:])) and samples[-1] < 0.05)
    except (ValueError, FloatingPointError):
        notes.append("limit profile unavailable")
        a3 = False

    # A5: decay exponent of the envelope of |W|
    rad = np.geomspace(10.0, scan.radius, 9)
    env = []
    for i in range(rad.size - 1):
        rs = np.linspace(rad[i], rad[i + 1], 400)
        if d == 1:
            vals = np.abs(model.W(np.concatenate([rs, -rs])))
        else:
            th = np.linspace(0.0, np.pi, 9)
            q = np.zeros((rs.size * th.size, d))
            q[:, 0] = np.outer(rs, np.cos(th)).ravel()
            q[:, 1] = np.outer(rs, np.sin(th)).ravel()
            vals = np.abs(model.W(q))
        env.append(vals.max())
    env = np.array(env)
    centres = np.sqrt(rad[1:] * rad[:-1])
    if np.all(env < 1e-300):
        sigma = np.inf
    else:
        slope = np.polyfit(np.log(centres), np.log(np.maximum(env, 1e-300)), 1)[0]
        sigma = float(-slope)
    a5 = bool(sigma >= 1.95)
    if not a5:
        notes.append(f"|W| decays like <v>^-{sigma:.3g}, slower than <v>^-2")
    return AssumptionReport(beta=beta, d=d, c1=c1, c2=c2, a1_pass=a1, a2_integral=float(bulk), a2_tail=float(tail),
                            a2_pass=a2, a3_samples=samples, a3_pass=a3, sigma=sigma, a5_pass=a5, notes=notes)


def classical_normalization(d: int, gamma: float) -> float:
    """Closed-form C with C^2 int <v>^(-2 gamma) dv = 1 (symmetric power law)."""
    integral = np.pi ** (d / 2) * gamma_fn(gamma - d / 2) / gamma_fn(gamma)
    return 1.0 / np.sqrt(integral)
