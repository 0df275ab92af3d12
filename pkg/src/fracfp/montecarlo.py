"""Langevin trajectories in d = 1 and the empirical fractional limit.

    V_{k+1} = V_k + b(V_k) dt + sqrt(2 dt) Z_k,   X_{k+1} = X_k + V_k dt,

with b = 2 M'/M.  Every particle owns a xoroshiro128+ stream keyed by
(seed, particle index), so results do not depend on how particles are
sharded across threads.  Normals come from a 128-layer ziggurat.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba as nb
import numpy as np
from scipy import stats

from .equilibria import EquilibriumModel
from .errors import BlowUp, HorizonMismatch
from .limit_problem import drift_j, regime_of

if os.environ.get("NUMBA_THREADING_LAYER") is None:
    nb.config.THREADING_LAYER = "omp"

V_CAP = 1e6

_ZIG_R = 3.442619855899
_ZIG_V = 9.91256303526217e-3


def _ziggurat_tables(n: int = 128):
    kn = np.zeros(n, np.int64)
    wn = np.zeros(n)
    fn = np.zeros(n)
    m1 = 2147483648.0
    dn = tn = _ZIG_R
    q = _ZIG_V / np.exp(-0.5 * dn * dn)
    kn[0] = int(dn / q * m1)
    wn[0] = q / m1
    wn[n - 1] = dn / m1
    fn[0] = 1.0
    fn[n - 1] = np.exp(-0.5 * dn * dn)
    for i in range(n - 2, 0, -1):
        dn = np.sqrt(-2.0 * np.log(_ZIG_V / dn + np.exp(-0.5 * dn * dn)))
        kn[i + 1] = int(dn / tn * m1)
        tn = dn
        fn[i] = np.exp(-0.5 * dn * dn)
        wn[i] = dn / m1
    return kn, wn, fn


KN, WN, FN = _ziggurat_tables()


# -- counter-keyed streams ------------------------------------------------------------

@nb.njit(inline="always")
def _splitmix(z):
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@nb.njit(inline="always")
def _xoro(s0, s1):
    r = s0 + s1
    s1 ^= s0
    s0 = ((s0 << np.uint64(24)) | (s0 >> np.uint64(40))) ^ s1 ^ (s1 << np.uint64(16))
    s1 = (s1 << np.uint64(37)) | (s1 >> np.uint64(27))
    return r, s0, s1


@nb.njit(inline="always")
def _unit_open(u):
    """(0, 1) from the top 53 bits."""
    return ((u >> np.uint64(11)) + np.uint64(1)) * (1.0 / 9007199254740993.0)


@nb.njit(cache=True)
def _seed_streams(seed, n):
    s0 = np.empty(n, np.uint64)
    s1 = np.empty(n, np.uint64)
    key = _splitmix(np.uint64(seed))
    for p in range(n):
        base = key + np.uint64(2) * np.uint64(p)
        s0[p] = _splitmix(base)
        s1[p] = _splitmix(base + np.uint64(1))
        if s0[p] == 0 and s1[p] == 0:
            s1[p] = np.uint64(1)
    return s0, s1


@nb.njit(cache=True)
def _first_uniforms(s0, s1):
    n = s0.size
    u = np.empty(n)
    for p in range(n):
        r, a, b = _xoro(s0[p], s1[p])
        s0[p] = a
        s1[p] = b
        u[p] = _unit_open(r)
    return u


@nb.njit(inline="always")
def _normal(s0, s1, kn, wn, fn):
    while True:
        u, s0, s1 = _xoro(s0, s1)
        hz = np.int64(np.int32(np.uint32(u >> np.uint64(32))))
        iz = hz & 127
        if abs(hz) < kn[iz]:
            return hz * wn[iz], s0, s1
        if iz == 0:
            # tail beyond r
            while True:
                u, s0, s1 = _xoro(s0, s1)
                a = _unit_open(u)
                u, s0, s1 = _xoro(s0, s1)
                b = _unit_open(u)
                x = -np.log(a) / 3.442619855899
                y = -np.log(b)
                if y + y >= x * x:
                    break
            return (3.442619855899 + x if hz > 0 else -3.442619855899 - x), s0, s1
        x = hz * wn[iz]
        u, s0, s1 = _xoro(s0, s1)
        a = (u >> np.uint64(11)) * (1.0 / 9007199254740992.0)
        if fn[iz] + a * (fn[iz - 1] - fn[iz]) < np.exp(-0.5 * x * x):
            return x, s0, s1


@nb.njit(inline="always")
def _drift(v, kind, prm, ty, tb):
    if kind == 0:
        # symmetric classical family
        return -2.0 * prm[0] * v / (1.0 + v * v)
    if kind == 1:
        # 2 (A'/A - gamma v / (1 + v^2)), A = am + (ap - am)(1 + tanh v)/2
        g, ap, am = prm[0], prm[1], prm[2]
        t = np.tanh(v)
        A = am + 0.5 * (ap - am) * (1.0 + t)
        dA = 0.5 * (ap - am) * (1.0 - t * t)
        return 2.0 * (dA / A - g * v / (1.0 + v * v))
    # tabulated on y = asinh(v), uniform spacing
    y = np.arcsinh(v)
    h = ty[1] - ty[0]
    k = int((y - ty[0]) / h)
    if k < 0 or k >= ty.size - 1:
        return -2.0 * prm[0] / v
    f = (y - (ty[0] + k * h)) / h
    return tb[k] + f * (tb[k + 1] - tb[k])


CHECK_EVERY = 256


@nb.njit(parallel=True, cache=True)
def _advance(V, X, S0, S1, nsteps, dt, kind, prm, ty, tb, cap, kn, wn, fn):
    """Advance all particles by nsteps; returns the number of blocks that hit the cap.

    Particles are processed in interleaved blocks of four; the cap is checked
    every CHECK_EVERY steps and at the end.
    """
    n = V.size
    nblocks = (n + 3) // 4
    sq = np.sqrt(2.0 * dt)
    bad = np.zeros(nblocks, np.int64)
    for blk in nb.prange(nblocks):
        p0 = blk * 4
        m = min(4, n - p0)
        s0 = np.empty(4, np.uint64)
        s1 = np.empty(4, np.uint64)
        vv = np.zeros(4)
        xx = np.zeros(4)
        for j in range(m):
            s0[j] = S0[p0 + j]
            s1[j] = S1[p0 + j]
            vv[j] = V[p0 + j]
            xx[j] = X[p0 + j]
        done = 0
        while done < nsteps:
            chunk = min(CHECK_EVERY, nsteps - done)
            for _ in range(chunk):
                for j in range(m):
                    z, a, b = _normal(s0[j], s1[j], kn, wn, fn)
                    s0[j] = a
                    s1[j] = b
                    v = vv[j]
                    xx[j] += v * dt
                    vv[j] = v + _drift(v, kind, prm, ty, tb) * dt + sq * z
            done += chunk
            hit = False
            for j in range(m):
                if not abs(vv[j]) <= cap:
                    hit = True
            if hit:
                bad[blk] = 1
                break
        for j in range(m):
            S0[p0 + j] = s0[j]
            S1[p0 + j] = s1[j]
            V[p0 + j] = vv[j]
            X[p0 + j] = xx[j]
    return bad.sum()


# -- equilibrium marginal ----------------------------------------------------------------

class EquilibriumCDF:
    """CDF of F = M^2 in d = 1 on y = asinh(v), with power-law tails beyond the table."""

    def __init__(self, model: EquilibriumModel, vmax: float = 1e8, n: int = 400001):
        if model.d != 1:
            raise ValueError("the velocity marginal table is one-dimensional")
        self.model = model
        Y = np.arcsinh(vmax)
        self.y = np.linspace(-Y, Y, n)
        v = np.sinh(self.y)
        dens = np.asarray(model.M(v)) ** 2 * np.cosh(self.y)
        h = self.y[1] - self.y[0]
        body = np.concatenate([[0.0], np.cumsum(0.5 * h * (dens[1:] + dens[:-1]))])
        p = 2.0 * model.gamma - 1.0
        self.p = p
        self.cm2, self.cp2 = (float(x) ** 2 for x in model.m(np.array([-1.0, 1.0])))
        self.vmax = float(v[-1])
        self.left = self.cm2 * self.vmax ** (-p) / p
        self.right = self.cp2 * self.vmax ** (-p) / p
        total = self.left + body[-1] + self.right
        self.total = float(total)          # ~1 for a normalized model
        self.table = (self.left + body) / total
        self.left /= total
        self.right /= total

    def cdf(self, v):
        v = np.asarray(v, dtype=float)
        out = np.interp(np.arcsinh(v), self.y, self.table)
        lo, hi = v < -self.vmax, v > self.vmax
        out = np.where(lo, self.cm2 / self.total * np.abs(np.where(lo, v, -1.0)) ** (-self.p) / self.p, out)
        out = np.where(hi, 1.0 - self.cp2 / self.total * np.where(hi, v, 1.0) ** (-self.p) / self.p, out)
        return out

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        out = np.sinh(np.interp(u, self.table, self.y))
        lo, hi = u < self.left, u > 1.0 - self.right
        k = self.p * self.total
        out = np.where(lo, -(k * np.where(lo, u, 1.0) / self.cm2) ** (-1.0 / self.p), out)
        out = np.where(hi, (k * (1.0 - np.where(hi, u, 0.0)) / self.cp2) ** (-1.0 / self.p), out)
        return out


def ks_distance(samples, cdf: EquilibriumCDF) -> float:
    return float(stats.kstest(np.asarray(samples), cdf.cdf).statistic)


# -- ensembles -----------------------------------------------------------------------------

@dataclass
class DriftTable:
    kind: int
    params: np.ndarray
    y: np.ndarray
    b: np.ndarray


def drift_table(model: EquilibriumModel, vmax: float = 2 * V_CAP, n: int = 200001) -> DriftTable:
    """Analytic drift for the classical family, tabulated b(v) otherwise."""
    if model.d != 1:
        raise ValueError("Monte Carlo is one-dimensional")
    if model.family == "classical":
        p = model.params
        prm = np.array([model.gamma, p["asymmetry_plus"], p["asymmetry_minus"]])
        return DriftTable(0 if model.symmetric else 1, prm, np.zeros(2), np.zeros(2))
    Y = np.arcsinh(vmax)
    y = np.linspace(-Y, Y, n)
    b = np.asarray(model.drift(np.sinh(y)), dtype=float)
    return DriftTable(2, np.array([model.gamma, 0.0, 0.0]), y, b)


@dataclass
class ParticleEnsemble:
    n: int
    V: np.ndarray
    X: np.ndarray
    T: float
    seed: int
    dt: float
    n_steps: int
    snapshots: list = field(default_factory=list, repr=False)   # (T_k, V copy, X copy)
    V0: Optional[np.ndarray] = field(default=None, repr=False)


def simulate_sde(model: EquilibriumModel, n: int, dt: float, T: float, seed: int,
                 snapshot_times: Sequence[float] = (), cap: float = V_CAP, V0=None,
                 threads: Optional[int] = None) -> ParticleEnsemble:
    """Euler-Maruyama to time T (rounded to a whole number of steps of size dt)."""
    if model.d != 1:
        raise ValueError("Monte Carlo is one-dimensional")
    if n < 1 or not 0 < dt <= 1e-2 or T < 0:
        raise ValueError("need n >= 1, 0 < dt <= 1e-2 and T >= 0")
    if threads:
        nb.set_num_threads(min(int(threads), nb.config.NUMBA_NUM_THREADS))
    n_steps = int(round(T / dt))
    S0, S1 = _seed_streams(np.uint64(seed), n)
    u = _first_uniforms(S0, S1)
    if V0 is None:
        V = EquilibriumCDF(model).ppf(u)
    else:
        V = np.array(V0, dtype=float).copy()
        if V.shape != (n,):
            raise ValueError("V0 must have shape (n,)")
    V_init = V.copy()
    X = np.zeros(n)
    tab = drift_table(model)
    wanted = {int(round(t / dt)) for t in snapshot_times if 0 <= t <= T}
    marks = sorted(wanted | {n_steps})
    snaps, done = [], 0
    for k in marks:
        if k > done:
            bad = _advance(V, X, S0, S1, k - done, dt, tab.kind, tab.params, tab.y, tab.b, cap, KN, WN, FN)
            if bad or not np.all(np.isfinite(V)):
                raise BlowUp(f"|V| exceeded {cap:.1e} before t={k * dt:.4g}: reduce dt")
            done = k
        if k in wanted:
            snaps.append((k * dt, V.copy(), X.copy()))
    return ParticleEnsemble(n=n, V=V, X=X, T=n_steps * dt, seed=int(seed), dt=dt, n_steps=n_steps,
                            snapshots=snaps, V0=V_init)


def macro_horizon(model: EquilibriumModel, eps: float, t_macro: float) -> float:
    """Physical time eps^-alpha t_macro matching macroscopic time t_macro."""
    return eps ** (-model.alpha) * t_macro


def _drift_value(model: EquilibriumModel, eps: float) -> float:
    if model.symmetric or regime_of(model) == "below":
        return 0.0
    if not eps < 1:
        raise ValueError("the drift correction is defined for eps < 1")
    return float(drift_j(model, eps).j1)


def rescaled_displacement(ens: ParticleEnsemble, model: EquilibriumModel, eps: float, t_macro: float,
                          j: Optional[float] = None) -> np.ndarray:
    """eps (X(T) - j T) for T = eps^-alpha t_macro."""
    target = macro_horizon(model, eps, t_macro)
    if abs(ens.T - target) > 0.5 * ens.dt + 1e-9 * target:
        raise HorizonMismatch(f"ensemble time {ens.T:.6g} != eps^-alpha t_macro = {target:.6g}")
    if j is None:
        j = _drift_value(model, eps)
    return eps * (ens.X - j * ens.T)


@dataclass
class CFValue:
    xi: float
    value: complex
    ci_radius: float

    def to_dict(self) -> dict:
        return {"xi": self.xi, "re": self.value.real, "im": self.value.imag, "ci_radius": self.ci_radius}


def empirical_cf(samples, xi_list, n_boot: int = 200, seed: int = 0, level: float = 0.95,
                 min_samples: int = 10_000) -> list:
    """(1/n) sum exp(-i xi x_j) with a bootstrap radius |cf* - cf| at the given level."""
    x = np.asarray(samples, dtype=float)
    if x.size < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {x.size}")
    rng = np.random.Generator(np.random.PCG64(seed))
    idx = [rng.integers(0, x.size, x.size) for _ in range(n_boot)]
    out = []
    for xi in xi_list:
        e = np.exp(-1j * float(xi) * x)
        cf = complex(np.mean(e)) if xi != 0 else 1.0 + 0j
        dev = np.array([abs(np.mean(e[i]) - cf) for i in idx]) if xi != 0 else np.zeros(1)
        out.append(CFValue(float(xi), cf, float(np.quantile(dev, level))))
    return out
