"""Finite-volume discretization of Q = -(1/M) div(M^2 grad(./M)) on stretched grids.

The discrete operator is Q = W^-1 D^-1 K D^-1 with W the cell weights, D = diag(M)
and K the face-conductance Laplacian acting on u = psi/M.  Consequences:

* Q M = 0 exactly (K annihilates constants);
* Q is symmetric for the weighted product sum(w * psi * phi);
* <Q psi, psi>_w = sum_faces c_f |u_i - u_j|^2 (the discrete Dirichlet form).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .equilibria import EquilibriumModel
from .errors import DegenerateSample, InvalidGrid


@dataclass(frozen=True)
class VelocityGrid:
    d: int
    axes: tuple            # one node array per axis; axis 0 is aligned with xi
    axis_weights: tuple    # cell widths per axis
    stretch: float
    vmax: float

    @property
    def shape(self) -> tuple:
        return tuple(a.size for a in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def nodes(self) -> np.ndarray:
        """(n,) for d = 1, (n, d) otherwise; C order over the axes."""
        if self.d == 1:
            return self.axes[0]
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def v1(self) -> np.ndarray:
        if self.d == 1:
            return self.axes[0]
        return np.meshgrid(*self.axes, indexing="ij")[0].ravel()

    @property
    def weights(self) -> np.ndarray:
        w = self.axis_weights[0]
        for wk in self.axis_weights[1:]:
            w = np.multiply.outer(w, wk)
        return np.asarray(w).ravel()

    @property
    def mirror_symmetric(self) -> bool:
        a = self.axes[0]
        return bool(np.array_equal(a, -a[::-1]))

    def mirror_index(self) -> np.ndarray:
        """Permutation sending node v to the node with v1 -> -v1."""
        idx = np.arange(self.size).reshape(self.shape)
        return idx[::-1].ravel()

    @property
    def japanese(self) -> np.ndarray:
        pts = self.nodes.reshape(self.size, -1)
        return np.sqrt(1.0 + np.sum(pts * pts, axis=1))


def _axis(vmax: float, n: int, stretch: float):
    # built from the positive half so that v[-1-i] == -v[i] holds exactly
    if stretch > 0:
        U = np.arcsinh(stretch * vmax) / stretch
        u = np.linspace(-U, U, n)[n // 2:]
        half = np.sinh(stretch * u) / stretch
    else:
        half = np.linspace(-vmax, vmax, n)[n // 2:]
    half[-1] = vmax
    if n % 2:
        half[0] = 0.0
        v = np.concatenate([-half[:0:-1], half])
    else:
        v = np.concatenate([-half[::-1], half])
    edges = np.concatenate([[v[0]], 0.5 * (v[1:] + v[:-1]), [v[-1]]])
    return v, np.diff(edges)


def build_grid(d: int, vmax: float, n, stretch: float = 1.0) -> VelocityGrid:
    """Nodes u -> sinh(a u)/a of a uniform grid (a = stretch; a = 0 is uniform)."""
    counts = (n,) * d if np.isscalar(n) else tuple(n)
    vals = [vmax, stretch, *counts]
    if not all(np.isfinite(x) for x in vals):
        raise InvalidGrid("grid parameters must be finite")
    if d not in (1, 2):
        raise InvalidGrid("only d = 1 and d = 2 grids are supported")
    if vmax <= 1 or stretch < 0 or min(counts) < 32 or len(counts) != d:
        raise InvalidGrid(f"invalid grid: d={d} vmax={vmax} n={counts} stretch={stretch}")
    axes, widths = zip(*(_axis(float(vmax), int(c), float(stretch)) for c in counts))
    return VelocityGrid(d=d, axes=tuple(axes), axis_weights=tuple(widths), stretch=float(stretch), vmax=float(vmax))


def auto_vmax(eta: float, r0: float = 50.0, c: float = 8.0) -> float:
    """Domain policy max(r0, c eta^(-1/3)): eta^(-1/3) is the active velocity scale."""
    return float(max(r0, c * eta ** (-1.0 / 3.0))) if eta > 0 else float(r0)


@dataclass
class DiscreteOperator:
    kind: str                   # "Q" | "L_eta"
    matrix: sp.csr_matrix
    eta: float
    grid: VelocityGrid
    model: EquilibriumModel
    M_h: np.ndarray
    faces: tuple = field(repr=False, default=None)   # (i, j, conductance)

    @property
    def weights(self) -> np.ndarray:
        return self.grid.weights

    def apply(self, psi):
        """Matrix-free action through face fluxes; Q M is exactly zero here."""
        i, j, c = self.faces
        u = np.asarray(psi) / self.M_h
        flux = c * (u[i] - u[j])
        Ku = np.zeros_like(u)
        np.add.at(Ku, i, flux)
        np.add.at(Ku, j, -flux)
        out = Ku / (self.M_h * self.weights)
        if self.kind == "L_eta" and self.eta > 0:
            out = out + 1j * self.eta * self.grid.v1 * psi
        return out

    def dirichlet(self, psi) -> float:
        """sum_f c_f |psi_i/M_i - psi_j/M_j|^2."""
        i, j, c = self.faces
        u = np.asarray(psi) / self.M_h
        return float(np.sum(c * np.abs(u[i] - u[j]) ** 2))

    def dirichlet_bilinear(self, x, y):
        i, j, c = self.faces
        ux, uy = x / self.M_h, y / self.M_h
        return np.sum(c * (ux[i] - ux[j]) * (uy[i] - uy[j]))

    def inner(self, x, y):
        """Weighted Hermitian product sum w x conj(y)."""
        return np.sum(self.weights * x * np.conj(y))

    def stiffness(self) -> sp.csr_matrix:
        i, j, c = self.faces
        n = self.grid.size
        K = sp.coo_matrix((np.concatenate([c, c, -c, -c]),
                           (np.concatenate([i, j, i, j]), np.concatenate([i, j, j, i]))), shape=(n, n))
        return K.tocsr()


def _faces(grid: VelocityGrid, M_h: np.ndarray):
    shape = grid.shape
    idx = np.arange(grid.size).reshape(shape)
    Ms = M_h.reshape(shape)
    I, J, C = [], [], []
    for k in range(grid.d):
        h = np.diff(grid.axes[k])
        lo = [slice(None)] * grid.d
        hi = [slice(None)] * grid.d
        lo[k], hi[k] = slice(0, -1), slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        mf2 = Ms[lo] * Ms[hi]          # geometric mean squared
        area = np.ones(1)
        for q in range(grid.d):
            if q != k:
                area = np.multiply.outer(area, grid.axis_weights[q]) if area.size > 1 else grid.axis_weights[q]
        hshape = [1] * grid.d
        hshape[k] = h.size
        cond = mf2 / h.reshape(hshape)
        if grid.d > 1:
            ashape = [s for s in shape]
            ashape[k] = 1
            cond = cond * np.asarray(area).reshape(ashape)
        I.append(idx[lo].ravel())
        J.append(idx[hi].ravel())
        C.append(cond.ravel())
    return np.concatenate(I), np.concatenate(J), np.concatenate(C)


def assemble_Q(model: EquilibriumModel, grid: VelocityGrid) -> DiscreteOperator:
    """Divergence-form Q with zero-flux outer faces."""
    if model.d != grid.d:
        raise InvalidGrid("model and grid dimensions differ")
    M_h = np.asarray(model.M(grid.nodes), dtype=float).ravel()
    faces = _faces(grid, M_h)
    op = DiscreteOperator(kind="Q", matrix=None, eta=0.0, grid=grid, model=model, M_h=M_h, faces=faces)
    K = op.stiffness()
    Dinv = sp.diags(1.0 / M_h)
    op.matrix = (sp.diags(1.0 / grid.weights) @ Dinv @ K @ Dinv).tocsr()
    return op


def assemble_L_eta(Q: DiscreteOperator, eta: float) -> DiscreteOperator:
    """L_eta = Q + i eta diag(v1)."""
    if eta < 0:
        raise ValueError("eta must be non-negative")
    A = (Q.matrix + sp.diags(1j * eta * Q.grid.v1)).tocsr() if eta > 0 else Q.matrix.astype(complex)
    return DiscreteOperator(kind="L_eta", matrix=A, eta=float(eta), grid=Q.grid, model=Q.model, M_h=Q.M_h,
                            faces=Q.faces)


@dataclass(frozen=True)
class PenalizationVector:
    values: np.ndarray
    scale: float       # (sum w M^2 / <v>^2)^-1


def assemble_Phi(model: EquilibriumModel, grid: VelocityGrid, M_h: Optional[np.ndarray] = None) -> PenalizationVector:
    """Phi proportional to M/<v>^2 with sum w Phi M = 1."""
    if M_h is None:
        M_h = np.asarray(model.M(grid.nodes), dtype=float).ravel()
    raw = M_h / grid.japanese**2
    scale = 1.0 / np.sum(grid.weights * raw * M_h)
    return PenalizationVector(values=raw * scale, scale=float(scale))


def dump_coo(op: DiscreteOperator, path) -> None:
    """Write the sparse pattern as 'row col re im' lines."""
    A = sp.coo_matrix(op.matrix)
    order = np.lexsort((A.col, A.row))
    with open(path, "w") as fh:
        fh.write(f"# kind={op.kind} eta={op.eta!r} n={A.shape[0]} nnz={A.nnz}\n")
        for k in order:
            z = complex(A.data[k])
            fh.write(f"{A.row[k]} {A.col[k]} {z.real:.17g} {z.imag:.17g}\n")


# -- Hardy-Poincare ------------------------------------------------------------

@dataclass
class HardyPoincareEstimate:
    Lambda: float
    sample_quotients: np.ndarray
    skipped: int

    @property
    def min_sample(self) -> float:
        return float(np.min(self.sample_quotients))


def hardy_poincare_projection(g, Q: DiscreteOperator):
    """g - P(g) M with P(g) = (sum w M^2/<v>^2)^-1 sum w g M/<v>^2."""
    w = Q.weights
    jb2 = Q.grid.japanese**2
    num = np.sum(w * g * Q.M_h / jb2)
    den = np.sum(w * Q.M_h**2 / jb2)
    return g - (num / den) * Q.M_h


def hardy_poincare_quotient(g, Q: DiscreteOperator) -> float:
    gt = hardy_poincare_projection(g, Q)
    den = np.sum(Q.weights * gt**2 / Q.grid.japanese**2)
    if den <= 1e-24 * np.sum(Q.weights * g**2 / Q.grid.japanese**2) or den == 0.0:
        raise DegenerateSample("projected sample vanishes")
    return Q.dirichlet(gt) / den


def hardy_poincare_constant(Q: DiscreteOperator) -> float:
    """Second generalized eigenvalue of (K, diag(w M^2/<v>^2)) in u = g/M."""
    K = Q.stiffness()
    B = Q.weights * Q.M_h**2 / Q.grid.japanese**2
    if Q.grid.size <= 2048:
        ev = sla.eigh(K.toarray(), np.diag(B), eigvals_only=True, subset_by_index=[0, 1])
    else:
        ev = spla.eigsh(K.tocsc(), k=2, M=sp.diags(B).tocsc(), sigma=-1e-8, which="LM",
                        return_eigenvectors=False)
        ev = np.sort(ev)
    return float(ev[1])


def verify_hardy_poincare(model: EquilibriumModel, grid: VelocityGrid, n_samples: int = 64,
                          seed: int = 0) -> HardyPoincareEstimate:
    """Exact discrete constant plus Rayleigh quotients of random projected samples.

    Half of the samples are white noise, half are smooth: M times random
    combinations of Chebyshev polynomials in atan(v1)/(pi/2).
    """
    if n_samples < 10:
        raise ValueError("n_samples must be >= 10")
    Q = assemble_Q(model, grid)
    lam = hardy_poincare_constant(Q)
    rng = np.random.default_rng(seed)
    t = np.arctan(grid.v1) / (0.5 * np.pi)
    quotients, skipped, k = [], 0, 0
    while len(quotients) < n_samples:
        if k % 2 == 0:
            g = rng.standard_normal(grid.size)
        else:
            coef = rng.standard_normal(8) / (1.0 + np.arange(8))
            g = Q.M_h * np.polynomial.chebyshev.chebval(t, coef)
        k += 1
        try:
            quotients.append(hardy_poincare_quotient(g, Q))
        except DegenerateSample:
            skipped += 1
            if skipped > 10 * n_samples:
                raise
    return HardyPoincareEstimate(Lambda=lam, sample_quotients=np.array(quotients), skipped=skipped)
