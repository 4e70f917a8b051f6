"""Finite-difference calculus on grid fields.

Fields are plain ``(nx, ny)`` arrays holding one value per node, with ``nan``
outside the disk.  Boundary data enters through the arm feet: wherever a
stencil arm leaves the disk, the value at the foot on the circle replaces the
missing neighbour (Shortley-Weller treatment).  All operators are assembled
once per :class:`~abreulab.geometry.Discretization` as sparse matrices acting
on the vector of interior values plus a second matrix acting on foot values.

Every directional difference uses the three-point formula on unequal arms,
which is exact on quadratics, so gradients and Hessians of quadratics are
reproduced to rounding error on the whole disk.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp

from .geometry import STENCIL_DIRECTIONS, Discretization

__all__ = [
    "SymMatrixField",
    "Operators",
    "operators",
    "boundary_vector",
    "gradient_fd",
    "hessian_fd",
    "cofactor2",
    "integrate",
    "sup_region",
    "write_snapshot",
    "read_snapshot",
    "EmptyRegionError",
]

BoundaryData = Union[Callable, np.ndarray, float, None]


class EmptyRegionError(ValueError):
    pass


@dataclass
class SymMatrixField:
    """Symmetric 2x2 matrix per node, stored as (m11, m12, m22)."""

    m11: np.ndarray
    m12: np.ndarray
    m22: np.ndarray

    def det(self):
        return self.m11 * self.m22 - self.m12 * self.m12

    def trace(self):
        return self.m11 + self.m22

    def min_eig(self):
        half_tr = 0.5 * (self.m11 + self.m22)
        disc = np.sqrt(0.25 * (self.m11 - self.m22) ** 2 + self.m12**2)
        return half_tr - disc

    def as_array(self):
        return np.stack([np.stack([self.m11, self.m12], -1),
                         np.stack([self.m12, self.m22], -1)], -2)

    def contract(self, other: "SymMatrixField"):
        """Pointwise trace(self @ other)."""
        return self.m11 * other.m11 + 2 * self.m12 * other.m12 + self.m22 * other.m22


@dataclass(frozen=True)
class DirectionalOps:
    # derivative along x + s*e: value = A @ u_int + B @ u_feet
    A: sp.csr_matrix
    B: sp.csr_matrix


class Operators:
    """Sparse difference operators for one discretization.

    ``second[k]`` approximates ``d^2/ds^2 u(x + s e_k)`` (that is
    ``e_k^T D^2u e_k``) and ``first[k]`` the matching first derivative, for
    the directions in :data:`STENCIL_DIRECTIONS`.
    """

    def __init__(self, disc: Discretization):
        self.disc = disc
        N = disc.n_interior
        nf = len(disc.feet)
        h = disc.h
        idx = disc.index
        ij = np.argwhere(disc.interior)
        # arm fractions per (direction, sign); 1 unless a foot replaces the neighbour
        frac = np.ones((4, 2, N))
        foot_of = -np.ones((4, 2, N), dtype=np.int64)
        ft = disc.feet
        si = (ft.sign < 0).astype(int)
        frac[ft.direction, si, ft.node] = ft.fraction
        foot_of[ft.direction, si, ft.node] = np.arange(nf)
        self.first: list[DirectionalOps] = []
        self.second: list[DirectionalOps] = []
        rows = np.arange(N)
        for k, e in enumerate(STENCIL_DIRECTIONS):
            a = frac[k, 0]  # forward arm
            b = frac[k, 1]  # backward arm
            # neighbour interior indices (or -1)
            nbr = []
            for s in (1, -1):
                ii = ij[:, 0] + s * e[0]
                jj = ij[:, 1] + s * e[1]
                ok = (ii >= 0) & (ii < disc.grid.nx) & (jj >= 0) & (jj < disc.grid.ny)
                n = np.full(N, -1, dtype=np.int64)
                n[ok] = idx[ii[ok], jj[ok]]
                nbr.append(n)
            c_plus2 = 2.0 / (h * h * a * (a + b))
            c_zero2 = -2.0 / (h * h * a * b)
            c_minus2 = 2.0 / (h * h * b * (a + b))
            den1 = h * a * b * (a + b)
            c_plus1 = b * b / den1
            c_zero1 = -(b * b - a * a) / den1
            c_minus1 = -a * a / den1
            self.second.append(self._assemble(rows, nbr, foot_of[k], c_plus2, c_zero2, c_minus2, N, nf))
            self.first.append(self._assemble(rows, nbr, foot_of[k], c_plus1, c_zero1, c_minus1, N, nf))

    @staticmethod
    def _assemble(rows, nbr, foot, cp, c0, cm, N, nf):
        ar, ac, av = [rows], [rows], [c0]
        br, bc, bv = [], [], []
        for s, coef in ((0, cp), (1, cm)):
            f = foot[s]
            use_foot = f >= 0
            ar.append(rows[~use_foot]); ac.append(nbr[s][~use_foot]); av.append(coef[~use_foot])
            br.append(rows[use_foot]); bc.append(f[use_foot]); bv.append(coef[use_foot])
        A = sp.csr_matrix((np.concatenate(av), (np.concatenate(ar), np.concatenate(ac))), shape=(N, N))
        B = sp.csr_matrix((np.concatenate(bv), (np.concatenate(br), np.concatenate(bc))), shape=(N, nf))
        return DirectionalOps(A, B)

    # convenience combinations -------------------------------------------------
    @property
    def Dxx(self):
        return self.second[0]

    @property
    def Dyy(self):
        return self.second[1]

    @property
    def Dxy(self):
        d = self.second
        return DirectionalOps(0.25 * (d[2].A - d[3].A), 0.25 * (d[2].B - d[3].B))

    @property
    def Gx(self):
        return self.first[0]

    @property
    def Gy(self):
        return self.first[1]

    def hessian_vec(self, u_int, u_feet):
        """Hessian entries (h11, h12, h22) at interior nodes as flat arrays."""
        out = []
        for op in (self.Dxx, self.Dxy, self.Dyy):
            out.append(op.A @ u_int + op.B @ u_feet)
        return tuple(out)

    def gradient_vec(self, u_int, u_feet):
        return tuple(op.A @ u_int + op.B @ u_feet for op in (self.Gx, self.Gy))

    def linear_operator(self, U11, U12, U22):
        """Matrices for ``U11 d_xx + 2 U12 d_xy + U22 d_yy`` (non-divergence form)."""
        Dxx, Dxy, Dyy = self.Dxx, self.Dxy, self.Dyy
        A = (sp.diags(U11) @ Dxx.A + sp.diags(2 * U12) @ Dxy.A + sp.diags(U22) @ Dyy.A)
        B = (sp.diags(U11) @ Dxx.B + sp.diags(2 * U12) @ Dxy.B + sp.diags(U22) @ Dyy.B)
        return A.tocsr(), B.tocsr()


def operators(disc: Discretization) -> Operators:
    """Operators for ``disc``, built on first use and cached on the object."""
    ops = disc.__dict__.get("_operators")
    if ops is None:
        ops = Operators(disc)
        disc.__dict__["_operators"] = ops
    return ops


def boundary_vector(disc: Discretization, bc: BoundaryData, f: np.ndarray | None = None) -> np.ndarray:
    """Foot values from a callable, an array of length ``len(disc.feet)``, or a scalar.

    With ``bc=None`` the field itself must be finite at the outside
    neighbours, and foot values are taken by linear interpolation along the
    arm (second order only when the foot coincides with a node).
    """
    nf = len(disc.feet)
    if callable(bc):
        return disc.foot_values(bc)
    if bc is None:
        if f is None:
            raise ValueError("boundary data required")
        return _interp_feet(disc, f)
    arr = np.asarray(bc, dtype=float)
    if arr.ndim == 0:
        return np.full(nf, float(arr))
    if arr.shape != (nf,):
        raise ValueError(f"expected {nf} foot values, got shape {arr.shape}")
    return arr


def _interp_feet(disc, f):
    ft = disc.feet
    ij = np.argwhere(disc.interior)[ft.node]
    e = np.asarray(STENCIL_DIRECTIONS)[ft.direction] * ft.sign[:, None]
    nb = ij + e
    inner = f[ij[:, 0], ij[:, 1]]
    outer = f[nb[:, 0], nb[:, 1]]
    if not np.all(np.isfinite(outer)):
        raise ValueError("field undefined outside the disk; pass boundary data explicitly")
    return inner + ft.fraction * (outer - inner)


def _scatter(disc, vec, fill=np.nan):
    out = np.full(disc.grid.shape, fill, dtype=float)
    out[disc.interior] = vec
    return out


def gradient_fd(disc: Discretization, f: np.ndarray, bc: BoundaryData = None):
    """Gradient ``(fx, fy)`` as two node arrays (nan outside)."""
    ops = operators(disc)
    g = ops.gradient_vec(f[disc.interior], boundary_vector(disc, bc, f))
    return tuple(_scatter(disc, c) for c in g)


def hessian_fd(disc: Discretization, f: np.ndarray, bc: BoundaryData = None) -> SymMatrixField:
    ops = operators(disc)
    h11, h12, h22 = ops.hessian_vec(f[disc.interior], boundary_vector(disc, bc, f))
    return SymMatrixField(_scatter(disc, h11), _scatter(disc, h12), _scatter(disc, h22))


def cofactor2(H: SymMatrixField) -> SymMatrixField:
    return SymMatrixField(H.m22, -H.m12, H.m11)


def integrate(disc: Discretization, f: np.ndarray, region: str = "omega") -> float:
    """Weighted node sum over ``omega0``, ``annulus`` or ``omega``."""
    w = disc.weights(region)
    m = w > 0
    vals = f[m]
    if not np.all(np.isfinite(vals)):
        raise ValueError(f"field not finite on region {region!r}")
    return float(np.sum(w[m] * vals))


def sup_region(disc: Discretization, f: np.ndarray, region: str = "omega", margin: float | None = None) -> float:
    """Max of ``|f|`` over a region's nodes, or over the compact set of
    ``omega0`` nodes at distance >= ``margin`` from its boundary."""
    m = disc.compact_mask(margin) if margin is not None else disc.mask(region)
    if not np.any(m):
        raise EmptyRegionError("empty region")
    return float(np.max(np.abs(f[m])))


# snapshot files ----------------------------------------------------------------

def write_snapshot(path, disc: Discretization, f: np.ndarray, digits: int = 17):
    """Plain-text snapshot: ``nx ny h ox oy`` header then row-major values.

    ``digits = 17`` round-trips every double.  Fewer digits are counted
    relative to the largest magnitude in the field, so values that are zero
    up to rounding print as zero.
    """
    g = disc.grid
    vals = np.where(disc.interior, f, np.nan)
    if digits < 17:
        top = np.nanmax(np.abs(vals)) if np.any(np.isfinite(vals)) else 0.0
        if top > 0:
            quantum = 10.0 ** (np.floor(np.log10(top)) - digits + 1)
            vals = np.round(vals / quantum) * quantum + 0.0
    with open(path, "w") as fh:
        fh.write(f"{g.nx} {g.ny} {g.h:.17e} {g.origin[0]:.17e} {g.origin[1]:.17e}\n")
        for v in vals.ravel():
            fh.write("nan\n" if not np.isfinite(v) else f"{v:.{digits - 1}e}\n")


def read_snapshot(path):
    """Return ``(values, (nx, ny, h, ox, oy))``."""
    with open(path) as fh:
        head = fh.readline().split()
        nx, ny = int(head[0]), int(head[1])
        h, ox, oy = (float(v) for v in head[2:5])
        vals = np.array([float(line) for line in fh if line.strip()])
    if vals.size != nx * ny:
        raise ValueError(f"snapshot has {vals.size} values, header says {nx * ny}")
    return vals.reshape(nx, ny), (nx, ny, h, ox, oy)
