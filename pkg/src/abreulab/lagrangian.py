"""Lagrangians ``F(x, z, p) = F0(x, z) + F1(x, p)``, the two built-in models,
sampled assumption checks, and the right-hand side ``f_eps`` of the Abreu
system.

Evaluators are vectorised: ``x`` and ``p`` have shape ``(..., 2)``, ``z``
shape ``(...)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .fields import boundary_vector, operators
from .geometry import Discretization, DomainPair

__all__ = [
    "LagrangianSpec",
    "RochetChoneParams",
    "AiryParams",
    "make_rochet_chone",
    "make_airy",
    "make_quadratic_family",
    "assemble_f_eps",
    "interior_rhs",
    "check_assumptions",
    "detect_C_phi",
    "omega0_box",
    "Verdict",
]


def _zeros_like_z(x, z):
    return np.zeros(np.broadcast_shapes(np.shape(z), np.shape(x)[:-1]))


def omega0_box(pair: DomainPair):
    """Axis-aligned bounding box ``(lo, hi)`` of the inner region."""
    om = pair.omega0
    if hasattr(om, "lower"):
        return np.asarray(om.lower, float), np.asarray(om.upper, float)
    c = np.asarray(om.center, float)
    return c - om.radius, c + om.radius


def _probe_points(pair, n_probe, seed):
    # grid plus uniform samples of the inner bounding box
    lo, hi = omega0_box(pair)
    t = np.linspace(0, 1, 33)
    G = np.stack(np.meshgrid(t, t, indexing="ij"), -1).reshape(-1, 2)
    rng = np.random.default_rng(seed)
    return np.concatenate([lo + (hi - lo) * G, lo + (hi - lo) * rng.random((n_probe, 2))])


@dataclass
class LagrangianSpec:
    F0: Callable
    f0: Callable
    F1: Callable
    gradP_F1: Callable
    hessP_F1: Callable
    mixed_F1: Callable
    C_star: float = 0.0
    C_b: float = 0.0
    C_l: float = 0.0
    C_under: float = 0.0
    eta: Callable | None = None
    df0_dz: Callable | None = None
    name: str = "custom"
    has_gradient_term: bool = True
    # F is at most quadratic in (z, p): one Newton step solves any prox problem
    quadratic: bool = False

    def __post_init__(self):
        for k in ("C_star", "C_b", "C_l", "C_under"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be nonnegative")
        if self.eta is None:
            C_l = self.C_l
            self.eta = lambda t: C_l * (1.0 + t)

    def F(self, x, z, p):
        return self.F0(x, z) + self.F1(x, p)

    def dz_f0(self, x, z, step: float = 1e-6):
        if self.df0_dz is not None:
            return self.df0_dz(x, z)
        dz = step * (1.0 + np.abs(z))
        return (self.f0(x, z + dz) - self.f0(x, z - dz)) / (2 * dz)


# ---------------------------------------------------------------------------
# Rochet-Chone

@dataclass
class RochetChoneParams:
    """Type density ``gamma`` (nonnegative, bounded, Lipschitz) and its gradient."""

    density: Callable
    density_grad: Callable
    label: str = "custom"

    @classmethod
    def constant(cls, value: float = 1.0):
        if value < 0:
            raise ValueError("density must be nonnegative")
        return cls(lambda x: np.full(np.shape(x)[:-1], float(value)),
                   lambda x: np.zeros(np.shape(x)), label=f"constant {value:g}")

    @classmethod
    def from_field(cls, grid, values: np.ndarray):
        """Bilinear interpolation of node values; gradient by central differences."""
        xs = grid.origin[0] + grid.h * np.arange(grid.nx)
        ys = grid.origin[1] + grid.h * np.arange(grid.ny)
        vals = np.nan_to_num(np.asarray(values, dtype=float))
        if np.any(vals < 0):
            raise ValueError("density must be nonnegative")
        gx, gy = np.gradient(vals, grid.h, grid.h)
        kw = dict(bounds_error=False, fill_value=None)
        itp = RegularGridInterpolator((xs, ys), vals, **kw)
        igx = RegularGridInterpolator((xs, ys), gx, **kw)
        igy = RegularGridInterpolator((xs, ys), gy, **kw)
        return cls(lambda x: itp(x), lambda x: np.stack([igx(x), igy(x)], -1), label="field")


def make_rochet_chone(params: RochetChoneParams, pair: DomainPair | None = None,
                      n_probe: int = 4096, seed: int = 0) -> LagrangianSpec:
    """``F = (|p|^2/2 - x.p) gamma + z gamma`` (negative monopolist profit density)."""
    gam, dgam = params.density, params.density_grad

    def F0(x, z):
        return z * gam(x)

    def f0(x, z):
        return gam(x) + _zeros_like_z(x, z)

    def F1(x, p):
        return (0.5 * np.sum(p * p, -1) - np.sum(x * p, -1)) * gam(x)

    def gradP(x, p):
        return (p - x) * gam(x)[..., None]

    def hessP(x, p):
        g = gam(x)
        shape = np.broadcast_shapes(np.shape(x), np.shape(p))[:-1]
        return np.broadcast_to(g[..., None, None] * np.eye(2), shape + (2, 2))

    def mixed(x, p):
        # d/dx_i [(p_i - x_i) gamma] for i = 1, 2
        return (p - x) * dgam(x) - gam(x)[..., None]

    # constants from a probe of the inner region
    if pair is not None:
        pts = _probe_points(pair, n_probe, seed)
        xmax = float(np.max(np.linalg.norm(pts, axis=1)))
    else:
        pts = np.zeros((1, 2))
        xmax = 0.0
    gv = gam(pts)
    gmax, gmin = float(np.max(gv)), float(np.min(gv))
    lip = float(np.max(np.linalg.norm(dgam(pts), axis=-1)))
    C_star = max(gmax, lip * (1.0 + xmax) + gmax)
    return LagrangianSpec(F0, f0, F1, gradP, hessP, mixed, C_star=C_star, C_b=0.0, C_l=gmax,
                          C_under=gmin, df0_dz=lambda x, z: _zeros_like_z(x, z),
                          name="rochet_chone", quadratic=True)


# ---------------------------------------------------------------------------
# Airy potential (floating elastic shells)

@dataclass
class AiryParams:
    q: Callable
    det_hessian: Callable | None = None
    fd_step: float = 1e-3
    label: str = "custom"

    def det_hess(self, x):
        if self.det_hessian is not None:
            return self.det_hessian(x)
        d = self.fd_step
        x = np.asarray(x, dtype=float)
        e1, e2 = np.array([d, 0.0]), np.array([0.0, d])
        q = self.q
        q0 = q(x)
        qxx = (q(x + e1) - 2 * q0 + q(x - e1)) / d**2
        qyy = (q(x + e2) - 2 * q0 + q(x - e2)) / d**2
        qxy = (q(x + e1 + e2) - q(x + e1 - e2) - q(x - e1 + e2) + q(x - e1 - e2)) / (4 * d**2)
        return qxx * qyy - qxy**2

    @classmethod
    def quadratic(cls):
        return cls(lambda x: 0.5 * np.sum(np.asarray(x) ** 2, -1),
                   lambda x: np.ones(np.shape(x)[:-1]), label="quadratic")

    @classmethod
    def exponential(cls):
        def q(x):
            return np.exp(0.5 * np.sum(np.asarray(x) ** 2, -1))

        def det(x):
            r2 = np.sum(np.asarray(x) ** 2, -1)
            return (1 + r2) * np.exp(r2)

        return cls(q, det, label="exponential")


def make_airy(params: AiryParams, pair: DomainPair | None = None, n_probe: int = 4096,
              seed: int = 0) -> LagrangianSpec:
    """``F = (|x|^2/2 - z) det D^2 q(x)``; no gradient dependence."""
    dq = params.det_hess

    def F0(x, z):
        return (0.5 * np.sum(np.asarray(x) ** 2, -1) - z) * dq(x)

    def f0(x, z):
        return -dq(x) + _zeros_like_z(x, z)

    def F1(x, p):
        return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(p))[:-1])

    def gradP(x, p):
        return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(p)))

    def hessP(x, p):
        shape = np.broadcast_shapes(np.shape(x), np.shape(p))[:-1]
        return np.zeros(shape + (2, 2))

    C_l = 0.0
    if pair is not None:
        C_l = float(np.max(np.abs(dq(_probe_points(pair, n_probe, seed)))))
    return LagrangianSpec(F0, f0, F1, gradP, hessP, gradP, C_star=0.0, C_b=0.0, C_l=C_l,
                          C_under=0.0, df0_dz=lambda x, z: _zeros_like_z(x, z), name="airy",
                          has_gradient_term=False, quadratic=True)


def make_quadratic_family(z2: float = 0.0, z1: float = 0.0, p2: float = 1.0, p1: float = 0.0,
                          **constants) -> LagrangianSpec:
    """``F = z2 z^2/2 + z1 z + p2 |p|^2/2 - p1 x.p``, a test family.

    ``z2 < 0`` gives a semi-convex ``F0`` with ``C_b = -z2``.  Constants not
    passed in ``constants`` are the sharp ones on a unit ``|z|`` scale; linear
    growth of ``f0`` then needs ``C_l >= |z2| + |z1|``.
    """
    def F0(x, z):
        return 0.5 * z2 * z * z + z1 * z + _zeros_like_z(x, z)

    def f0(x, z):
        return z2 * z + z1 + _zeros_like_z(x, z)

    def F1(x, p):
        return 0.5 * p2 * np.sum(p * p, -1) - p1 * np.sum(x * p, -1)

    def gradP(x, p):
        return p2 * p - p1 * x

    def hessP(x, p):
        shape = np.broadcast_shapes(np.shape(x), np.shape(p))[:-1]
        return np.broadcast_to(p2 * np.eye(2), shape + (2, 2))

    def mixed(x, p):
        shape = np.broadcast_shapes(np.shape(x), np.shape(p))
        return np.full(shape, -p1)

    c = dict(C_star=max(abs(p2), abs(p1)), C_b=max(0.0, -z2), C_l=abs(z2) + abs(z1),
             C_under=max(0.0, p2))
    c.update(constants)
    return LagrangianSpec(F0, f0, F1, gradP, hessP, mixed, df0_dz=lambda x, z: z2 + _zeros_like_z(x, z),
                          name="custom", has_gradient_term=(p2 != 0 or p1 != 0),
                          quadratic=True, **c)


# ---------------------------------------------------------------------------
# right-hand side

def interior_rhs(spec: LagrangianSpec, x, z, p, H):
    """``f0(x,z) - sum_i F1_{p_i x_i}(x,p) - sum_ij F1_{p_i p_j}(x,p) u_ij`` with
    ``H = (u11, u12, u22)``: the chain-rule expansion of the Euler-Lagrange
    expression ``F_z - div F_p``."""
    val = spec.f0(x, z)
    if spec.has_gradient_term:
        m = spec.mixed_F1(x, p)
        Q = spec.hessP_F1(x, p)
        h11, h12, h22 = H
        val = val - m[..., 0] - m[..., 1] - (Q[..., 0, 0] * h11 + 2 * Q[..., 0, 1] * h12
                                             + Q[..., 1, 1] * h22)
    return val


def assemble_f_eps(disc: Discretization, spec: LagrangianSpec, u: np.ndarray, utilde: np.ndarray,
                   eps: float, bc=None) -> np.ndarray:
    """Piecewise right-hand side: Euler-Lagrange expression on the inner
    region, ``(u - utilde)/eps`` elsewhere in the disk; no smoothing across
    the inner boundary."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    ops = operators(disc)
    ub = boundary_vector(disc, bc, u)
    ui = u[disc.interior]
    out = np.full(disc.grid.shape, np.nan)
    inner = disc.mask("omega0")
    sel = inner[disc.interior]
    x = disc.interior_points[sel]
    gx, gy = ops.gradient_vec(ui, ub)
    h11, h12, h22 = ops.hessian_vec(ui, ub)
    p = np.stack([gx[sel], gy[sel]], -1)
    out[inner] = interior_rhs(spec, x, ui[sel], p, (h11[sel], h12[sel], h22[sel]))
    ann = disc.mask("annulus")
    out[ann] = (u[ann] - utilde[ann]) / eps
    return out


# ---------------------------------------------------------------------------
# assumption checks

@dataclass
class Verdict:
    name: str
    passed: bool
    worst: float
    witness: dict = field(default_factory=dict)
    note: str = ""

    def as_dict(self):
        return {"condition": self.name, "pass": bool(self.passed), "worst": float(self.worst),
                "witness": {k: np.asarray(v).tolist() for k, v in self.witness.items()},
                "note": self.note}


def _sample_box(rng, lo, hi, n, dim):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    return lo + (hi - lo) * rng.random((n, dim)) if dim > 1 else lo + (hi - lo) * rng.random(n)


def check_assumptions(spec: LagrangianSpec, x_box, z_box=(-5.0, 5.0), p_box=(-5.0, 5.0),
                      n_samples: int = 4000, seed: int = 0, C_t: float = 1.0, grid_points: int = 9):
    """Monte Carlo plus grid verdicts for the structural conditions.

    ``x_box = ((x_lo, y_lo), (x_hi, y_hi))``.  Returns a dict of
    :class:`Verdict` keyed by condition name: ``F0`` (monotone ``f0`` with
    ``|f0| <= eta(|z|)``), ``F1`` (``0 <= D_p^2 F1 <= C_* I`` and mixed bound),
    ``F0l`` (semi-convexity and linear growth), ``F1s`` (``D_p^2 F1 >= C I``)
    and ``bC`` (``C >= C_t C_b + 1``).
    """
    rng = np.random.default_rng(seed)
    lo, hi = np.asarray(x_box[0], float), np.asarray(x_box[1], float)
    gx = np.linspace(0, 1, grid_points)
    G = np.stack(np.meshgrid(gx, gx, indexing="ij"), -1).reshape(-1, 2)
    x = np.concatenate([lo + (hi - lo) * rng.random((n_samples, 2)), lo + (hi - lo) * G])
    n = len(x)
    z = rng.uniform(z_box[0], z_box[1], n)
    z2 = rng.uniform(z_box[0], z_box[1], n)
    p = rng.uniform(p_box[0], p_box[1], (n, 2))
    tol = 1e-10
    out = {}

    # (F0)
    f1, f2 = spec.f0(x, z), spec.f0(x, z2)
    mono = (f1 - f2) * (z - z2)
    grow = np.abs(f1) - spec.eta(np.abs(z))
    s_mono = mono / (1 + np.abs(z - z2) ** 2)
    worst = float(min(np.min(s_mono), -np.max(grow)))
    k = int(np.argmin(s_mono)) if np.min(s_mono) < -tol else int(np.argmax(grow))
    out["F0"] = Verdict("F0", bool(np.min(s_mono) >= -tol and np.max(grow) <= tol), worst,
                        {"x": x[k], "z": z[k], "z_other": z2[k]})

    # (F1)
    Q = spec.hessP_F1(x, p)
    ev = np.linalg.eigvalsh(np.asarray(Q))
    m = np.abs(spec.mixed_F1(x, p))
    mix_excess = np.max(m, axis=-1) - spec.C_star * (np.linalg.norm(p, axis=-1) + 1)
    f1_worst = float(min(np.min(ev[:, 0]), spec.C_star - np.max(ev[:, 1]), -np.max(mix_excess)))
    k = int(np.argmin(np.minimum(ev[:, 0], spec.C_star - ev[:, 1])))
    if np.max(mix_excess) > tol:
        k = int(np.argmax(mix_excess))
    out["F1"] = Verdict("F1", f1_worst >= -tol, f1_worst, {"x": x[k], "p": p[k]})

    # (F0l)
    dfz = spec.dz_f0(x, z)
    lin = np.abs(f1) - spec.C_l * (1 + np.abs(z))
    w0l = float(min(np.min(dfz) + spec.C_b, -np.max(lin)))
    k = int(np.argmin(dfz)) if np.min(dfz) + spec.C_b < -1e-6 else int(np.argmax(lin))
    out["F0l"] = Verdict("F0l", bool(np.min(dfz) >= -spec.C_b - 1e-6 and np.max(lin) <= tol), w0l,
                         {"x": x[k], "z": z[k]})

    # (F1s)
    w1s = float(min(np.min(ev[:, 0]) - spec.C_under, spec.C_star - np.max(ev[:, 1]),
                    -np.max(mix_excess)))
    k = int(np.argmin(ev[:, 0]))
    out["F1s"] = Verdict("F1s", w1s >= -tol, w1s, {"x": x[k], "p": p[k]})

    # (bC)
    margin = spec.C_under - (C_t * spec.C_b + 1.0)
    out["bC"] = Verdict("bC", margin >= 0, margin, {}, note=f"C_t = {C_t:g}")
    return out


def detect_C_phi(disc: Discretization, phi: np.ndarray, bc=None, delta: float = 1e-6) -> int:
    """0 when the smallest Hessian eigenvalue of ``phi`` over the disk nodes is
    at least ``delta`` (discretely uniformly convex), 1 otherwise."""
    ops = operators(disc)
    ub = boundary_vector(disc, bc, phi)
    h11, h12, h22 = ops.hessian_vec(phi[disc.interior], ub)
    lam = 0.5 * (h11 + h22) - np.sqrt(0.25 * (h11 - h22) ** 2 + h12**2)
    return 0 if float(np.min(lam)) >= delta else 1
