"""The functionals ``J`` and ``J_eps``, the profit ``Phi``, and scalar diagnostics."""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .fields import boundary_vector, operators
from .geometry import Discretization
from .lagrangian import LagrangianSpec

__all__ = [
    "check_theta",
    "G_eval",
    "G_prime",
    "gradient_on",
    "J_eval",
    "J_eps_eval",
    "profit_phi",
    "eta_eps",
    "annulus_residual",
]


def check_theta(theta: float) -> float:
    theta = float(theta)
    if not 0.0 <= theta < 0.5:
        raise ValueError(f"theta must lie in [0, 1/2), got {theta}")
    return theta


def G_eval(t, theta: float):
    """``(t^theta - 1)/theta``, or ``log t`` for ``theta = 0``; ``t`` must be positive."""
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise ValueError("G is defined for t > 0 only")
    if theta == 0:
        return np.log(t)
    return np.expm1(theta * np.log(t)) / theta


def G_prime(t, theta: float):
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise ValueError("G is defined for t > 0 only")
    return t ** (theta - 1.0)


def gradient_on(disc: Discretization, v: np.ndarray, region_weights: np.ndarray, bc=None):
    """FD gradient at the nodes carrying positive ``region_weights``.

    Returns ``(sel, gx, gy)`` with ``sel`` a boolean over interior nodes.
    Boundary data is needed only if one of those stencils reaches the circle.
    """
    ops = operators(disc)
    sel = region_weights[disc.interior] > 0
    vi = v[disc.interior]
    if bc is None:
        touches = (abs(ops.Gx.B[sel]).sum() + abs(ops.Gy.B[sel]).sum()) > 0
        ub = boundary_vector(disc, None, v) if touches else np.zeros(len(disc.feet))
    else:
        ub = boundary_vector(disc, bc, v)
    gx = ops.Gx.A[sel] @ vi + ops.Gx.B[sel] @ ub
    gy = ops.Gy.A[sel] @ vi + ops.Gy.B[sel] @ ub
    return sel, gx, gy


def J_eval(disc: Discretization, v: np.ndarray, spec: LagrangianSpec, bc=None) -> float:
    """Quadrature of ``F(x, v, Dv)`` over the inner region."""
    w = disc.weights_omega0
    sel, gx, gy = gradient_on(disc, v, w, bc)
    x = disc.interior_points[sel]
    z = v[disc.interior][sel]
    F = spec.F(x, z, np.stack([gx, gy], -1))
    return float(np.sum(w[disc.interior][sel] * F))


def J_eps_eval(disc: Discretization, v: np.ndarray, spec: LagrangianSpec, utilde: np.ndarray,
               eps: float, theta: float, bc=None) -> float:
    """``J(v) + (1/2eps) int_annulus (v - utilde)^2 - eps int_Omega G(det D^2 v)``.

    Returns ``inf`` when ``det D^2 v <= 0`` at some interior node, or when a
    diagonal Hessian entry is negative there (not convex).
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    theta = check_theta(theta)
    ops = operators(disc)
    ub = boundary_vector(disc, bc, v)
    h11, h12, h22 = ops.hessian_vec(v[disc.interior], ub)
    det = h11 * h22 - h12 * h12
    if np.any(~(det > 0)) or np.any(h11 < 0):
        return float("inf")
    wA = disc.weights_annulus
    mA = wA > 0
    pen = float(np.sum(wA[mA] * (v[mA] - utilde[mA]) ** 2)) / (2 * eps)
    wO = disc.weights_omega[disc.interior]
    logterm = float(np.sum(wO * G_eval(det, theta)))
    return J_eval(disc, v, spec, bc) + pen - eps * logterm


def profit_phi(disc: Discretization, u: np.ndarray, gamma, bc=None) -> float:
    """Monopolist profit ``int_{Omega0} (x.Du - |Du|^2/2 - u) gamma dx``."""
    w = disc.weights_omega0
    sel, gx, gy = gradient_on(disc, u, w, bc)
    x = disc.interior_points[sel]
    p = np.stack([gx, gy], -1)
    g = gamma(x) if callable(gamma) else np.broadcast_to(np.asarray(gamma, float), (len(x),))
    val = (np.sum(x * p, -1) - 0.5 * np.sum(p * p, -1) - u[disc.interior][sel]) * g
    return float(np.sum(w[disc.interior][sel] * val))


def _boundary_normal_derivative(disc: Discretization, u: np.ndarray, bc, n_samples: int | None):
    """Outer normal derivative at equispaced circle points by a local
    least-squares quadratic fit, with the boundary value imposed exactly."""
    om = disc.pair.omega
    h = disc.h
    if n_samples is None:
        n_samples = max(64, int(np.ceil(2 * np.pi * om.radius / h)))
    y = om.boundary_samples(n_samples)
    nu = (y - np.asarray(om.center)) / om.radius
    pts = disc.interior_points
    vals = u[disc.interior]
    if callable(bc):
        by = np.asarray(bc(y), dtype=float)
    elif bc is None:
        by = None
    else:
        by = np.broadcast_to(np.asarray(bc, float), (n_samples,))
    tree = cKDTree(pts)
    hood = tree.query_ball_point(y, r=3.0 * h)
    out = np.empty(n_samples)
    for k, nb in enumerate(hood):
        d = pts[nb] - y[k]
        if by is None:
            M = np.column_stack([np.ones(len(nb)), d, 0.5 * d[:, 0] ** 2, d[:, 0] * d[:, 1],
                                 0.5 * d[:, 1] ** 2])
            coef = np.linalg.lstsq(M, vals[nb], rcond=None)[0]
            g = coef[1:3]
        else:
            M = np.column_stack([d, 0.5 * d[:, 0] ** 2, d[:, 0] * d[:, 1], 0.5 * d[:, 1] ** 2])
            coef = np.linalg.lstsq(M, vals[nb] - by[k], rcond=None)[0]
            g = coef[0:2]
        out[k] = g @ nu[k]
    return out, 2 * np.pi * om.radius / n_samples


def eta_eps(disc: Discretization, u: np.ndarray, eps: float, bc=None,
            n_samples: int | None = None) -> float:
    """``eps^{1/2} (int_{dOmega} (u_nu^+)^2 dS)^{1/2}``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    un, ds = _boundary_normal_derivative(disc, u, bc, n_samples)
    return float(np.sqrt(eps) * np.sqrt(np.sum(np.maximum(un, 0.0) ** 2) * ds))


def annulus_residual(disc: Discretization, u: np.ndarray, utilde: np.ndarray) -> float:
    """Quadrature of ``(u - utilde)^2`` over the part of the disk outside the inner region."""
    w = disc.weights_annulus
    m = w > 0
    return float(np.sum(w[m] * (u[m] - utilde[m]) ** 2))
