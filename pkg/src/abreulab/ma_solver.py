"""Dirichlet Monge-Ampere and linearized Monge-Ampere solvers.

Both use the nine-point stencil of :mod:`abreulab.fields`.  The nonlinear
solver is Newton's method on ``det D^2 u = g`` whose Jacobian is the
cofactor operator ``U^{ij} d_ij``, with backtracking on the max-norm
residual and a convexity guard on every trial iterate.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .convexity import lower_convex_envelope, second_differences, DirectionSet
from .fields import boundary_vector, operators
from .geometry import Discretization

__all__ = [
    "MASolveOptions",
    "MAStagnationError",
    "IndefiniteOperatorError",
    "LinearizedResult",
    "solve_ma_dirichlet",
    "solve_linearized_ma",
    "enforce_convexity",
    "ma_residual",
]

log = logging.getLogger(__name__)


@dataclass
class MASolveOptions:
    tol: float = 1e-10
    max_iter: int = 60
    backtrack: float = 0.5
    hess_floor: float = 1e-8
    damping: float = 1.0
    max_linesearch: int = 30
    stagnation_rounds: int = 5

    def __post_init__(self):
        if not (self.tol > 0 and self.hess_floor > 0):
            raise ValueError("tol and hess_floor must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")


class MAStagnationError(RuntimeError):
    """Newton made no progress; carries the last iterate and residual history."""

    def __init__(self, msg, u, history):
        super().__init__(msg)
        self.u = u
        self.history = history


class IndefiniteOperatorError(RuntimeError):
    def __init__(self, msg, min_eig):
        super().__init__(msg)
        self.min_eig = min_eig


def _hess(ops, u, ub):
    return ops.hessian_vec(u, ub)


def ma_residual(disc: Discretization, u: np.ndarray, g: np.ndarray, bc) -> np.ndarray:
    """Nodewise ``det D^2 u - g`` at interior nodes (flat)."""
    ops = operators(disc)
    ub = boundary_vector(disc, bc, u)
    h11, h12, h22 = ops.hessian_vec(u[disc.interior], ub)
    gi = g[disc.interior] if np.ndim(g) == 2 else np.broadcast_to(g, h11.shape)
    return h11 * h22 - h12 * h12 - gi


def _as_interior(disc, g):
    if np.ndim(g) == 0:
        return np.full(disc.n_interior, float(g))
    g = np.asarray(g, dtype=float)
    return g[disc.interior] if g.shape == disc.grid.shape else g


def _scatter(disc, v):
    out = np.full(disc.grid.shape, np.nan)
    out[disc.interior] = v
    return out


def solve_ma_dirichlet(disc: Discretization, g, bc, opts: MASolveOptions | None = None,
                       u0: np.ndarray | None = None, return_info: bool = False):
    """Convex solution of ``det D^2 u = g`` in the disk with ``u = bc`` on the circle.

    ``g`` is a node array or scalar, ``bc`` boundary data (callable, foot
    values or scalar).  The initial guess solves ``Laplace u = 2 sqrt(g)``
    unless ``u0`` is given.
    """
    opts = opts or MASolveOptions()
    ops = operators(disc)
    gi = _as_interior(disc, g)
    if np.any(gi <= 0) or not np.all(np.isfinite(gi)):
        raise ValueError("right-hand side must be positive and finite")
    ub = boundary_vector(disc, bc)
    Dxx, Dxy, Dyy = ops.Dxx, ops.Dxy, ops.Dyy

    def hess(v):
        return (Dxx.A @ v + Dxx.B @ ub, Dxy.A @ v + Dxy.B @ ub, Dyy.A @ v + Dyy.B @ ub)

    def residual(v):
        a, b, c = hess(v)
        return a * c - b * b - gi, (a, b, c)

    if u0 is None:
        L = (Dxx.A + Dyy.A).tocsc()
        rhs = 2 * np.sqrt(gi) - (Dxx.B + Dyy.B) @ ub
        u = spla.spsolve(L, rhs)
    else:
        u = np.asarray(u0, dtype=float)
        u = u[disc.interior] if u.shape == disc.grid.shape else u.copy()
    scale = 1.0 + np.max(np.abs(gi))
    r, H = residual(u)
    history = [float(np.max(np.abs(r)))]
    stalled = 0
    modified_any = False
    for it in range(opts.max_iter):
        if history[-1] <= opts.tol * scale:
            break
        a, b, c = H
        if np.min(a) < opts.hess_floor or np.min(c) < opts.hess_floor:
            u_full = enforce_convexity(disc, _scatter(disc, u), ub)
            if u_full[1]:
                modified_any = True
                u = u_full[0][disc.interior]
                r, H = residual(u)
                a, b, c = H
        # cofactor linearisation: d(det) = u_yy d_xx - 2 u_xy d_xy + u_xx d_yy
        c11 = np.maximum(c, opts.hess_floor)
        c22 = np.maximum(a, opts.hess_floor)
        J = (sp.diags(c11) @ Dxx.A - sp.diags(2 * b) @ Dxy.A + sp.diags(c22) @ Dyy.A).tocsc()
        du = spla.spsolve(J, -r)
        t = opts.damping
        accepted = False
        for _ in range(opts.max_linesearch):
            trial = u + t * du
            rt, Ht = residual(trial)
            ok_cvx = np.min(Ht[0]) > 0 and np.min(Ht[2]) > 0 and np.min(Ht[0] * Ht[2] - Ht[1] ** 2) > 0
            nr = float(np.max(np.abs(rt)))
            if ok_cvx and nr < (1 - 1e-4 * t) * history[-1]:
                accepted = True
                break
            t *= opts.backtrack
        if accepted:
            u, r, H = trial, rt, Ht
            history.append(nr)
            stalled = 0
        else:
            stalled += 1
            history.append(history[-1])
            if stalled >= opts.stagnation_rounds:
                raise MAStagnationError("Newton stagnated in the Monge-Ampere solve",
                                        _scatter(disc, u), history)
    else:
        if history[-1] > opts.tol * scale:
            raise MAStagnationError(
                f"Monge-Ampere Newton did not converge in {opts.max_iter} iterations "
                f"(residual {history[-1]:.3e})", _scatter(disc, u), history)
    out = _scatter(disc, u)
    if return_info:
        return out, {"iterations": len(history) - 1, "history": history,
                     "convexity_modified": modified_any}
    return out


@dataclass
class LinearizedResult:
    w: np.ndarray
    residual: float
    clamped: bool = False
    min_eig: np.ndarray | None = field(default=None, repr=False)


def solve_linearized_ma(disc: Discretization, U, r, bc, delta: float = 1e-12,
                        rtol: float = 1e-10, return_info: bool = False):
    """Solve ``U^{ij} w_ij = r`` with ``w = bc`` on the circle.

    ``U`` is a :class:`~abreulab.fields.SymMatrixField` (node arrays) or a tuple
    of flat interior arrays ``(U11, U12, U22)``.  Matrices whose smallest
    eigenvalue falls below ``delta`` are shifted up to it and the result is
    flagged; a non-finite or negative-definite field raises.
    """
    ops = operators(disc)
    if hasattr(U, "m11"):
        U11, U12, U22 = (np.asarray(m)[disc.interior] for m in (U.m11, U.m12, U.m22))
    else:
        U11, U12, U22 = (np.asarray(m, dtype=float) for m in U)
    half = 0.5 * (U11 + U22)
    mu = half - np.sqrt(0.25 * (U11 - U22) ** 2 + U12**2)
    if not np.all(np.isfinite(mu)) or np.any(U11 + U22 <= 0):
        raise IndefiniteOperatorError("coefficient matrix field is not positive definite",
                                      _scatter(disc, mu))
    clamped = bool(np.any(mu < delta))
    if clamped:
        shift = np.maximum(delta - mu, 0.0)
        U11 = U11 + shift
        U22 = U22 + shift
    ri = _as_interior(disc, r)
    wb = boundary_vector(disc, bc)
    A, B = ops.linear_operator(U11, U12, U22)
    rhs = ri - B @ wb
    w = spla.spsolve(A.tocsc(), rhs)
    res = float(np.linalg.norm(A @ w - rhs) / max(np.linalg.norm(rhs), 1e-300))
    if not np.all(np.isfinite(w)) or res > max(rtol, 1e-8):
        raise IndefiniteOperatorError(f"linear solve failed (relative residual {res:.2e})",
                                      _scatter(disc, mu))
    out = _scatter(disc, w)
    if return_info:
        return LinearizedResult(out, res, clamped, _scatter(disc, mu))
    return out


def enforce_convexity(disc: Discretization, u: np.ndarray, bc=None, dirs: DirectionSet | None = None):
    """Lower ``u`` to its largest discretely convex minorant where needed.

    Returns ``(u_new, modified)``; a convex input comes back unchanged.
    Boundary data is accepted for signature symmetry with the solvers but
    the chord sweeps act on node values only.
    """
    dirs = dirs or DirectionSet.default()
    d2 = second_differences(disc, u, dirs)
    worst = min((np.nanmin(v) if np.any(np.isfinite(v)) else 0.0) for v in d2.values())
    if worst >= 0:
        return u.copy(), False
    data = np.where(disc.interior, u, np.inf)
    env = lower_convex_envelope(disc, data, dirs)
    return np.where(disc.interior, env, np.nan), True
