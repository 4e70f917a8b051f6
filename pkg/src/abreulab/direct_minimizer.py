"""Direct minimisation of the discrete ``J`` over the discrete admissible set.

Unknowns are the values at the inner-region nodes; every other disk node is
pinned to ``phi``.  Admissibility is the polyhedral cone of nonnegative
second differences ``v(x+e) - 2 v(x) + v(x-e) >= 0`` over the four stencil
directions at every disk node whose two arms stay in the disk (the same rows
the chord envelope works with).  The cone is handled by ADMM: the stacked
differences are split off, projected onto the nonnegative orthant, and the
objective step is a proximal Newton solve (exact in one step when ``F`` is
quadratic).  For quadratic ``F`` the ADMM iterate is finally polished by an
equality-constrained solve on the detected active set.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import linprog

from .convexity import DirectionSet, _shift, chord_envelope, is_discretely_convex
from .fields import boundary_vector, operators
from .geometry import Discretization
from .lagrangian import LagrangianSpec

__all__ = [
    "DirectOptions",
    "DirectProblem",
    "DirectResult",
    "solve_direct",
    "uniqueness_probe",
    "objective_and_subgradient",
]

log = logging.getLogger(__name__)


@dataclass
class DirectOptions:
    penalty: float = 1.0
    tol_primal: float = 1e-8
    tol_dual: float = 1e-8
    max_iter: int = 50000
    directions: DirectionSet = field(default_factory=DirectionSet.default)
    restarts: int = 5
    relaxation: float = 1.6
    adapt_every: int = 50
    polish: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.penalty > 0:
            raise ValueError("ADMM penalty must be positive")
        if not 0 < self.relaxation < 2:
            raise ValueError("relaxation must lie in (0, 2)")
        if self.restarts < 1:
            raise ValueError("need at least one restart")


def _nodes(disc, data):
    return disc.sample(data) if callable(data) else np.asarray(data, dtype=float)


class DirectProblem:
    """Sparse data of the discrete problem for one ``(disc, spec, phi)``."""

    def __init__(self, disc: Discretization, spec: LagrangianSpec, phi, dirs: DirectionSet | None = None):
        self.disc = disc
        self.spec = spec
        self.dirs = dirs or DirectionSet.default()
        self.phi = _nodes(disc, phi)
        self.phi_feet = boundary_vector(disc, phi, self.phi)
        interior = disc.interior
        free = disc.mask("omega0")
        self.free_mask = free
        fi = free[interior]
        self.n_free = int(fi.sum())
        N = disc.n_interior
        # interior vector = P @ v + p0
        cols = np.flatnonzero(fi)
        self.P = sp.csr_matrix((np.ones(len(cols)), (cols, np.arange(len(cols)))), shape=(N, len(cols)))
        p0 = self.phi[interior].copy()
        p0[fi] = 0.0
        self.p0 = p0
        # objective rows: nodes carrying inner-region weight
        w = disc.weights_omega0[interior]
        rows = np.flatnonzero(w > 0)
        self.rows = rows
        self.w = w[rows]
        self.x = disc.interior_points[rows]
        ops = operators(disc)
        S = sp.csr_matrix((np.ones(len(rows)), (np.arange(len(rows)), rows)), shape=(len(rows), N))
        self.S = (S @ self.P).tocsr()
        self.s0 = S @ p0
        self.Gx = (ops.Gx.A[rows] @ self.P).tocsr()
        self.Gy = (ops.Gy.A[rows] @ self.P).tocsr()
        self.gx0 = ops.Gx.A[rows] @ p0 + ops.Gx.B[rows] @ self.phi_feet
        self.gy0 = ops.Gy.A[rows] @ p0 + ops.Gy.B[rows] @ self.phi_feet
        self.C, self.c0, self.cone_rows = self._cone(disc, interior, fi, p0)
        self.CtC = (self.C.T @ self.C).tocsc()

    def _cone(self, disc, interior, fi, p0):
        idx = disc.index
        r_, c_, v_ = [], [], []
        meta = []
        row = 0
        free_grid = self.free_mask
        for e in self.dirs:
            em = (-e[0], -e[1])
            ok = interior & _shift(interior, e, False) & _shift(interior, em, False)
            touch = free_grid | _shift(free_grid, e, False) | _shift(free_grid, em, False)
            sel = np.argwhere(ok & touch)
            for i, j in sel:
                for (di, dj), c in (((0, 0), -2.0), (e, 1.0), (em, 1.0)):
                    r_.append(row)
                    c_.append(idx[i + di, j + dj])
                    v_.append(c)
                meta.append((i, j, e))
                row += 1
        Cfull = sp.csr_matrix((v_, (r_, c_)), shape=(row, disc.n_interior))
        return (Cfull @ self.P).tocsr(), Cfull @ p0, meta

    # -- field <-> vector ----------------------------------------------------------
    def to_field(self, v: np.ndarray) -> np.ndarray:
        out = self.phi.copy()
        out[self.free_mask] = v
        return np.where(self.disc.interior, out, np.nan)

    def from_field(self, f: np.ndarray) -> np.ndarray:
        return np.asarray(f, dtype=float)[self.free_mask]

    # -- objective -----------------------------------------------------------------
    def _zp(self, v):
        z = self.S @ v + self.s0
        p = np.stack([self.Gx @ v + self.gx0, self.Gy @ v + self.gy0], -1)
        return z, p

    def value(self, v) -> float:
        z, p = self._zp(v)
        return float(np.sum(self.w * self.spec.F(self.x, z, p)))

    def gradient(self, v) -> np.ndarray:
        z, p = self._zp(v)
        fz = self.w * self.spec.f0(self.x, z)
        gp = self.w[:, None] * self.spec.gradP_F1(self.x, p)
        return self.S.T @ fz + self.Gx.T @ gp[:, 0] + self.Gy.T @ gp[:, 1]

    def hessian(self, v) -> sp.csc_matrix:
        z, p = self._zp(v)
        dz = self.w * self.spec.dz_f0(self.x, z)
        Q = self.w[:, None, None] * self.spec.hessP_F1(self.x, p)
        Gx, Gy = self.Gx, self.Gy
        H = (self.S.T @ sp.diags(dz) @ self.S + Gx.T @ sp.diags(Q[:, 0, 0]) @ Gx
             + Gx.T @ sp.diags(Q[:, 0, 1]) @ Gy + Gy.T @ sp.diags(Q[:, 1, 0]) @ Gx
             + Gy.T @ sp.diags(Q[:, 1, 1]) @ Gy)
        return H.tocsc()

    def cone_values(self, v) -> np.ndarray:
        return self.C @ v + self.c0


def objective_and_subgradient(disc: Discretization, spec: LagrangianSpec, v: np.ndarray, phi,
                              problem: DirectProblem | None = None):
    """``(J(v), dJ/dv)`` with the gradient as a node field on the inner region
    (zero at pinned nodes, nan outside the disk)."""
    pb = problem or DirectProblem(disc, spec, phi)
    vv = pb.from_field(v)
    g = np.zeros(disc.grid.shape)
    g[pb.free_mask] = pb.gradient(vv)
    return pb.value(vv), np.where(disc.interior, g, np.nan)


@dataclass
class DirectResult:
    v: np.ndarray
    J: float
    certificate: dict
    converged: bool
    history: list = field(default_factory=list, repr=False)

    def __iter__(self):
        return iter((self.v, self.J, self.certificate))


def _admm(pb: DirectProblem, opts: DirectOptions, v0: np.ndarray):
    spec = pb.spec
    C, c0, CtC = pb.C, pb.c0, pb.CtC
    rho = opts.penalty
    alpha = opts.relaxation
    v = v0.copy()
    s = np.maximum(C @ v + c0, 0.0)
    lam = np.zeros_like(s)
    H = pb.hessian(v)
    g0 = pb.gradient(v) - H @ v
    lu = spla.splu((H + rho * CtC).tocsc())
    history = []
    r_norm = d_norm = np.inf
    it = 0
    for it in range(1, opts.max_iter + 1):
        if spec.quadratic:
            v = lu.solve(-g0 + rho * (C.T @ (s - lam - c0)))
        else:
            for _ in range(20):
                H = pb.hessian(v)
                rhs = pb.gradient(v) + rho * (C.T @ (C @ v + c0 - s + lam))
                dv = spla.spsolve((H + rho * CtC).tocsc(), -rhs)
                v = v + dv
                if np.max(np.abs(dv)) < 1e-13 * (1 + np.max(np.abs(v))):
                    break
        Cv = C @ v + c0
        xh = alpha * Cv + (1 - alpha) * s
        s_old = s
        s = np.maximum(xh + lam, 0.0)
        lam = lam + xh - s
        r_norm = float(np.max(np.abs(Cv - s))) if s.size else 0.0
        d_norm = float(rho * np.max(np.abs(C.T @ (s - s_old)))) if s.size else 0.0
        if it % 10 == 0:
            history.append((it, r_norm, d_norm))
        if r_norm <= opts.tol_primal and d_norm <= opts.tol_dual:
            break
        if opts.adapt_every and it % opts.adapt_every == 0:
            scale = 0.0
            if r_norm > 10 * d_norm:
                scale = 2.0
            elif d_norm > 10 * r_norm:
                scale = 0.5
            if scale:
                rho *= scale
                lam /= scale
                if spec.quadratic:
                    lu = spla.splu((H + rho * CtC).tocsc())
    converged = r_norm <= opts.tol_primal and d_norm <= opts.tol_dual
    # multipliers of the constraints C v + c0 >= 0 are -rho * lam >= 0
    return v, s, -lam * rho, r_norm, d_norm, it, converged, history


def _polish(pb: DirectProblem, v, s, y):
    """Solve the KKT system on the active set ``{s = 0, y > 0}``."""
    H = pb.hessian(v)
    g0 = pb.gradient(v) - H @ v
    Cv = pb.cone_values(v)
    scale = 1e-7 * (1 + np.max(np.abs(Cv))) if Cv.size else 0.0
    active = np.flatnonzero((s <= scale) & (y > 0))
    CA = pb.C[active]
    n = pb.n_free
    reg = 1e-12
    K = sp.bmat([[H + reg * sp.eye(n), -CA.T], [CA, -reg * sp.eye(len(active))]], format="csc")
    rhs = np.concatenate([-g0, -pb.c0[active]])
    try:
        sol = spla.spsolve(K, rhs)
    except Exception:  # singular KKT matrix: keep the ADMM point
        return None
    if not np.all(np.isfinite(sol)):
        return None
    # one refinement step against the unregularised system
    K0 = sp.bmat([[H, -CA.T], [CA, None]], format="csc")
    sol = sol + spla.spsolve(K, rhs - K0 @ sol)
    vp, mu = sol[:n], sol[n:]
    cone = pb.cone_values(vp)
    if cone.size and np.min(cone) < -1e-12 * (1 + np.max(np.abs(cone))):
        return None
    if mu.size and np.min(mu) < -1e-8 * (1 + np.max(np.abs(mu))):
        # degenerate active set (more active rows than unknowns): the
        # multipliers are not unique, look for a nonnegative choice
        lp = linprog(np.zeros(len(active)), A_eq=CA.T.tocsc(), b_eq=H @ vp + g0,
                     bounds=(0, None), method="highs")
        if lp.status != 0:
            return None
        mu = lp.x
    stat = H @ vp + g0 - CA.T @ mu
    if np.max(np.abs(stat)) > 1e-9 * (1 + np.max(np.abs(g0))):
        return None
    return vp


def solve_direct(disc: Discretization, spec: LagrangianSpec, phi, opts: DirectOptions | None = None,
                 v0: np.ndarray | None = None, problem: DirectProblem | None = None) -> DirectResult:
    """Minimise the discrete ``J`` over the discrete admissible set.

    Returns a :class:`DirectResult`; unpacking gives ``(v*, J*, certificate)``.
    """
    opts = opts or DirectOptions()
    pb = problem or DirectProblem(disc, spec, phi, opts.directions)
    start = pb.from_field(pb.phi) if v0 is None else pb.from_field(v0)
    v, s, y, r_norm, d_norm, its, converged, hist = _admm(pb, opts, start)
    polished = False
    if opts.polish and spec.quadratic:
        vp = _polish(pb, v, s, y)
        # a KKT point of a convex quadratic program is optimal
        if vp is not None:
            v = vp
            polished = True
    field_v = pb.to_field(v)
    cone = pb.cone_values(v)
    ok8, worst8 = is_discretely_convex(disc, field_v, DirectionSet.extended(), tol=0.0)
    cert = {
        "J": pb.value(v),
        "primal_res": r_norm,
        "dual_res": d_norm,
        "convexity_worst": float(worst8),
        "cone_worst": float(min(0.0, np.min(cone))) if cone.size else 0.0,
        "restarts_spread": None,
        "iterations": int(its),
        "converged": bool(converged or polished),
        "polished": polished,
    }
    if not cert["converged"]:
        log.warning("ADMM did not converge: primal %.2e dual %.2e", r_norm, d_norm)
    return DirectResult(field_v, cert["J"], cert, cert["converged"], hist)


def _random_admissible(pb: DirectProblem, rng, env: np.ndarray) -> np.ndarray:
    t = rng.uniform(0.0, 1.0)
    return t * env + (1 - t) * pb.phi


def uniqueness_probe(disc: Discretization, spec: LagrangianSpec, phi, opts: DirectOptions | None = None,
                     n_restarts: int | None = None, return_runs: bool = False, workers: int = 1):
    """Max pairwise sup-distance between minimisers started from random
    admissible points (convex combinations of ``phi`` and its chord envelope).

    Starting points are drawn sequentially from ``opts.seed`` before any run,
    so ``workers > 1`` (a thread pool) gives the same numbers.
    """
    opts = opts or DirectOptions()
    n = n_restarts or opts.restarts
    pb = DirectProblem(disc, spec, phi, opts.directions)
    env = chord_envelope(disc, pb.phi, opts.directions)
    rng = np.random.default_rng(opts.seed)
    starts = [_random_admissible(pb, rng, env) for _ in range(n)]

    def run(v0):
        return solve_direct(disc, spec, phi, opts, v0=v0, problem=pb)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(run, starts))
    else:
        runs = [run(v0) for v0 in starts]
    inner = pb.free_mask
    spread = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            spread = max(spread, float(np.max(np.abs(runs[i].v[inner] - runs[j].v[inner]))))
    if return_runs:
        return spread, runs
    return spread
