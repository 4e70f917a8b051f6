"""The singular Abreu epsilon-scheme.

For each ``eps`` the discrete second boundary value problem

    eps * U^{ij} w_ij = f_eps(u)      (U = cofactor of D^2 u)
    det D^2 u = w^{1/(theta-1)}
    u = phi, w = psi on the circle

is solved on the nine-point stencil, starting from
``utilde = phi + C_phi eps^a (e^rho - 1)``.  Two solvers share the same
discrete equations: :func:`outer_step` is the damped splitting (w-solve,
then Monge-Ampere solve), and the default path of :func:`solve_for_eps` is
Newton's method on the coupled pair, which stays robust when ``eps`` is
small and the splitting loop stops contracting.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .convexity import DirectionSet, is_discretely_convex
from .fields import boundary_vector, operators, SymMatrixField
from .functionals import (G_prime, J_eps_eval, J_eval, annulus_residual, check_theta,
                          eta_eps, gradient_on)
from .geometry import Discretization, rho_eval
from .lagrangian import LagrangianSpec, assemble_f_eps, detect_C_phi, interior_rhs
from .ma_solver import MASolveOptions, solve_linearized_ma, solve_ma_dirichlet

__all__ = [
    "SchemeParams",
    "SchemeState",
    "EpsReport",
    "SchemeError",
    "default_schedule",
    "build_tilde_u",
    "init_state",
    "outer_step",
    "scheme_residuals",
    "solve_for_eps",
    "continuation_sweep",
    "SWEEP_COLUMNS",
    "write_sweep_csv",
    "read_sweep_csv",
    "check_invariants",
]

log = logging.getLogger(__name__)

SWEEP_COLUMNS = ("eps", "iters", "res_u", "res_w", "eta", "r_annulus", "sup_u", "min_det", "J",
                 "J_eps", "dist_ref", "C_d", "flags")
SWEEP_SCHEMA_VERSION = 1


class SchemeError(RuntimeError):
    def __init__(self, msg, eps=None, iteration=None):
        super().__init__(f"{msg} (eps={eps}, iteration={iteration})")
        self.eps = eps
        self.iteration = iteration


def default_schedule() -> list[float]:
    """Geometric 1e-1 -> 1e-3 with ratio 1/sqrt(10)."""
    return [10.0 ** (-1 - 0.5 * k) for k in range(5)]


@dataclass
class SchemeParams:
    theta: float = 0.0
    psi: Callable | float = 1.0
    a: float = 1.0 / 12.0
    schedule: Sequence[float] = field(default_factory=default_schedule)
    damping: float = 0.5
    tol: float = 1e-8
    max_outer: int = 200
    w_min: float = 1e-8
    C_phi: int | None = None
    method: str = "newton"
    compact_margin: float = 0.1
    det_floor: float = 1e-10

    def __post_init__(self):
        check_theta(self.theta)
        if not 0 < self.a <= 1.0 / 12.0 + 1e-15:
            raise ValueError("exponent a must lie in (0, 1/12]")
        s = np.asarray(self.schedule, dtype=float)
        if s.size == 0 or np.any(s <= 0) or np.any(np.diff(s) >= 0):
            raise ValueError("eps schedule must be positive and strictly decreasing")
        self.schedule = [float(v) for v in s]
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.C_phi not in (None, 0, 1):
            raise ValueError("C_phi must be 0, 1 or None (auto)")
        if self.method not in ("newton", "splitting"):
            raise ValueError("method must be 'newton' or 'splitting'")
        if not callable(self.psi) and not float(self.psi) > 0:
            raise ValueError("psi must be positive")

    @property
    def inv_exp(self) -> float:
        return 1.0 / (self.theta - 1.0)


@dataclass
class SchemeState:
    u: np.ndarray
    w: np.ndarray
    utilde: np.ndarray
    eps: float
    theta: float
    iteration: int = 0
    history: list = field(default_factory=list)
    w_clamped: bool = False


@dataclass
class EpsReport:
    eps: float
    iters: int
    res_u: float
    res_w: float
    eta: float
    r_annulus: float
    sup_u: float
    min_det: float
    J: float
    J_eps: float
    dist_ref: float
    C_d: float
    flags: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return "nonconverged" not in self.flags and "failed" not in self.flags

    def row(self) -> dict:
        d = asdict(self)
        d["flags"] = ";".join(self.flags)
        return d


# ---------------------------------------------------------------------------
# boundary data helpers

def _feet(disc: Discretization, data) -> np.ndarray:
    return boundary_vector(disc, data)


def _nodes(disc: Discretization, data) -> np.ndarray:
    if callable(data):
        return disc.sample(data)
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 0:
        return np.where(disc.interior, float(arr), np.nan)
    return arr


def build_tilde_u(disc: Discretization, phi, eps: float, C_phi: int, a: float = 1.0 / 12.0) -> np.ndarray:
    """``phi + C_phi eps^a (e^rho - 1)`` at the nodes (nan outside)."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    if C_phi not in (0, 1):
        raise ValueError("C_phi must be 0 or 1")
    base = _nodes(disc, phi)
    if C_phi == 0:
        return base.copy()
    rho, _, _ = rho_eval(disc.pair.omega, disc.grid.points)
    bump = np.expm1(rho)
    return np.where(disc.interior, base + eps**a * bump, np.nan)


def _hess(disc, u, ub):
    ops = operators(disc)
    return ops.hessian_vec(u[disc.interior] if u.ndim == 2 else u, ub)


def init_state(disc: Discretization, phi, params: SchemeParams, eps: float,
               C_phi: int | None = None) -> SchemeState:
    """``u0 = utilde`` and ``w0 = (det D^2 utilde)^{theta-1}``."""
    if C_phi is None:
        C_phi = params.C_phi if params.C_phi is not None else detect_C_phi(disc, _nodes(disc, phi),
                                                                            _feet(disc, phi))
    ut = build_tilde_u(disc, phi, eps, C_phi, params.a)
    h11, h12, h22 = _hess(disc, ut, _feet(disc, phi))
    det = h11 * h22 - h12 * h12
    if np.any(det <= 0):
        raise SchemeError("det D^2 utilde is not positive; the start is ill-posed", eps, 0)
    w = np.full(disc.grid.shape, np.nan)
    w[disc.interior] = G_prime(det, params.theta)
    return SchemeState(ut.copy(), w, ut, eps, params.theta)


# ---------------------------------------------------------------------------
# residuals

def scheme_residuals(disc: Discretization, spec: LagrangianSpec, state: SchemeState, phi_feet,
                     psi_feet, params: SchemeParams):
    """Flat residuals ``(A, B)`` of the w-equation and the u-equation, and
    their scale-relative max norms ``(res_u, res_w)``."""
    ops = operators(disc)
    ui = state.u[disc.interior]
    wi = state.w[disc.interior]
    h11, h12, h22 = ops.hessian_vec(ui, phi_feet)
    f = assemble_f_eps(disc, spec, state.u, state.utilde, state.eps, phi_feet)[disc.interior]
    L, Lb = ops.linear_operator(h22, -h12, h11)
    A = state.eps * (L @ wi + Lb @ psi_feet) - f
    g = np.maximum(wi, params.w_min) ** params.inv_exp
    B = h11 * h22 - h12 * h12 - g
    res_u = float(np.max(np.abs(B)) / (1 + np.max(np.abs(g))))
    res_w = float(np.max(np.abs(A)) / (1 + np.max(np.abs(f))))
    return A, B, res_u, res_w


# ---------------------------------------------------------------------------
# splitting

def outer_step(disc: Discretization, state: SchemeState, spec: LagrangianSpec, params: SchemeParams,
               phi, ma_opts: MASolveOptions | None = None) -> SchemeState:
    """One damped splitting step: w-solve with the current cofactor, then
    the Monge-Ampere solve for ``u`` with ``g = w^{1/(theta-1)}``."""
    lam = params.damping
    phi_feet = _feet(disc, phi)
    psi = params.psi
    f = assemble_f_eps(disc, spec, state.u, state.utilde, state.eps, phi_feet)
    ops = operators(disc)
    h11, h12, h22 = ops.hessian_vec(state.u[disc.interior], phi_feet)
    it = state.iteration
    try:
        wstar = solve_linearized_ma(disc, (h22, -h12, h11), f / state.eps, psi)
        clamped = bool(np.any(wstar[disc.interior] < params.w_min))
        w_new = (1 - lam) * state.w + lam * np.maximum(wstar, params.w_min)
        g = np.maximum(w_new, params.w_min) ** params.inv_exp
        u_new = solve_ma_dirichlet(disc, np.where(disc.interior, g, np.nan), phi, ma_opts,
                                   u0=state.u)
    except Exception as exc:  # keep eps and iteration for the caller
        raise SchemeError(f"inner solve failed: {exc}", state.eps, it) from exc
    new = SchemeState(u_new, w_new, state.utilde, state.eps, state.theta, it + 1,
                      list(state.history), clamped)
    _, _, ru, rw = scheme_residuals(disc, spec, new, phi_feet, _feet(disc, psi), params)
    new.history.append((ru, rw))
    return new


# ---------------------------------------------------------------------------
# coupled Newton

def _f_jacobian(disc, spec, u, phi_feet, eps, step=1e-6):
    """Sparse derivative of the interior-node vector ``f_eps(u)`` in ``u``."""
    ops = operators(disc)
    N = disc.n_interior
    ui = u[disc.interior]
    inner = disc.mask("omega0")[disc.interior]
    d = np.where(inner, 0.0, 1.0 / eps)
    J = sp.diags(d)
    if not np.any(inner):
        return J.tocsr()
    x = disc.interior_points[inner]
    z = ui[inner]
    gx, gy = ops.gradient_vec(ui, phi_feet)
    p = np.stack([gx[inner], gy[inner]], -1)
    H = tuple(c[inner] for c in ops.hessian_vec(ui, phi_feet))
    dz = np.zeros(N)
    dz[inner] = spec.dz_f0(x, z)
    dp = []
    for k in range(2):
        e = np.zeros(2)
        e[k] = step
        fp = interior_rhs(spec, x, z, p + e, H)
        fm = interior_rhs(spec, x, z, p - e, H)
        col = np.zeros(N)
        col[inner] = (fp - fm) / (2 * step)
        dp.append(col)
    Q = spec.hessP_F1(x, p) if spec.has_gradient_term else np.zeros((len(x), 2, 2))
    q11, q12, q22 = (np.zeros(N) for _ in range(3))
    q11[inner], q12[inner], q22[inner] = Q[:, 0, 0], Q[:, 0, 1], Q[:, 1, 1]
    Jin = (sp.diags(dz) + sp.diags(dp[0]) @ ops.Gx.A + sp.diags(dp[1]) @ ops.Gy.A
           - sp.diags(q11) @ ops.Dxx.A - sp.diags(2 * q12) @ ops.Dxy.A - sp.diags(q22) @ ops.Dyy.A)
    return (J + Jin).tocsr()


def _newton_residual(disc, spec, state, phi_feet, psi_feet, params):
    """Residuals used inside Newton: the w-equation as is and the
    u-equation in the scaled form ``det D^2 u * w^{-1/(theta-1)} - 1``."""
    ops = operators(disc)
    ui = state.u[disc.interior]
    wi = state.w[disc.interior]
    h11, h12, h22 = ops.hessian_vec(ui, phi_feet)
    f = assemble_f_eps(disc, spec, state.u, state.utilde, state.eps, phi_feet)[disc.interior]
    L, Lb = ops.linear_operator(h22, -h12, h11)
    A = state.eps * (L @ wi + Lb @ psi_feet) - f
    B = (h11 * h22 - h12 * h12) * wi ** (-params.inv_exp) - 1.0
    return A, B


def _newton_solve(disc, spec, state, phi_feet, psi_feet, params, max_iter):
    ops = operators(disc)
    Dxx, Dxy, Dyy = ops.Dxx.A, ops.Dxy.A, ops.Dyy.A
    N = disc.n_interior
    s = params.inv_exp
    eps = state.eps
    cur = SchemeState(state.u.copy(), state.w.copy(), state.utilde, eps, state.theta, 0, [], False)
    _, _, ru, rw = scheme_residuals(disc, spec, cur, phi_feet, psi_feet, params)
    A, B = _newton_residual(disc, spec, cur, phi_feet, psi_feet, params)
    history = [(ru, rw)]

    def merit(A, B):
        return float(A @ A + B @ B)

    m0 = merit(A, B)
    status = "converged" if max(ru, rw) <= params.tol else "nonconverged"
    it = 0
    tiny_steps = 0
    while status != "converged" and it < max_iter:
        it += 1
        ui = cur.u[disc.interior]
        wi = cur.w[disc.interior]
        h11, h12, h22 = ops.hessian_vec(ui, phi_feet)
        w11, w12, w22 = ops.hessian_vec(wi, psi_feet)
        det = h11 * h22 - h12 * h12
        L, _ = ops.linear_operator(h22, -h12, h11)
        Au = eps * (sp.diags(w11) @ Dyy - sp.diags(2 * w12) @ Dxy + sp.diags(w22) @ Dxx) \
            - _f_jacobian(disc, spec, cur.u, phi_feet, eps)
        # unknown sigma = log w keeps w positive along every step
        Aw = eps * L @ sp.diags(wi)
        ws = wi ** (-s)
        Bu = sp.diags(ws) @ (sp.diags(h22) @ Dxx - sp.diags(2 * h12) @ Dxy + sp.diags(h11) @ Dyy)
        Bw = sp.diags(-s * det * ws)
        Jac = sp.bmat([[Au, Aw], [Bu, Bw]], format="csc")
        try:
            step = spla.spsolve(Jac, -np.concatenate([A, B]))
        except Exception as exc:
            raise SchemeError(f"Newton linear solve failed: {exc}", eps, it) from exc
        if not np.all(np.isfinite(step)):
            status = "singular"
            break
        du, dsig = step[:N], step[N:]
        # cap the change of log w per step
        big = float(np.max(np.abs(dsig)))
        t = min(1.0, 2.0 / big) if big > 0 else 1.0
        t0 = t
        accepted = False
        why = ""
        for _ in range(40):
            trial = SchemeState(cur.u.copy(), cur.w.copy(), cur.utilde, eps, cur.theta)
            trial.u[disc.interior] = ui + t * du
            trial.w[disc.interior] = wi * np.exp(t * dsig)
            t11, t12, t22 = ops.hessian_vec(trial.u[disc.interior], phi_feet)
            # fraction to the boundary: no node loses more than 90% of its determinant
            if np.min(t11) > 0 and np.min(t22) > 0 and np.min(t11 * t22 - t12**2 - 0.1 * det) > 0:
                At, Bt = _newton_residual(disc, spec, trial, phi_feet, psi_feet, params)
                mt = merit(At, Bt)
                if mt <= (1 - 1e-4 * t) * m0:
                    accepted = True
                    break
                why = "merit"
            else:
                why = "convexity"
            t *= 0.5
        if not accepted:
            status = "linesearch"
            break
        tiny_steps = tiny_steps + 1 if t < 1e-6 else 0
        if tiny_steps >= 5:
            status = "stagnated"
            break
        cur, A, B, m0 = trial, At, Bt, mt
        _, _, ru, rw = scheme_residuals(disc, spec, cur, phi_feet, psi_feet, params)
        log.debug("newton it %d: t0=%.3g t=%.3g (%s) res_u=%.3e res_w=%.3e", it, t0, t, why, ru, rw)
        history.append((ru, rw))
        if max(ru, rw) <= params.tol:
            status = "converged"
    cur.iteration = it
    cur.history = history
    cur.w_clamped = bool(np.any(cur.w[disc.interior] < params.w_min))
    return cur, status


# ---------------------------------------------------------------------------
# driver

def _report(disc, spec, state, phi, phi_feet, psi_feet, params, status, reference, C_d):
    _, _, ru, rw = scheme_residuals(disc, spec, state, phi_feet, psi_feet, params)
    h11, h12, h22 = _hess(disc, state.u, phi_feet)
    det = h11 * h22 - h12 * h12
    flags = []
    if status != "converged":
        flags.append("nonconverged")
        flags.append(status)
    if state.w_clamped:
        flags.append("w_clamped")
    ok, _ = is_discretely_convex(disc, state.u, DirectionSet.extended(), tol=1e-7)
    if not ok:
        flags.append("not_convex")
    if reference is not None:
        K = disc.compact_mask(params.compact_margin)
        dist = float(np.max(np.abs(state.u[K] - reference[K])))
    else:
        dist = float("nan")
    return EpsReport(
        eps=state.eps, iters=state.iteration, res_u=ru, res_w=rw,
        eta=eta_eps(disc, state.u, state.eps, phi),
        r_annulus=annulus_residual(disc, state.u, state.utilde),
        sup_u=float(np.max(np.abs(state.u[disc.interior]))),
        min_det=float(np.min(det)),
        J=J_eval(disc, state.u, spec, phi_feet),
        J_eps=J_eps_eval(disc, state.u, spec, state.utilde, state.eps, params.theta, phi_feet),
        dist_ref=dist, C_d=C_d, flags=flags)


def solve_for_eps(disc: Discretization, phi, spec: LagrangianSpec, eps: float, params: SchemeParams,
                  warm_start: SchemeState | None = None, reference: np.ndarray | None = None,
                  C_phi: int | None = None):
    """Solve the scheme at one ``eps``; returns ``(state, report)``.

    Non-convergence is reported through ``report.flags`` together with the
    last state rather than raised.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    phi_feet = _feet(disc, phi)
    psi_feet = _feet(disc, params.psi)
    if C_phi is None:
        C_phi = params.C_phi if params.C_phi is not None else detect_C_phi(disc, _nodes(disc, phi),
                                                                            phi_feet)
    start = init_state(disc, phi, params, eps, C_phi)
    h11, h12, h22 = _hess(disc, start.utilde, phi_feet)
    C_d = float(np.min(h11 * h22 - h12 * h12))
    if warm_start is not None:
        start = SchemeState(warm_start.u.copy(), warm_start.w.copy(), start.utilde, eps,
                            params.theta)
    if params.method == "newton":
        state, status = _newton_solve(disc, spec, start, phi_feet, psi_feet, params, params.max_outer)
    else:
        state = start
        status = "nonconverged"
        for _ in range(params.max_outer):
            state = outer_step(disc, state, spec, params, phi)
            if max(state.history[-1]) <= params.tol:
                status = "converged"
                break
    if status == "converged" and state.w_clamped:
        status = "w_clamped_at_convergence"
    rep = _report(disc, spec, state, phi, phi_feet, psi_feet, params, status, reference, C_d)
    return state, rep


def continuation_sweep(disc: Discretization, phi, spec: LagrangianSpec, params: SchemeParams,
                       reference: np.ndarray | None = None, snapshot_hook: Callable | None = None,
                       warm: bool = True, max_refine: int = 3):
    """Solve along the schedule in decreasing ``eps`` with warm starts.

    Returns ``(reports, states)``.  When a warm-started solve fails, the
    log-eps gap to the previous converged value is split into 2, 4, ...
    geometric substeps (up to ``2**max_refine``); the flag ``substeps=n``
    records this.  A failing ``eps`` is recorded and the sweep continues from
    the last good state; it stops early once the minimum Hessian determinant
    falls below ``params.det_floor``.
    """
    reports: list[EpsReport] = []
    states: list[SchemeState] = []
    prev = None
    prev_eps = None
    for eps in params.schedule:
        try:
            state, rep = solve_for_eps(disc, phi, spec, eps, params, prev if warm else None,
                                       reference)
            level = 0
            while warm and prev is not None and not rep.converged and level < max_refine:
                level += 1
                n = 2**level
                sub = prev
                ok = True
                for k in range(1, n):
                    e_k = prev_eps * (eps / prev_eps) ** (k / n)
                    st_k, rep_k = solve_for_eps(disc, phi, spec, e_k, params, sub)
                    if not rep_k.converged:
                        ok = False
                        break
                    sub = st_k
                if not ok:
                    continue
                state, rep = solve_for_eps(disc, phi, spec, eps, params, sub, reference)
                if rep.converged:
                    rep.flags.append(f"substeps={n}")
        except SchemeError as exc:
            log.warning("eps=%g failed: %s", eps, exc)
            reports.append(EpsReport(eps, 0, *[float("nan")] * 10, flags=["failed"]))
            states.append(None)
            continue
        reports.append(rep)
        states.append(state)
        if snapshot_hook is not None:
            snapshot_hook(eps, state)
        if rep.converged:
            prev, prev_eps = state, eps
        if rep.min_det < params.det_floor:
            rep.flags.append("det_floor_stop")
            break
    return reports, states


def check_invariants(disc: Discretization, u: np.ndarray, phi, n_boundary: int = 2048,
                     slack_h: float = 10.0) -> dict:
    """Max principle ``max u <= max_{dOmega} phi + 1e-8`` and the gradient
    bound ``|Du(x)| <= (max_{dOmega} u - u(x)) / dist(x, dOmega) + slack_h * h``
    at every disk node."""
    from .fields import gradient_fd

    om = disc.pair.omega
    y = om.boundary_samples(n_boundary)
    bmax = float(np.max(np.concatenate([np.ravel(_nodes_at(phi, y)), _feet(disc, phi)])))
    ui = u[disc.interior]
    mp_excess = float(np.max(ui) - bmax)
    gx, gy = gradient_fd(disc, u, _feet(disc, phi))
    g = np.hypot(gx[disc.interior], gy[disc.interior])
    dist = disc.boundary_nodes_distance()
    bound = (bmax - ui) / dist + slack_h * disc.h
    excess = g - bound
    k = int(np.argmax(excess))
    return {
        "max_principle": mp_excess <= 1e-8,
        "max_principle_excess": mp_excess,
        "gradient_bound": bool(np.all(excess <= 0)),
        "gradient_bound_worst": float(excess[k]),
        "gradient_bound_node": disc.interior_points[k].tolist(),
    }


def _nodes_at(phi, y):
    if callable(phi):
        return np.asarray(phi(y), dtype=float)
    raise ValueError("boundary data must be callable for the max-principle check")


# ---------------------------------------------------------------------------
# CSV

def write_sweep_csv(path, reports: Sequence[EpsReport]):
    import csv

    with open(path, "w", newline="") as fh:
        fh.write(f"# abreulab sweep schema v{SWEEP_SCHEMA_VERSION}\n")
        wr = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        wr.writeheader()
        for r in reports:
            row = r.row()
            wr.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                         for k, v in row.items()})


def read_sweep_csv(path) -> list[dict]:
    import csv

    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = []
    for row in csv.DictReader(lines):
        out = {}
        for k, v in row.items():
            if k == "flags":
                out[k] = [f for f in v.split(";") if f]
            elif k == "iters":
                out[k] = int(v)
            else:
                out[k] = float(v)
        rows.append(out)
    return rows
