"""Acceptance criteria 1-13, each at its stated tolerance.

Every test records one ``criterion N: PASS|FAIL`` line; the lines are
printed in the terminal summary (see ``conftest.py``) and when this file is
run as a script.  Frozen reference values come from ``oracles.py``.
"""
from __future__ import annotations

import time
from pathlib import Path

import numpy as np
import pytest

from abreulab.abreu_scheme import SchemeParams, check_invariants, continuation_sweep
from abreulab.config import load_config
from abreulab.convexity import (DirectionSet, NestedTriple, chord_envelope,
                                fit_corollary_constants, is_discretely_convex, lemma21_ratio,
                                random_convex)
from abreulab.direct_minimizer import DirectOptions, solve_direct, uniqueness_probe
from abreulab.functionals import J_eps_eval
from abreulab.geometry import DiskDomain, DiskRegion, DomainPair, discretize
from abreulab.lagrangian import (AiryParams, RochetChoneParams, make_airy, make_rochet_chone)
from abreulab.ma_solver import solve_ma_dirichlet
from oracles import TinyQP, exp_det, exp_solution

CONFIGS = Path(__file__).parent.parent / "configs"
RESULTS: dict[int, tuple[bool, str]] = {}

# [DERIVED] by the active-set oracle on the h = 1/6 Rochet-Chone grid (25 free nodes)
TINY_J_STAR = -0.026978131162793295


def record(n: int, passed: bool, detail: str):
    RESULTS[n] = (bool(passed), detail)
    print(summary_line(n))
    assert passed, f"criterion {n}: {detail}"


def summary_line(n: int) -> str:
    ok, detail = RESULTS[n]
    return f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


def sup(a, b, mask):
    return float(np.max(np.abs(a[mask] - b[mask])))


half_sq = lambda x: 0.5 * np.sum(x * x, -1)  # noqa: E731


# ---------------------------------------------------------------------------
# shared runs

@pytest.fixture(scope="module")
def rc_run():
    cfg = load_config(CONFIGS / "rochet_chone.toml", required=("domain", "model", "barrier"))
    disc = discretize(cfg.pair(), cfg.h)
    spec, phi = cfg.spec(), cfg.barrier()
    t0 = time.perf_counter()
    ref = solve_direct(disc, spec, phi, cfg.direct_options())
    params = cfg.scheme_params()
    reports, states = continuation_sweep(disc, phi, spec, params, reference=ref.v)
    return dict(cfg=cfg, disc=disc, spec=spec, phi=phi, ref=ref, reports=reports, states=states,
                params=params, seconds=time.perf_counter() - t0)


@pytest.fixture(scope="module")
def airy_affine_run():
    cfg = load_config(CONFIGS / "airy_affine.toml", required=("domain", "model", "barrier"))
    disc = discretize(cfg.pair(), cfg.h)
    spec, phi = cfg.spec(), cfg.barrier()
    ref = chord_envelope(disc, disc.sample(phi))
    params = cfg.scheme_params()
    reports, states = continuation_sweep(disc, phi, spec, params, reference=ref)
    return dict(disc=disc, phi=phi, reports=reports, states=states, params=params)


# ---------------------------------------------------------------------------
# 1-2: Monge-Ampere solver

def test_c01_ma_quadratic_exactness():
    t0 = time.perf_counter()
    disc = discretize(DomainPair.unit_default(), 1 / 32)
    u = solve_ma_dirichlet(disc, 1.0, half_sq)
    err = sup(u, disc.sample(half_sq), disc.interior)
    dt = time.perf_counter() - t0
    record(1, err <= 1e-8 and dt < 5, f"sup error {err:.2e} (<= 1e-8), {dt:.2f} s (< 5 s)")


def test_c02_ma_order():
    t0 = time.perf_counter()
    errs = []
    for h in (1 / 32, 1 / 64):
        d = discretize(DomainPair.unit_default(), h)
        u = solve_ma_dirichlet(d, d.sample(exp_det), exp_solution)
        errs.append(sup(u, d.sample(exp_solution), d.interior))
    ratio = errs[0] / errs[1]
    dt = time.perf_counter() - t0
    record(2, ratio >= 3.5 and dt < 60,
           f"errors {errs[0]:.2e} -> {errs[1]:.2e}, ratio {ratio:.2f} (>= 3.5), {dt:.1f} s (< 60 s)")


# ---------------------------------------------------------------------------
# 3-5, 12: direct minimizer

def test_c03_affine_rigidity():
    t0 = time.perf_counter()
    worst = 0.0
    for name in ("rochet_chone_affine.toml", "airy_affine.toml"):
        cfg = load_config(CONFIGS / name, required=("domain", "model", "barrier"))
        disc = discretize(cfg.pair(), cfg.h)
        phi = cfg.barrier()
        v, _, _ = solve_direct(disc, cfg.spec(), phi, cfg.direct_options())
        worst = max(worst, sup(v, disc.sample(phi), disc.interior))
    dt = time.perf_counter() - t0
    record(3, worst <= 1e-6 and dt < 120, f"||v* - phi|| = {worst:.2e} (<= 1e-6), {dt:.1f} s")


def test_c04_chord_envelope_oracle():
    t0 = time.perf_counter()
    pair = DomainPair(DiskDomain((0.0, 0.0), 1.0), DiskRegion((0.0, 0.0), 0.5))
    disc = discretize(pair, 1 / 32)
    spec = make_airy(AiryParams.quadratic(), pair)
    v, _, _ = solve_direct(disc, spec, half_sq, DirectOptions(restarts=1))
    env = chord_envelope(disc, disc.sample(half_sq))
    err = sup(v, env, disc.interior)
    dt = time.perf_counter() - t0
    record(4, err <= 1e-4 and dt < 120, f"||v* - envelope|| = {err:.2e} (<= 1e-4), {dt:.1f} s")


def test_c05_tiny_grid_oracle(rc_pair):
    t0 = time.perf_counter()
    disc = discretize(rc_pair, 1 / 6)
    c = np.array([1.5, 1.5])
    phi = lambda x: 0.5 * np.sum((x - c) ** 2, -1)  # noqa: E731
    qp = TinyQP(disc, phi)
    v_or, W, _, _ = qp.active_set()
    J_or = qp.value(v_or)
    spec = make_rochet_chone(RochetChoneParams.constant(1.0), rc_pair)
    res = solve_direct(disc, spec, phi)
    err = float(np.max(np.abs(res.v[qp.free] - v_or)))
    dJ = abs(res.J - TINY_J_STAR)
    dt = time.perf_counter() - t0
    ok = qp.n == 25 and err <= 1e-6 and dJ <= 1e-6 and abs(J_or - TINY_J_STAR) <= 1e-12 and dt < 60
    record(5, ok, f"5x5 interior, {len(W)} active: ||v* - v_oracle|| = {err:.2e}, "
                  f"|J* - J_oracle| = {dJ:.2e} (<= 1e-6), {dt:.1f} s")


def test_c12_uniqueness(rc_run):
    r = rc_run
    spread = uniqueness_probe(r["disc"], r["spec"], r["phi"], r["cfg"].direct_options(), n_restarts=5)
    record(12, spread <= 1e-5, f"5-restart spread {spread:.2e} (<= 1e-5)")


# ---------------------------------------------------------------------------
# 6-9: Rochet-Chone sweep

def test_c06_scheme_direct_convergence(rc_run):
    reps = rc_run["reports"]
    eps = [r.eps for r in reps]
    dist = np.array([r.dist_ref for r in reps])
    expected = [1e-1, 10**-1.5, 1e-2, 10**-2.5, 1e-3]
    complete = len(reps) == 5 and np.allclose(eps, expected) and all(r.converged for r in reps)
    mono = bool(np.all(dist[1:] <= 1.05 * dist[:-1]))
    ratio = dist[-1] / dist[0]
    ok = complete and mono and ratio <= 0.5 and rc_run["seconds"] < 600
    record(6, ok, f"dist {' '.join(f'{d:.4f}' for d in dist)}; final/initial {ratio:.3f} (<= 0.5), "
                  f"{rc_run['seconds']:.0f} s")


def test_c07_annulus_residual(rc_run):
    q = np.array([r.r_annulus / r.eps for r in rc_run["reports"]])
    spread = q.max() / q.min()
    record(7, spread <= 5, f"r/eps {' '.join(f'{v:.2e}' for v in q)}; max/min {spread:.2f} (<= 5)")


def test_c08_eta_bounded(rc_run):
    eta = np.array([r.eta for r in rc_run["reports"]])
    spread = eta.max() / eta.min()
    record(8, spread <= 5, f"eta {' '.join(f'{v:.3f}' for v in eta)}; max/min {spread:.2f} (<= 5)")


def test_c09_invariants(rc_run, airy_affine_run):
    bad = []
    n = 0
    for run in (rc_run, airy_affine_run):
        disc, phi = run["disc"], run["phi"]
        for rep, st in zip(run["reports"], run["states"]):
            if st is None or not rep.converged:
                continue
            n += 1
            inv = check_invariants(disc, st.u, phi)
            ok, worst = is_discretely_convex(disc, st.u, DirectionSet.extended(), tol=1e-7)
            if not (inv["max_principle"] and inv["gradient_bound"] and ok):
                bad.append(rep.eps)
    record(9, n > 0 and not bad, f"{n} accepted states checked, failures at eps {bad}")


# ---------------------------------------------------------------------------
# 10: J_eps midpoint convexity

def _random_quadratic(rng):
    Q, _ = np.linalg.qr(rng.normal(size=(2, 2)))
    A = Q @ np.diag(rng.uniform(0.5, 2.0, 2)) @ Q.T
    b = rng.normal(size=2)
    c0 = rng.normal()
    return lambda x: 0.5 * np.einsum("...i,ij,...j->...", x, A, x) + x @ b + c0


def test_c10_J_eps_midpoint_convexity(rc_pair):
    disc = discretize(rc_pair, 1 / 16)
    spec = make_rochet_chone(RochetChoneParams.constant(1.0), rc_pair)
    rng = np.random.default_rng(10)
    ut = disc.sample(lambda x: 0.5 * np.sum((x - 1.5) ** 2, -1))
    worst = -np.inf
    count = 0
    for _ in range(50):
        f1, f2 = _random_quadratic(rng), _random_quadratic(rng)
        fm = lambda x, f1=f1, f2=f2: 0.5 * (f1(x) + f2(x))  # noqa: E731
        v1, v2, vm = disc.sample(f1), disc.sample(f2), disc.sample(fm)
        for theta in (0.0, 0.1, 0.25, 0.4):
            for eps in (1e-1, 1e-2):
                j1 = J_eps_eval(disc, v1, spec, ut, eps, theta, f1)
                j2 = J_eps_eval(disc, v2, spec, ut, eps, theta, f2)
                jm = J_eps_eval(disc, vm, spec, ut, eps, theta, fm)
                worst = max(worst, jm - 0.5 * (j1 + j2))
                count += 1
    record(10, worst <= 1e-8, f"{count} midpoint checks, worst excess {worst:.2e} (<= 1e-8)")


# ---------------------------------------------------------------------------
# 11: interior sup bound and the two-constant bound

def test_c11_lemma21():
    t0 = time.perf_counter()
    triple = NestedTriple(DiskRegion((0.0, 0.0), 0.3), DiskRegion((0.0, 0.0), 0.6),
                          DiskDomain((0.0, 0.0), 1.0), 1 / 32)
    disc = triple.disc
    w = disc.weights("annulus")

    def batch(seeds):
        ratios, sups, bmax, l1 = [], [], [], []
        for s in seeds:
            k = 2 + s % 6
            u, m = random_convex(disc, s, k, return_meta=True)
            ratios.append(lemma21_ratio(u, triple, boundary_max=m["boundary_max"]))
            v, m = random_convex(disc, s, k, shift=False, return_meta=True)
            sups.append(max(abs(m["boundary_max"]), float(np.nanmax(np.abs(v)))))
            bmax.append(m["boundary_max"])
            l1.append(float(np.sum(w * np.abs(np.where(w > 0, v, 0.0)))))
        return [np.asarray(a) for a in (ratios, sups, bmax, l1)]

    r1, s1, b1, l1 = batch(range(200))
    r2, s2, b2, l2 = batch(range(200, 400))
    finite = bool(np.all(np.isfinite(r1)) and np.all(np.isfinite(r2)))
    stab = r1.max() / r2.max()
    C1, C2 = fit_corollary_constants(s1, b1, l1)
    holdout = float(np.max(s2 / (C1 * np.abs(b2) + C2 * l2)))
    dt = time.perf_counter() - t0
    ok = finite and abs(stab - 1) <= 0.1 and holdout <= 2.0 and dt < 120
    record(11, ok, f"batch max {r1.max():.4f} / {r2.max():.4f} (ratio {stab:.3f}, +-10%); "
                   f"C1={C1:.3f} C2={C2:.3f}, holdout max sup/bound {holdout:.3f} (<= 2); {dt:.1f} s")


# ---------------------------------------------------------------------------
# 13: affine barrier, Airy model

def test_c13_affine_stress(airy_affine_run):
    reps = airy_affine_run["reports"]
    complete = len(reps) == len(airy_affine_run["params"].schedule) and all(r.converged for r in reps)
    cols = ("eta", "r_annulus", "sup_u", "min_det", "J", "J_eps", "dist_ref")
    finite = all(np.isfinite(getattr(r, c)) for r in reps for c in cols)
    by_eps = {round(np.log10(r.eps), 6): r.dist_ref for r in reps}
    ratio = by_eps.get(-3.0, np.inf) / by_eps.get(-1.0, np.nan)
    ok = complete and finite and ratio <= 0.5
    record(13, ok, f"dist {' '.join(f'{r.dist_ref:.4f}' for r in reps)}; "
                   f"dist(1e-3)/dist(1e-1) = {ratio:.3f} (<= 0.5)")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
