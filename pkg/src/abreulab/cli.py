"""Command-line harness.

Verbs::

    abreulab selftest [--fault-injection]
    abreulab ma-test [--out DIR]
    abreulab check-assumptions --config PATH [--out DIR]
    abreulab solve-direct --config PATH [--out DIR] [--threads N]
    abreulab sweep --config PATH [--out DIR] [--debug-snapshots]

Exit codes: 0 ok, 1 numerical failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .abreu_scheme import (SchemeError, check_invariants, continuation_sweep, write_sweep_csv)
from .config import ConfigError, RunConfig, load_config
from .convexity import (ConvexityError, NestedTriple,
                        is_discretely_convex, lemma21_ratio, lower_convex_envelope,
                        random_convex)
from .direct_minimizer import solve_direct, uniqueness_probe
from .fields import DirectionalOps, operators, write_snapshot
from .geometry import ConfigurationError, DiskDomain, DiskRegion, DomainPair, discretize
from .lagrangian import check_assumptions, detect_C_phi, omega0_box
from .ma_solver import MAStagnationError, solve_ma_dirichlet

__all__ = ["main", "build_parser", "ma_suite", "lemma21_suite", "envelope_suite"]

log = logging.getLogger("abreulab")

EXIT_OK, EXIT_NUMERICAL, EXIT_CONFIG = 0, 1, 2


class NumericalFailure(RuntimeError):
    """A command ran but its numerical contract was not met."""


# ---------------------------------------------------------------------------
# self-test suites

def _inject_fault(disc):
    """Scale the x-x second difference by 1.05 (a corrupted stencil)."""
    ops = operators(disc)
    d = ops.second[0]
    ops.second[0] = DirectionalOps(1.05 * d.A, 1.05 * d.B)


def ma_suite(h_pair=(1 / 32, 1 / 64), fault: bool = False) -> dict:
    """Quadratic exactness at the coarse step and the error ratio of the
    manufactured solution ``exp(|x|^2/2)`` between the two steps."""
    pair = DomainPair.unit_default()
    out = {}
    disc = discretize(pair, h_pair[0])
    if fault:
        _inject_fault(disc)
    quad = lambda x: 0.5 * np.sum(x * x, -1)  # noqa: E731
    u = solve_ma_dirichlet(disc, 1.0, quad)
    out["quadratic_error"] = float(np.nanmax(np.abs(u - disc.sample(quad))))
    exact = lambda x: np.exp(0.5 * np.sum(x * x, -1))  # noqa: E731
    rhs = lambda x: (1 + np.sum(x * x, -1)) * np.exp(np.sum(x * x, -1))  # noqa: E731
    errs = []
    for h in h_pair:
        d = disc if h == h_pair[0] else discretize(pair, h)
        if fault and d is not disc:
            _inject_fault(d)
        ue = solve_ma_dirichlet(d, d.sample(rhs), exact)
        errs.append(float(np.nanmax(np.abs(ue - d.sample(exact)))))
    out["exp_errors"] = errs
    out["exp_ratio"] = errs[0] / errs[1]
    out["passed"] = bool(out["quadratic_error"] <= 1e-8 and out["exp_ratio"] >= 3.5)
    return out


def lemma21_suite(n: int = 40, seed: int = 0, h: float = 1 / 24) -> dict:
    triple = NestedTriple(DiskRegion((0.0, 0.0), 0.3), DiskRegion((0.0, 0.0), 0.6),
                          DiskDomain((0.0, 0.0), 1.0), h)
    ratios = []
    for k in range(n):
        u, meta = random_convex(triple.disc, seed + k, k=2 + k % 6, return_meta=True)
        ratios.append(lemma21_ratio(u, triple, boundary_max=meta["boundary_max"]))
    ratios = np.asarray(ratios)
    return {"n": n, "max_ratio": float(np.max(ratios)),
            "passed": bool(np.all(np.isfinite(ratios)) and np.all(ratios >= 0))}


def envelope_suite(h: float = 1 / 24, seed: int = 0) -> dict:
    disc = discretize(DomainPair.unit_default(), h)
    rng = np.random.default_rng(seed)
    data = np.where(disc.interior, rng.normal(size=disc.grid.shape), np.nan)
    env = lower_convex_envelope(disc, data, tol=1e-13)
    again = lower_convex_envelope(disc, env, tol=1e-13)
    ok, worst = is_discretely_convex(disc, env)
    idem = float(np.nanmax(np.abs(again - env)))
    below = bool(np.all(env[disc.interior] <= data[disc.interior] + 1e-12))
    return {"idempotence": idem, "convexity_worst": float(worst),
            "passed": bool(idem <= 1e-9 and ok and below)}


def cmd_selftest(args) -> int:
    suites = {
        "ma": lambda: ma_suite(fault=args.fault_injection),
        "lemma21": lemma21_suite,
        "envelope": envelope_suite,
    }
    failed = False
    report = {}
    for name, fn in suites.items():
        t0 = time.perf_counter()
        try:
            res = fn()
        except (MAStagnationError, ConvexityError, ValueError) as exc:
            res = {"passed": False, "error": str(exc)}
        res["seconds"] = time.perf_counter() - t0
        report[name] = res
        failed |= not res["passed"]
        print(f"{name:10s} {'PASS' if res['passed'] else 'FAIL'}  {res['seconds']:7.2f} s")
    if args.out:
        _write_json(Path(args.out) / "selftest.json", report)
    return EXIT_NUMERICAL if failed else EXIT_OK


def cmd_ma_test(args) -> int:
    t0 = time.perf_counter()
    res = ma_suite()
    res["seconds"] = time.perf_counter() - t0
    print(f"quadratic exactness  sup error {res['quadratic_error']:.3e}  (tol 1e-8)")
    e1, e2 = res["exp_errors"]
    print(f"exp(|x|^2/2)         errors {e1:.3e} / {e2:.3e}  ratio {res['exp_ratio']:.2f}  (>= 3.5)")
    print(f"{'PASS' if res['passed'] else 'FAIL'}  {res['seconds']:.2f} s")
    if args.out:
        _write_json(Path(args.out) / "ma_test.json", res)
    return EXIT_OK if res["passed"] else EXIT_NUMERICAL


# ---------------------------------------------------------------------------
# configuration driven commands

def _load(args, required=("domain", "model", "barrier")) -> RunConfig:
    if not args.config:
        raise ConfigError(f"{args.verb} needs --config")
    cfg = load_config(args.config, required)
    if args.seed is not None:
        cfg.data["seed"] = int(args.seed)
    return cfg


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out) if args.out else Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)

    def default(o):
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(type(o).__name__)

    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=default) + "\n")


def cmd_check_assumptions(args) -> int:
    cfg = _load(args, required=("domain", "model"))
    spec = cfg.spec()
    chk = cfg["checks"]
    verdicts = check_assumptions(spec, omega0_box(cfg.pair()), tuple(chk["z_box"]),
                                 tuple(chk["p_box"]), int(chk["n_samples"]), cfg.seed, cfg.C_t)
    report = {"model": spec.name, "conditions": [v.as_dict() for v in verdicts.values()]}
    print(f"model {spec.name}")
    print(f"{'condition':10s} {'verdict':8s} {'worst margin':>14s}  witness")
    for v in verdicts.values():
        wit = ", ".join(f"{k}={np.round(np.asarray(x), 4).tolist()}" for k, x in v.witness.items())
        print(f"{v.name:10s} {'pass' if v.passed else 'FAIL':8s} {v.worst + 0.0:14.6g}  "
              f"{wit if not v.passed else ''}{v.note}")
    if cfg["barrier"] is not None:
        disc = discretize(cfg.pair(), cfg.h)
        phi = cfg.barrier()
        C_phi = detect_C_phi(disc, disc.sample(phi), phi)
        forced = cfg.scheme_params().C_phi
        report["C_phi"] = {"detected": C_phi, "used": C_phi if forced is None else forced}
        print(f"C_phi      detected {C_phi}, used {report['C_phi']['used']}")
    if args.out:
        _write_json(Path(args.out) / "assumptions.json", report)
    return EXIT_OK


def _reference(cfg: RunConfig, disc, spec, phi, workers: int = 1):
    opts = cfg.direct_options()
    res = solve_direct(disc, spec, phi, opts)
    spread = uniqueness_probe(disc, spec, phi, opts, workers=workers) if opts.restarts > 1 else 0.0
    res.certificate["restarts_spread"] = spread
    return res


def cmd_solve_direct(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    disc = discretize(cfg.pair(), cfg.h)
    spec = cfg.spec()
    phi = cfg.barrier()
    res = _reference(cfg, disc, spec, phi, args.threads)
    # 12 significant digits: well above the solver tolerance, below rounding noise
    write_snapshot(out / "v_star.txt", disc, res.v, digits=12)
    write_snapshot(out / "phi.txt", disc, disc.sample(phi), digits=12)
    _write_json(out / "certificate.json", res.certificate)
    c = res.certificate
    print(f"J* = {c['J']:.12g}  primal {c['primal_res']:.2e}  dual {c['dual_res']:.2e}  "
          f"cone {c['cone_worst']:.2e}  8-dir {c['convexity_worst']:.2e}  "
          f"spread {c['restarts_spread']:.2e}")
    if not res.converged:
        raise NumericalFailure("direct minimizer did not converge")
    return EXIT_OK


def _plots(out: Path, reports, J_ref: float):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    eps = np.array([r.eps for r in reports])
    panels = [
        ("dist_vs_eps.svg", [r.dist_ref for r in reports], "sup distance on K", True),
        ("residual_over_eps.svg", [r.r_annulus / r.eps for r in reports], "r(eps) / eps", True),
        ("eta.svg", [r.eta for r in reports], "eta_eps", True),
        ("J_gap.svg", [r.J - J_ref for r in reports], "J(u_eps) - J*", False),
    ]
    for name, vals, label, logy in panels:
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        ax.plot(eps, vals, "o-")
        ax.set_xscale("log")
        if logy and np.all(np.asarray(vals) > 0):
            ax.set_yscale("log")
        ax.set_xlabel("eps")
        ax.set_ylabel(label)
        ax.invert_xaxis()
        fig.tight_layout()
        fig.savefig(out / name, format="svg", metadata={"Date": None})
        plt.close(fig)


def cmd_sweep(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    disc = discretize(cfg.pair(), cfg.h)
    spec = cfg.spec()
    phi = cfg.barrier()
    params = cfg.scheme_params()
    t0 = time.perf_counter()
    ref = _reference(cfg, disc, spec, phi, args.threads)
    write_snapshot(out / "v_star.txt", disc, ref.v)
    _write_json(out / "certificate.json", ref.certificate)
    snaps = bool(cfg["output"]["snapshots"]) or args.debug_snapshots

    def hook(eps, state):
        if not snaps:
            return
        tag = f"{eps:.3e}"
        write_snapshot(out / f"u_eps_{tag}.txt", disc, state.u)
        if args.debug_snapshots:
            write_snapshot(out / f"w_eps_{tag}.txt", disc, state.w)
            write_snapshot(out / f"utilde_eps_{tag}.txt", disc, state.utilde)

    reports, states = continuation_sweep(disc, phi, spec, params, reference=ref.v,
                                         snapshot_hook=hook)
    write_sweep_csv(out / "sweep.csv", reports)
    inv = [check_invariants(disc, s.u, phi) if s is not None else None for s in states]
    _write_json(out / "invariants.json", [{"eps": r.eps, **(i or {})} for r, i in zip(reports, inv)])
    if cfg["output"]["plots"]:
        _plots(out, reports, ref.J)
    print(f"{'eps':>10s} {'iters':>5s} {'dist_ref':>10s} {'r/eps':>10s} {'eta':>10s}  flags")
    for r in reports:
        print(f"{r.eps:10.3e} {r.iters:5d} {r.dist_ref:10.4e} {r.r_annulus / r.eps:10.4e} "
              f"{r.eta:10.4e}  {';'.join(r.flags)}")
    print(f"total {time.perf_counter() - t0:.1f} s")
    bad = [r.eps for r in reports if not r.converged]
    if not ref.converged:
        raise NumericalFailure("reference minimizer did not converge")
    if bad or len(reports) < len(params.schedule):
        raise NumericalFailure(f"sweep incomplete or nonconverged at eps {bad}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="abreulab", description=__doc__.split("\n")[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="TOML run configuration")
    common.add_argument("--out", type=str, default=None, help="output directory")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads for restarts")
    common.add_argument("--debug-snapshots", action="store_true",
                        help="also write w and the barrier blend per eps")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)
    st = sub.add_parser("selftest", parents=[common], help="run the built-in check suites")
    st.add_argument("--fault-injection", action="store_true",
                    help="corrupt the stencil; the suite must then fail")
    sub.add_parser("solve-direct", parents=[common], help="direct convex minimization")
    sub.add_parser("sweep", parents=[common], help="eps continuation against the direct reference")
    sub.add_parser("check-assumptions", parents=[common], help="structural condition verdicts")
    sub.add_parser("ma-test", parents=[common], help="Monge-Ampere manufactured solutions")
    return p


COMMANDS = {
    "selftest": cmd_selftest,
    "solve-direct": cmd_solve_direct,
    "sweep": cmd_sweep,
    "check-assumptions": cmd_check_assumptions,
    "ma-test": cmd_ma_test,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.verb](args)
    except (ConfigError, ConfigurationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, SchemeError, MAStagnationError, ConvexityError,
            np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
