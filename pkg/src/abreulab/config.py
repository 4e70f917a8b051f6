"""Run configuration: TOML text with a fixed schema.

Every block is a table; unknown keys anywhere raise :class:`ConfigError`,
as do missing required keys and out-of-range values.  The accessor methods
of :class:`RunConfig` turn a validated config into solver objects.

Example::

    seed = 0

    [domain]
    omega = { center = [1.5, 1.5], radius = 1.2 }
    omega0 = { kind = "rectangle", lower = [1.0, 1.0], upper = [2.0, 2.0] }
    h = 0.03125

    [model]
    kind = "rochet_chone"
    gamma = 1.0

    [barrier]
    kind = "quadratic"
    center = [1.5, 1.5]
    scale = 0.5
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .convexity import DirectionSet
from .direct_minimizer import DirectOptions
from .fields import read_snapshot
from .geometry import (ConfigurationError, DiskDomain, DiskRegion, DomainPair, Grid,
                       RectangleRegion)
from .lagrangian import (AiryParams, LagrangianSpec, RochetChoneParams, make_airy,
                         make_quadratic_family, make_rochet_chone)
from .abreu_scheme import SchemeParams

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "DEFAULTS"]


class ConfigError(ConfigurationError):
    """Schema violation; the command line maps it to exit code 2."""


REQUIRED = object()

# schema: nested dicts of defaults; REQUIRED marks mandatory keys, None marks optional ones
SCHEMA: dict[str, Any] = {
    "seed": 0,
    "domain": {
        "omega": {"center": REQUIRED, "radius": REQUIRED},
        "omega0": {"kind": REQUIRED, "lower": None, "upper": None, "center": None, "radius": None},
        "h": REQUIRED,
        "margin": 1e-3,
    },
    "model": {
        "kind": REQUIRED,
        "gamma": 1.0,
        "q": "quadratic",
        "z2": 0.0, "z1": 0.0, "p2": 1.0, "p1": 0.0,
        "C_star": None, "C_b": None, "C_l": None, "C_under": None,
        "C_t": 1.0,
    },
    "barrier": {
        "kind": REQUIRED,
        "center": [0.0, 0.0],
        "scale": 0.5,
        "slope": [0.0, 0.0],
        "offset": 0.0,
    },
    "scheme": {
        "theta": 0.0,
        "psi": 1.0,
        "a": 1.0 / 12.0,
        "schedule": None,
        "damping": 0.5,
        "tol": 1e-8,
        "max_outer": 200,
        "C_phi": "auto",
        "method": "newton",
        "compact_margin": 0.1,
    },
    "direct": {
        "penalty": 1.0,
        "tol_primal": 1e-8,
        "tol_dual": 1e-8,
        "max_iter": 50000,
        "directions": "default",
        "restarts": 5,
    },
    "checks": {
        "n_samples": 4000,
        "z_box": [-5.0, 5.0],
        "p_box": [-5.0, 5.0],
    },
    "output": {
        "dir": "out",
        "snapshots": True,
        "plots": True,
    },
}

DEFAULTS = SCHEMA


def _merge(schema: dict, data: dict, path: str, required_blocks: set[str]) -> dict:
    """Fill defaults into ``data``, rejecting unknown and missing keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a table")
    unknown = set(data) - set(schema)
    if unknown:
        raise ConfigError(f"unknown key(s) in {path or 'top level'}: {', '.join(sorted(unknown))}")
    out = {}
    for key, default in schema.items():
        here = f"{path}.{key}" if path else key
        if isinstance(default, dict):
            has_required = any(v is REQUIRED for v in _leaves(default))
            if key in data:
                out[key] = _merge(default, data[key], here, required_blocks)
            elif path == "" and key not in required_blocks:
                out[key] = None if has_required else _merge(default, {}, here, required_blocks)
            elif has_required:
                raise ConfigError(f"missing required block [{here}]")
            else:
                out[key] = _merge(default, {}, here, required_blocks)
        elif key in data:
            out[key] = data[key]
        elif default is REQUIRED:
            raise ConfigError(f"missing required key {here}")
        else:
            out[key] = copy.deepcopy(default)
    return out


def _leaves(d):
    for v in d.values():
        if isinstance(v, dict):
            yield from _leaves(v)
        else:
            yield v


def _vec2(v, name):
    try:
        a = np.asarray(v, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} must be a pair of numbers") from exc
    if a.shape != (2,):
        raise ConfigError(f"{name} must be a pair of numbers")
    return a


def _num(v, name, positive=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{name} must be a number")
    if positive and not v > 0:
        raise ConfigError(f"{name} must be positive")
    return float(v)


@dataclass
class RunConfig:
    data: dict
    base_dir: Path

    # -- accessors -------------------------------------------------------------------
    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def pair(self) -> DomainPair:
        d = self.data["domain"]
        om = d["omega"]
        omega = DiskDomain(tuple(_vec2(om["center"], "domain.omega.center")),
                           _num(om["radius"], "domain.omega.radius", True))
        o0 = d["omega0"]
        kind = o0["kind"]
        if kind == "rectangle":
            if o0["lower"] is None or o0["upper"] is None:
                raise ConfigError("rectangle omega0 needs lower and upper")
            inner = RectangleRegion(tuple(_vec2(o0["lower"], "omega0.lower")),
                                    tuple(_vec2(o0["upper"], "omega0.upper")))
        elif kind == "disk":
            if o0["center"] is None or o0["radius"] is None:
                raise ConfigError("disk omega0 needs center and radius")
            inner = DiskRegion(tuple(_vec2(o0["center"], "omega0.center")),
                               _num(o0["radius"], "omega0.radius", True))
        else:
            raise ConfigError(f"omega0.kind must be 'rectangle' or 'disk', got {kind!r}")
        return DomainPair(omega, inner, margin=_num(d["margin"], "domain.margin", True))

    @property
    def h(self) -> float:
        return _num(self.data["domain"]["h"], "domain.h", True)

    def _field_source(self, spec, name):
        """A callable from a number, a preset name, or ``{snapshot = path}``."""
        if isinstance(spec, (int, float)) and not isinstance(spec, bool):
            return float(spec)
        if isinstance(spec, dict):
            if set(spec) == {"snapshot"}:
                path = self.base_dir / spec["snapshot"]
                try:
                    vals, (nx, ny, h, ox, oy) = read_snapshot(path)
                except (OSError, ValueError) as exc:
                    raise ConfigError(f"cannot read {name} snapshot {path}: {exc}") from exc
                return Grid(h, (ox, oy), nx, ny), vals
            if set(spec) == {"affine"}:
                c = np.asarray(spec["affine"], dtype=float)
                if c.shape != (3,):
                    raise ConfigError(f"{name}.affine needs three coefficients")
                return lambda x: c[0] + x[..., 0] * c[1] + x[..., 1] * c[2]
            raise ConfigError(f"unknown {name} source keys: {sorted(spec)}")
        if isinstance(spec, str):
            return spec
        raise ConfigError(f"bad {name} specification {spec!r}")

    def spec(self) -> LagrangianSpec:
        m = self.data["model"]
        pair = self.pair()
        kind = m["kind"]
        if kind == "rochet_chone":
            src = self._field_source(m["gamma"], "gamma")
            if isinstance(src, float):
                params = RochetChoneParams.constant(src)
            elif isinstance(src, tuple):
                params = RochetChoneParams.from_field(*src)
            elif callable(src):
                params = _rc_from_affine(src, m["gamma"]["affine"])
            else:
                raise ConfigError(f"unknown gamma preset {src!r}")
            spec = make_rochet_chone(params, pair, seed=self.seed)
        elif kind == "airy":
            src = self._field_source(m["q"], "q")
            if src == "quadratic":
                params = AiryParams.quadratic()
            elif src == "exponential":
                params = AiryParams.exponential()
            elif isinstance(src, tuple):
                params = _airy_from_field(*src)
            else:
                raise ConfigError(f"unknown q preset {src!r}")
            spec = make_airy(params, pair, seed=self.seed)
        elif kind == "custom":
            spec = make_quadratic_family(_num(m["z2"], "z2"), _num(m["z1"], "z1"),
                                         _num(m["p2"], "p2"), _num(m["p1"], "p1"))
        else:
            raise ConfigError(f"model.kind must be rochet_chone, airy or custom, got {kind!r}")
        for k in ("C_star", "C_b", "C_l", "C_under"):
            if m[k] is not None:
                v = _num(m[k], f"model.{k}")
                if v < 0:
                    raise ConfigError(f"model.{k} must be nonnegative")
                setattr(spec, k, v)
        if m["C_l"] is not None:
            C_l = spec.C_l
            spec.eta = lambda t: C_l * (1.0 + t)
        return spec

    @property
    def C_t(self) -> float:
        return _num(self.data["model"]["C_t"], "model.C_t")

    def barrier(self) -> Callable:
        b = self.data["barrier"]
        kind = b["kind"]
        if kind == "quadratic":
            c = _vec2(b["center"], "barrier.center")
            k = _num(b["scale"], "barrier.scale")
            off = _num(b["offset"], "barrier.offset")
            if k < 0:
                raise ConfigError("barrier.scale must be nonnegative (convex barrier)")
            return lambda x: k * np.sum((np.asarray(x) - c) ** 2, -1) + off
        if kind == "affine":
            a = _vec2(b["slope"], "barrier.slope")
            off = _num(b["offset"], "barrier.offset")
            return lambda x: np.asarray(x) @ a + off
        raise ConfigError(f"barrier.kind must be 'quadratic' or 'affine', got {kind!r}")

    def scheme_params(self) -> SchemeParams:
        s = self.data["scheme"]
        C_phi = s["C_phi"]
        if C_phi == "auto":
            C_phi = None
        elif C_phi not in (0, 1):
            raise ConfigError("scheme.C_phi must be 'auto', 0 or 1")
        kw = dict(theta=_num(s["theta"], "theta"), psi=_num(s["psi"], "psi", True),
                  a=_num(s["a"], "a", True), damping=_num(s["damping"], "damping", True),
                  tol=_num(s["tol"], "tol", True), max_outer=int(s["max_outer"]), C_phi=C_phi,
                  method=s["method"], compact_margin=_num(s["compact_margin"], "compact_margin"))
        if s["schedule"] is not None:
            kw["schedule"] = [_num(e, "schedule entry", True) for e in s["schedule"]]
        try:
            return SchemeParams(**kw)
        except ValueError as exc:
            raise ConfigError(f"scheme: {exc}") from exc

    def direct_options(self) -> DirectOptions:
        d = self.data["direct"]
        dirs = d["directions"]
        if dirs == "default":
            ds = DirectionSet.default()
        elif dirs == "extended":
            ds = DirectionSet.extended()
        else:
            raise ConfigError("direct.directions must be 'default' or 'extended'")
        try:
            return DirectOptions(penalty=_num(d["penalty"], "penalty"),
                                 tol_primal=_num(d["tol_primal"], "tol_primal", True),
                                 tol_dual=_num(d["tol_dual"], "tol_dual", True),
                                 max_iter=int(d["max_iter"]), directions=ds,
                                 restarts=int(d["restarts"]), seed=self.seed)
        except ValueError as exc:
            raise ConfigError(f"direct: {exc}") from exc


def _rc_from_affine(fn, coeffs):
    c = np.asarray(coeffs, dtype=float)
    grad = np.array([c[1], c[2]])
    return RochetChoneParams(fn, lambda x: np.broadcast_to(grad, np.shape(x)).copy(), label="affine")


def _airy_from_field(grid, vals):
    from scipy.interpolate import RegularGridInterpolator

    xs = grid.origin[0] + grid.h * np.arange(grid.nx)
    ys = grid.origin[1] + grid.h * np.arange(grid.ny)
    itp = RegularGridInterpolator((xs, ys), np.nan_to_num(vals), method="cubic", bounds_error=False,
                                  fill_value=None)
    return AiryParams(lambda x: itp(np.asarray(x)), fd_step=grid.h, label="field")


def parse_config(text: str, base_dir: Path | str = ".", required=("domain", "model")) -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML parse error: {exc}") from exc
    data = _merge(SCHEMA, raw, "", set(required))
    cfg = RunConfig(data, Path(base_dir))
    # resolve everything once so that schema errors surface at load time
    cfg.pair()
    cfg.h
    if data.get("barrier") is not None:
        cfg.barrier()
    cfg.scheme_params()
    cfg.direct_options()
    return cfg


def load_config(path, required=("domain", "model")) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_config(text, p.parent, required)
