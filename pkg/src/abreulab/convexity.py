"""Discrete convexity: directional second differences, convex envelopes and
the admissible set of convex functions pinned to the barrier off the inner
region.

A node field is *discretely convex* for a direction set when every
second difference ``f(x+he) - 2f(x) + f(x-he)`` whose three nodes lie in
the disk is nonnegative.  Maxima of discretely convex fields are discretely
convex, so below any data there is a largest one; :func:`lower_convex_envelope`
finds it by sweeping exact one-dimensional lower hulls along every grid
line of every direction until nothing moves.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import gcd

import numpy as np
from scipy.optimize import linprog

from .geometry import DiskDomain, DiskRegion, DomainPair, RectangleRegion, discretize, Discretization

__all__ = [
    "DirectionSet",
    "NestedTriple",
    "ConvexityError",
    "second_differences",
    "is_discretely_convex",
    "lower_convex_envelope",
    "chord_envelope",
    "is_admissible",
    "lemma21_ratio",
    "random_convex",
    "fit_corollary_constants",
]


class ConvexityError(ValueError):
    pass


@dataclass(frozen=True)
class DirectionSet:
    directions: tuple[tuple[int, int], ...]

    def __post_init__(self):
        dirs = tuple(tuple(int(c) for c in d) for d in self.directions)
        for d in dirs:
            if gcd(abs(d[0]), abs(d[1])) != 1:
                raise ValueError(f"direction {d} is not primitive")
        for i, a in enumerate(dirs):
            for b in dirs[i + 1:]:
                if a[0] * b[1] - a[1] * b[0] == 0:
                    raise ValueError(f"directions {a} and {b} are parallel")
        object.__setattr__(self, "directions", dirs)

    @classmethod
    def default(cls):
        return cls(((1, 0), (0, 1), (1, 1), (1, -1)))

    @classmethod
    def extended(cls):
        return cls(((1, 0), (0, 1), (1, 1), (1, -1), (2, 1), (1, 2), (2, -1), (1, -2)))

    def __iter__(self):
        return iter(self.directions)

    def __len__(self):
        return len(self.directions)


def _shift(mask_or_field, e, fill):
    """Array value at ``x + e`` for every node ``x`` (``fill`` past the edge)."""
    a = mask_or_field
    out = np.full(a.shape, fill, dtype=a.dtype)
    nx, ny = a.shape
    di, dj = e
    src_i = slice(max(di, 0), nx + min(di, 0))
    dst_i = slice(max(-di, 0), nx + min(-di, 0))
    src_j = slice(max(dj, 0), ny + min(dj, 0))
    dst_j = slice(max(-dj, 0), ny + min(-dj, 0))
    out[dst_i, dst_j] = a[src_i, src_j]
    return out


def second_differences(disc: Discretization, f: np.ndarray, dirs: DirectionSet | None = None,
                       mask: np.ndarray | None = None) -> dict:
    """Scaled second differences ``(f(x+he) - 2f(x) + f(x-he)) / (h^2 |e|^2)``.

    Returns ``{direction: array}`` with ``nan`` where an arm leaves the disk.
    """
    dirs = dirs or DirectionSet.default()
    inside = disc.interior if mask is None else mask
    h = disc.h
    out = {}
    for e in dirs:
        ok = inside & _shift(inside, e, False) & _shift(inside, (-e[0], -e[1]), False)
        fp = _shift(f, e, np.nan)
        fm = _shift(f, (-e[0], -e[1]), np.nan)
        with np.errstate(invalid="ignore"):
            d = (fp - 2 * f + fm) / (h * h * (e[0] ** 2 + e[1] ** 2))
        out[e] = np.where(ok, d, np.nan)
    return out


def is_discretely_convex(disc: Discretization, f: np.ndarray, dirs: DirectionSet | None = None,
                         tol: float | None = None):
    """Return ``(convex, worst)`` where ``worst`` is the most negative second
    difference (0 if none is negative)."""
    if tol is None:
        fin = f[disc.interior]
        tol = 1e-9 * (1 + float(np.max(np.abs(fin)))) if fin.size else 1e-9
    d2 = second_differences(disc, f, dirs)
    worst = 0.0
    for v in d2.values():
        if np.any(np.isfinite(v)):
            worst = min(worst, float(np.nanmin(v)))
    return worst >= -tol, worst


# ----------------------------------------------------------------------------
# envelopes

def _lines(mask: np.ndarray, e):
    """Flat index arrays of maximal runs of ``mask`` along direction ``e``."""
    nx, ny = mask.shape
    prev = _shift(mask, (-e[0], -e[1]), False)
    starts = np.argwhere(mask & ~prev)
    lines = []
    for i, j in starts:
        ii, jj = [], []
        while 0 <= i < nx and 0 <= j < ny and mask[i, j]:
            ii.append(i)
            jj.append(j)
            i += e[0]
            j += e[1]
        if len(ii) >= 3:
            lines.append(np.ravel_multi_index((np.array(ii), np.array(jj)), (nx, ny)))
    return lines


def _lower_hull_1d(y: np.ndarray) -> np.ndarray:
    """Largest convex sequence below ``y`` (entries may be +inf)."""
    fin = np.flatnonzero(np.isfinite(y))
    out = np.full(y.shape, np.inf)
    if fin.size == 0:
        return out
    if fin.size == 1:
        out[fin[0]] = y[fin[0]]
        return out
    hull = []
    for k in fin:
        yk = y[k]
        while len(hull) >= 2:
            k1, k2 = hull[-2], hull[-1]
            # drop k2 if it lies on or above the chord k1 -> k
            if (y[k2] - y[k1]) * (k - k1) >= (yk - y[k1]) * (k2 - k1):
                hull.pop()
            else:
                break
        hull.append(k)
    hk = np.asarray(hull)
    span = np.arange(hk[0], hk[-1] + 1)
    out[span] = np.interp(span, hk, y[hk])
    out[hk] = y[hk]
    return out


def lower_convex_envelope(disc: Discretization, data: np.ndarray, dirs: DirectionSet | None = None,
                          tol: float = 1e-10, max_sweeps: int = 10000, mask: np.ndarray | None = None):
    """Largest discretely convex field below ``data`` on the disk nodes.

    ``data`` may hold ``+inf`` (no upper bound at that node).  Each sweep
    replaces, direction by direction, every grid line by its exact 1D lower
    hull; sweeps repeat until the largest change drops below ``tol``.
    Nodes outside the disk are returned as ``nan``.
    """
    dirs = dirs or DirectionSet.default()
    inside = disc.interior if mask is None else mask
    v = np.where(inside, np.asarray(data, dtype=float), np.inf)
    fin = np.isfinite(v[inside])
    if fin.sum() < 3:
        raise ConvexityError("envelope needs at least three finite data nodes")
    pts = disc.grid.points[inside][fin]
    if np.linalg.matrix_rank(pts[1:] - pts[0], tol=1e-12) < 2:
        raise ConvexityError("finite data nodes are collinear")
    lines = [ln for e in dirs for ln in _lines(inside, e)]
    flat = v.ravel()
    for sweep in range(max_sweeps):
        change = 0.0
        for ln in lines:
            y = flat[ln]
            new = _lower_hull_1d(y)
            finite = np.isfinite(y)
            if np.any(finite):
                d = np.max(np.abs(y[finite] - new[finite]))
                change = max(change, d)
            gained = ~finite & np.isfinite(new)
            if np.any(gained):
                change = np.inf
            flat[ln] = new
        if change < tol:
            break
    else:
        raise ConvexityError(f"envelope sweeps did not converge (last change {change:.3e})")
    out = flat.reshape(v.shape)
    if np.any(np.isinf(out[inside])):
        raise ConvexityError("envelope is unbounded at some nodes")
    return np.where(inside, out, np.nan)


def chord_envelope(disc: Discretization, phi: np.ndarray, dirs: DirectionSet | None = None,
                   tol: float = 1e-10) -> np.ndarray:
    """Largest discretely convex field that equals ``phi`` off the inner region."""
    dirs = dirs or DirectionSet.default()
    ok, worst = is_discretely_convex(disc, phi, dirs)
    if not ok:
        raise ConvexityError(f"barrier is not discretely convex (worst {worst:.3e})")
    data = np.where(disc.mask("omega0"), np.inf, phi)
    env = lower_convex_envelope(disc, data, dirs, tol=tol)
    # pinned nodes are exact by construction
    fixed = disc.mask("annulus")
    env[fixed] = phi[fixed]
    return env


def is_admissible(disc: Discretization, v: np.ndarray, phi: np.ndarray, tol: float = 1e-8,
                  dirs: DirectionSet | None = None, envelope: np.ndarray | None = None) -> bool:
    fixed = disc.mask("annulus")
    if np.max(np.abs(v[fixed] - phi[fixed])) > tol:
        return False
    ok, _ = is_discretely_convex(disc, v, dirs, tol=tol)
    if not ok:
        return False
    env = chord_envelope(disc, phi, dirs) if envelope is None else envelope
    inner = disc.mask("omega0")
    return bool(np.all(v[inner] <= env[inner] + tol))


# ----------------------------------------------------------------------------
# interior sup bounded by the annulus integral

@dataclass(frozen=True)
class NestedTriple:
    """Convex regions ``omega0 << omega1 << omega2`` sharing one grid."""

    omega0: DiskRegion | RectangleRegion
    omega1: DiskRegion | RectangleRegion
    omega2: DiskDomain
    h: float

    def __post_init__(self):
        s0 = self.omega0.boundary_samples(256)
        s1 = self.omega1.boundary_samples(256)
        if np.max(self.omega1.signed_distance(s0)) >= 0:
            raise ValueError("omega0 must be compactly contained in omega1")
        if np.max(self.omega2.signed_distance(s1)) >= 0:
            raise ValueError("omega1 must be compactly contained in omega2")

    @cached_property
    def disc(self) -> Discretization:
        return discretize(DomainPair(self.omega2, self.omega0), self.h)

    @cached_property
    def mask1(self) -> np.ndarray:
        return self.omega1.contains(self.disc.grid.points) & self.disc.interior


def lemma21_ratio(u: np.ndarray, triple: NestedTriple, sign_tol: float = 1e-12,
                  boundary_max: float | None = None, check_convex: bool = True) -> float:
    """``max_{omega1}|u| / int_{omega2 \\ omega0} |u|`` (0/0 reads as 0).

    ``boundary_max`` is the maximum of ``u`` on the outer circle when known;
    otherwise the necessary condition ``u <= 0`` on the disk nodes is checked.
    """
    disc = triple.disc
    if check_convex:
        ok, worst = is_discretely_convex(disc, u)
        if not ok:
            raise ConvexityError(f"u is not discretely convex (worst {worst:.3e})")
    bmax = boundary_max if boundary_max is not None else float(np.max(u[disc.interior]))
    if bmax > sign_tol:
        raise ConvexityError("u must be nonpositive on the outer boundary")
    num = float(np.max(np.abs(u[triple.mask1])))
    w = disc.weights("annulus")
    den = float(np.sum(w * np.abs(np.where(w > 0, u, 0.0))))
    if den == 0.0:
        return 0.0 if num == 0.0 else np.inf
    return num / den


def _affine_family(rng, k):
    slopes = rng.normal(size=(k, 2)) * rng.uniform(0.2, 3.0, size=(k, 1))
    offsets = rng.normal(size=k)
    return slopes, offsets


def random_convex(disc: Discretization, seed: int, k: int, shift: bool = True, return_meta: bool = False):
    """Max of ``k`` random affine functions; with ``shift`` it is moved down
    so that its maximum over the outer circle is exactly zero."""
    if k < 1:
        raise ValueError("k must be at least 1")
    rng = np.random.default_rng(seed)
    a, b = _affine_family(rng, k)
    omega = disc.pair.omega
    c = np.asarray(omega.center)
    # exact max over the circle of each affine piece
    circ_max = float(np.max(a @ c + omega.radius * np.linalg.norm(a, axis=1) + b))
    if shift:
        b = b - circ_max
        circ_max = 0.0
    pts = disc.grid.points
    vals = np.max(pts @ a.T + b, axis=-1)
    out = np.where(disc.interior, vals, np.nan)
    if return_meta:
        return out, {"slopes": a, "offsets": b, "boundary_max": circ_max}
    return out


def fit_corollary_constants(sup_norms, boundary_max, annulus_l1):
    """Smallest ``(C1, C2) >= 0`` (in mean) with ``sup <= C1 |bmax| + C2 * L1`` on a batch."""
    s = np.asarray(sup_norms, dtype=float)
    m = np.abs(np.asarray(boundary_max, dtype=float))
    l1 = np.asarray(annulus_l1, dtype=float)
    res = linprog(c=[m.mean(), l1.mean()], A_ub=-np.stack([m, l1], axis=1), b_ub=-s,
                  bounds=[(0, None), (0, None)], method="highs")
    if not res.success:
        raise RuntimeError(f"constant fit failed: {res.message}")
    return float(res.x[0]), float(res.x[1])
