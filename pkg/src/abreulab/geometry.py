"""Domains, grids, node classification and boundary geometry.

The outer domain is always a disk, which gives a closed-form strictly convex
defining function and exact stencil-arm/boundary intersections.  The inner
region is a disk or an axis-aligned rectangle.  Everything downstream works
on a :class:`Discretization`, which bundles the grid, the node labels, the
boundary feet and the quadrature weights for one :class:`DomainPair`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "ConfigurationError",
    "DiskDomain",
    "DiskRegion",
    "RectangleRegion",
    "DomainPair",
    "Grid",
    "NodeLabel",
    "BoundaryFeet",
    "Discretization",
    "STENCIL_DIRECTIONS",
    "rho_eval",
    "exp_bump",
    "classify_nodes",
    "boundary_feet",
    "discretize",
]


class ConfigurationError(ValueError):
    """Raised for invalid geometric or run configuration."""


# Axis and diagonal directions used by the nine-point stencil.
STENCIL_DIRECTIONS = ((1, 0), (0, 1), (1, 1), (1, -1))


class NodeLabel:
    OUTSIDE = 0
    INSIDE_OMEGA0 = 1
    ANNULUS = 2
    NEAR_BOUNDARY = 3

    names = {0: "OUTSIDE", 1: "INSIDE_OMEGA0", 2: "ANNULUS", 3: "NEAR_BOUNDARY"}


@dataclass(frozen=True)
class DiskDomain:
    """Uniformly convex outer domain ``|x - center| < radius``."""

    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 1.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigurationError("disk radius must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def area(self) -> float:
        return np.pi * self.radius**2

    def signed_distance(self, x):
        x = np.asarray(x, dtype=float)
        c = np.asarray(self.center)
        return np.hypot(x[..., 0] - c[0], x[..., 1] - c[1]) - self.radius

    def boundary_samples(self, n: int) -> np.ndarray:
        t = 2 * np.pi * np.arange(n) / n
        c = np.asarray(self.center)
        return c + self.radius * np.stack([np.cos(t), np.sin(t)], axis=-1)


@dataclass(frozen=True)
class DiskRegion:
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 0.5
    kind = "disk"

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigurationError("inner disk radius must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def area(self) -> float:
        return np.pi * self.radius**2

    @property
    def centroid(self):
        return np.asarray(self.center)

    @property
    def inradius(self) -> float:
        return self.radius

    @property
    def diameter(self) -> float:
        return 2 * self.radius

    def signed_distance(self, x):
        x = np.asarray(x, dtype=float)
        c = np.asarray(self.center)
        return np.hypot(x[..., 0] - c[0], x[..., 1] - c[1]) - self.radius

    def contains(self, x):
        return self.signed_distance(x) < 0

    def boundary_samples(self, n: int) -> np.ndarray:
        t = 2 * np.pi * np.arange(n) / n
        return self.centroid + self.radius * np.stack([np.cos(t), np.sin(t)], axis=-1)

    def cell_fraction(self, x, h: float, sub: int = 8) -> np.ndarray:
        return _subsampled_fraction(self.contains, x, h, sub, self.signed_distance(x), h)


@dataclass(frozen=True)
class RectangleRegion:
    lower: tuple[float, float] = (1.0, 1.0)
    upper: tuple[float, float] = (2.0, 2.0)
    kind = "rectangle"

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if not (hi[0] > lo[0] and hi[1] > lo[1]):
            raise ConfigurationError("rectangle upper corner must exceed lower corner")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def area(self) -> float:
        return (self.upper[0] - self.lower[0]) * (self.upper[1] - self.lower[1])

    @property
    def centroid(self):
        return 0.5 * (np.asarray(self.lower) + np.asarray(self.upper))

    @property
    def inradius(self) -> float:
        return 0.5 * min(self.upper[0] - self.lower[0], self.upper[1] - self.lower[1])

    @property
    def diameter(self) -> float:
        return float(np.hypot(self.upper[0] - self.lower[0], self.upper[1] - self.lower[1]))

    def signed_distance(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        q = np.maximum(lo - x, x - hi)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return ((x[..., 0] > self.lower[0]) & (x[..., 0] < self.upper[0])
                & (x[..., 1] > self.lower[1]) & (x[..., 1] < self.upper[1]))

    def boundary_samples(self, n: int) -> np.ndarray:
        (x0, y0), (x1, y1) = self.lower, self.upper
        per = max(n // 4, 1)
        t = np.arange(per) / per
        sides = [
            np.stack([x0 + t * (x1 - x0), np.full(per, y0)], -1),
            np.stack([np.full(per, x1), y0 + t * (y1 - y0)], -1),
            np.stack([x1 - t * (x1 - x0), np.full(per, y1)], -1),
            np.stack([np.full(per, x0), y1 - t * (y1 - y0)], -1),
        ]
        return np.concatenate(sides)

    def cell_fraction(self, x, h: float, sub: int = 8) -> np.ndarray:
        # exact overlap of the dual cell with an axis-aligned box
        x = np.asarray(x, dtype=float)
        fr = np.ones(x.shape[:-1])
        for k in range(2):
            lo = np.maximum(x[..., k] - h / 2, self.lower[k])
            hi = np.minimum(x[..., k] + h / 2, self.upper[k])
            fr = fr * np.clip(hi - lo, 0.0, None) / h
        return fr


def _subsampled_fraction(contains, x, h, sub, sdist, width):
    x = np.asarray(x, dtype=float)
    fr = (sdist < 0).astype(float)
    cut = np.abs(sdist) < width
    if np.any(cut):
        off = (np.arange(sub) + 0.5) / sub - 0.5
        ox, oy = np.meshgrid(off * h, off * h, indexing="ij")
        pts = x[cut][:, None, :] + np.stack([ox.ravel(), oy.ravel()], -1)[None]
        fr[cut] = contains(pts).mean(axis=1)
    return fr


@dataclass(frozen=True)
class DomainPair:
    """Outer disk ``omega`` and inner convex region ``omega0``."""

    omega: DiskDomain
    omega0: DiskRegion | RectangleRegion
    margin: float = 1e-3

    def __post_init__(self):
        samples = self.omega0.boundary_samples(512)
        gap = -self.omega.signed_distance(samples)
        if np.min(gap) < self.margin:
            raise ConfigurationError(
                "inner region must be compactly contained in the outer disk "
                f"(min boundary gap {np.min(gap):.3g} < margin {self.margin:g})"
            )

    @classmethod
    def rochet_chone_default(cls):
        return cls(DiskDomain((1.5, 1.5), 1.2), RectangleRegion((1.0, 1.0), (2.0, 2.0)))

    @classmethod
    def unit_default(cls):
        return cls(DiskDomain((0.0, 0.0), 1.0), DiskRegion((0.0, 0.0), 0.5))


def rho_eval(domain: DiskDomain, x):
    """Defining function ``(|x-c|^2 - R^2)/2`` with its gradient and Hessian.

    Returns ``(rho, grad, hess)``; ``hess`` is the identity, so the convexity
    constant of the defining function is exactly one.
    """
    x = np.asarray(x, dtype=float)
    d = x - np.asarray(domain.center)
    rho = 0.5 * (np.sum(d * d, axis=-1) - domain.radius**2)
    hess = np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)).copy()
    return rho, d, hess


def exp_bump(domain: DiskDomain, x):
    """``e^rho - 1`` with gradient ``e^rho D rho`` and Hessian ``e^rho (D^2 rho + D rho D rho^T)``."""
    rho, g, H = rho_eval(domain, x)
    e = np.exp(rho)
    hess = e[..., None, None] * (H + g[..., :, None] * g[..., None, :])
    return e - 1.0, e[..., None] * g, hess


@dataclass(frozen=True)
class Grid:
    """Cartesian node grid ``x_ij = origin + h (i, j)``; arrays are indexed ``[i, j]``."""

    h: float
    origin: tuple[float, float]
    nx: int
    ny: int

    def __post_init__(self):
        if not self.h > 0:
            raise ConfigurationError("grid spacing must be positive")

    @classmethod
    def covering(cls, domain: DiskDomain, h: float, ghost: int = 1):
        """Grid aligned on the disk center, covering it with ``ghost`` extra layers."""
        if not h > 0:
            raise ConfigurationError("grid spacing must be positive")
        k = int(np.ceil(domain.radius / h - 1e-12)) + ghost
        c = np.asarray(domain.center)
        return cls(float(h), (c[0] - k * h, c[1] - k * h), 2 * k + 1, 2 * k + 1)

    @property
    def shape(self):
        return (self.nx, self.ny)

    @cached_property
    def points(self) -> np.ndarray:
        i, j = np.meshgrid(np.arange(self.nx), np.arange(self.ny), indexing="ij")
        return np.stack([self.origin[0] + self.h * i, self.origin[1] + self.h * j], axis=-1)

    @property
    def X(self):
        return self.points[..., 0]

    @property
    def Y(self):
        return self.points[..., 1]

    def translated(self, shift: tuple[int, int]) -> "Grid":
        return Grid(self.h, (self.origin[0] + shift[0] * self.h, self.origin[1] + shift[1] * self.h),
                    self.nx, self.ny)


def _interior_mask(grid: Grid, domain: DiskDomain) -> np.ndarray:
    # nodes within 1e-9 h of the circle count as boundary nodes, keeping arm
    # fractions bounded away from zero
    return domain.signed_distance(grid.points) < -1e-9 * grid.h


def _arm_fraction(domain: DiskDomain, x, step):
    """Smallest ``t in (0, 1]`` with ``x + t*step`` on the circle (``x`` inside)."""
    d = x - np.asarray(domain.center)
    a = np.sum(step * step, axis=-1)
    b = np.sum(d * step, axis=-1)
    c = np.sum(d * d, axis=-1) - domain.radius**2
    t = (-b + np.sqrt(b * b - a * c)) / a
    return np.clip(t, np.finfo(float).tiny, 1.0)


def classify_nodes(grid: Grid, pair: DomainPair) -> np.ndarray:
    """Label every node; see :class:`NodeLabel`.  Deterministic node-center test."""
    pts = grid.points
    inside = _interior_mask(grid, pair.omega)
    labels = np.full(grid.shape, NodeLabel.OUTSIDE, dtype=np.int8)
    near = np.zeros(grid.shape, dtype=bool)
    pad = np.pad(inside, 1, constant_values=False)
    for e in STENCIL_DIRECTIONS:
        for s in (1, -1):
            di, dj = s * e[0], s * e[1]
            nb = pad[1 + di:1 + di + grid.nx, 1 + dj:1 + dj + grid.ny]
            near |= inside & ~nb
    in0 = pair.omega0.contains(pts) & inside
    labels[inside] = NodeLabel.ANNULUS
    labels[in0] = NodeLabel.INSIDE_OMEGA0
    labels[near] = NodeLabel.NEAR_BOUNDARY
    if np.any(in0 & near):
        raise ConfigurationError("inner region too close to the outer boundary for this grid")
    return labels


@dataclass(frozen=True)
class BoundaryFeet:
    """Intersections of stencil arms with the outer circle.

    One entry per (interior node, direction, sign) whose arm leaves the disk:
    ``node`` is the flat interior index, ``direction`` indexes
    :data:`STENCIL_DIRECTIONS`, ``sign`` is +1/-1, ``fraction`` the arm
    length in units of ``h`` times the direction vector, and ``point`` the
    foot on the circle.  Values of boundary data live in a parallel array
    ("value slot") of length ``len(feet)``.
    """

    node: np.ndarray
    direction: np.ndarray
    sign: np.ndarray
    fraction: np.ndarray
    point: np.ndarray

    def __len__(self):
        return len(self.node)


def boundary_feet(grid: Grid, domain: DiskDomain, interior_index=None) -> BoundaryFeet:
    inside = _interior_mask(grid, domain)
    if interior_index is None:
        interior_index = _index_map(inside)
    pts = grid.points
    pad = np.pad(inside, 1, constant_values=False)
    nodes, dirs, signs, fracs, feet = [], [], [], [], []
    for k, e in enumerate(STENCIL_DIRECTIONS):
        for s in (1, -1):
            di, dj = s * e[0], s * e[1]
            nb = pad[1 + di:1 + di + grid.nx, 1 + dj:1 + dj + grid.ny]
            hit = inside & ~nb
            if not np.any(hit):
                continue
            x = pts[hit]
            step = grid.h * s * np.asarray(e, dtype=float)
            t = _arm_fraction(domain, x, step)
            nodes.append(interior_index[hit])
            dirs.append(np.full(len(x), k))
            signs.append(np.full(len(x), s))
            fracs.append(t)
            feet.append(x + t[:, None] * step)
    cat = (lambda a, dt: np.concatenate(a).astype(dt)) if nodes else (lambda a, dt: np.zeros(0, dt))
    pt = np.concatenate(feet) if feet else np.zeros((0, 2))
    if len(pt):
        # project onto the circle to remove rounding drift
        c = np.asarray(domain.center)
        d = pt - c
        pt = c + domain.radius * d / np.linalg.norm(d, axis=1, keepdims=True)
    return BoundaryFeet(cat(nodes, np.int64), cat(dirs, np.int64), cat(signs, np.int64),
                        cat(fracs, float), pt)


def _index_map(mask):
    idx = np.full(mask.shape, -1, dtype=np.int64)
    idx[mask] = np.arange(int(mask.sum()))
    return idx


@dataclass(frozen=True)
class Discretization:
    """Grid, labels, feet and quadrature weights for a domain pair."""

    pair: DomainPair
    grid: Grid
    labels: np.ndarray
    feet: BoundaryFeet
    index: np.ndarray = field(repr=False)

    @property
    def h(self) -> float:
        return self.grid.h

    @cached_property
    def interior(self) -> np.ndarray:
        return self.labels != NodeLabel.OUTSIDE

    @property
    def n_interior(self) -> int:
        return int(self.interior.sum())

    @cached_property
    def interior_points(self) -> np.ndarray:
        return self.grid.points[self.interior]

    def mask(self, region: str) -> np.ndarray:
        """Node mask for ``omega0`` (INSIDE), ``annulus`` (ANNULUS and NEAR_BOUNDARY),
        ``near_boundary`` or ``omega`` (all interior nodes)."""
        L = self.labels
        if region == "omega0":
            return L == NodeLabel.INSIDE_OMEGA0
        if region == "annulus":
            return (L == NodeLabel.ANNULUS) | (L == NodeLabel.NEAR_BOUNDARY)
        if region == "near_boundary":
            return L == NodeLabel.NEAR_BOUNDARY
        if region == "omega":
            return L != NodeLabel.OUTSIDE
        raise ValueError(f"unknown region {region!r}")

    @cached_property
    def weights_omega(self) -> np.ndarray:
        """Area weights of the outer disk, carried by interior nodes only.

        Full interior cells weigh ``h^2``; cells cut by the circle are
        subsampled and each subsample inside the disk is credited to the
        nearest interior node, so the weights sum to the disk area.
        """
        h = self.h
        pts = self.grid.points
        w = np.zeros(self.grid.shape)
        sd = self.pair.omega.signed_distance(pts)
        full = (sd < -h / np.sqrt(2)) & self.interior
        w[full] = h * h
        cut = np.abs(sd) <= h / np.sqrt(2) + 1e-12
        sub = 10
        off = (np.arange(sub) + 0.5) / sub - 0.5
        ox, oy = np.meshgrid(off * h, off * h, indexing="ij")
        samples = (pts[cut][:, None, :] + np.stack([ox.ravel(), oy.ravel()], -1)[None]).reshape(-1, 2)
        samples = samples[self.pair.omega.signed_distance(samples) < 0]
        inode = np.argwhere(self.interior)
        tree = cKDTree(self.grid.points[self.interior])
        _, nearest = tree.query(samples)
        acc = np.bincount(nearest, minlength=len(inode)) * (h * h / sub**2)
        flat = np.zeros(len(inode))
        flat += acc
        w[self.interior] += flat
        return w

    @cached_property
    def weights_omega0(self) -> np.ndarray:
        w = self.h**2 * self.pair.omega0.cell_fraction(self.grid.points, self.h)
        w[~self.interior] = 0.0
        return w

    @cached_property
    def weights_annulus(self) -> np.ndarray:
        return np.clip(self.weights_omega - self.weights_omega0, 0.0, None)

    def weights(self, region: str) -> np.ndarray:
        if region == "omega0":
            return self.weights_omega0
        if region == "annulus":
            return self.weights_annulus
        if region == "omega":
            return self.weights_omega
        raise ValueError(f"unknown region {region!r}")

    def sample(self, func: Callable, outside=np.nan) -> np.ndarray:
        """Evaluate ``func(points) -> values`` at interior nodes; ``outside`` elsewhere."""
        out = np.full(self.grid.shape, outside, dtype=float)
        out[self.interior] = np.asarray(func(self.interior_points), dtype=float)
        return out

    def foot_values(self, func: Callable) -> np.ndarray:
        return np.asarray(func(self.feet.point), dtype=float)

    def boundary_nodes_distance(self) -> np.ndarray:
        """Distance of each interior node to the outer circle."""
        return -self.pair.omega.signed_distance(self.interior_points)

    def compact_mask(self, margin: float) -> np.ndarray:
        """Nodes of the inner region at distance >= ``margin`` from its boundary."""
        sd = self.pair.omega0.signed_distance(self.grid.points)
        return self.mask("omega0") & (sd <= -margin)


def discretize(pair: DomainPair, h: float) -> Discretization:
    grid = Grid.covering(pair.omega, h)
    labels = classify_nodes(grid, pair)
    index = _index_map(labels != NodeLabel.OUTSIDE)
    feet = boundary_feet(grid, pair.omega, index)
    return Discretization(pair, grid, labels, feet, index)
