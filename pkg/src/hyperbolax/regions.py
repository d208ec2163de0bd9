"""Dyadic caps and sectors over the restricted annuli.

A region of scale ``N`` and level ``r`` is addressed by a layer index ``j`` and
a cube index ``k`` in ``{0, ..., N/r - 1}^(d-1)``. All genealogy, adjacency and
separation questions are answered on this integer lattice, so no floating
tolerance ever enters a combinatorial decision.

Geometry is taken in the chart ``xi -> (|xi|, eta)`` with ``eta`` the first
``d - 1`` coordinates of ``xi / |xi|``. Points are in the restricted annulus
when the direction lifts from the base cube ``C_1 = [-ell, ell]^(d-1)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np
from scipy import integrate

from .constants import get_constants
from .geometry import FrequencyPoint, bracket


class RegionError(ValueError):
    """Invalid dyadic parameters or an inapplicable region predicate."""


@dataclass(frozen=True)
class BaseCubeConfig:
    ell: float = 0.0625
    eps1: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.ell < 0.25:
            raise RegionError(f"ell must lie in (0, 1/4), got {self.ell}")
        if self.eps1 <= 0:
            raise RegionError("eps1 must be positive")

    @classmethod
    def from_constants(cls, constants=None):
        c = constants or get_constants()
        return cls(ell=c.ell, eps1=c.eps1)


def distortion_ratio(cfg: BaseCubeConfig, d: int = 3, n: int = 20000, seed: int = 0):
    """Extremes of ``dist(eta*, zeta*) / |eta - zeta|`` over random pairs in ``C_1``.

    Pairs include corner-to-corner and near-coincident samples, where the
    ratio is extremal.
    """
    rng = np.random.default_rng(seed)
    eta = rng.uniform(-cfg.ell, cfg.ell, size=(n, d - 1))
    zeta = rng.uniform(-cfg.ell, cfg.ell, size=(n, d - 1))
    corners = np.array(list(itertools.product([-cfg.ell, cfg.ell], repeat=d - 1)))
    eta = np.vstack([eta, corners, corners * 0.999])
    zeta = np.vstack([zeta, -corners, corners])
    a, b = lift_eta(eta), lift_eta(zeta)
    geo = np.arccos(np.clip(np.sum(a * b, axis=-1), -1.0, 1.0))
    # arccos loses precision for nearby points; use the chord form instead
    chord = np.linalg.norm(a - b, axis=-1)
    geo = np.where(chord < 1e-3, 2.0 * np.arcsin(chord / 2.0), geo)
    eu = np.linalg.norm(eta - zeta, axis=-1)
    ratio = geo / eu
    return float(ratio.min()), float(ratio.max())


def check_distortion(cfg: BaseCubeConfig, d: int = 3):
    lo, hi = distortion_ratio(cfg, d)
    if lo < 1.0 - 1e-12 or hi > 1.0 + cfg.eps1:
        raise RegionError(
            f"ell={cfg.ell} violates the lift distortion bound: ratio range [{lo}, {hi}]"
        )
    return lo, hi


def is_dyadic(x) -> bool:
    x = float(x)
    return x > 0 and math.isfinite(x) and math.frexp(x)[0] == 0.5


def _require_dyadic(name, x):
    if not is_dyadic(x):
        raise RegionError(f"{name}={x!r} is not a dyadic number 2^m")


def _check_scale(N, r):
    _require_dyadic("N", N)
    _require_dyadic("r", r)
    if N < 1:
        raise RegionError(f"N must be >= 1, got {N}")
    if r > N:
        raise RegionError(f"r={r} exceeds N={N}")


def layer_count(r) -> int:
    return max(1, int(round(1.0 / r)))


def cubes_per_axis(N, r) -> int:
    return int(round(N / r))


def lift_eta(eta):
    """Lift ``eta`` in the base cube to ``(eta, (1 - |eta|^2)^(1/2))`` on the sphere."""
    eta = np.asarray(eta, dtype=float)
    last = np.sqrt(1.0 - np.sum(eta * eta, axis=-1))
    return np.concatenate([eta, last[..., None]], axis=-1)


def radial_bounds(N, r, j):
    """Radial interval of layer ``j``. The innermost layer of ``N = 1`` reaches the origin."""
    if r <= 1:
        lo = 0.5 * N * (1.0 + 3.0 * j * r)
        hi = 0.5 * N * (1.0 + 3.0 * (j + 1) * r)
    else:
        lo, hi = 0.5 * N, 2.0 * N
    if N == 1 and j == 0:
        lo = 0.0
    return lo, hi


@dataclass(frozen=True)
class DyadicCube:
    M: float
    index: tuple
    omega: np.ndarray
    halfwidth: float

    @classmethod
    def build(cls, M, index, cfg: BaseCubeConfig):
        idx = np.asarray(index, dtype=float)
        omega = -cfg.ell + 2.0 * cfg.ell * M * (idx + 0.5)
        omega.setflags(write=False)
        return cls(M=M, index=tuple(int(i) for i in index), omega=omega, halfwidth=cfg.ell * M)

    @property
    def lo(self):
        return self.omega - self.halfwidth

    @property
    def hi(self):
        return self.omega + self.halfwidth


@dataclass(frozen=True, order=True)
class RegionId:
    N: float
    r: float
    j: int
    k: tuple

    def __post_init__(self):
        _check_scale(self.N, self.r)
        object.__setattr__(self, "N", float(self.N))
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "j", int(self.j))
        object.__setattr__(self, "k", tuple(int(i) for i in self.k))
        if not 0 <= self.j < layer_count(self.r):
            raise RegionError(f"layer j={self.j} outside 0..{layer_count(self.r) - 1}")
        n = cubes_per_axis(self.N, self.r)
        if any(not 0 <= i < n for i in self.k):
            raise RegionError(f"cube index {self.k} outside 0..{n - 1}")

    @property
    def d(self):
        return len(self.k) + 1

    @property
    def kind(self):
        return "cap" if self.r <= 1 else "sector"


@dataclass(frozen=True)
class Region:
    id: RegionId
    center: FrequencyPoint
    radial_lo: float
    radial_hi: float
    cube: DyadicCube

    @property
    def kind(self):
        return self.id.kind

    @property
    def d(self):
        return self.id.d


def region_center(kid: RegionId, cfg: BaseCubeConfig | None = None) -> FrequencyPoint:
    cfg = cfg or BaseCubeConfig.from_constants()
    cube = DyadicCube.build(kid.r / kid.N, kid.k, cfg)
    scale = 0.5 * kid.N * (1.0 + 3.0 * min(1.0, kid.r) * (kid.j + 0.5))
    return FrequencyPoint(scale * lift_eta(cube.omega))


def make_region(kid: RegionId, cfg: BaseCubeConfig | None = None) -> Region:
    cfg = cfg or BaseCubeConfig.from_constants()
    lo, hi = radial_bounds(kid.N, kid.r, kid.j)
    return Region(
        id=kid,
        center=region_center(kid, cfg),
        radial_lo=lo,
        radial_hi=hi,
        cube=DyadicCube.build(kid.r / kid.N, kid.k, cfg),
    )


def count_regions(N, r, d: int = 3) -> int:
    _check_scale(N, r)
    return layer_count(r) * cubes_per_axis(N, r) ** (d - 1)


def index_arrays(N, r, d: int = 3):
    """All ``(j, k)`` of level ``(N, r)`` as integer arrays in lexicographic order."""
    _check_scale(N, r)
    J, n = layer_count(r), cubes_per_axis(N, r)
    grids = np.meshgrid(np.arange(J), *([np.arange(n)] * (d - 1)), indexing="ij")
    flat = np.stack([g.reshape(-1) for g in grids], axis=-1)
    return flat[:, 0], flat[:, 1:]


def iter_region_ids(N, r, d: int = 3) -> Iterator[RegionId]:
    _check_scale(N, r)
    J, n = layer_count(r), cubes_per_axis(N, r)
    for j in range(J):
        for k in itertools.product(range(n), repeat=d - 1):
            yield RegionId(N, r, j, k)


def enumerate_regions(N, r, cfg: BaseCubeConfig | None = None, d: int = 3) -> list:
    """All regions of level ``(N, r)``, ordered lexicographically by ``(j, k)``."""
    cfg = cfg or BaseCubeConfig.from_constants()
    return [make_region(kid, cfg) for kid in iter_region_ids(N, r, d)]


def polar_chart(xi):
    """Return ``(rho, eta, upper)`` for points ``xi``; ``upper`` flags a positive last coordinate."""
    xi = np.asarray(xi, dtype=float)
    rho = np.linalg.norm(xi, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        eta = xi[..., :-1] / rho[..., None]
    return rho, eta, xi[..., -1] > 0


def in_annulus(xi, N, cfg: BaseCubeConfig | None = None, tol: float = 0.0):
    """Membership in the (closed) restricted annulus of scale ``N``."""
    cfg = cfg or BaseCubeConfig.from_constants()
    rho, eta, upper = polar_chart(xi)
    lo = 0.0 if N == 1 else 0.5 * N
    ok = (rho > 0) & upper & (rho >= lo * (1 - tol)) & (rho <= 2.0 * N * (1 + tol))
    ok &= np.all(np.abs(eta) <= cfg.ell * (1 + tol), axis=-1)
    return ok


def region_contains(kappa: Region, xi, tol: float = 0.0):
    """Closed membership test; ``tol`` relaxes every face relatively.

    The origin belongs to no region.
    """
    if isinstance(xi, FrequencyPoint):
        xi = xi.xi
    rho, eta, upper = polar_chart(xi)
    h = kappa.cube.halfwidth * (1 + tol)
    ok = (rho > 0) & upper
    ok &= (rho >= kappa.radial_lo - tol * kappa.radial_hi) & (rho <= kappa.radial_hi * (1 + tol))
    ok &= np.all(np.abs(eta - kappa.cube.omega) <= h, axis=-1)
    return ok if ok.ndim else bool(ok)


def locate(xi, N, r, cfg: BaseCubeConfig | None = None):
    """Unique region index of each point.

    Points on shared faces go to the lexicographically smallest region. The
    rule is nested: the parent of ``locate(xi, N, r)`` is ``locate(xi, N, 2r)``.

    Returns
    -------
    j : ndarray of int
    k : ndarray of int, shape (..., d-1)
    valid : ndarray of bool
        False for points outside the restricted annulus.
    """
    cfg = cfg or BaseCubeConfig.from_constants()
    _check_scale(N, r)
    xi = np.asarray(xi, dtype=float)
    rho, eta, _ = polar_chart(xi)
    valid = in_annulus(xi, N, cfg)
    J, n = layer_count(r), cubes_per_axis(N, r)
    if r <= 1:
        u = (rho - 0.5 * N) / (1.5 * N)
        with np.errstate(invalid="ignore"):
            j = np.clip(np.ceil(u / r) - 1, 0, J - 1)
    else:
        j = np.zeros_like(rho)
    v = (eta + cfg.ell) / (2.0 * cfg.ell)
    M = r / N
    with np.errstate(invalid="ignore"):
        k = np.clip(np.ceil(v / M) - 1, 0, n - 1)
    j = np.where(valid, j, 0).astype(np.int64)
    k = np.where(valid[..., None], k, 0).astype(np.int64)
    return j, k, valid


# ---------------------------------------------------------------- genealogy


def _ancestor_j(j, r, g):
    """Layer index of the generation-``g`` ancestor of layer ``j`` at level ``r``."""
    if r * 2**g <= 1:
        return j >> g
    return j * 0


def ancestor(kid: RegionId, g: int) -> RegionId:
    if kid.r * 2**g > kid.N:
        raise RegionError(f"generation-{g} ancestor of level r={kid.r} exceeds N={kid.N}")
    return RegionId(
        kid.N, kid.r * 2**g, int(_ancestor_j(kid.j, kid.r, g)), tuple(i >> g for i in kid.k)
    )


def parent(kid: RegionId) -> RegionId:
    if kid.r >= kid.N:
        raise RegionError("a region with r = N has no parent")
    return ancestor(kid, 1)


def children(kid: RegionId) -> list:
    """Children at level ``r/2``: ``2^d`` caps when ``r <= 1``, else ``2^(d-1)``."""
    rc = kid.r / 2
    js = [2 * kid.j, 2 * kid.j + 1] if kid.r <= 1 else [0]
    out = []
    for j in js:
        for bits in itertools.product((0, 1), repeat=kid.d - 1):
            out.append(RegionId(kid.N, rc, j, tuple(2 * i + b for i, b in zip(kid.k, bits))))
    return out


def adjacent_indices(j1, k1, j2, k2):
    """Closures intersect iff layers and every cube coordinate differ by at most one."""
    j1, j2 = np.asarray(j1), np.asarray(j2)
    k1, k2 = np.asarray(k1), np.asarray(k2)
    return (np.abs(j1 - j2) <= 1) & np.all(np.abs(k1 - k2) <= 1, axis=-1)


def _same_level(a, b):
    if (a.N, a.r) != (b.N, b.r) or a.d != b.d:
        raise RegionError(f"regions at different levels: (N,r)={a.N, a.r} vs {b.N, b.r}")


def _as_id(x):
    return x.id if isinstance(x, Region) else x


def adjacent(kappa, kappa_prime) -> bool:
    a, b = _as_id(kappa), _as_id(kappa_prime)
    _same_level(a, b)
    return bool(adjacent_indices(a.j, a.k, b.j, b.k))


def separable_level(N, r, d: int = 3) -> bool:
    return r <= N / 2**d


def separated_indices(N, r, j1, k1, j2, k2, d: int = 3):
    """Vectorized separation on index arrays of one level."""
    if not separable_level(N, r, d):
        raise RegionError(f"separation needs r <= N/2^d; got r={r}, N={N}, d={d}")
    j1, j2 = np.asarray(j1), np.asarray(j2)
    k1, k2 = np.asarray(k1), np.asarray(k2)
    out = np.ones(np.broadcast(j1, j2).shape, dtype=bool)
    for g in range(d):
        out &= ~adjacent_indices(_ancestor_j(j1, r, g), k1 >> g, _ancestor_j(j2, r, g), k2 >> g)
    out &= adjacent_indices(_ancestor_j(j1, r, d), k1 >> d, _ancestor_j(j2, r, d), k2 >> d)
    return out


def separated(kappa, kappa_prime) -> bool:
    """Non-adjacent through generations ``0..d-1`` with adjacent ``d``-parents."""
    a, b = _as_id(kappa), _as_id(kappa_prime)
    _same_level(a, b)
    return bool(separated_indices(a.N, a.r, a.j, a.k, b.j, b.k, a.d))


# ------------------------------------------------------------ partner counts
#
# Adjacency of g-ancestors is a product condition over the lattice axes and is
# monotone in g, so kappa ~ kappa' iff the d-ancestors are adjacent and the
# (d-1)-ancestors are not. Partner sets are therefore differences of two
# product boxes, one interval per axis.


def _axis_window(i, n, g, collapse=False):
    """Indices ``i'`` in ``[0, n)`` whose g-ancestor is within one of that of ``i``."""
    if collapse:
        return 0, n - 1
    a = i >> g
    lo = max(0, (a - 1) << g)
    hi = min(n - 1, ((a + 2) << g) - 1)
    return lo, hi


def _axis_windows(N, r, j, k, g, d):
    J, n = layer_count(r), cubes_per_axis(N, r)
    wins = [_axis_window(j, J, g, collapse=r * 2**g > 1)]
    wins += [_axis_window(i, n, g) for i in k]
    return wins


def partner_count(kid: RegionId) -> int:
    """Number of regions separated from ``kid`` at its own level."""
    d = kid.d
    if not separable_level(kid.N, kid.r, d):
        raise RegionError(f"separation needs r <= N/2^d; got r={kid.r}, N={kid.N}")
    outer = _axis_windows(kid.N, kid.r, kid.j, kid.k, d, d)
    inner = _axis_windows(kid.N, kid.r, kid.j, kid.k, d - 1, d)
    size = lambda w: math.prod(hi - lo + 1 for lo, hi in w)  # noqa: E731
    return size(outer) - size(inner)


def partner_counts(N, r, j, k, d: int = 3):
    """Vectorized ``partner_count`` over index arrays."""
    if not separable_level(N, r, d):
        raise RegionError(f"separation needs r <= N/2^d; got r={r}, N={N}")
    J, n = layer_count(r), cubes_per_axis(N, r)
    j, k = np.asarray(j), np.asarray(k)

    def box(g):
        if r * 2**g > 1:
            total = np.full(j.shape, J, dtype=np.int64)
        else:
            a = j >> g
            total = np.minimum(J - 1, ((a + 2) << g) - 1) - np.maximum(0, (a - 1) << g) + 1
        for axis in range(d - 1):
            a = k[..., axis] >> g
            total = total * (np.minimum(n - 1, ((a + 2) << g) - 1) - np.maximum(0, (a - 1) << g) + 1)
        return total

    return box(d) - box(d - 1)


def _representative_axis(n, g):
    """Indices of ``[0, n)`` realizing every distinct ancestor window up to generation ``g``.

    Windows depend on the index only through its residue mod ``2^g`` and on
    clipping within ``2^(g+2)`` of either end.
    """
    edge = 2 ** (g + 2)
    if n <= 3 * edge:
        return np.arange(n)
    mid = (n // 2) >> g << g
    return np.unique(np.concatenate([np.arange(edge), np.arange(mid, mid + 2**g), np.arange(n - edge, n)]))


def max_partner_count(N, r, d: int = 3) -> int:
    """Largest ``partner_count`` on level ``(N, r)``, exact without enumerating the level."""
    if not separable_level(N, r, d):
        raise RegionError(f"separation needs r <= N/2^d; got r={r}, N={N}")
    J, n = layer_count(r), cubes_per_axis(N, r)
    axes = [np.arange(J) if J <= 3 * 2 ** (d + 2) else _representative_axis(J, d)]
    axes += [_representative_axis(n, d)] * (d - 1)
    grids = np.meshgrid(*axes, indexing="ij")
    j = grids[0].reshape(-1)
    k = np.stack([g.reshape(-1) for g in grids[1:]], axis=-1)
    return int(partner_counts(N, r, j, k, d).max())


def separated_partners(kid: RegionId) -> list:
    """Explicit list of regions separated from ``kid``."""
    d = kid.d
    outer = _axis_windows(kid.N, kid.r, kid.j, kid.k, d, d)
    inner = _axis_windows(kid.N, kid.r, kid.j, kid.k, d - 1, d)
    out = []
    for idx in itertools.product(*(range(lo, hi + 1) for lo, hi in outer)):
        if all(lo <= i <= hi for i, (lo, hi) in zip(idx, inner)):
            continue
        out.append(RegionId(kid.N, kid.r, idx[0], idx[1:]))
    return out


def default_r_min(N, d: int = 3):
    return N / 2 ** (d + 2)


def whitney_levels(N, d: int = 3, r_min=None):
    """Dyadic levels ``N/2^d, N/2^(d+1), ..., r_min`` admitting separation."""
    _require_dyadic("N", N)
    r_min = default_r_min(N, d) if r_min is None else r_min
    _require_dyadic("r_min", r_min)
    r = N / 2**d
    levels = []
    while r >= r_min:
        levels.append(r)
        r /= 2
    return levels


def whitney(N, cfg: BaseCubeConfig | None = None, d: int = 3, r_min=None):
    """Lazily yield ordered triples ``(r, kappa, kappa')`` with ``kappa ~ kappa'``.

    The full cover of the off-diagonal needs every dyadic level; the
    enumeration stops at ``r_min`` (default ``N / 2^(d+2)``).
    """
    for r in whitney_levels(N, d, r_min):
        for kid in iter_region_ids(N, r, d):
            for other in separated_partners(kid):
                yield r, kid, other


def whitney_count(N, d: int = 3, r_min=None) -> int:
    """Total number of triples listed by ``whitney`` without materializing them."""
    total = 0
    for r in whitney_levels(N, d, r_min):
        j, k = index_arrays(N, r, d)
        total += int(partner_counts(N, r, j, k, d).sum())
    return total


def whitney_pair_level(xi, eta, N, cfg: BaseCubeConfig | None = None, d: int = 3, r_floor=None):
    """Levels at which the pair ``(xi, eta)`` lies in a separated product ``kappa x kappa'``.

    Scans from ``r = N`` downward until well below the first adjacent level,
    so the returned list is exactly the set of matching levels. An empty list
    means the pair is on the diagonal (or closer than ``r_floor``).
    """
    cfg = cfg or BaseCubeConfig.from_constants()
    r_floor = r_floor if r_floor is not None else N * 2.0**-50
    hits = []
    r = float(N)
    first_adjacent = None
    adj_by_level = {}
    while r >= r_floor:
        j1, k1, _ = locate(xi, N, r, cfg)
        j2, k2, _ = locate(eta, N, r, cfg)
        adj = bool(adjacent_indices(j1, k1, j2, k2))
        adj_by_level[r] = adj
        if adj:
            first_adjacent = r
        elif first_adjacent is not None and r < first_adjacent / 2 ** (d + 1):
            break
        r /= 2
    for r, adj in adj_by_level.items():
        if not separable_level(N, r, d):
            continue
        ok = not adj
        for g in range(1, d):
            ok &= not adj_by_level.get(r * 2**g, True)
        ok &= adj_by_level.get(r * 2**d, False)
        if ok:
            hits.append(r)
    return hits


def whitney_hit_counts(xi, eta, N, cfg: BaseCubeConfig | None = None, d: int = 3, r_floor=None):
    """Vectorized :func:`whitney_pair_level`: number of matching levels per pair.

    Returns ``(hits, finest)`` where ``finest`` is the finest level scanned
    for each pair (boundaries of coarser levels are unions of its faces).
    """
    cfg = cfg or BaseCubeConfig.from_constants()
    xi, eta = np.atleast_2d(xi), np.atleast_2d(eta)
    n = xi.shape[0]
    r_floor = r_floor if r_floor is not None else N * 2.0**-50
    first_adj = np.full(n, np.nan)
    finest = np.full(n, float(N))
    done = np.zeros(n, dtype=bool)
    adj_levels = []
    r = float(N)
    while r >= r_floor and not done.all():
        j1, k1, _ = locate(xi, N, r, cfg)
        j2, k2, _ = locate(eta, N, r, cfg)
        adj = adjacent_indices(j1, k1, j2, k2)
        adj_levels.append((r, adj))
        first_adj = np.where(adj, r, first_adj)
        finest = np.where(done, finest, r)
        done |= ~np.isnan(first_adj) & (r < first_adj / 2 ** (d + 1))
        r /= 2
    by_r = dict(adj_levels)
    hits = np.zeros(n, dtype=np.int64)
    for r, adj in adj_levels:
        if not separable_level(N, r, d):
            continue
        ok = ~adj
        for g in range(1, d):
            ok &= ~by_r.get(r * 2**g, np.ones(n, dtype=bool))
        ok &= by_r.get(r * 2**d, np.zeros(n, dtype=bool))
        # a pair already finished at a coarser level is not scanned here
        ok &= finest <= r
        hits += ok
    return hits, finest


def boundary_distance(xi, N, r, cfg: BaseCubeConfig | None = None):
    """Euclidean-scale distance of each point to the faces of its level-``(N, r)`` region.

    Radial faces count in ``|xi|``; angular faces in ``|xi|`` times the
    ``eta`` distance. The annulus boundary is included.
    """
    cfg = cfg or BaseCubeConfig.from_constants()
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    rho, eta, _ = polar_chart(xi)
    r = np.broadcast_to(np.asarray(r, dtype=float), rho.shape)
    u = (rho - 0.5 * N) / (1.5 * N)
    step_u = np.where(r <= 1, r, 1.0)
    du = np.abs(u / step_u - np.round(u / step_u)) * step_u * 1.5 * N
    if N == 1:
        du = np.where(rho < 0.5, np.inf, du)
    dr = np.minimum(du, np.abs(rho - 2.0 * N))
    v = (eta + cfg.ell) / (2.0 * cfg.ell)
    M = (r / N)[..., None]
    dv = np.abs(v / M - np.round(v / M)) * M * 2.0 * cfg.ell * rho[..., None]
    return np.minimum(dr, dv.min(axis=-1))


# ----------------------------------------------------------------- volumes


@lru_cache(maxsize=65536)
def _solid_angle(lo: tuple, hi: tuple) -> float:
    f = lambda *eta: 1.0 / math.sqrt(1.0 - sum(e * e for e in eta))  # noqa: E731
    val, _ = integrate.nquad(
        f, list(zip(lo, hi)), opts={"epsabs": 0.0, "epsrel": 1e-13, "limit": 200}
    )
    return val


def solid_angle(cube: DyadicCube) -> float:
    """Surface measure of the lifted cube on the unit sphere."""
    return _solid_angle(tuple(float(x) for x in cube.lo), tuple(float(x) for x in cube.hi))


def region_volume(kappa: Region) -> float:
    d = kappa.d
    radial = (kappa.radial_hi**d - kappa.radial_lo**d) / d
    return radial * solid_angle(kappa.cube)


def volume_ratio(kappa: Region) -> float:
    """Volume over ``N r^d`` (caps) or ``N r^(d-1)`` (sectors)."""
    N, r, d = kappa.id.N, kappa.id.r, kappa.d
    return region_volume(kappa) / (N * r ** (d if r <= 1 else d - 1))


# ------------------------------------------------------------------ sumsets


@dataclass(frozen=True)
class SumsetBox:
    kappa: Region
    kappa_prime: Region
    gamma0: FrequencyPoint
    rect_halfwidths: tuple
    band: tuple

    def contains(self, xi, xi_prime):
        """Check sampled sums against the band, radial and angular bounds."""
        s = np.asarray(xi) + np.asarray(xi_prime)
        g = self.gamma0.xi
        ng = np.linalg.norm(g)
        ns = np.linalg.norm(s, axis=-1)
        vert = bracket(xi) + bracket(xi_prime) - np.sqrt(4.0 + ns**2)
        rad = np.abs(ns - ng)
        ang = np.sqrt(np.maximum(ns * ng - s @ g, 0.0))
        return (
            (vert >= self.band[0]) & (vert <= self.band[1])
            & (rad <= self.rect_halfwidths[0]) & (ang <= self.rect_halfwidths[1])
        )


def sumset_statistics(xi, xi_prime, gamma0):
    """Vertical gap, radial and angular displacement of sampled sums."""
    s = np.asarray(xi) + np.asarray(xi_prime)
    ng = np.linalg.norm(gamma0)
    ns = np.linalg.norm(s, axis=-1)
    vert = bracket(xi) + bracket(xi_prime) - np.sqrt(4.0 + ns**2)
    rad = np.abs(ns - ng)
    ang = np.sqrt(np.maximum(ns * ng - s @ np.asarray(gamma0), 0.0))
    return vert, rad, ang


def sumset_box(kappa: Region, kappa_prime: Region, constants=None) -> SumsetBox:
    if not separated(kappa, kappa_prime):
        raise RegionError("sumset_box requires separated regions")
    c = constants or get_constants()
    N, r = kappa.id.N, kappa.id.r
    gamma0 = FrequencyPoint(kappa.center.xi + kappa_prime.center.xi)
    return SumsetBox(
        kappa=kappa,
        kappa_prime=kappa_prime,
        gamma0=gamma0,
        rect_halfwidths=(c.sumset_radial_C * min(1.0, r) * N, c.sumset_angular_C * r),
        band=(c.sumset_band_lo * r * r / N, c.sumset_band_hi * r * r / N),
    )


def sample_region(kappa: Region, n: int, rng, interior: float = 0.0):
    """Uniform (Lebesgue) samples of a region.

    ``interior`` shrinks every face by that fraction of the region's extent,
    keeping samples away from boundaries.
    """
    d = kappa.d
    lo, hi = kappa.radial_lo, kappa.radial_hi
    pad = interior * (hi - lo)
    lo, hi = lo + pad, hi - pad
    h = kappa.cube.halfwidth * (1.0 - 2.0 * interior)
    rho = (rng.uniform(lo**d, hi**d, size=n)) ** (1.0 / d)
    out = np.empty((0, d))
    # rejection sampling on the lifted cube with weight 1/sqrt(1-|eta|^2)
    wmax = 1.0 / math.sqrt(1.0 - np.sum((np.abs(kappa.cube.omega) + h) ** 2))
    while out.shape[0] < n:
        eta = kappa.cube.omega + rng.uniform(-h, h, size=(2 * n, d - 1))
        w = 1.0 / np.sqrt(1.0 - np.sum(eta * eta, axis=-1))
        keep = rng.uniform(0.0, wmax, size=2 * n) < w
        out = np.vstack([out, lift_eta(eta[keep])])
    return rho[:, None] * out[:n]


def to_lines(regions: Sequence[Region], version: str) -> str:
    """Line-delimited dump: ``N r j k center radial_lo radial_hi``, space separated.

    ``k`` and ``center`` are comma-joined. The first line carries the format
    and constants versions.
    """
    lines = [f"# hyperbolax-regions format=1 constants={version}"]
    for kap in regions:
        k = ",".join(str(i) for i in kap.id.k)
        c = ",".join(repr(float(x)) for x in kap.center.xi)
        lines.append(
            f"{kap.id.N!r} {kap.id.r!r} {kap.id.j} {k} {c} {kap.radial_lo!r} {kap.radial_hi!r}"
        )
    return "\n".join(lines) + "\n"
