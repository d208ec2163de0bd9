"""Sampled and symbolic functions on R^d, identified with functions on the hyperboloid.

A :class:`SampledFunction` lives on a tensor quadrature grid and carries two
weight vectors per node: ``w_leb`` for ``dxi`` and ``w_sigma = w_leb / <xi>``
for the invariant measure. Symbolic families can be re-evaluated exactly and
serve as quadrature oracles.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate
from scipy.interpolate import RegularGridInterpolator
from scipy.special import roots_legendre

from .constants import get_constants
from .geometry import LorentzBoost, boost_flat, bracket
from .regions import (
    BaseCubeConfig,
    Region,
    RegionId,
    is_dyadic,
    layer_count,
    lift_eta,
    locate,
    make_region,
    radial_bounds,
    region_contains,
)


class CoverageWarning(UserWarning):
    """Evaluation points fell outside a grid's support and were set to zero."""


# ------------------------------------------------------------------ rules


def gauss_panels(edges, n):
    """Composite Gauss-Legendre nodes and weights on consecutive panels."""
    x, w = roots_legendre(n)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        nodes.append(0.5 * (b - a) * x + 0.5 * (a + b))
        weights.append(0.5 * (b - a) * w)
    return np.concatenate(nodes), np.concatenate(weights)


def _tensor(axes):
    mesh = np.meshgrid(*axes, indexing="ij")
    return [m.reshape(-1) for m in mesh]


def random_rotation(d, rng):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


# ------------------------------------------------------------------ grids


class Grid:
    """Tensor-product quadrature grid on R^d.

    Subclasses set ``axes`` (1-D node coordinates per local axis), the local
    weight tensor and the map from local coordinates to ``xi``.
    """

    d: int
    kind: str

    @property
    def shape(self):
        return tuple(len(a) for a in self.axes)

    @property
    def size(self):
        return int(np.prod(self.shape))

    @cached_property
    def w_sigma(self):
        w = self.w_leb / bracket(self.nodes)
        w.setflags(write=False)
        return w

    def in_domain(self, local):
        lo, hi = self.domain
        return np.all((local >= lo) & (local <= hi), axis=-1)

    def spec(self) -> dict:
        raise NotImplementedError

    def interpolate(self, values, xi, warn=True):
        """Multilinear interpolation in local coordinates; zero outside the support."""
        local = self.local(np.asarray(xi, dtype=float))
        inside = self.in_domain(local)
        axes, grid_vals = self._interp_axes(np.asarray(values).reshape(self.shape))
        out = np.zeros(local.shape[:-1], dtype=complex)
        if inside.any():
            pts = self._wrap(local[inside])
            ip = RegularGridInterpolator(axes, grid_vals, bounds_error=False, fill_value=None)
            out[inside] = ip(pts)
        frac = 1.0 - inside.mean() if inside.size else 0.0
        if warn and frac > 0:
            warnings.warn(
                f"{frac:.1%} of evaluation points lie outside the grid support; set to 0",
                CoverageWarning,
                stacklevel=2,
            )
        return out

    def _interp_axes(self, grid_vals):
        return self.axes, grid_vals

    def _wrap(self, local):
        return local


def _validate_frame(Q, d):
    Q = np.eye(d) if Q is None else np.asarray(Q, dtype=float)
    if Q.shape != (d, d) or not np.allclose(Q.T @ Q, np.eye(d), atol=1e-12):
        raise ValueError("frame must be an orthogonal d x d matrix")
    return Q


class PolarGrid(Grid):
    """Radial Gauss-Legendre panels times an angular rule.

    ``angular="sphere"`` covers the whole sphere in hyperspherical angles with
    Gauss-Legendre panels split at multiples of pi/2, so coordinate orthants
    are unions of cells. ``angular="cap"`` covers the lift of the box
    ``eta_lo <= eta <= eta_hi`` (eta panels at ``eta_edges``) about the last axis of
    ``frame``.
    """

    def __init__(
        self,
        d,
        radial_edges,
        n_radial,
        angular="sphere",
        n_angular=6,
        eta_edges=None,
        frame=None,
    ):
        if d < 2:
            raise ValueError("polar grids need d >= 2")
        self.d = d
        self.kind = "polar"
        self.angular = angular
        self.radial_edges = np.asarray(radial_edges, dtype=float)
        if np.any(np.diff(self.radial_edges) <= 0) or self.radial_edges[0] < 0:
            raise ValueError("radial edges must be increasing and nonnegative")
        self.n_radial = int(n_radial)
        self.n_angular = int(n_angular)
        self.frame = _validate_frame(frame, d)
        rho, wr = gauss_panels(self.radial_edges, self.n_radial)
        axes, weights = [rho], [wr * rho ** (d - 1)]
        if angular == "sphere":
            half = np.array([0.0, np.pi / 2, np.pi])
            for i in range(d - 2):
                th, wt = gauss_panels(half, self.n_angular)
                axes.append(th)
                weights.append(wt * np.sin(th) ** (d - 2 - i))
            phi, wp = gauss_panels(np.linspace(0.0, 2 * np.pi, 5), self.n_angular)
            axes.append(phi)
            weights.append(wp)
            self.eta_edges = None
        elif angular == "cap":
            if eta_edges is None:
                raise ValueError("cap rule needs eta_edges")
            self.eta_edges = [np.asarray(e, dtype=float) for e in eta_edges]
            if len(self.eta_edges) != d - 1:
                raise ValueError("cap rule needs d-1 eta edge lists")
            for e in self.eta_edges:
                eta, we = gauss_panels(e, self.n_angular)
                axes.append(eta)
                weights.append(we)
        else:
            raise ValueError(f"unknown angular rule {angular!r}")
        self.axes = axes
        flat = _tensor(axes)
        wflat = np.prod(_tensor(weights), axis=0)
        local = np.stack(flat, axis=-1)
        if angular == "cap":
            eta = local[:, 1:]
            wflat = wflat / np.sqrt(1.0 - np.sum(eta * eta, axis=-1))
        self._local_nodes = local
        self.nodes = self.to_xi(local)
        self.w_leb = wflat
        self.nodes.setflags(write=False)
        self.w_leb.setflags(write=False)

    @property
    def domain(self):
        lo = [self.radial_edges[0]]
        hi = [self.radial_edges[-1]]
        if self.angular == "sphere":
            lo += [0.0] * (self.d - 2) + [-np.inf]
            hi += [np.pi] * (self.d - 2) + [np.inf]
        else:
            lo += [e[0] for e in self.eta_edges]
            hi += [e[-1] for e in self.eta_edges]
        return np.array(lo), np.array(hi)

    def to_xi(self, local):
        rho = local[:, :1]
        if self.angular == "sphere":
            u = _sphere_from_angles(local[:, 1:])
        else:
            u = lift_eta(local[:, 1:])
        return (rho * u) @ self.frame.T

    def local(self, xi):
        v = xi @ self.frame
        rho = np.linalg.norm(v, axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            u = v / rho[..., None]
        if self.angular == "sphere":
            ang = _angles_from_sphere(u)
        else:
            ang = np.where((u[..., -1] > 0)[..., None], u[..., :-1], np.inf)
        ang = np.where(rho[..., None] > 0, ang, 0.0)
        return np.concatenate([rho[..., None], ang], axis=-1)

    def _interp_axes(self, grid_vals):
        if self.angular != "sphere":
            return self.axes, grid_vals
        phi = self.axes[-1]
        axes = list(self.axes[:-1]) + [np.concatenate([phi[-1:] - 2 * np.pi, phi, phi[:1] + 2 * np.pi])]
        vals = np.concatenate([grid_vals[..., -1:], grid_vals, grid_vals[..., :1]], axis=-1)
        return axes, vals

    def _wrap(self, local):
        if self.angular == "sphere":
            local = local.copy()
            local[:, -1] = np.mod(local[:, -1], 2 * np.pi)
        return local

    def spec(self):
        out = {
            "kind": "polar",
            "d": self.d,
            "radial_edges": self.radial_edges.tolist(),
            "n_radial": self.n_radial,
            "angular": self.angular,
            "n_angular": self.n_angular,
            "frame": self.frame.tolist(),
        }
        if self.eta_edges is not None:
            out["eta_edges"] = [e.tolist() for e in self.eta_edges]
        return out


def _sphere_from_angles(ang):
    """Hyperspherical angles ``(theta_1..theta_{d-2}, phi)`` to unit vectors."""
    n, m = ang.shape
    d = m + 1
    u = np.empty((n, d))
    s = np.ones(n)
    for i in range(d - 2):
        u[:, i] = s * np.cos(ang[:, i])
        s = s * np.sin(ang[:, i])
    u[:, d - 2] = s * np.cos(ang[:, -1])
    u[:, d - 1] = s * np.sin(ang[:, -1])
    return u


def _angles_from_sphere(u):
    d = u.shape[-1]
    ang = np.empty(u.shape[:-1] + (d - 1,))
    for i in range(d - 2):
        tail = np.linalg.norm(u[..., i + 1 :], axis=-1)
        ang[..., i] = np.arctan2(tail, u[..., i])
    ang[..., -1] = np.mod(np.arctan2(u[..., -1], u[..., -2]), 2 * np.pi)
    return ang


class BoxGrid(Grid):
    """Gauss-Legendre tensor grid on a rotated, translated box."""

    def __init__(self, center, halfwidths, n, panels=1, frame=None):
        center = np.asarray(center, dtype=float).reshape(-1)
        self.d = center.size
        self.kind = "box"
        self.center = center
        self.halfwidths = np.broadcast_to(np.asarray(halfwidths, dtype=float), (self.d,)).copy()
        self.n = int(n)
        self.panels = int(panels)
        self.frame = _validate_frame(frame, self.d)
        axes, weights = [], []
        for h in self.halfwidths:
            x, w = gauss_panels(np.linspace(-h, h, self.panels + 1), self.n)
            axes.append(x)
            weights.append(w)
        self.axes = axes
        local = np.stack(_tensor(axes), axis=-1)
        self.nodes = self.to_xi(local)
        self.w_leb = np.prod(_tensor(weights), axis=0)
        self.nodes.setflags(write=False)
        self.w_leb.setflags(write=False)

    @property
    def domain(self):
        return -self.halfwidths, self.halfwidths

    def to_xi(self, local):
        return self.center + local @ self.frame.T

    def local(self, xi):
        return (xi - self.center) @ self.frame

    def spec(self):
        return {
            "kind": "box",
            "center": self.center.tolist(),
            "halfwidths": self.halfwidths.tolist(),
            "n": self.n,
            "panels": self.panels,
            "frame": self.frame.tolist(),
        }


class PushforwardGrid(Grid):
    """Image of a base grid under ``L_{-nu}^flat``.

    A function ``g`` on the base grid pulls back to ``L_nu^* g = g o L_nu^flat``,
    whose value at the image node ``L_{-nu}^flat(xi_i)`` is ``g(xi_i)``. The
    invariant weights carry over unchanged.
    """

    def __init__(self, base: Grid, nu):
        self.base = base
        self.d = base.d
        self.kind = "pushforward"
        self.boost = LorentzBoost(nu)
        self.axes = base.axes
        self.nodes = boost_flat(self.boost.inverse(), base.nodes)
        self.nodes.setflags(write=False)
        self.w_sigma = base.w_sigma
        w = base.w_sigma * bracket(self.nodes)
        w.setflags(write=False)
        self.w_leb = w

    @property
    def domain(self):
        return self.base.domain

    def local(self, xi):
        return self.base.local(boost_flat(self.boost, xi))

    def _interp_axes(self, grid_vals):
        return self.base._interp_axes(grid_vals)

    def _wrap(self, local):
        return self.base._wrap(local)

    def spec(self):
        return {"kind": "pushforward", "nu": self.boost.nu.tolist(), "base": self.base.spec()}


class RotatedGrid(Grid):
    """Image of a base grid under the rotation ``Q``; weights carry over."""

    def __init__(self, base: Grid, Q):
        self.base = base
        self.d = base.d
        self.kind = "rotated"
        self.Q = _validate_frame(Q, base.d)
        self.axes = base.axes
        self.nodes = base.nodes @ self.Q.T
        self.nodes.setflags(write=False)
        self.w_leb = base.w_leb

    @property
    def domain(self):
        return self.base.domain

    def local(self, xi):
        return self.base.local(np.asarray(xi) @ self.Q)

    def _interp_axes(self, grid_vals):
        return self.base._interp_axes(grid_vals)

    def _wrap(self, local):
        return self.base._wrap(local)

    def spec(self):
        return {"kind": "rotated", "Q": self.Q.tolist(), "base": self.base.spec()}


def grid_from_spec(spec: dict) -> Grid:
    kind = spec["kind"]
    if kind == "polar":
        return PolarGrid(
            spec["d"],
            spec["radial_edges"],
            spec["n_radial"],
            angular=spec["angular"],
            n_angular=spec["n_angular"],
            eta_edges=spec.get("eta_edges"),
            frame=spec["frame"],
        )
    if kind == "box":
        return BoxGrid(spec["center"], spec["halfwidths"], spec["n"], spec["panels"], spec["frame"])
    if kind == "pushforward":
        return PushforwardGrid(grid_from_spec(spec["base"]), spec["nu"])
    if kind == "rotated":
        return RotatedGrid(grid_from_spec(spec["base"]), spec["Q"])
    raise ValueError(f"unknown grid kind {kind!r}")


def taper_breakpoints(n_max, constants=None):
    """Radii where some Littlewood-Paley multiplier up to scale ``n_max`` changes form."""
    c = constants or get_constants()
    pts = {0.0}
    N = 1.0
    while N <= n_max:
        for s in (c.psi_inner, c.psi_outer):
            pts.update({s * N, s * N / 2})
        N *= 2
    return sorted(p for p in pts if p <= c.psi_outer * n_max)


def sphere_grid(d=3, radius=4.0, n_radial=8, n_angular=6, panel=1.0, n_max=None):
    """Full-space polar grid on ``|xi| <= radius`` with taper-aligned radial panels."""
    edges = set(np.arange(0.0, radius, panel).tolist()) | {radius}
    if n_max is not None:
        edges |= {x for x in taper_breakpoints(n_max) if x < radius}
    return PolarGrid(d, sorted(edges), n_radial, "sphere", n_angular)


def cap_grid(
    N,
    d=3,
    r_align=None,
    n_radial=6,
    n_angular=4,
    cfg: BaseCubeConfig | None = None,
    radial_range=None,
    eta_panels=None,
):
    """Grid on the restricted annulus of scale ``N`` (radii up to the support of ``f_N``).

    Radial panels break at the taper edges and at the layer edges of level
    ``r_align``; eta panels follow the cubes of that level, so every region
    at levels ``r >= r_align`` is an exact union of panels.
    """
    cfg = cfg or BaseCubeConfig.from_constants()
    c = get_constants()
    lo, hi = (0.0 if N == 1 else 0.5 * N), c.psi_outer * N
    if radial_range is not None:
        lo, hi = radial_range
    r_align = min(1.0, float(N)) if r_align is None else r_align
    edges = {lo, hi}
    edges |= {x for x in taper_breakpoints(N) if lo < x < hi}
    if r_align <= 1:
        for j in range(layer_count(r_align) + 1):
            x = 0.5 * N * (1.0 + 3.0 * j * r_align)
            if lo < x < hi:
                edges.add(x)
    n_eta = int(round(N / r_align)) if eta_panels is None else eta_panels
    eta_edges = [np.linspace(-cfg.ell, cfg.ell, n_eta + 1)] * (d - 1)
    return PolarGrid(d, sorted(edges), n_radial, "cap", n_angular, eta_edges=eta_edges)


def admissible_grid(n_max, d=3, n_radial=6, n_angular=4, eta_panels=2, cfg=None):
    """Cap grid over every shell up to ``n_max`` (radii ``0 .. 11/10 n_max``)."""
    cfg = cfg or BaseCubeConfig.from_constants()
    c = get_constants()
    edges = taper_breakpoints(n_max)
    eta_edges = [np.linspace(-cfg.ell, cfg.ell, eta_panels + 1)] * (d - 1)
    return PolarGrid(d, edges + [c.psi_outer * n_max] if edges[-1] < c.psi_outer * n_max else edges,
                     n_radial, "cap", n_angular, eta_edges=eta_edges)


def refine_grid(grid: Grid, factor=2) -> Grid:
    """Same support with ``factor`` times the Gauss-Legendre order on every panel."""
    if isinstance(grid, PolarGrid):
        return PolarGrid(
            grid.d,
            grid.radial_edges,
            grid.n_radial * factor,
            grid.angular,
            grid.n_angular * factor,
            eta_edges=grid.eta_edges,
            frame=grid.frame,
        )
    if isinstance(grid, BoxGrid):
        return BoxGrid(grid.center, grid.halfwidths, grid.n * factor, grid.panels, grid.frame)
    if isinstance(grid, PushforwardGrid):
        return PushforwardGrid(refine_grid(grid.base, factor), grid.boost.nu)
    if isinstance(grid, RotatedGrid):
        return RotatedGrid(refine_grid(grid.base, factor), grid.Q)
    raise TypeError(type(grid))


# ------------------------------------------------------------- symbolic


class Symbolic:
    """Exactly evaluable function of ``xi``; ``family`` tags the record."""

    family: str

    def __call__(self, xi):
        raise NotImplementedError

    def record(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Gaussian(Symbolic):
    center: tuple
    width: float
    amplitude: complex = 1.0
    family: str = field(default="gaussian", init=False)

    def __call__(self, xi):
        xi = np.asarray(xi, dtype=float)
        r2 = np.sum((xi - np.asarray(self.center)) ** 2, axis=-1)
        return self.amplitude * np.exp(-0.5 * r2 / self.width**2) + 0j

    def record(self):
        a = complex(self.amplitude)
        return {"family": self.family, "center": list(self.center), "width": self.width,
                "amplitude": [a.real, a.imag]}


@dataclass(frozen=True)
class RegionIndicator(Symbolic):
    region: RegionId
    ell: float
    family: str = field(default="region-indicator", init=False)

    def __call__(self, xi):
        kap = make_region(self.region, BaseCubeConfig(ell=self.ell))
        return region_contains(kap, np.asarray(xi, dtype=float)).astype(complex)

    def record(self):
        r = self.region
        return {"family": self.family, "N": r.N, "r": r.r, "j": r.j, "k": list(r.k), "ell": self.ell}


@dataclass(frozen=True)
class Boosted(Symbolic):
    """``base o L_nu^flat``."""

    base: Symbolic
    nu: tuple
    family: str = field(default="boosted", init=False)

    def __call__(self, xi):
        return self.base(boost_flat(np.asarray(self.nu), np.asarray(xi, dtype=float)))

    def record(self):
        return {"family": self.family, "nu": list(self.nu), "base": self.base.record()}


@dataclass(frozen=True)
class Modulated(Symbolic):
    """``exp(i x0 . xi + i t0 <xi>) base(xi)``."""

    base: Symbolic
    x0: tuple
    t0: float
    family: str = field(default="modulated", init=False)

    def __call__(self, xi):
        xi = np.asarray(xi, dtype=float)
        phase = np.exp(1j * (xi @ np.asarray(self.x0) + self.t0 * bracket(xi)))
        return phase * self.base(xi)

    def record(self):
        return {"family": self.family, "x0": list(self.x0), "t0": self.t0, "base": self.base.record()}


@dataclass(frozen=True)
class Rotated(Symbolic):
    """``base(Q^T xi)``."""

    base: Symbolic
    Q: tuple
    family: str = field(default="rotated", init=False)

    def __call__(self, xi):
        return self.base(np.asarray(xi, dtype=float) @ np.asarray(self.Q))

    def record(self):
        return {"family": self.family, "Q": [list(r) for r in self.Q], "base": self.base.record()}


@dataclass(frozen=True)
class Sum(Symbolic):
    terms: tuple
    family: str = field(default="sum", init=False)

    def __call__(self, xi):
        return sum(t(xi) for t in self.terms)

    def record(self):
        return {"family": self.family, "terms": [t.record() for t in self.terms]}


def symbolic_from_record(rec: dict) -> Symbolic:
    fam = rec["family"]
    if fam == "gaussian":
        return Gaussian(tuple(rec["center"]), rec["width"], complex(*rec["amplitude"]))
    if fam == "region-indicator":
        return RegionIndicator(RegionId(rec["N"], rec["r"], rec["j"], tuple(rec["k"])), rec["ell"])
    if fam == "boosted":
        return Boosted(symbolic_from_record(rec["base"]), tuple(rec["nu"]))
    if fam == "modulated":
        return Modulated(symbolic_from_record(rec["base"]), tuple(rec["x0"]), rec["t0"])
    if fam == "rotated":
        return Rotated(symbolic_from_record(rec["base"]), tuple(map(tuple, rec["Q"])))
    if fam == "sum":
        return Sum(tuple(symbolic_from_record(t) for t in rec["terms"]))
    raise ValueError(f"unknown family {fam!r}")


# ------------------------------------------------------- sampled functions


class SampledFunction:
    """Complex samples on a quadrature grid. Immutable."""

    __slots__ = ("grid", "values", "symbolic")

    def __init__(self, grid: Grid, values, symbolic: Symbolic | None = None):
        values = np.array(values, dtype=complex).reshape(-1)
        if values.size != grid.size:
            raise ValueError(f"{values.size} values for a grid of {grid.size} nodes")
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite function values")
        values.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "symbolic", symbolic)

    def __setattr__(self, name, value):
        raise AttributeError("SampledFunction is immutable")

    @property
    def d(self):
        return self.grid.d

    @property
    def nodes(self):
        return self.grid.nodes

    @property
    def w_leb(self):
        return self.grid.w_leb

    @property
    def w_sigma(self):
        return self.grid.w_sigma

    def with_values(self, values, symbolic=None):
        return SampledFunction(self.grid, values, symbolic)

    def __mul__(self, c):
        sym = None
        return SampledFunction(self.grid, self.values * c, sym)

    __rmul__ = __mul__

    def __add__(self, other):
        if other.grid is not self.grid:
            raise ValueError("functions live on different grids")
        sym = Sum((self.symbolic, other.symbolic)) if self.symbolic and other.symbolic else None
        return SampledFunction(self.grid, self.values + other.values, sym)

    def __sub__(self, other):
        return self + (-1.0) * other


def sample(sym: Symbolic, grid: Grid) -> SampledFunction:
    return SampledFunction(grid, sym(grid.nodes), sym)


def norm_L2_hyperboloid(f: SampledFunction) -> float:
    return float(np.sqrt(np.sum(np.abs(f.values) ** 2 * f.w_sigma)))


def norm_Lp_hyperboloid(f: SampledFunction, p) -> float:
    return float(np.sum(np.abs(f.values) ** p * f.w_sigma) ** (1.0 / p))


def norm_Ls_lebesgue(f: SampledFunction, s) -> float:
    if s < 1:
        raise ValueError(f"s must be >= 1, got {s}")
    return float(np.sum(np.abs(f.values) ** s * f.w_leb) ** (1.0 / s))


def inner_hyperboloid(f: SampledFunction, g: SampledFunction) -> complex:
    """``<f, g> = sum f conj(g) w_sigma``."""
    return complex(np.sum(f.values * np.conj(g.values) * f.w_sigma))


def region_mask(grid: Grid, kappa, cfg: BaseCubeConfig | None = None):
    """Nodes assigned to ``kappa`` by the unique (lowest-index) rule."""
    kid = kappa.id if isinstance(kappa, Region) else kappa
    j, k, valid = locate(grid.nodes, kid.N, kid.r, cfg)
    return valid & (j == kid.j) & np.all(k == np.asarray(kid.k), axis=-1)


def restrict(f: SampledFunction, kappa, cfg: BaseCubeConfig | None = None) -> SampledFunction:
    """``f 1_kappa``; nodes on shared faces go to the lowest-index region."""
    mask = region_mask(f.grid, kappa, cfg)
    return f.with_values(np.where(mask, f.values, 0.0))


def orthant_label(xi, K):
    """Cell index ``1..K`` of the sign-pattern partition with ``K = 2^m`` cells."""
    xi = np.asarray(xi, dtype=float)
    d = xi.shape[-1]
    m = int(round(math.log2(K))) if K >= 1 else -1
    if K < 1 or 2**m != K or m > d:
        raise ValueError(f"K must be a power of two at most 2^d = {2**d}, got {K}")
    label = np.zeros(xi.shape[:-1], dtype=np.int64)
    for i in range(m):
        label = 2 * label + (xi[..., i] < 0)
    return label + 1


def angular_piece(f: SampledFunction, k: int, K: int) -> SampledFunction:
    """Restriction of ``f`` to the ``k``-th of ``K`` sign-pattern cells of the sphere."""
    if not 1 <= k <= K:
        raise ValueError(f"cell index {k} outside 1..{K}")
    lab = orthant_label(f.nodes, K)
    return f.with_values(np.where(lab == k, f.values, 0.0))


def psi(rho, constants=None):
    """Radial bump: 1 on ``[0, a]``, 0 beyond ``b``, quintic smoothstep between (C^2)."""
    c = constants or get_constants()
    a, b = c.psi_inner, c.psi_outer
    t = np.clip((np.asarray(rho, dtype=float) - a) / (b - a), 0.0, 1.0)
    return 1.0 - t**3 * (10.0 - 15.0 * t + 6.0 * t * t)


def lp_multiplier(xi, N, constants=None):
    rho = np.linalg.norm(np.asarray(xi, dtype=float), axis=-1)
    if N == 1:
        return psi(rho, constants)
    return psi(rho / N, constants) - psi(2.0 * rho / N, constants)


def lp_piece(f: SampledFunction, N) -> SampledFunction:
    if not (is_dyadic(N) and N >= 1):
        raise ValueError(f"N must be a dyadic number >= 1, got {N}")
    return f.with_values(f.values * lp_multiplier(f.nodes, N))


def lp_support(N, constants=None):
    """Radial support ``[lo, hi]`` of ``f_N``."""
    c = constants or get_constants()
    hi = c.psi_outer * N
    return (0.0, hi) if N == 1 else (0.5 * N * c.psi_inner, hi)


def occupied_shells(f: SampledFunction, tol=0.0):
    """Dyadic ``N`` whose piece ``f_N`` has a nonzero sample."""
    rho = np.linalg.norm(f.nodes, axis=-1)
    nz = np.abs(f.values) > tol
    if not nz.any():
        return []
    top = rho[nz].max()
    out, N = [], 1
    while N / 2 <= top:
        if np.any(np.abs(f.values * lp_multiplier(f.nodes, N)) > tol):
            out.append(N)
        N *= 2
    return out


def pullback_boost(f: SampledFunction, nu, grid: Grid | None = None) -> SampledFunction:
    """``L_nu^* f = f o L_nu^flat``.

    Without a target grid the result lives on the pushforward of ``f``'s grid,
    where the values are carried over exactly. With a target grid the symbolic
    form is re-evaluated when available, otherwise ``f`` is interpolated.
    """
    nu = np.asarray(nu, dtype=float).reshape(-1)
    sym = Boosted(f.symbolic, tuple(nu.tolist())) if f.symbolic is not None else None
    if grid is None:
        if np.all(nu == 0):
            return f
        return SampledFunction(PushforwardGrid(f.grid, nu), f.values, sym)
    if sym is not None:
        return SampledFunction(grid, sym(grid.nodes), sym)
    vals = f.grid.interpolate(f.values, boost_flat(nu, grid.nodes))
    return SampledFunction(grid, vals, None)


def modulate(f: SampledFunction, x0, t0) -> SampledFunction:
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    phase = np.exp(1j * (f.nodes @ x0 + float(t0) * bracket(f.nodes)))
    sym = Modulated(f.symbolic, tuple(x0.tolist()), float(t0)) if f.symbolic is not None else None
    return SampledFunction(f.grid, f.values * phase, sym)


def rotate(f: SampledFunction, Q) -> SampledFunction:
    """``f o Q^T`` carried exactly to the rotated grid."""
    Q = np.asarray(Q, dtype=float)
    sym = Rotated(f.symbolic, tuple(map(tuple, Q.tolist()))) if f.symbolic is not None else None
    return SampledFunction(RotatedGrid(f.grid, Q), f.values, sym)


def resample(f: SampledFunction, grid: Grid) -> SampledFunction:
    if f.symbolic is not None:
        return sample(f.symbolic, grid)
    return SampledFunction(grid, f.grid.interpolate(f.values, grid.nodes))


# --------------------------------------------------------- oracle quadrature


def adaptive_norm_sq(sym: Symbolic, center, radius, d=3, rtol=1e-10, p=2.0):
    """``int |sym|^p dsigma`` over a ball, by adaptive cubature in polar coordinates.

    Only ``d = 3`` is supported; polar coordinates are taken about ``center``.
    """
    if d != 3:
        raise NotImplementedError("adaptive oracle implemented for d = 3")
    center = np.asarray(center, dtype=float)

    def integrand(x):
        rho, theta, phi = x[:, 0], x[:, 1], x[:, 2]
        st = np.sin(theta)
        u = np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)
        xi = center + rho[:, None] * u
        return np.abs(sym(xi)) ** p * rho**2 * st / bracket(xi)

    res = integrate.cubature(
        integrand, [0.0, 0.0, 0.0], [radius, np.pi, 2 * np.pi], rtol=rtol, atol=0.0,
        max_subdivisions=200000,
    )
    if res.status != "converged":
        warnings.warn(f"adaptive cubature did not converge: error estimate {res.error}", stacklevel=2)
    return float(res.estimate)


# ------------------------------------------------------------ persistence

FUNCTION_FORMAT = "hyperbolax-function/1"


def save_function(f: SampledFunction, path, constants_version=None):
    """Structured text: ``key = value`` header lines, then one record per node.

    Records hold ``xi_1..xi_d re im w_leb w_sigma`` written with ``float.hex``
    for a bit-exact round trip.
    """
    version = constants_version or get_constants().version
    lines = [
        f"# format = {FUNCTION_FORMAT}",
        f"# constants = {version}",
        f"# d = {f.d}",
        f"# grid = {json.dumps(f.grid.spec(), sort_keys=True)}",
        f"# family = {json.dumps(f.symbolic.record(), sort_keys=True) if f.symbolic else 'none'}",
        f"# nodes = {f.grid.size}",
    ]
    for xi, v, wl, ws in zip(f.nodes, f.values, f.w_leb, f.w_sigma):
        rec = [float(x).hex() for x in xi] + [v.real.hex(), v.imag.hex(), float(wl).hex(), float(ws).hex()]
        lines.append(" ".join(rec))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_function(path):
    """Inverse of :func:`save_function`.

    The grid is rebuilt from its description and its nodes and weights must match the
    stored records bit for bit.
    """
    header, rows = {}, []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                header[key.strip()] = value.strip()
            elif line.strip():
                rows.append([float.fromhex(x) for x in line.split()])
    if header.get("format") != FUNCTION_FORMAT:
        raise ValueError(f"{path}: not a {FUNCTION_FORMAT} file")
    d = int(header["d"])
    data = np.array(rows)
    grid = grid_from_spec(json.loads(header["grid"]))
    if not (
        np.array_equal(grid.nodes, data[:, :d])
        and np.array_equal(grid.w_leb, data[:, d + 2])
        and np.array_equal(grid.w_sigma, data[:, d + 3])
    ):
        raise ValueError(f"{path}: stored nodes or weights do not match the grid description")
    fam = header.get("family", "none")
    sym = None if fam == "none" else symbolic_from_record(json.loads(fam))
    return SampledFunction(grid, data[:, d] + 1j * data[:, d + 1], sym)
