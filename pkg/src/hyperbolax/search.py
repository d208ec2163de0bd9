"""Projected-gradient ascent of the Rayleigh quotient and the recentering pipeline.

The objective is ``Phi(f) = ||T f||_p^p`` on a fixed space-time lattice; its
gradient in ``L^2(H)`` is ``p T^*(|Tf|^(p-2) Tf)``. Steps are taken on the
unit sphere, ``f <- normalize(f + s g / ||g||)``, with backtracking. As
``s -> inf`` the step becomes the power iteration ``f <- normalize(g)``,
which never decreases ``Phi``; the step grows geometrically after each
accepted move until it reaches that limit.

All restarts of one run share a lattice built in the lab frame, so they
optimize the same discrete functional. The lattice is oversampled well
beyond the Nyquist rate of the frequency grid: at the Nyquist rate the
ascent learns to exploit aliasing in ``sum |Tf|^p`` (the quotient then drops
by several percent when re-scored on a finer lattice).
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .constants import POLICY, get_constants
from .extension import (
    DegenerateInput,
    ExtensionField,
    SpacetimeGrid,
    adjoint_extend,
    boost_lattice,
    default_grid,
    extend,
    lp_integral,
)
from .functions import (
    Gaussian,
    Grid,
    SampledFunction,
    angular_piece,
    cap_grid,
    lp_piece,
    lp_support,
    modulate,
    norm_L2_hyperboloid,
    occupied_shells,
    orthant_label,
    pullback_boost,
    rotate,
    sample,
    sphere_grid,
)
from .inequalities import ExponentSet, p_range, refined_report
from .regions import BaseCubeConfig, RegionId, region_center

log = logging.getLogger(__name__)

TINY = 1e-100


# ----------------------------------------------------------------- config


@dataclass(frozen=True)
class SearchConfig:
    """Parameters of one search run.

    ``delta1 = None`` selects the operational rule ``delta1 = q / (2K)`` with
    ``q`` the current quotient. ``None`` for ``delta2..delta6``, ``alpha`` and
    ``ball_radius`` takes the frozen calibration values.
    """

    d: int = 3
    p: float = 3.6
    # frequency grid: full-space polar grid on |xi| <= grid_radius
    grid_radius: float = 1.5
    n_radial: int = 5
    n_angular: int = 6
    # shared lattice: sized for a centered gaussian of width ref_width
    ref_width: float = 0.6
    lattice_R: float = 2.0
    oversample: float = 2.5
    max_nodes: float = 1.5e6
    # random gaussian starts
    start_spread: float = 0.5
    width_lo: float = 0.4
    width_hi: float = 0.7
    # step rule
    step: float = 1.0
    grow: float = 4.0
    max_step: float = 1e6
    min_step: float = 1e-6
    max_iters: int = 200
    tol: float = 1e-6
    restarts: int = 5
    epochs: int = 2
    K: int = 8
    # distinguished-region search
    n_radial_cap: int = 4
    n_angular_cap: int = 3
    cap_levels: int = 2
    max_regions: int = 400
    rescore_factor: int = 2
    delta1: float | None = None
    delta2: float | None = None
    delta3: float | None = None
    delta4: float | None = None
    delta5: float | None = None
    delta6: float | None = None
    alpha: int | None = None
    ball_radius: float | None = None
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        lo, hi = p_range(self.d)
        if not lo < self.p < hi:
            raise ValueError(f"p = {self.p} must lie strictly inside ({lo:.6g}, {hi:.6g}) for d = {self.d}")
        for name in ("delta1", "delta2", "delta3", "delta4", "delta5", "delta6", "ball_radius"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive, got {v}")
        positive = ("grid_radius", "ref_width", "lattice_R", "oversample", "step", "min_step", "tol")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.width_lo <= self.width_hi:
            raise ValueError("need 0 < width_lo <= width_hi")
        if self.grow < 1 or self.max_step < self.step:
            raise ValueError("need grow >= 1 and max_step >= step")
        if self.max_iters < 0 or self.restarts < 1 or self.epochs < 1 or self.jobs < 1:
            raise ValueError("max_iters >= 0, restarts, epochs and jobs >= 1 required")
        m = round(math.log2(self.K)) if self.K >= 1 else -1
        if self.K < 1 or 2**m != self.K or m > self.d:
            raise ValueError(f"K must be a power of two at most 2^d, got {self.K}")

    def resolved(self, name):
        """Value of a threshold, with ``None`` replaced by the frozen constant."""
        v = getattr(self, name)
        if v is None and name != "delta1":
            return getattr(get_constants(), name)
        return v

    def to_mapping(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, mapping) -> "SearchConfig":
        """Build from flat ``key -> value`` pairs; string values are parsed by field type."""
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for key, raw in mapping.items():
            if key not in known:
                raise ValueError(f"unknown search parameter {key!r}")
            kw[key] = _parse_field(known[key].type, raw)
        return cls(**kw)


def _parse_field(tp, raw):
    if not isinstance(raw, str):
        return raw
    s = raw.strip()
    if "None" in str(tp) and s.lower() in ("", "none", "auto"):
        return None
    if str(tp).startswith("int"):
        return int(s)
    return float(s)


# ------------------------------------------------------------------ state


@dataclass
class SearchState:
    f: SampledFunction
    quotient_history: list
    recenter_log: list = field(default_factory=list)
    iteration: int = 0
    lattice: SpacetimeGrid | None = None
    flags: list = field(default_factory=list)
    rescored: float | None = None

    @property
    def quotient(self):
        return self.quotient_history[-1]


@dataclass(frozen=True)
class RecenterReport:
    N: int
    r: float
    kappa: RegionId | None
    nu: tuple
    ball_radius: float
    mass_in_ball: float
    mass_before: float = math.nan
    sector: int = 0
    region_l2: float = math.nan
    shell_norm: float = math.nan
    region_norm: float = math.nan
    flags: tuple = ()

    def __post_init__(self):
        for m in (self.mass_in_ball, self.mass_before):
            if not (math.isnan(m) or -1e-12 <= m <= 1 + 1e-12):
                raise ValueError(f"mass fraction {m} outside [0, 1]")


# ---------------------------------------------------------------- helpers


def normalize(f: SampledFunction) -> SampledFunction:
    n = norm_L2_hyperboloid(f)
    if not n > TINY:
        raise DegenerateInput("cannot normalize the zero function")
    return f.with_values(f.values / n)


def frequency_grid(config: SearchConfig) -> Grid:
    return sphere_grid(config.d, config.grid_radius, config.n_radial, config.n_angular)


def search_lattice(config: SearchConfig, grid: Grid | None = None) -> SpacetimeGrid:
    """Lab-frame lattice shared by every restart of a run."""
    grid = grid or frequency_grid(config)
    ref = sample(Gaussian((0.0,) * config.d, config.ref_width), grid)
    return default_grid(ref, R=config.lattice_R, oversample=config.oversample, frame="lab",
                        max_nodes=config.max_nodes)


def random_start(config: SearchConfig, seed: int, grid: Grid | None = None) -> SampledFunction:
    """Unit-norm gaussian with a random center and width."""
    grid = grid or frequency_grid(config)
    rng = np.random.default_rng(seed)
    c = rng.uniform(-config.start_spread, config.start_spread, config.d)
    w = rng.uniform(config.width_lo, config.width_hi)
    return normalize(sample(Gaussian(tuple(c.tolist()), float(w)), grid))


def _objective(F: ExtensionField, p):
    return lp_integral(F, p)


def quotient(f: SampledFunction, p, lattice: SpacetimeGrid) -> float:
    return _objective(extend(f, lattice), p) ** (1.0 / p) / norm_L2_hyperboloid(f)


def gradient(f: SampledFunction, p, lattice: SpacetimeGrid, F: ExtensionField | None = None):
    """``p T^*(|Tf|^(p-2) Tf)``, the ``L^2(H)`` gradient of ``||Tf||_p^p``."""
    F = F if F is not None else extend(f, lattice)
    G = ExtensionField(lattice, np.abs(F.values) ** (p - 2) * F.values)
    g = adjoint_extend(G, f.grid)
    return g.with_values(p * g.values)


def gradient_check(f: SampledFunction, p, lattice: SpacetimeGrid, n_dirs=10, eps=1e-4, seed=0):
    """Relative errors of the analytic directional derivative against central differences.

    Directions are random complex node vectors scaled to the norm of ``f``.
    """
    rng = np.random.default_rng(seed)
    g = gradient(f, p, lattice)
    nf = norm_L2_hyperboloid(f)
    out = []
    for _ in range(n_dirs):
        h = f.with_values(rng.standard_normal(f.grid.size) + 1j * rng.standard_normal(f.grid.size))
        h = h.with_values(h.values * (nf / norm_L2_hyperboloid(h)))
        ana = float(np.real(np.sum(h.values * np.conj(g.values) * f.w_sigma)))
        up = _objective(extend(f.with_values(f.values + eps * h.values), lattice), p)
        dn = _objective(extend(f.with_values(f.values - eps * h.values), lattice), p)
        fd = (up - dn) / (2 * eps)
        out.append(abs(fd - ana) / max(abs(ana), TINY))
    return np.array(out)


# ------------------------------------------------------------------ ascent


def ascend(f0: SampledFunction, config: SearchConfig, lattice: SpacetimeGrid | None = None,
           state: SearchState | None = None, max_iters: int | None = None) -> SearchState:
    """Backtracking ascent on the unit sphere until the relative gain drops below ``tol``.

    A step is accepted when the quotient does not decrease; otherwise it is
    halved. Passing ``state`` continues its history and flags.
    """
    p = config.p
    f = normalize(f0)
    lattice = lattice or (state.lattice if state is not None else None) or search_lattice(config, f.grid)
    F = extend(f, lattice)
    q = _objective(F, p) ** (1.0 / p)
    if state is None:
        state = SearchState(f, [q], lattice=lattice)
    else:
        state.f, state.lattice = f, lattice
        state.quotient_history.append(q)
    s = config.step
    n_iter = config.max_iters if max_iters is None else max_iters
    for _ in range(n_iter):
        g = gradient(f, p, lattice, F)
        gn = norm_L2_hyperboloid(g)
        if not gn > TINY:
            state.flags.append(f"stagnation:zero-gradient:iter={state.iteration}")
            break
        while True:
            trial = normalize(f.with_values(f.values + (s / gn) * g.values))
            Ft = extend(trial, lattice)
            qt = _objective(Ft, p) ** (1.0 / p)
            if qt >= q:
                break
            s *= 0.5
            if s < config.min_step:
                state.flags.append(f"stagnation:step-underflow:iter={state.iteration}")
                trial = None
                break
        if trial is None:
            break
        rel = (qt - q) / q
        f, F, q = trial, Ft, qt
        state.iteration += 1
        state.quotient_history.append(q)
        s = min(s * config.grow, config.max_step)
        if rel < config.tol:
            break
    state.f = f
    return state


# ------------------------------------------------------ angular selection


def select_angular_sector(f: SampledFunction, K: int, p, lattice: SpacetimeGrid):
    """Sign-pattern cell ``k0`` whose piece has the largest extension norm.

    Returns ``(k0, ||T f^(k0)||_p)``. By the triangle inequality the value is
    at least ``||T f||_p / K``.
    """
    best = (0, -1.0)
    for k in range(1, K + 1):
        piece = angular_piece(f, k, K)
        if not np.any(piece.values != 0):
            continue
        v = _objective(extend(piece, lattice), p) ** (1.0 / p)
        if v > best[1]:
            best = (k, v)
    if best[0] == 0:
        raise DegenerateInput("every angular cell is empty")
    return best


def alignment_rotation(direction) -> np.ndarray:
    """Proper rotation ``Q`` with ``Q u = e_d`` for the unit vector ``u``."""
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    d = u.size
    e = np.zeros(d)
    e[-1] = 1.0
    if u[-1] >= 0:
        # reflect u to -e_d (stable for u near e_d), then flip the last axis
        v = u + e
        H = np.eye(d) - 2.0 * np.outer(v, v) / (v @ v)
        H[-1] *= -1.0
        return H
    v = u - e
    H = np.eye(d) - 2.0 * np.outer(v, v) / (v @ v)
    # a reflection; flipping an axis orthogonal to e_d makes it proper
    H[0] *= -1.0
    return H


def sector_direction(f: SampledFunction, k: int, K: int) -> np.ndarray:
    """Mass-weighted mean direction of the ``k``-th cell (cell center if it cancels)."""
    piece = angular_piece(f, k, K)
    m = np.abs(piece.values) ** 2 * piece.w_sigma
    rho = np.linalg.norm(piece.nodes, axis=-1)
    u = np.where(rho[:, None] > 0, piece.nodes / np.maximum(rho, TINY)[:, None], 0.0)
    v = m @ u
    if np.linalg.norm(v) > 1e-12 * max(m.sum(), TINY):
        return v / np.linalg.norm(v)
    d = f.d
    centre = np.ones(d)
    sign_bits = k - 1
    m_bits = int(round(math.log2(K)))
    for i in reversed(range(m_bits)):
        if sign_bits & 1:
            centre[i] = -1.0
        sign_bits >>= 1
    return centre / np.linalg.norm(centre)


def admissible_piece(f: SampledFunction, k: int, K: int, N, config: SearchConfig, cfg=None):
    """Shell ``N`` of the ``k``-th angular piece, rotated into the cone about ``e_d``.

    The piece is interpolated onto a cap grid whose panels resolve regions
    down to ``N / 2^cap_levels``. Returns ``(piece, Q)`` with ``Q`` the rotation.
    """
    cfg = cfg or BaseCubeConfig.from_constants()
    Q = alignment_rotation(sector_direction(f, k, K))
    g = rotate(angular_piece(f, k, K), Q)
    lo, hi = lp_support(N)
    top = float(np.max(np.linalg.norm(f.nodes, axis=-1)))
    rr = (lo, min(hi, top)) if N > 1 else None
    if rr is not None and rr[1] <= rr[0]:
        return None, Q
    r_align = max(float(N) / 2**config.cap_levels, 2.0**-6)
    grid = cap_grid(N, config.d, r_align, config.n_radial_cap, config.n_angular_cap, cfg,
                    radial_range=rr if rr is not None else (0.0, min(hi, top)))
    vals = g.grid.interpolate(g.values, grid.nodes, warn=False)
    piece = lp_piece(SampledFunction(grid, vals), N)
    return piece, Q


# ------------------------------------------------------ distinguished region


def mass_in_ball(f: SampledFunction, radius) -> float:
    """``||f||_{L^2(B)} / ||f||`` for the centered ball of the given radius."""
    m = np.abs(f.values) ** 2 * f.w_sigma
    tot = m.sum()
    if not tot > 0:
        return 0.0
    inside = np.linalg.norm(f.nodes, axis=-1) <= radius
    return float(math.sqrt(min(1.0, m[inside].sum() / tot)))


def find_distinguished_region(f: SampledFunction, config: SearchConfig, lattice: SpacetimeGrid,
                              cfg=None) -> RecenterReport:
    """Shell, angular cell and region carrying the extension norm of ``f``.

    ``N*`` maximizes ``||T f_N||_p`` over the occupied shells of the admissible
    piece of the selected cell; the region is the witness of the refined
    report at ``N*``. The boost ``nu`` maps the region center to the origin
    (in the frame of ``f``).
    """
    cfg = cfg or BaseCubeConfig.from_constants()
    p, K = config.p, config.K
    k0, share = select_angular_sector(f, K, p, lattice)
    flags = []
    q = _objective(extend(f, lattice), p) ** (1.0 / p)
    d1 = config.delta1 if config.delta1 is not None else q / (2 * K)
    if share < d1:
        flags.append(f"below-delta1:{share:.6g}<{d1:.6g}")
    shells = occupied_shells(angular_piece(f, k0, K))
    if not shells:
        raise DegenerateInput("all shells are numerically empty")
    best = None
    for N in shells:
        piece, Q = admissible_piece(f, k0, K, N, config, cfg)
        if piece is None or norm_L2_hyperboloid(piece) <= TINY:
            continue
        v = _objective(extend(piece, default_grid(piece)), p) ** (1.0 / p)
        if best is None or v > best[0]:
            best = (v, N, piece, Q)
    if best is None:
        raise DegenerateInput("all shells are numerically empty")
    shell_norm, N, piece, Q = best
    if shell_norm < config.resolved("delta3"):
        flags.append(f"below-delta3:{shell_norm:.6g}")
    rep = refined_report(piece, N, ExponentSet(config.d, p), r_min=2.0**-6,
                         max_regions=config.max_regions, cfg=cfg)
    kid = rep.details["witness_id"]
    region_norm, region_l2 = math.nan, math.nan
    for r, k_id, nk, _ in rep.details["terms"]:
        if k_id == kid:
            region_norm = nk
    if kid is not None:
        from .functions import restrict

        region_l2 = norm_L2_hyperboloid(restrict(piece, kid, cfg))
        c = region_center(kid, cfg).xi
        nu = tuple((-(Q.T @ c)).tolist())
    else:
        nu = (0.0,) * config.d
    if region_norm < config.resolved("delta4"):
        flags.append(f"below-delta4:{region_norm:.6g}")
    if region_l2 < config.resolved("delta5"):
        flags.append(f"below-delta5:{region_l2:.6g}")
    flags += [fl for fl in rep.flags if fl.startswith("truncation")][:1]
    R = config.resolved("ball_radius")
    return RecenterReport(
        N=int(N), r=float(kid.r) if kid else float(N), kappa=kid, nu=nu, ball_radius=R,
        mass_in_ball=mass_in_ball(f, R), mass_before=mass_in_ball(f, R), sector=k0,
        region_l2=region_l2, shell_norm=shell_norm, region_norm=region_norm, flags=tuple(flags),
    )


def recenter(f: SampledFunction, report: RecenterReport, config: SearchConfig):
    """Apply the boost of ``report``; returns ``(f_new, updated report)``.

    ``f_new`` lives on the pushforward grid, where values carry over exactly.
    """
    before = mass_in_ball(f, report.ball_radius)
    g = pullback_boost(f, report.nu)
    after = mass_in_ball(g, report.ball_radius)
    flags = list(report.flags)
    if after < config.resolved("delta2"):
        flags.append(f"below-delta2:{after:.6g}")
    # the selected angular piece, measured against the whole of f
    piece = angular_piece(f, report.sector, config.K) if report.sector else f
    gp = pullback_boost(piece, report.nu)
    inside = np.linalg.norm(gp.nodes, axis=-1) <= report.ball_radius
    m = np.abs(gp.values) ** 2 * gp.w_sigma
    piece_mass = float(math.sqrt(m[inside].sum())) / max(norm_L2_hyperboloid(f), TINY)
    if piece_mass < config.resolved("delta6"):
        flags.append(f"below-delta6:{piece_mass:.6g}")
    return g, replace(report, mass_in_ball=after, mass_before=before, flags=tuple(flags))


def extract_modulation(f: SampledFunction, lattice: SpacetimeGrid, F: ExtensionField | None = None):
    """Lab point of the lattice maximum of ``|T f|``; returns ``(x0, t0, degenerate)``."""
    F = F if F is not None else extend(f, lattice)
    a = np.abs(F.values).reshape(-1)
    if a.max() - a.mean() <= 1e-12 * max(a.max(), 1.0):
        return np.zeros(f.d), 0.0, True
    i = int(np.argmax(a))
    x, t = lattice.lab_points(np.array([i]))
    return x[0], float(t[0]), False


# ---------------------------------------------------------------- pipeline


def rescore(f: SampledFunction, config: SearchConfig, lattice: SpacetimeGrid) -> float:
    """Quotient on the lattice refined by ``rescore_factor``."""
    if config.rescore_factor <= 1:
        return quotient(f, config.p, lattice)
    return quotient(f, config.p, lattice.refine(config.rescore_factor))


def symmetry_step(state: SearchState, config: SearchConfig, epoch=0):
    """Angular selection, region detection, recentering and modulation, in place.

    Updates ``state`` to the recentered function on the boosted lattice and
    returns the provenance fields of the step, with the recenter report
    under ``"report"``. ``quotient_fresh`` is computed on a fresh rest-frame
    lattice, independently of the tracked one.
    """
    rep = find_distinguished_region(state.f, config, state.lattice)
    f_new, rep = recenter(state.f, rep, config)
    lat = boost_lattice(state.lattice, rep.nu)
    x0, t0, degenerate = extract_modulation(f_new, lat)
    if degenerate:
        state.flags.append(f"modulation-degenerate:epoch={epoch}")
    elif np.any(np.abs(x0) > 0) or t0 != 0:
        f_new = modulate(f_new, x0, t0)
    q_tracked = quotient(f_new, config.p, lat)
    q_fresh = quotient(f_new, config.p, default_grid(f_new, R=config.lattice_R,
                                                    oversample=config.oversample,
                                                    max_nodes=config.max_nodes))
    state.recenter_log.append((rep.nu, tuple(np.asarray(x0).tolist()), float(t0)))
    state.f, state.lattice = f_new, lat
    state.quotient_history.append(q_tracked)
    return dict(report=rep, sector=rep.sector, N=rep.N, r=rep.r,
                region=(rep.kappa.j, rep.kappa.k) if rep.kappa else None,
                nu=rep.nu, x0=tuple(np.asarray(x0).tolist()), t0=float(t0),
                mass_before=rep.mass_before, mass_after=rep.mass_in_ball,
                quotient_tracked=q_tracked, quotient_fresh=q_fresh)


def run_pipeline(config: SearchConfig, seed: int | None = None, lattice: SpacetimeGrid | None = None):
    """Ascent epochs alternating with angular selection, region detection,
    recentering and modulation extraction.

    Returns ``(state, reports, provenance)``. The provenance holds one record
    per epoch with the quotient before and after the symmetry steps; the
    after-value is computed on a fresh rest-frame lattice, independently of
    the tracked one.
    """
    seed = config.seed if seed is None else seed
    grid = frequency_grid(config)
    lattice = lattice or search_lattice(config, grid)
    f = random_start(config, seed, grid)
    state = SearchState(f, [], lattice=lattice)
    reports, prov = [], []
    for epoch in range(config.epochs):
        t_start = time.perf_counter()
        state = ascend(state.f, config, state.lattice, state=state)
        q_before = state.quotient
        rec = {"epoch": epoch, "seed": seed, "iterations": state.iteration, "quotient": q_before}
        if epoch == config.epochs - 1:
            rec["seconds"] = time.perf_counter() - t_start
            prov.append(rec)
            break
        rec.update(symmetry_step(state, config, epoch))
        rec["seconds"] = time.perf_counter() - t_start
        reports.append(rec.pop("report"))
        prov.append(rec)
        log.info("epoch %d seed %d: q=%.8g fresh=%.8g", epoch, seed, q_before, rec["quotient_fresh"])
    state.rescored = rescore(state.f, config, state.lattice)
    if abs(state.rescored - state.quotient) > POLICY.symmetry_grid_rtol * state.quotient:
        state.flags.append(f"quadrature-fit:rescored={state.rescored:.6g}")
    return state, reports, prov


def _pipeline_task(args):
    mapping, seed = args
    config = SearchConfig.from_mapping(mapping)
    state, reports, prov = run_pipeline(config, seed)
    return seed, state, reports, prov


def run_restarts(config: SearchConfig, jobs: int | None = None):
    """Pipelines from seeds ``seed, seed+1, ...``; results ordered by seed.

    Restarts share one lattice per process; with ``jobs > 1`` they run in a
    process pool and each worker rebuilds the same lattice from the config.
    """
    seeds = [config.seed + i for i in range(config.restarts)]
    jobs = config.jobs if jobs is None else jobs
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(seeds))) as ex:
            out = list(ex.map(_pipeline_task, [(config.to_mapping(), s) for s in seeds]))
    else:
        lattice = search_lattice(config)
        out = [(s, *run_pipeline(config, s, lattice)) for s in seeds]
    return sorted(out, key=lambda r: r[0])


def restart_spread(results) -> float:
    """``(max - min) / max`` of the final quotients."""
    q = np.array([r[1].quotient for r in results])
    return float((q.max() - q.min()) / q.max())
