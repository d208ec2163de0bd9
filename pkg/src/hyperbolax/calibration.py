"""Sweeps that produce the frozen empirical constants.

Each sweep returns the raw statistics; ``propose`` turns them into the
``key = value`` lines of the constants file. The shipped values were produced
with ``python -m hyperbolax.calibration`` and are checked against fresh
sweeps by the test suite.
"""

from __future__ import annotations

import math
import sys

from dataclasses import dataclass

import numpy as np

from .extension import SpacetimeGrid, default_grid
from .functions import (
    Boosted,
    Gaussian,
    Modulated,
    RegionIndicator,
    SampledFunction,
    Symbolic,
    cap_grid,
    norm_L2_hyperboloid,
    pullback_boost,
    restrict,
    sample,
)
from .geometry import boost_flat
from .inequalities import ExponentSet, decoupling_report, refined_report
from .regions import (
    BaseCubeConfig,
    DyadicCube,
    RegionId,
    cubes_per_axis,
    layer_count,
    lift_eta,
    make_region,
    radial_bounds,
    region_center,
    sample_region,
    separable_level,
    separated_partners,
    solid_angle,
    sumset_statistics,
)


def dyadic_levels(n_max=64, r_min=2.0**-6):
    """All ``(N, r)`` with ``1 <= N <= n_max`` and ``r_min <= r <= N``."""
    out, N = [], 1.0
    while N <= n_max:
        r = N
        while r >= r_min:
            out.append((N, r))
            r /= 2
        N *= 2
    return out


# ---------------------------------------------------------------- volumes


def volume_extremes(N, r, d=3, cfg: BaseCubeConfig | None = None):
    """Smallest and largest normalized volume on level ``(N, r)``.

    The volume factors into a radial part, which depends on ``j`` only, and
    the solid angle of the lifted cube, which depends on ``k`` only. The
    lift density ``(1 - |eta|^2)^(-1/2)`` increases in every ``|eta_i|``, so
    the solid angle is smallest on a cube touching the axis and largest on
    a corner cube.
    """
    cfg = cfg or BaseCubeConfig.from_constants()
    J, n = layer_count(r), cubes_per_axis(N, r)
    radial = []
    for j in range(J):
        lo, hi = radial_bounds(N, r, j)
        radial.append((hi**d - lo**d) / d)
    M = r / N
    inner = DyadicCube.build(M, (n // 2,) * (d - 1), cfg)
    corner = DyadicCube.build(M, (0,) * (d - 1), cfg)
    s_lo, s_hi = solid_angle(inner), solid_angle(corner)
    scale = N * r ** (d if r <= 1 else d - 1)
    return min(radial) * s_lo / scale, max(radial) * s_hi / scale


def volume_sweep(d=3, n_max=64, r_min=2.0**-6, cfg=None):
    rows = []
    for N, r in dyadic_levels(n_max, r_min):
        lo, hi = volume_extremes(N, r, d, cfg)
        rows.append({"N": N, "r": r, "kind": "cap" if r <= 1 else "sector", "min": lo, "max": hi})
    return rows


# ------------------------------------------------------ center and sumset


def _random_ids(N, r, d, rng, count):
    J, n = layer_count(r), cubes_per_axis(N, r)
    ids = {RegionId(N, r, 0, (0,) * (d - 1)), RegionId(N, r, J - 1, (n - 1,) * (d - 1))}
    for _ in range(count):
        ids.add(RegionId(N, r, int(rng.integers(J)), tuple(int(x) for x in rng.integers(n, size=d - 1))))
    return sorted(ids)


def _inner_layer(kid: RegionId):
    return kid.N == 1 and kid.j == 0


def center_sweep(d=3, n_max=64, r_min=2.0**-6, regions=6, samples=200, seed=0, cfg=None):
    """Largest ``||xi| - |c|| / (min(1, r) N)`` and ``angle(xi, c) / (r / N)`` over samples.

    The radial statistic skips the innermost layer of ``N = 1``, which reaches
    the origin and is not ``O(r)`` thick.
    """
    cfg = cfg or BaseCubeConfig.from_constants()
    rng = np.random.default_rng(seed)
    rad, ang = 0.0, 0.0
    for N, r in dyadic_levels(n_max, r_min):
        for kid in _random_ids(N, r, d, rng, regions):
            kap = make_region(kid, cfg)
            xi = sample_region(kap, samples, rng)
            c = kap.center.xi
            nx = np.linalg.norm(xi, axis=-1)
            nc = np.linalg.norm(c)
            cosang = np.clip(xi @ c / (nx * nc), -1.0, 1.0)
            ang = max(ang, float(np.max(np.arccos(cosang))) / (r / N))
            if not _inner_layer(kid):
                rad = max(rad, float(np.max(np.abs(nx - nc))) / (min(1.0, r) * N))
    return {"center_radial": rad, "center_angular": ang}


def _partner_picks(kid, partners, count, rng):
    """Random partners plus the ones farthest in layer and in cube index."""
    dj = np.array([abs(p.j - kid.j) for p in partners])
    dk = np.array([max(abs(a - b) for a, b in zip(p.k, kid.k)) for p in partners])
    picks = {int(np.argmax(dj)), int(np.argmax(dk)), int(np.argmax(dj + dk))}
    picks |= {int(i) for i in rng.choice(len(partners), size=min(count, len(partners)), replace=False)}
    return sorted(picks)


def sumset_sweep(d=3, n_max=64, r_min=2.0**-6, pairs=4, samples=100, seed=0, cfg=None):
    """Extremes of the vertical gap, radial and angular displacement of sampled sums.

    Gaps are in units of ``r^2 / N``, radial displacement in units of
    ``min(1, r) N`` and angular displacement in units of ``r``. Pairs
    touching the innermost layer of ``N = 1`` are left out of the band and
    of the radial statistic. Each sampled region is paired with random
    partners and with its farthest partners, where the extremes occur.
    """
    cfg = cfg or BaseCubeConfig.from_constants()
    rng = np.random.default_rng(seed)
    band_lo, band_hi, rad, ang = math.inf, 0.0, 0.0, 0.0
    for N, r in dyadic_levels(n_max, r_min):
        if not separable_level(N, r, d):
            continue
        for kid in _random_ids(N, r, d, rng, pairs):
            partners = separated_partners(kid)
            if not partners:
                continue
            kap = make_region(kid, cfg)
            for i in _partner_picks(kid, partners, pairs, rng):
                kp = make_region(partners[i], cfg)
                xi, xp = sample_region(kap, samples, rng), sample_region(kp, samples, rng)
                g = kap.center.xi + kp.center.xi
                vert, rd, an = sumset_statistics(xi, xp, g)
                ang = max(ang, float(an.max()) / r)
                if not (_inner_layer(kid) or _inner_layer(kp.id)):
                    rad = max(rad, float(rd.max()) / (min(1.0, r) * N))
                    band_lo = min(band_lo, float(vert.min()) / (r * r / N))
                    band_hi = max(band_hi, float(vert.max()) / (r * r / N))
    return {"band_lo": band_lo, "band_hi": band_hi, "radial": rad, "angular": ang}


# ------------------------------------------------------------ universal ball


def boosted_image_radius(kid: RegionId, samples=200, rng=None, cfg=None):
    """Largest ``|L_c^flat(xi)|`` over corners and samples of the region, ``c`` its center.

    ``L_c^flat`` sends the center to the origin, so this is the radius of the
    smallest centered ball containing the recentered region.
    """
    cfg = cfg or BaseCubeConfig.from_constants()
    rng = rng or np.random.default_rng(0)
    kap = make_region(kid, cfg)
    d = kap.d
    lo, hi = kap.cube.lo, kap.cube.hi
    corners = np.array(np.meshgrid(*[[a, b] for a, b in zip(lo, hi)], indexing="ij")).reshape(d - 1, -1).T
    dirs = lift_eta(corners)
    rho = np.array([max(kap.radial_lo, 1e-12), kap.radial_hi])
    pts = (rho[:, None, None] * dirs[None]).reshape(-1, d)
    pts = np.vstack([pts, sample_region(kap, samples, rng)])
    img = boost_flat(kap.center.xi, pts)
    return float(np.max(np.linalg.norm(img, axis=-1)))


def ball_sweep(alpha, d=3, n_max=64, r_min=2.0**-6, regions=6, samples=200, seed=0, cfg=None):
    """Largest boosted image radius over regions with ``r <= 2^alpha``."""
    rng = np.random.default_rng(seed)
    out = 0.0
    for N, r in dyadic_levels(n_max, r_min):
        if r > 2.0**alpha:
            continue
        for kid in _random_ids(N, r, d, rng, regions):
            out = max(out, boosted_image_radius(kid, samples, rng, cfg))
    return out


# ----------------------------------------------------------------- corpus


@dataclass(frozen=True)
class CorpusEntry:
    """A calibration function: symbolic form, shell of interest and grid recipe.

    ``radial`` is the radial range of the cap grid; panels align with the
    regions of level ``N / 2^levels``.
    """

    name: str
    symbolic: Symbolic
    N: int
    radial: tuple
    levels: int = 2
    bump: bool = False


def _bump(kid: RegionId, width, cfg=None):
    c = region_center(kid, cfg).xi
    return Gaussian(tuple(c.tolist()), width)


def calibration_corpus(cfg=None):
    """The frozen twelve-function corpus (admissible functions in ``d = 3``)."""
    cfg = cfg or BaseCubeConfig.from_constants()
    ell = cfg.ell
    k0 = RegionId(2, 0.25, 0, (3, 4))
    k1 = RegionId(4, 0.5, 0, (2, 5))
    k2 = RegionId(1, 0.25, 0, (1, 2))
    return [
        CorpusEntry("gauss-n1", Gaussian((0.0, 0.0, 0.6), 0.3), 1, (0.0, 1.1)),
        CorpusEntry("gauss-n2", Gaussian((0.0, 0.0, 1.5), 0.4), 2, (0.5, 2.2)),
        CorpusEntry("gauss-n4", Gaussian((0.0, 0.0, 3.0), 0.8), 4, (1.0, 4.4)),
        CorpusEntry("gauss-tilted", Gaussian((0.05, -0.03, 1.2), 0.35), 2, (0.5, 2.2)),
        CorpusEntry("cap-n1", RegionIndicator(RegionId(1, 0.5, 0, (1, 1)), ell), 1, (0.0, 1.1)),
        CorpusEntry("cap-n2", RegionIndicator(RegionId(2, 1, 0, (0, 1)), ell), 2, (0.5, 2.2)),
        CorpusEntry("sector-n4", RegionIndicator(RegionId(4, 2, 0, (0, 0)), ell), 4, (1.0, 4.4)),
        CorpusEntry("bump-a", _bump(k0, 0.1, cfg), 2, (0.5, 2.2), levels=3, bump=True),
        CorpusEntry("bump-b", _bump(k1, 0.2, cfg), 4, (1.0, 4.4), levels=3, bump=True),
        CorpusEntry("bump-c", _bump(k2, 0.06, cfg), 1, (0.0, 1.1), bump=True),
        CorpusEntry("modulated", Modulated(Gaussian((0.0, 0.0, 1.5), 0.4), (1.0, 0.0, 0.0), 2.0), 2, (0.5, 2.2)),
        CorpusEntry("boosted", Boosted(Gaussian((0.0, 0.0, 0.0), 0.5), (0.0, 0.0, 1.2)), 2, (0.5, 2.2)),
    ]


CORPUS_WINDOW = 48.0


def corpus_function(entry: CorpusEntry, factor=1, cfg=None) -> SampledFunction:
    """Unit-norm samples on the entry's cap grid with ``factor`` times the base order."""
    cfg = cfg or BaseCubeConfig.from_constants()
    N = entry.N
    grid = cap_grid(N, 3, N / 2**entry.levels, 16 * factor, 3 * factor, cfg, radial_range=entry.radial)
    f = sample(entry.symbolic, grid)
    n = norm_L2_hyperboloid(f)
    return SampledFunction(grid, f.values / n, entry.symbolic)


def corpus_lattice(entry: CorpusEntry, factor=1, max_nodes=2e5, cfg=None) -> SpacetimeGrid:
    """Windowed lattice of the base-resolution function, refined by ``factor``.

    Packets supported in one cap stay coherent for thousands of time units,
    far beyond what any affordable sampling resolves, so the statistics are
    taken over the fixed window ``|t| <= CORPUS_WINDOW / N``.
    """
    base = default_grid(corpus_function(entry, 1, cfg), R=3.0, oversample=2.0,
                        t_max=CORPUS_WINDOW / entry.N, max_nodes=max_nodes)
    return base if factor == 1 else base.refine(factor)


def corpus_statistics(entry: CorpusEntry, p=3.6, factor=1, max_regions=200, cfg=None):
    """Decoupling and refined ratios, the refined witness and the pipeline norms.

    The norms are those thresholded by the recentering pipeline: the shell
    norm, the witness region's extension norm and ``L^2`` mass, and the
    fraction of mass left in the universal ball after boosting the witness
    center to the origin.
    """
    cfg = cfg or BaseCubeConfig.from_constants()
    f = corpus_function(entry, factor, cfg)
    lat = corpus_lattice(entry, factor, cfg=cfg)
    dec = decoupling_report(f, p, grid=lat)
    ref = refined_report(f, entry.N, ExponentSet(3, p), grid=lat,
                         r_min=entry.N / 2**entry.levels, max_regions=max_regions, cfg=cfg)
    kid = ref.details["witness_id"]
    shell = dec.details["shell_norms"].get(entry.N, math.nan)
    region_norm = next((t[2] for t in ref.details["terms"] if t[1] == kid), math.nan)
    region_l2 = norm_L2_hyperboloid(restrict(f, kid, cfg)) if kid else math.nan
    return {
        "name": entry.name,
        "factor": factor,
        "decoupling": dec.ratio,
        "refined": ref.ratio,
        "witness": kid,
        "shell_norm": shell,
        "region_norm": region_norm,
        "region_l2": region_l2,
        "flags": dec.flags + ref.flags,
    }


def recentered_mass(entry: CorpusEntry, radius, factor=1, cfg=None):
    """Mass fraction in the ball of ``radius`` before and after boosting the witness center to 0."""
    from .search import mass_in_ball

    cfg = cfg or BaseCubeConfig.from_constants()
    f = corpus_function(entry, factor, cfg)
    kid = refined_report(f, entry.N, ExponentSet(3, 3.6), grid=corpus_lattice(entry, factor, cfg=cfg),
                         r_min=entry.N / 2**entry.levels, cfg=cfg).details["witness_id"]
    g = pullback_boost(f, -region_center(kid, cfg).xi)
    return mass_in_ball(f, radius), mass_in_ball(g, radius)


# ---------------------------------------------------------------- freezing


def _round_out(x, lower):
    """Round to two significant digits away from the interior of the interval."""
    if x == 0 or not math.isfinite(x):
        return x
    e = math.floor(math.log10(abs(x))) - 1
    f = math.floor if lower else math.ceil
    return f(x / 10**e) * 10**e


def propose(margin=1.25, n_max=64, r_min=2.0**-6, alpha=2, seed=0):
    """Frozen values for the geometric constants, with a safety margin."""
    vols = volume_sweep(3, n_max, r_min)
    caps = [v for v in vols if v["kind"] == "cap"]
    secs = [v for v in vols if v["kind"] == "sector"]
    cen = center_sweep(3, n_max, r_min, seed=seed)
    sums = sumset_sweep(3, n_max, r_min, seed=seed)
    ball = ball_sweep(alpha, 3, n_max, r_min, seed=seed)
    return {
        "volume_cap_lo": _round_out(min(v["min"] for v in caps) / margin, True),
        "volume_cap_hi": _round_out(max(v["max"] for v in caps) * margin, False),
        "volume_sector_lo": _round_out(min(v["min"] for v in secs) / margin, True),
        "volume_sector_hi": _round_out(max(v["max"] for v in secs) * margin, False),
        # the lower band edge moves with the sampling seed: twice the margin
        "sumset_band_lo": _round_out(sums["band_lo"] / margin**2, True),
        "sumset_band_hi": _round_out(sums["band_hi"] * margin, False),
        "sumset_radial_C": _round_out(sums["radial"] * margin, False),
        "sumset_angular_C": _round_out(sums["angular"] * margin, False),
        "center_radial_C": _round_out(cen["center_radial"] * margin, False),
        "center_angular_C": _round_out(cen["center_angular"] * margin, False),
        "ball_radius": _round_out(ball * margin, False),
    }


def main(argv=None):
    for key, value in propose().items():
        print(f"{key} = {value:.6g}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
