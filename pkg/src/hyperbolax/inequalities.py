"""Computable two-sided functionals for the extension inequalities.

Every report compares a left side computed on a space-time lattice with a
right side assembled from the same lattice norms, so ratios are insensitive
to the common quadrature and truncation error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .extension import (
    DegenerateInput,
    ExtensionField,
    SpacetimeGrid,
    bilinear_norm,
    default_grid,
    extend,
    norm_Lp_spacetime,
)
from .functions import (
    PolarGrid,
    SampledFunction,
    lp_piece,
    norm_L2_hyperboloid,
    norm_Ls_lebesgue,
    occupied_shells,
    restrict,
)
from .regions import (
    BaseCubeConfig,
    RegionId,
    is_dyadic,
    layer_count,
    locate,
    separable_level,
    separated,
    separated_indices,
)

TINY = 1e-100


# -------------------------------------------------------------- exponents


def p_range(d: int):
    """Exponents ``p`` for which the extension inequality holds in dimension ``d``."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    if d == 1:
        return 6.0, math.inf
    return 2.0 * (d + 2) / d, 2.0 * (d + 1) / (d - 1)


def _r_max(d):
    return math.inf if d <= 2 else 2.0 * d / (d - 2)


def _inv(x):
    return 0.0 if math.isinf(x) else 1.0 / x


def admissibility_violations(q, r, theta, d, tol=1e-12):
    """Names of the admissible-pair conditions that ``(q, r, theta)`` fails."""
    out = []
    if not 0.0 <= theta <= 1.0:
        out.append("theta in [0, 1]")
    if not q >= 2.0:
        out.append("q >= 2")
    if not (r >= 2.0 and r <= _r_max(d) * (1 + tol)):
        out.append(f"r in [2, {_r_max(d)}]")
    c = d - 1 + theta
    if abs(2 * _inv(q) + c * _inv(r) - c / 2) > tol:
        out.append("2/q + (d-1+theta)/r = (d-1+theta)/2")
    if q == 2.0 and math.isinf(r):
        out.append("(q, r) != (2, inf)")
    return out


def is_admissible_pair(q, r, theta, d) -> bool:
    return not admissibility_violations(q, r, theta, d)


@dataclass(frozen=True)
class AdmissiblePair:
    q: float
    r: float
    theta: float
    d: int = 3

    def __post_init__(self):
        bad = admissibility_violations(self.q, self.r, self.theta, self.d)
        if bad:
            raise ValueError(f"not an admissible pair: fails {', '.join(bad)}")

    @property
    def gain(self):
        return _inv(self.q) - _inv(self.r)


def select_mixed_pairs(p, d):
    """Two admissible pairs whose reciprocals average to ``1/p`` with a positive gain.

    Both pairs use the ``theta`` for which ``(p, p)`` is itself admissible and
    move ``1/q`` by ``-+eps`` and ``1/r`` by ``+-2 eps / (d - 1 + theta)``, with
    ``eps`` half of the largest step keeping both pairs admissible.
    """
    lo, hi = p_range(d)
    if d < 3:
        raise ValueError("pair selection is defined for d >= 3")
    if not lo < p < hi:
        raise ValueError(f"p = {p} is not strictly inside ({lo}, {hi}): fails q1 < p < q0 and r0 < p < r1")
    theta = (2 * (d + 1) - p * (d - 1)) / (p - 2)
    c = d - 1 + theta
    x = 1.0 / p
    b_min = (d - 2) / (2.0 * d)
    limits = {
        "q1 >= 2": 0.5 - x,
        "q0 <= inf": x,
        "r0 >= 2": (0.5 - x) * c / 2,
        "r1 <= 2d/(d-2)": (x - b_min) * c / 2,
    }
    eps = 0.5 * min(limits.values())
    if eps <= 0:
        worst = min(limits, key=limits.get)
        raise ValueError(f"no admissible pairs around p = {p}: constraint {worst} is violated")
    pair0 = AdmissiblePair(1.0 / (x - eps), 1.0 / (x + 2 * eps / c), theta, d)
    pair1 = AdmissiblePair(1.0 / (x + eps), 1.0 / (x - 2 * eps / c), theta, d)
    checks = {
        "2/p = 1/q0 + 1/q1": abs(_inv(pair0.q) + _inv(pair1.q) - 2 * x) < 1e-12,
        "2/p = 1/r0 + 1/r1": abs(_inv(pair0.r) + _inv(pair1.r) - 2 * x) < 1e-12,
        "q1 < p < q0": pair1.q < p < pair0.q,
        "r0 < p < r1": pair0.r < p < pair1.r,
        "1/q1 - 1/r1 > 0": pair1.gain > 0,
    }
    failed = [k for k, ok in checks.items() if not ok]
    if failed:
        raise ValueError(f"pair selection failed: {', '.join(failed)}")
    return pair0, pair1


def refined_exponents(d, p):
    """``(p/2 - (d+2)/d, p/2 - (d+1)/(d-1))``: nonnegative and nonpositive on the range."""
    return p / 2 - (d + 2) / d, p / 2 - (d + 1) / (d - 1)


@dataclass(frozen=True)
class ExponentSet:
    """``p`` with the interpolation parameter ``gamma`` and the bilinear exponent ``s``."""

    d: int
    p: float
    gamma: float | None = None
    s: float = 1.9

    def __post_init__(self):
        lo, hi = p_range(self.d)
        if not lo <= self.p <= hi:
            raise ValueError(f"p = {self.p} outside [{lo}, {hi}] for d = {self.d}")
        if self.gamma is None:
            object.__setattr__(self, "gamma", 0.5 * (1.0 - 2.0 / self.p))
        if not 0.0 < self.gamma < 1.0 - 2.0 / self.p:
            raise ValueError(f"gamma must lie in (0, 1 - 2/p) = (0, {1 - 2 / self.p}), got {self.gamma}")
        if not 1.0 <= self.s < 2.0:
            raise ValueError(f"s must lie in [1, 2), got {self.s}")

    @property
    def s_prime(self):
        return math.inf if self.s == 1.0 else self.s / (self.s - 1.0)

    def cap_weight_exponent(self):
        """Exponent of ``r`` weighting cap terms."""
        return self.d * refined_exponents(self.d, self.p)[0] * (1 - self.gamma)

    def sector_weight_exponent(self):
        return (self.d - 1) * refined_exponents(self.d, self.p)[1] * (1 - self.gamma)


def bilinear_exponents(d, p, s, regime):
    """Powers ``(expN, expR)`` of ``N`` and ``r`` in the bilinear bounds."""
    lo, hi = p_range(d)
    if not lo <= p <= hi:
        raise ValueError(f"p = {p} outside [{lo}, {hi}]")
    if not 1.0 <= s < 2.0:
        raise ValueError(f"s must lie in [1, 2), got {s}")
    inv_sp = 1.0 - 1.0 / s
    if regime == "cap":
        return -2.0 / s, 2.0 * d * inv_sp - 2.0 * (d + 2) / p
    if regime == "sector":
        return -2.0 / s, 2.0 * (d - 1) * inv_sp - 2.0 * (d + 1) / p
    raise ValueError(f"regime must be 'cap' or 'sector', got {regime!r}")


# ---------------------------------------------------------------- reports


@dataclass
class InequalityReport:
    kind: str
    lhs: float
    rhs: float
    ratio: float
    witness: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.rhs > 0 and not math.isclose(self.ratio, self.lhs / self.rhs, rel_tol=1e-12):
            raise ValueError("ratio must equal lhs / rhs")

    @property
    def confidence(self):
        return "unreliable" if any(f.startswith("truncation") for f in self.flags) else "ok"

    def to_lines(self, version=None):
        lines = [f"kind = {self.kind}"]
        if version is not None:
            lines.append(f"constants_version = {version}")
        lines += [
            f"lhs = {self.lhs!r}",
            f"rhs = {self.rhs!r}",
            f"ratio = {self.ratio!r}",
            f"witness = {_fmt_witness(self.witness)}",
            f"flags = {';'.join(self.flags)}",
            f"confidence = {self.confidence}",
        ]
        return "\n".join(lines) + "\n"


def _fmt_witness(w):
    return " ".join(f"{k}={v}" for k, v in w.items())


def _ratio(lhs, rhs):
    return lhs / rhs if rhs > 0 else math.nan


def _norm(F: ExtensionField, p, f, flags, label):
    rep = norm_Lp_spacetime(F, p, f)
    if rep.flagged:
        flags.append(f"truncation:{label}:tail={rep.tail_ratio:.3g}")
    return rep.value


def _lattice(f, grid):
    return grid if grid is not None else default_grid(f)


def decoupling_report(f: SampledFunction, p, d=None, grid: SpacetimeGrid | None = None) -> InequalityReport:
    """Annular decoupling: ``||Tf||_p^p`` against ``sup_N ||T f_N||_p^(p-2) ||f||_2^2``."""
    d = d or f.d
    if d != f.d:
        raise ValueError("dimension mismatch")
    lo, hi = p_range(d)
    if not lo <= p <= hi:
        raise ValueError(f"p = {p} outside [{lo}, {hi}]")
    n2 = norm_L2_hyperboloid(f)
    shells = occupied_shells(f)
    if n2 <= TINY or not shells:
        return InequalityReport("decoupling", 0.0, 0.0, math.nan, {}, ["degenerate"])
    grid = _lattice(f, grid)
    flags: list = []
    lhs = _norm(extend(f, grid), p, f, flags, "f") ** p
    norms = {}
    for N in shells:
        fN = lp_piece(f, N)
        norms[N] = _norm(extend(fN, grid), p, fN, flags, f"N={N}")
    Nstar = max(norms, key=norms.get)
    rhs = norms[Nstar] ** (p - 2) * n2**2
    witness = {"N": Nstar}
    return InequalityReport("decoupling", lhs, rhs, _ratio(lhs, rhs), witness, flags,
                            {"shell_norms": norms, "l2": n2})


def _regime(r):
    return "cap" if r <= 1 else "sector"


def bilinear_report(f, g, kappa, kappa_prime, s, p, grid: SpacetimeGrid | None = None, cfg=None):
    """``||T(f_kappa) T(g_kappa')||_(p/2)`` against ``N^a r^b ||f_kappa||_s ||g_kappa'||_s``."""
    a = kappa.id if hasattr(kappa, "id") else kappa
    b = kappa_prime.id if hasattr(kappa_prime, "id") else kappa_prime
    if not separable_level(a.N, a.r, a.d) or not separated(a, b):
        raise ValueError(f"regions {a} and {b} are not separated")
    if f.grid is not g.grid:
        raise ValueError("f and g must share a frequency grid")
    fk, gk = restrict(f, a, cfg), restrict(g, b, cfg)
    ns_f, ns_g = norm_Ls_lebesgue(fk, s), norm_Ls_lebesgue(gk, s)
    flags: list = []
    if ns_f <= TINY or ns_g <= TINY:
        return InequalityReport("bilinear", 0.0, 0.0, math.nan, {"kappa": a, "kappa_prime": b}, ["degenerate"])
    grid = grid if grid is not None else default_grid(fk + gk)
    F, G = extend(fk, grid), extend(gk, grid)
    for lab, X, h in (("f_kappa", F, fk), ("g_kappa'", G, gk)):
        _norm(X, p, h, flags, lab)
    lhs = bilinear_norm(F, G, p / 2)
    eN, eR = bilinear_exponents(a.d, p, s, _regime(a.r))
    rhs = a.N**eN * a.r**eR * ns_f * ns_g
    return InequalityReport("bilinear", lhs, rhs, _ratio(lhs, rhs),
                            {"kappa": a, "kappa_prime": b}, flags,
                            {"expN": eN, "expR": eR, "s": s})


# ------------------------------------------------------------ region scans


def _dyadic_levels(N, r_min):
    r, out = float(N), []
    while r >= r_min:
        out.append(r)
        r /= 2
    return out


def panel_floor(grid, N, cfg=None, r_min=2.0**-6):
    """Finest dyadic level whose regions are unions of quadrature panels of ``grid``.

    Regions finer than the panels hold fragments of single Gauss rules, whose
    extensions are not resolved; scans stop at this level.
    """
    cfg = cfg or BaseCubeConfig.from_constants()
    if not (isinstance(grid, PolarGrid) and grid.angular == "cap"):
        return float(N)
    edges_r = grid.radial_edges
    tol = 1e-9 * max(1.0, N)

    def has(edges, x):
        return np.min(np.abs(edges - x)) <= tol

    best = None
    for r in _dyadic_levels(N, r_min):
        ok = True
        if r <= 1:
            for j in range(1, layer_count(r)):
                x = 0.5 * N * (1 + 3 * j * r)
                if edges_r[0] < x < edges_r[-1] and not has(edges_r, x):
                    ok = False
                    break
        M = r / N
        n = int(round(1 / M))
        cube_edges = -cfg.ell + 2 * cfg.ell * M * np.arange(n + 1)
        for e in grid.eta_edges:
            if not all(has(e, x) for x in cube_edges):
                ok = False
        if not ok:
            break
        best = r
    return best if best is not None else float(N)


def occupied_regions(f: SampledFunction, N, r, cfg=None):
    """Region ids at level ``(N, r)`` holding a nonzero sample, with node masks."""
    nz = f.values != 0
    j, k, valid = locate(f.nodes, N, r, cfg)
    keep = nz & valid
    if not keep.any():
        return []
    keys = np.concatenate([j[:, None], k], axis=1)[keep]
    uniq = np.unique(keys, axis=0)
    return [RegionId(N, r, int(u[0]), tuple(int(v) for v in u[1:])) for u in uniq]


def refined_report(
    f: SampledFunction,
    N,
    exps: ExponentSet,
    grid: SpacetimeGrid | None = None,
    r_min: float = 2.0**-6,
    max_regions: int = 2000,
    cfg=None,
) -> InequalityReport:
    """Refined single-shell functional with the weighted region supremum.

    Levels run from ``r = N`` down to the finer of ``r_min`` and the panel
    floor of the frequency grid; a level is skipped (with all finer ones)
    when it would exceed ``max_regions`` occupied regions. Excluded levels are
    listed in ``details["excluded_levels"]``.
    """
    cfg = cfg or BaseCubeConfig.from_constants()
    if not is_dyadic(N) or N < 1:
        raise ValueError(f"N must be dyadic >= 1, got {N}")
    fN = lp_piece(f, N)
    n2 = norm_L2_hyperboloid(fN)
    if n2 <= TINY:
        raise DegenerateInput(f"shell N={N} is empty")
    p, d, gam = exps.p, exps.d, exps.gamma
    grid = _lattice(fN, grid)
    flags: list = []
    lhs = _norm(extend(fN, grid), p, fN, flags, f"N={N}") ** p
    floor = max(r_min, panel_floor(f.grid, N, cfg, r_min))
    levels = _dyadic_levels(N, r_min)
    scanned, excluded, budget = [], [], max_regions
    best = {"cap": (0.0, None), "sector": (0.0, None)}
    terms = []
    for r in levels:
        if r < floor:
            excluded.append(r)
            continue
        regs = occupied_regions(fN, N, r, cfg)
        if len(regs) > budget:
            excluded += [x for x in levels if x <= r and x not in excluded]
            break
        budget -= len(regs)
        scanned.append(r)
        reg = _regime(r)
        wexp = exps.cap_weight_exponent() if reg == "cap" else exps.sector_weight_exponent()
        for kid in regs:
            fk = restrict(fN, kid, cfg)
            nk = _norm(extend(fk, grid), p, fk, flags, f"kappa={kid.r},{kid.j},{kid.k}")
            term = r**wexp * nk ** (p * gam)
            terms.append((r, kid, nk, term))
            if term > best[reg][0]:
                best[reg] = (term, kid)
    rhs = (best["cap"][0] + best["sector"][0]) * n2 ** (p * (1 - gam))
    top = max(best.values(), key=lambda v: v[0])[1]
    witness = {"N": N, "r": top.r, "j": top.j, "k": top.k} if top else {}
    flags = sorted(set(flags), key=flags.index)
    return InequalityReport(
        "refined", lhs, rhs, _ratio(lhs, rhs), witness, flags,
        {"scanned_levels": scanned, "excluded_levels": excluded, "floor": floor,
         "witness_id": top, "terms": terms, "l2": n2},
    )


# ------------------------------------------------------ Whitney identity


def whitney_reconstruction_check(
    f: SampledFunction, N, p, grid: SpacetimeGrid | None = None, cfg=None, max_nodes=6000, max_levels=60
):
    """Both sides of the bilinear Whitney identity for ``||T f_N||_p^p`` on one lattice.

    The right side sums ``T(f_kappa) T(f_kappa')`` over separated pairs at every
    dyadic level until each pair of distinct frequency nodes has been covered,
    plus the discrete diagonal ``sum_a (c_a e_a)^2`` that the continuous
    identity does not see. Levels below ``N / 2^d`` are descended until the
    pair count closes.
    """
    cfg = cfg or BaseCubeConfig.from_constants()
    fN = lp_piece(f, N)
    nz = np.flatnonzero(fN.values)
    if nz.size == 0:
        raise DegenerateInput(f"shell N={N} is empty")
    d = f.d
    grid = grid if grid is not None else default_grid(fN, max_nodes=max_nodes)
    xi = fN.nodes[nz]
    c = (fN.values * fN.w_sigma)[nz]
    kappa, omega = grid.rest_frequencies(xi)
    t_ax, x_ax = grid.axes()
    mesh = np.meshgrid(t_ax, *x_ax, indexing="ij")
    Z = np.stack([m.reshape(-1) for m in mesh], axis=-1)
    U = np.exp(1j * (Z[:, :1] * omega[None, :] + Z[:, 1:] @ kappa.T)) * c[None, :]
    Tf = U.sum(axis=1)
    S = np.sum(U * U, axis=1)
    diag = S.copy()
    n = nz.size
    target = n * (n - 1)
    covered = 0
    r = N / 2**d
    levels = 0
    while covered < target and levels < max_levels:
        j, k, valid = locate(xi, N, r, cfg)
        if not valid.all():
            raise ValueError("f_N has samples outside the restricted annulus; f is not admissible")
        keys = np.concatenate([j[:, None], k], axis=1)
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        m = uniq.shape[0]
        memb = sparse.csr_matrix((np.ones(n), (np.arange(n), inv.reshape(-1))), shape=(n, m))
        A = U @ memb
        I, J = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
        sep = separated_indices(N, r, uniq[I, 0], uniq[I, 1:], uniq[J, 0], uniq[J, 1:], d)
        pi, pj = np.nonzero(sep)
        if pi.size:
            P = sparse.csr_matrix((np.ones(pi.size), (pi, pj)), shape=(m, m))
            S = S + np.sum(np.asarray(A @ P) * A, axis=1)
            cnt = np.bincount(inv.reshape(-1), minlength=m)
            covered += int(np.sum(cnt[pi] * cnt[pj]))
        r /= 2
        levels += 1
    w = grid.weight
    lhs = float(np.sum(np.abs(Tf) ** p) * w)
    rhs = float(np.sum(np.abs(S) ** (p / 2)) * w)
    dev = abs(lhs - rhs) / lhs if lhs > 0 else 0.0
    return {
        "check": "whitney-reconstruction",
        "lhs": lhs,
        "rhs": rhs,
        "max_rel_dev": dev,
        "pointwise_dev": float(np.max(np.abs(Tf**2 - S)) / np.max(np.abs(Tf) ** 2)),
        "pairs_covered": covered,
        "pairs_total": target,
        "finest_level": r * 2,
        "levels": levels,
        "diagonal_share": float(np.sum(np.abs(diag) ** (p / 2)) * w / lhs) if lhs > 0 else 0.0,
        "passed": bool(covered == target and dev <= 1e-6),
    }
