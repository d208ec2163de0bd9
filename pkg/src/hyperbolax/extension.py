"""The extension operator ``T f(x, t) = int exp(i x.xi + i t <xi>) f(xi) dxi / <xi>``.

Fields are sampled on uniform space-time lattices expressed in a moving
frame: the lab point of lattice node ``(y, s)`` is ``L_mu (Q y, s)``. Since
``L_mu`` is symmetric with unit determinant, the phase at that node is
``y . Q^T zeta + s <zeta>`` with ``zeta = L_mu^flat(xi)``, and space-time
integrals in the lattice coordinates equal those in the lab. Choosing the
rest frame of ``f`` keeps the lattice small.

The fast path is a type-1 non-uniform FFT per batch of time slices after
demodulating by the center of the frequency support; a chunked direct sum is
kept as the oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .constants import POLICY
from .functions import SampledFunction, Symbolic
from .geometry import LorentzBoost, boost_apply, boost_flat, bracket

try:
    import finufft
except ImportError:  # pragma: no cover - exercised only without the wheel
    finufft = None


SEPARABLE_MAX_POINTS = 1500


class NyquistError(ValueError):
    """The lattice is too coarse for the frequency support."""


class DegenerateInput(ValueError):
    """Zero or empty input where a nonzero function is required."""


# ---------------------------------------------------------------- lattice


@dataclass(frozen=True)
class SpacetimeGrid:
    """Uniform lattice with odd node counts, centered at the space-time origin.

    Attributes
    ----------
    n_x : tuple of int
        Node count per spatial axis (odd).
    n_t : int
        Number of time slices (odd).
    h_x : tuple of float
        Spacing per spatial axis.
    h_t : float
    mu : tuple of float
        Frame boost; ``(0, ..., 0)`` is the lab frame.
    frame : tuple of tuple
        Rotation ``Q`` of the spatial axes.
    """

    n_x: tuple
    n_t: int
    h_x: tuple
    h_t: float
    mu: tuple
    frame: tuple

    def __post_init__(self):
        nx = tuple(int(n) for n in self.n_x)
        if any(n < 1 or n % 2 == 0 for n in nx) or self.n_t < 1 or self.n_t % 2 == 0:
            raise ValueError("node counts must be positive and odd")
        if any(h <= 0 for h in self.h_x) or self.h_t <= 0:
            raise ValueError("spacings must be positive")
        d = len(nx)
        Q = np.asarray(self.frame, dtype=float)
        if Q.shape != (d, d) or not np.allclose(Q.T @ Q, np.eye(d), atol=1e-10):
            raise ValueError("frame must be orthogonal")
        object.__setattr__(self, "n_x", nx)
        object.__setattr__(self, "n_t", int(self.n_t))
        object.__setattr__(self, "h_x", tuple(float(h) for h in self.h_x))
        object.__setattr__(self, "h_t", float(self.h_t))
        object.__setattr__(self, "mu", tuple(float(m) for m in self.mu))
        object.__setattr__(self, "frame", tuple(tuple(float(v) for v in row) for row in Q))

    @classmethod
    def lab(cls, R_x, R_t, n_x, n_t, d=3):
        """Lab-frame lattice on ``[-R_x, R_x]^d x [-R_t, R_t]``."""
        n_x = tuple(np.broadcast_to(n_x, (d,)).tolist())
        R_x = np.broadcast_to(np.asarray(R_x, dtype=float), (d,))
        h_x = tuple(2 * R / (n - 1) if n > 1 else 1.0 for R, n in zip(R_x, n_x))
        h_t = 2 * R_t / (n_t - 1) if n_t > 1 else 1.0
        return cls(n_x, n_t, h_x, h_t, (0.0,) * d, tuple(map(tuple, np.eye(d))))

    @property
    def d(self):
        return len(self.n_x)

    @property
    def Q(self):
        return np.asarray(self.frame)

    @property
    def is_lab(self):
        return not any(self.mu) and np.array_equal(self.Q, np.eye(self.d))

    @property
    def R_x(self):
        return tuple(h * (n - 1) / 2 for h, n in zip(self.h_x, self.n_x))

    @property
    def R_t(self):
        return self.h_t * (self.n_t - 1) / 2

    @property
    def weight(self):
        return float(np.prod(self.h_x) * self.h_t)

    @property
    def shape(self):
        return (self.n_t,) + self.n_x

    @property
    def size(self):
        return int(np.prod(self.shape))

    def axes(self):
        ax = [h * (np.arange(n) - (n - 1) // 2) for h, n in zip(self.h_x, self.n_x)]
        t = self.h_t * (np.arange(self.n_t) - (self.n_t - 1) // 2)
        return t, ax

    def rest_frequencies(self, xi):
        """``(kappa, omega)``: frequencies conjugate to the lattice coordinates."""
        zeta = boost_flat(np.asarray(self.mu), np.asarray(xi, dtype=float))
        return zeta @ self.Q, bracket(zeta)

    def lab_points(self, index=None):
        """Lab coordinates ``(x, t)`` of nodes, given as a flat index array."""
        t_ax, x_ax = self.axes()
        idx = np.arange(self.size) if index is None else np.asarray(index)
        sub = np.unravel_index(idx, self.shape)
        s = t_ax[sub[0]]
        y = np.stack([x_ax[i][sub[i + 1]] for i in range(self.d)], axis=-1)
        x_rest = y @ self.Q.T
        x, t = boost_apply(np.asarray(self.mu), x_rest, s)
        return x, t

    def refine(self, factor=2):
        """Halve spacings (times ``factor``) on the same domain."""
        n_x = tuple((n - 1) * factor + 1 for n in self.n_x)
        return SpacetimeGrid(
            n_x, (self.n_t - 1) * factor + 1, tuple(h / factor for h in self.h_x),
            self.h_t / factor, self.mu, self.frame,
        )

    def spec(self):
        return {
            "n_x": list(self.n_x), "n_t": self.n_t, "h_x": list(self.h_x), "h_t": self.h_t,
            "mu": list(self.mu), "frame": [list(r) for r in self.frame],
        }


def _support(f: SampledFunction, use_grid=False):
    if use_grid:
        return np.ones(f.grid.size, dtype=bool)
    return f.values != 0


def default_grid(
    f: SampledFunction,
    R: float = 6.0,
    oversample: float = 1.25,
    frame: str = "rest",
    use_grid_support: bool = True,
    max_nodes: float = 4e6,
    t_max: float | None = None,
) -> SpacetimeGrid:
    """Lattice adapted to ``f``.

    In the rest frame (``frame="rest"``) the lattice is boosted to the
    center-of-momentum frame of ``|f|^2 dsigma`` and rotated to the principal
    axes of the momentum spread. Spacings satisfy the Nyquist guard about the
    center of the support with the given oversampling. The time extent is ``R``
    dispersion times, where a dispersion time is the initial packet width over
    the velocity spread; spatial extents follow the fastest support velocity.
    ``t_max`` caps the time extent, which fixes a window for functions whose
    packets stay coherent longer than their sampling resolves.
    """
    mask = _support(f, use_grid_support)
    if not np.any(f.values != 0):
        raise DegenerateInput("cannot size a lattice for the zero function")
    d = f.d
    xi = f.nodes[mask]
    mass = (np.abs(f.values) ** 2 * f.w_sigma)[mask]
    if frame == "rest":
        P = np.sum(mass[:, None] * xi, axis=0)
        E = np.sum(mass * bracket(xi))
        m = math.sqrt(max(E * E - P @ P, 1e-300))
        mu = P / m
    elif frame == "lab":
        mu = np.zeros(d)
    else:
        raise ValueError(f"frame must be 'rest' or 'lab', got {frame!r}")
    zeta = boost_flat(mu, xi)
    wts = mass / mass.sum()
    if frame == "rest":
        mean = wts @ zeta
        cov = (zeta - mean).T @ ((zeta - mean) * wts[:, None])
        _, Q = np.linalg.eigh(cov)
    else:
        Q = np.eye(d)
    kappa = zeta @ Q
    omega = bracket(zeta)
    kmean = wts @ kappa
    sig = np.sqrt(np.maximum(wts @ (kappa - kmean) ** 2, 1e-300))
    H = 0.5 * (kappa.max(axis=0) - kappa.min(axis=0))
    Ht = 0.5 * (omega.max() - omega.min())
    vel = kappa / omega[:, None]
    vmean = wts @ vel
    vstd = np.sqrt(np.maximum(wts @ (vel - vmean) ** 2, 1e-300))
    heavy = mass >= 1e-6 * mass.max()
    vmax = np.max(np.abs(vel[heavy] - vmean), axis=0) + np.abs(vmean)
    a = 3.0 / sig
    t0 = float(np.max(a / vstd))
    R_t = R * t0 if t_max is None else min(R * t0, float(t_max))
    R_x = a + vmax * R_t
    h_x = np.pi / (np.maximum(H, 1e-12) * oversample)
    h_t = np.pi / (max(Ht, 1e-12) * oversample)
    h_x = np.minimum(h_x, R_x)
    h_t = min(h_t, R_t)
    n_x = [2 * int(math.ceil(Rx / h)) + 1 for Rx, h in zip(R_x, h_x)]
    n_t = 2 * int(math.ceil(R_t / h_t)) + 1
    while np.prod(n_x) * n_t > max_nodes:
        # keep the guard, shrink the domain
        n_x = [max(3, 2 * ((n - 1) // 2 * 9 // 10) + 1) for n in n_x]
        n_t = max(3, 2 * ((n_t - 1) // 2 * 9 // 10) + 1)
    return SpacetimeGrid(tuple(n_x), n_t, tuple(h_x), h_t, tuple(mu), tuple(map(tuple, Q)))


# ----------------------------------------------------------------- fields


@dataclass
class NormReport:
    value: float
    integral: float
    tail: float
    tail_ratio: float
    flagged: bool


@dataclass
class ExtensionField:
    grid: SpacetimeGrid
    values: np.ndarray
    source: SampledFunction | None = None
    truncation_report: list = field(default_factory=list)

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ValueError(f"field shape {self.values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite field values")

    @property
    def origin_index(self):
        return tuple((n - 1) // 2 for n in self.grid.shape)

    def at_origin(self):
        return complex(self.values[self.origin_index])

    def __mul__(self, c):
        return ExtensionField(self.grid, self.values * c, None)

    def __add__(self, other):
        _same_grid(self, other)
        return ExtensionField(self.grid, self.values + other.values, None)


def _same_grid(F, G):
    if F.grid != G.grid:
        raise ValueError("fields live on different lattices")


def _check_nyquist(grid: SpacetimeGrid, kappa, omega):
    kc = 0.5 * (kappa.max(axis=0) + kappa.min(axis=0))
    wc = 0.5 * (omega.max() + omega.min())
    H = np.abs(kappa - kc).max(axis=0)
    Ht = np.abs(omega - wc).max()
    bad = [i for i in range(grid.d) if H[i] * grid.h_x[i] > np.pi]
    if bad or Ht * grid.h_t > np.pi:
        need = [np.pi / h for h in H] + [np.pi / Ht]
        raise NyquistError(
            "lattice too coarse for the frequency support: spacing must be at most "
            f"pi/halfwidth = {np.round(need, 6).tolist()} (x axes, then t); got "
            f"{list(grid.h_x) + [grid.h_t]}"
        )
    return kc, wc


def _prepare(f: SampledFunction, grid: SpacetimeGrid, use_grid=False):
    if f.d != grid.d:
        raise ValueError("dimension mismatch between function and lattice")
    mask = _support(f, use_grid)
    xi = f.nodes[mask]
    c = (f.values * f.w_sigma)[mask]
    kappa, omega = grid.rest_frequencies(xi)
    return mask, c, kappa, omega


def _nufft_type1(xs, c, n_modes, eps):
    d = len(n_modes)
    if d == 1:
        return finufft.nufft1d1(xs[0], c, n_modes, eps=eps, isign=1)
    if d == 2:
        return finufft.nufft2d1(xs[0], xs[1], c, n_modes, eps=eps, isign=1)
    return finufft.nufft3d1(xs[0], xs[1], xs[2], c, n_modes, eps=eps, isign=1)


def _nufft_type2(xs, F, eps):
    d = F.ndim - 1
    if d == 1:
        return finufft.nufft1d2(xs[0], F, eps=eps, isign=-1)
    if d == 2:
        return finufft.nufft2d2(xs[0], xs[1], F, eps=eps, isign=-1)
    return finufft.nufft3d2(xs[0], xs[1], xs[2], F, eps=eps, isign=-1)


def _demod_phase(grid, kc, wc):
    t_ax, x_ax = grid.axes()
    ph = np.exp(1j * wc * t_ax).reshape((-1,) + (1,) * grid.d)
    for i, x in enumerate(x_ax):
        shape = [1] * (grid.d + 1)
        shape[i + 1] = -1
        ph = ph * np.exp(1j * kc[i] * x).reshape(shape)
    return ph


def extend(f: SampledFunction, grid: SpacetimeGrid, method: str = "auto", eps=None, chunk=64):
    """Sample ``T f`` on every lattice node.

    ``method`` is ``"nufft"`` (fast path), ``"separable"`` (dense product
    form, fast for few frequency nodes), ``"direct"`` (chunked direct sum, the
    oracle) or ``"auto"``.
    """
    eps = POLICY.nufft_eps if eps is None else eps
    _, c, kappa, omega = _prepare(f, grid)
    out = np.zeros(grid.shape, dtype=complex)
    if c.size == 0:
        return ExtensionField(grid, out, f)
    kc, wc = _check_nyquist(grid, kappa, omega)
    if method == "auto":
        if c.size <= SEPARABLE_MAX_POINTS or finufft is None or grid.d > 3:
            method = "separable"
        else:
            method = "nufft"
    t_ax, x_ax = grid.axes()
    if method == "direct":
        return ExtensionField(grid, _direct(c, kappa, omega, t_ax, x_ax), f)
    if method == "separable":
        return ExtensionField(grid, _separable(c, kappa, omega, t_ax, x_ax), f)
    if method != "nufft":
        raise ValueError(f"unknown method {method!r}")
    xs = [np.ascontiguousarray(grid.h_x[i] * (kappa[:, i] - kc[i])) for i in range(grid.d)]
    dw = omega - wc
    for s0 in range(0, grid.n_t, chunk):
        ts = t_ax[s0 : s0 + chunk]
        strengths = np.ascontiguousarray(c[None, :] * np.exp(1j * ts[:, None] * dw[None, :]))
        out[s0 : s0 + len(ts)] = _nufft_type1(xs, strengths, grid.n_x, eps)
    out *= _demod_phase(grid, kc, wc)
    return ExtensionField(grid, out, f)


def _separable(c, kappa, omega, t_ax, x_ax, block_elems=2**22):
    """Dense evaluation through the product structure of the phase.

    The field is ``sum_a (c_a e^{i s w_a} e^{i y_1 k_a1}) (prod_{i>1} e^{i y_i k_ai})``,
    one matrix product per block of time slices. Cost is ``G M``, cheap for few
    frequency nodes.
    """
    M = c.size
    E = [np.exp(1j * np.outer(x, kappa[:, i])) for i, x in enumerate(x_ax)]
    right = np.ones((1, M), dtype=complex)
    for Ei in reversed(E[1:]):
        right = (Ei[:, None, :] * right[None, :, :]).reshape(-1, M)
    n1 = len(x_ax[0])
    out = np.empty((len(t_ax), n1, right.shape[0]), dtype=complex)
    step = max(1, block_elems // max(1, n1 * M))
    for s0 in range(0, len(t_ax), step):
        ts = t_ax[s0 : s0 + step]
        left = (np.exp(1j * np.outer(ts, omega)) * c)[:, None, :] * E[0][None, :, :]
        out[s0 : s0 + len(ts)] = (left.reshape(-1, M) @ right.T).reshape(len(ts), n1, -1)
    return out.reshape((len(t_ax),) + tuple(len(a) for a in x_ax))


def _direct(c, kappa, omega, t_ax, x_ax, block=4096):
    d = len(x_ax)
    mesh = np.meshgrid(*x_ax, indexing="ij")
    Y = np.stack([m.reshape(-1) for m in mesh], axis=-1)
    out = np.empty((len(t_ax), Y.shape[0]), dtype=complex)
    for i, t in enumerate(t_ax):
        ct = c * np.exp(1j * t * omega)
        for b in range(0, Y.shape[0], block):
            out[i, b : b + block] = np.exp(1j * (Y[b : b + block] @ kappa.T)) @ ct
    return out.reshape((len(t_ax),) + tuple(len(a) for a in x_ax))


def extend_direct(f: SampledFunction, grid: SpacetimeGrid):
    return extend(f, grid, method="direct")


def extend_at(f: SampledFunction, x, t):
    """Direct evaluation of ``T f`` at lab points ``(x, t)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    mask = f.values != 0
    xi = f.nodes[mask]
    c = (f.values * f.w_sigma)[mask]
    phase = x @ xi.T + t[:, None] * bracket(xi)[None, :]
    return np.exp(1j * phase) @ c


def extension_matrix(f_grid_nodes, grid: SpacetimeGrid, mask=None):
    """Dense ``G x n`` matrix of phases ``exp(i z . (xi, <xi>))`` (small problems only)."""
    xi = np.asarray(f_grid_nodes)
    if mask is not None:
        xi = xi[mask]
    kappa, omega = grid.rest_frequencies(xi)
    t_ax, x_ax = grid.axes()
    mesh = np.meshgrid(t_ax, *x_ax, indexing="ij")
    Z = np.stack([m.reshape(-1) for m in mesh], axis=-1)
    return np.exp(1j * (Z[:, :1] * omega[None, :] + Z[:, 1:] @ kappa.T))


def adjoint_extend(F: ExtensionField, freq_grid, chunk=64, eps=None) -> SampledFunction:
    """``T* F (xi) = sum_z exp(-i z . (xi, <xi>)) F(z) w_z`` on every node of ``freq_grid``."""
    eps = POLICY.nufft_eps if eps is None else eps
    grid = F.grid
    kappa, omega = grid.rest_frequencies(freq_grid.nodes)
    kc, wc = _check_nyquist(grid, kappa, omega)
    G = F.values * np.conj(_demod_phase(grid, kc, wc))
    t_ax, _ = grid.axes()
    dw = omega - wc
    out = np.zeros(freq_grid.size, dtype=complex)
    if finufft is not None and grid.d <= 3:
        xs = [np.ascontiguousarray(grid.h_x[i] * (kappa[:, i] - kc[i])) for i in range(grid.d)]
        for s0 in range(0, grid.n_t, chunk):
            block = np.ascontiguousarray(G[s0 : s0 + chunk])
            vals = _nufft_type2(xs, block, eps)
            ts = t_ax[s0 : s0 + chunk]
            out += np.sum(vals * np.exp(-1j * ts[:, None] * dw[None, :]), axis=0)
    else:
        _, x_ax = grid.axes()
        mesh = np.meshgrid(*x_ax, indexing="ij")
        Y = np.stack([m.reshape(-1) for m in mesh], axis=-1)
        for i, t in enumerate(t_ax):
            out += np.exp(-1j * (Y @ (kappa - kc).T + t * dw[None, :])).T @ G[i].reshape(-1)
    return SampledFunction(freq_grid, out * grid.weight)


def field_inner(F: ExtensionField, G: ExtensionField) -> complex:
    _same_grid(F, G)
    return complex(np.sum(F.values * np.conj(G.values)) * F.grid.weight)


# ------------------------------------------------------------------ norms


def lp_integral(F: ExtensionField, p) -> float:
    return float(np.sum(np.abs(F.values) ** p) * F.grid.weight)


def stationary_phase_tail(f: SampledFunction, grid: SpacetimeGrid, p) -> float:
    """Heuristic mass of ``|T f|^p`` outside the lattice.

    At large ``|s|`` the field concentrates near ``y = -s v(zeta)`` with
    ``|T f| ~ (2 pi / |s|)^(d/2) <zeta>^((d+2)/2 - 1) |f|``, so the slice
    integrals decay like ``|s|^(-d(p/2-1))``. The estimate integrates that
    profile over ``|s| > R_t`` and over the parts of ``|s| <= R_t`` whose
    stationary points leave the spatial box.
    """
    d = grid.d
    alpha = d * (p / 2 - 1)
    mask = f.values != 0
    if not mask.any():
        return 0.0
    kappa, omega = grid.rest_frequencies(f.nodes[mask])
    w_zeta = f.w_sigma[mask] * omega
    dens = (2 * np.pi) ** (d * p / 2) * np.abs(f.values[mask]) ** p
    dens = dens * omega ** ((d + 2) * (p / 2 - 1) - p) * w_zeta
    R_t = grid.R_t
    if alpha <= 1:
        return float("inf")
    tail = 2.0 * dens.sum() * R_t ** (1 - alpha) / (alpha - 1)
    # stationary point leaves the box at |s| = R_x / |v|
    v = np.abs(kappa / omega[:, None])
    with np.errstate(divide="ignore"):
        s_exit = np.min(np.asarray(grid.R_x)[None, :] / v, axis=1)
    inside = s_exit < R_t
    if inside.any():
        s_e = s_exit[inside]
        tail += 2.0 * np.sum(dens[inside] * (s_e ** (1 - alpha) - R_t ** (1 - alpha))) / (alpha - 1)
    return float(tail)


def norm_Lp_spacetime(F: ExtensionField, p, f: SampledFunction | None = None) -> NormReport:
    """Lattice ``L^p`` norm with a heuristic tail estimate.

    The value is the truncated-domain quadrature. A tail above 10% of the
    truncated integral flags the norm as unreliable; the flag is also
    appended to ``F.truncation_report``.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    S = lp_integral(F, p)
    src = f if f is not None else F.source
    tail = stationary_phase_tail(src, F.grid, p) if src is not None else float("nan")
    ratio = tail / S if S > 0 else float("inf")
    rep = NormReport(S ** (1.0 / p), S, tail, ratio, bool(ratio > POLICY.tail_flag_ratio))
    F.truncation_report.append(rep)
    return rep


def mixed_norm(F: ExtensionField, q, r) -> float:
    """``L^q_t L^r_x`` norm by iterated lattice quadrature (lab-frame lattices only)."""
    if q < 1 or r < 1:
        raise ValueError("q, r must be >= 1")
    if not F.grid.is_lab:
        raise ValueError("mixed norms need a lab-frame lattice")
    hx = float(np.prod(F.grid.h_x))
    axes = tuple(range(1, F.grid.d + 1))
    if math.isinf(r):
        slices = np.max(np.abs(F.values), axis=axes)
    else:
        slices = (np.sum(np.abs(F.values) ** r, axis=axes) * hx) ** (1.0 / r)
    if math.isinf(q):
        return float(slices.max())
    return float((np.sum(slices**q) * F.grid.h_t) ** (1.0 / q))


def bilinear_norm(F: ExtensionField, G: ExtensionField, e) -> float:
    if e <= 1:
        raise ValueError("bilinear exponent must exceed 1")
    _same_grid(F, G)
    return float((np.sum(np.abs(F.values * G.values) ** e) * F.grid.weight) ** (1.0 / e))


def rayleigh(f: SampledFunction, p, grid: SpacetimeGrid | None = None, report=False):
    """``||T f||_p / ||f||_{L^2(H)}`` on the lattice."""
    from .functions import norm_L2_hyperboloid

    n2 = norm_L2_hyperboloid(f)
    if n2 == 0:
        raise DegenerateInput("rayleigh quotient of the zero function")
    grid = grid or default_grid(f)
    rep = norm_Lp_spacetime(extend(f, grid), p, f)
    q = rep.value / n2
    return (q, rep) if report else q


# ---------------------------------------------------------- identity checks


def _subset(grid: SpacetimeGrid, max_nodes):
    step = max(1, grid.size // max_nodes)
    return np.arange(0, grid.size, step)


def kg_propagator_check(f: SampledFunction, grid: SpacetimeGrid, max_nodes=4000):
    """Compare ``T f`` with ``(2 pi)^d exp(i t sqrt(1 - Delta)) g``, ``g^ = f / <xi>``.

    The propagator side is synthesized independently: Fourier samples of ``g``
    with Lebesgue weights, the multiplier ``exp(i t <xi>)``, and the inverse
    transform ``(2 pi)^-d sum exp(i x . xi)``, evaluated directly at lab points.
    """
    F = extend(f, grid)
    idx = _subset(grid, max_nodes)
    x, t = grid.lab_points(idx)
    ghat = f.values / bracket(f.nodes)
    d = f.d
    rhs = np.empty(idx.size, dtype=complex)
    for b in range(0, idx.size, 512):
        prop = np.exp(1j * t[b : b + 512, None] * bracket(f.nodes)[None, :])
        g_t = (np.exp(1j * x[b : b + 512] @ f.nodes.T) * prop) @ (ghat * f.w_leb) / (2 * np.pi) ** d
        rhs[b : b + 512] = (2 * np.pi) ** d * g_t
    lhs = F.values.reshape(-1)[idx]
    scale = np.max(np.abs(lhs))
    dev = float(np.max(np.abs(lhs - rhs)) / scale) if scale > 0 else 0.0
    return {"check": "klein-gordon", "max_rel_dev": dev, "nodes": int(idx.size),
            "passed": dev <= POLICY.identity_rtol}


def fourier_transform_check(f: SampledFunction, grid: SpacetimeGrid, max_nodes=4000):
    """Compare ``T f(x, t)`` with the space-time transform of ``f sigma`` at ``(-x, -t)``.

    The transform ``(f sigma)^(y, s) = sum exp(-i (y . xi + s <xi>)) f w_sigma``
    is taken directly on the lifted nodes.
    """
    F = extend(f, grid)
    idx = _subset(grid, max_nodes)
    x, t = grid.lab_points(idx)
    lifted = np.concatenate([f.nodes, bracket(f.nodes)[:, None]], axis=1)
    meas = f.values * f.w_sigma
    ys = -np.concatenate([x, t[:, None]], axis=1)
    rhs = np.empty(idx.size, dtype=complex)
    for b in range(0, idx.size, 512):
        rhs[b : b + 512] = np.exp(-1j * ys[b : b + 512] @ lifted.T) @ meas
    lhs = F.values.reshape(-1)[idx]
    scale = np.max(np.abs(lhs))
    dev = float(np.max(np.abs(lhs - rhs)) / scale) if scale > 0 else 0.0
    return {"check": "fourier-transform", "max_rel_dev": dev, "nodes": int(idx.size),
            "passed": dev <= POLICY.identity_rtol}


# ---------------------------------------------------------------- oracles


def radial_oracle(profile, radius, x, t, rtol=1e-11):
    """``T f(x, t)`` in d = 3 for radial ``f = profile(|xi|) 1_{|xi| <= radius}``.

    The angular integral is done in closed form, leaving an adaptive 1-D
    quadrature in ``rho``.
    """
    xr = float(np.linalg.norm(x))

    def kernel(rho):
        br = math.sqrt(1.0 + rho * rho)
        sinc = math.sin(rho * xr) / (rho * xr) if rho * xr > 1e-12 else 1.0
        return 4 * np.pi * profile(rho) * sinc * rho * rho / br

    lim = 400
    re = integrate.quad(lambda r: kernel(r) * math.cos(t * math.sqrt(1 + r * r)), 0, radius,
                        epsabs=0, epsrel=rtol, limit=lim)[0]
    im = integrate.quad(lambda r: kernel(r) * math.sin(t * math.sqrt(1 + r * r)), 0, radius,
                        epsabs=0, epsrel=rtol, limit=lim)[0]
    return complex(re, im)


def cubature_oracle(sym: Symbolic, x, t, center, radius, rtol=1e-8):
    """``T f(x, t)`` for ``f = sym 1_{|xi - center| <= radius}`` in d = 3 by adaptive cubature."""
    center = np.asarray(center, dtype=float)
    x = np.asarray(x, dtype=float)

    def integrand(u):
        rho, th, ph = u[:, 0], u[:, 1], u[:, 2]
        st = np.sin(th)
        dirs = np.stack([st * np.cos(ph), st * np.sin(ph), np.cos(th)], axis=-1)
        xi = center + rho[:, None] * dirs
        val = sym(xi) * np.exp(1j * (xi @ x + t * bracket(xi))) * rho**2 * st / bracket(xi)
        return np.stack([val.real, val.imag], axis=-1)

    res = integrate.cubature(integrand, [0, 0, 0], [radius, np.pi, 2 * np.pi], rtol=rtol,
                             atol=1e-13, max_subdivisions=100000)
    return complex(res.estimate[0], res.estimate[1])


def closed_form_ball_sigma(d=3):
    """``int_{|xi| <= 1} dxi / <xi>`` in d = 3."""
    if d != 3:
        raise NotImplementedError
    return 2 * np.pi * (math.sqrt(2.0) - math.log(1.0 + math.sqrt(2.0)))


def boost_lattice(grid: SpacetimeGrid, nu) -> SpacetimeGrid:
    """The lattice whose lab nodes are ``L_nu`` of ``grid``'s lab nodes.

    With ``g = L_nu^* f`` on the pushforward grid, ``T g`` on the returned
    lattice equals ``T f`` on ``grid`` node by node.
    """
    L = LorentzBoost(nu)
    # compose the frame boost with L_nu; the result is a boost times a rotation
    d = grid.d
    M = L.matrix() @ LorentzBoost(grid.mu).matrix()
    # polar decomposition M = B R with B a pure boost, R a spatial rotation
    e = M[:, d]
    mu = -e[:d]
    B = LorentzBoost(mu).matrix()
    R = np.linalg.solve(B, M)
    Qn = R[:d, :d] @ grid.Q
    return SpacetimeGrid(grid.n_x, grid.n_t, grid.h_x, grid.h_t, tuple(mu), tuple(map(tuple, Qn)))
