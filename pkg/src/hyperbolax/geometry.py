"""Points on R^d, R^{d+1} and the hyperboloid, the weight <xi>, and Lorentz boosts.

Every function here accepts a single point or a stack of points along the
leading axes; the coordinate axis is always the last one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def bracket(xi):
    """Japanese bracket ``<xi> = (1 + |xi|^2)^(1/2)``.

    Parameters
    ----------
    xi : array_like, shape (..., d)

    Returns
    -------
    float or ndarray of shape (...)
    """
    xi = np.asarray(xi, dtype=float)
    return np.sqrt(1.0 + np.sum(xi * xi, axis=-1))


@dataclass(frozen=True)
class FrequencyPoint:
    xi: np.ndarray

    def __post_init__(self):
        xi = np.array(self.xi, dtype=float).reshape(-1)
        if not np.all(np.isfinite(xi)):
            raise ValueError("frequency point has non-finite components")
        xi.setflags(write=False)
        object.__setattr__(self, "xi", xi)

    @property
    def d(self):
        return self.xi.size

    def bracket(self):
        return float(bracket(self.xi))

    def lift(self):
        return HyperboloidPoint(self.xi, self.bracket())


@dataclass(frozen=True)
class SpacetimePoint:
    x: np.ndarray
    t: float

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(-1)
        if not (np.all(np.isfinite(x)) and np.isfinite(self.t)):
            raise ValueError("space-time point has non-finite components")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", float(self.t))


@dataclass(frozen=True)
class HyperboloidPoint:
    """A point ``(xi, tau)`` with ``tau = <xi>``."""

    xi: np.ndarray
    tau: float

    def __post_init__(self):
        xi = np.array(self.xi, dtype=float).reshape(-1)
        tau = float(self.tau)
        expected = float(bracket(xi))
        if abs(tau - expected) > 1e-12 * expected:
            raise ValueError(f"tau={tau!r} is not <xi>={expected!r}")
        xi.setflags(write=False)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "tau", tau)

    @classmethod
    def from_xi(cls, xi):
        return cls(xi, float(bracket(xi)))


@dataclass(frozen=True)
class LorentzBoost:
    """Boost ``L_nu`` carrying ``(nu, <nu>)`` to ``(0, 1)``."""

    nu: np.ndarray
    bracket_nu: float = field(init=False)

    def __post_init__(self):
        nu = np.array(self.nu, dtype=float).reshape(-1)
        if not np.all(np.isfinite(nu)):
            raise ValueError("boost parameter has non-finite components")
        nu.setflags(write=False)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "bracket_nu", float(bracket(nu)))

    @property
    def d(self):
        return self.nu.size

    def inverse(self):
        return LorentzBoost(-self.nu)

    def matrix(self):
        """The (d+1)x(d+1) matrix of ``L_nu``; it is symmetric."""
        d = self.d
        m = np.eye(d + 1)
        m[:d, :d] += _parallel_projector(self.nu) * (self.bracket_nu - 1.0)
        m[:d, d] = -self.nu
        m[d, :d] = -self.nu
        m[d, d] = self.bracket_nu
        return m

    def apply(self, xi, tau):
        return boost_apply(self, xi, tau)

    def flat(self, xi):
        return boost_flat(self, xi)


def _as_boost(nu):
    return nu if isinstance(nu, LorentzBoost) else LorentzBoost(nu)


def _parallel_projector(nu):
    norm = np.linalg.norm(nu)
    if norm == 0.0:
        # xi_par = 0, xi_perp = xi when nu = 0
        return np.zeros((nu.size, nu.size))
    n = nu / norm
    return np.outer(n, n)


def _split(nu, xi):
    """Return ``(xi_par_coefficient, unit direction)``; direction is None for nu = 0."""
    norm = np.linalg.norm(nu)
    if norm == 0.0:
        return None, None
    n = nu / norm
    return xi @ n, n


def boost_apply(L, xi, tau):
    """Apply ``L_nu`` to ``(xi, tau)`` in R^{d+1}.

    ``(xi, tau) -> (xi_perp + <nu> xi_par - nu tau, <nu> tau - nu . xi)``.
    """
    L = _as_boost(L)
    xi = np.asarray(xi, dtype=float)
    tau = np.asarray(tau, dtype=float)
    coef, n = _split(L.nu, xi)
    if n is None:
        return xi.copy(), tau.copy()
    g = L.bracket_nu
    xi_new = xi + ((g - 1.0) * coef)[..., None] * n - tau[..., None] * L.nu
    tau_new = g * tau - xi @ L.nu
    return xi_new, tau_new


def boost_flat(L, xi):
    """Induced action ``L_nu^flat(xi) = xi_perp + <nu> xi_par - nu <xi>`` on R^d."""
    L = _as_boost(L)
    xi = np.asarray(xi, dtype=float)
    coef, n = _split(L.nu, xi)
    if n is None:
        return xi.copy()
    return xi + ((L.bracket_nu - 1.0) * coef)[..., None] * n - bracket(xi)[..., None] * L.nu


def boost_flat_jacobian(L, xi):
    """Jacobian determinant of ``L_nu^flat``, equal to ``<L^flat xi> / <xi>``.

    The identity follows from invariance of ``dxi / <xi>`` under boosts.
    """
    L = _as_boost(L)
    xi = np.asarray(xi, dtype=float)
    return bracket(boost_flat(L, xi)) / bracket(xi)


def minkowski_form(xi, tau):
    """``tau^2 - |xi|^2``."""
    xi = np.asarray(xi, dtype=float)
    return np.asarray(tau, dtype=float) ** 2 - np.sum(xi * xi, axis=-1)


def lift(xi):
    """Stack ``(xi, <xi>)`` into points of R^{d+1}."""
    xi = np.asarray(xi, dtype=float)
    return np.concatenate([xi, bracket(xi)[..., None]], axis=-1)
