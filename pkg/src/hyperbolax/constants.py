"""Versioned numeric constants and the global numeric policy.

The constants file is a flat ``key = value`` text file. Its location defaults
to the copy shipped with the package and can be overridden with the
``HYPERBOLAX_CONSTANTS`` environment variable.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from functools import lru_cache
from importlib import resources
from pathlib import Path

ENV_VAR = "HYPERBOLAX_CONSTANTS"


class ConstantsError(ValueError):
    """Raised when the constants file is missing a key or violates an invariant."""


@dataclass(frozen=True)
class Constants:
    version: str
    # base cube C_1
    ell: float
    eps1: float
    # bump psi: 1 on [0, psi_inner], 0 beyond psi_outer, quintic smoothstep between
    psi_inner: float
    psi_outer: float
    # region volume / (N r^d) for caps, / (N r^(d-1)) for sectors
    volume_cap_lo: float
    volume_cap_hi: float
    volume_sector_lo: float
    volume_sector_hi: float
    # sumset band <xi> + <xi'> - <xi + xi'>_2 in units of r^2 / N
    sumset_band_lo: float
    sumset_band_hi: float
    sumset_radial_C: float
    sumset_angular_C: float
    # | |xi| - |c| | <= C min(1, r) N and angle(xi, c) <= C r / N on a region
    center_radial_C: float
    center_angular_C: float
    partner_max: int
    # distinguished regions satisfy r <= 2**alpha; their boosted images lie in |xi| <= ball_radius
    alpha: int
    ball_radius: float
    corpus_decoupling_max: float
    corpus_refined_max: float
    delta2: float
    delta3: float
    delta4: float
    delta5: float
    delta6: float

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class NumericPolicy:
    """Tolerances shared by checks and tests."""

    quadratic_form_rtol: float = 1e-10
    roundtrip_atol: float = 1e-10
    hyperboloid_rtol: float = 1e-12
    jacobian_fd_rtol: float = 1e-5
    pythagoras_rtol: float = 1e-10
    telescoping_atol: float = 1e-12
    boost_isometry_rtol: float = 1e-6
    symmetry_grid_rtol: float = 0.02
    oracle_rtol: float = 1e-3
    identity_rtol: float = 1e-8
    whitney_rtol: float = 1e-6
    grid_stability_rtol: float = 0.10
    unit_norm_atol: float = 1e-10
    adjoint_rtol: float = 1e-8
    gradient_rtol: float = 1e-4
    restart_rtol: float = 0.01
    tail_flag_ratio: float = 0.10
    nufft_eps: float = 1e-12
    volume_rtol: float = 1e-9


POLICY = NumericPolicy()

_INT_KEYS = {"partner_max", "alpha"}


def default_path():
    env = os.environ.get(ENV_VAR)
    if env:
        return Path(env)
    return Path(str(resources.files("hyperbolax") / "data" / "constants.cfg"))


def parse_flat(text):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConstantsError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConstantsError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _validate(c):
    checks = [
        (0.0 < c.ell < 0.25, "ell in (0, 1/4)"),
        (c.eps1 > 0.0, "eps1 > 0"),
        (1.0 <= c.psi_inner < c.psi_outer <= 1.1, "1 <= psi_inner < psi_outer <= 11/10"),
        (0.0 < c.volume_cap_lo < c.volume_cap_hi, "volume_cap_lo < volume_cap_hi"),
        (0.0 < c.volume_sector_lo < c.volume_sector_hi, "volume_sector_lo < volume_sector_hi"),
        (0.0 < c.sumset_band_lo < c.sumset_band_hi, "sumset_band_lo < sumset_band_hi"),
        (c.sumset_radial_C > 0 and c.sumset_angular_C > 0, "sumset displacement constants > 0"),
        (c.center_radial_C > 0 and c.center_angular_C > 0, "center constants > 0"),
        (c.partner_max > 0, "partner_max > 0"),
        (c.ball_radius > 0, "ball_radius > 0"),
        (c.corpus_decoupling_max > 0 and c.corpus_refined_max > 0, "corpus constants > 0"),
        (min(c.delta2, c.delta3, c.delta4, c.delta5, c.delta6) > 0, "delta thresholds > 0"),
    ]
    for ok, what in checks:
        if not ok:
            raise ConstantsError(f"constants invariant violated: {what}")


def load_constants(path=None):
    """Read, type and validate a constants file."""
    path = Path(path) if path is not None else default_path()
    try:
        raw = parse_flat(path.read_text())
    except OSError as exc:
        raise ConstantsError(f"cannot read constants file {path}: {exc}") from exc
    kwargs = {}
    for f in fields(Constants):
        if f.name not in raw:
            raise ConstantsError(f"constants file {path} lacks key {f.name!r}")
        value = raw.pop(f.name)
        try:
            if f.name == "version":
                kwargs[f.name] = value
            elif f.name in _INT_KEYS:
                kwargs[f.name] = int(value)
            else:
                kwargs[f.name] = float(value)
        except ValueError as exc:
            raise ConstantsError(f"key {f.name!r}: cannot parse {value!r}") from exc
    if raw:
        raise ConstantsError(f"unknown keys in constants file: {sorted(raw)}")
    c = Constants(**kwargs)
    _validate(c)
    return c


@lru_cache(maxsize=8)
def _cached(path_str):
    return load_constants(path_str)


def get_constants():
    """Constants from the active path, cached per path."""
    return _cached(str(default_path()))
