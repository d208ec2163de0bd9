import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperbolax.extension import default_grid
from hyperbolax.functions import Gaussian, cap_grid, restrict, sample
from hyperbolax.inequalities import (
    AdmissiblePair,
    ExponentSet,
    InequalityReport,
    bilinear_exponents,
    bilinear_report,
    decoupling_report,
    is_admissible_pair,
    p_range,
    refined_exponents,
    refined_report,
    select_mixed_pairs,
    whitney_reconstruction_check,
)
from hyperbolax.regions import BaseCubeConfig, RegionId, region_center, separated_partners

CFG = BaseCubeConfig.from_constants()
LO, HI = p_range(3)


def test_p_range():
    assert p_range(3) == (10 / 3, 4.0)
    assert p_range(1) == (6.0, math.inf)
    with pytest.raises(ValueError):
        p_range(0)


@given(st.floats(LO, HI))
def test_refined_exponent_signs(p):
    a, b = refined_exponents(3, p)
    assert a >= -1e-12 and b <= 1e-12


@given(st.floats(LO + 1e-6, HI - 1e-6))
@settings(max_examples=60)
def test_mixed_pairs_are_admissible_and_interpolate(p):
    p0, p1 = select_mixed_pairs(p, 3)
    assert is_admissible_pair(p0.q, p0.r, p0.theta, 3) and is_admissible_pair(p1.q, p1.r, p1.theta, 3)
    assert 1 / p0.q + 1 / p1.q == pytest.approx(2 / p)
    assert 1 / p0.r + 1 / p1.r == pytest.approx(2 / p)
    assert p1.gain > 0


@pytest.mark.parametrize("p", [LO, HI, 3.0, 5.0])
def test_mixed_pairs_reject_endpoints(p):
    with pytest.raises(ValueError, match="strictly inside"):
        select_mixed_pairs(p, 3)


def test_admissible_pair_names_failed_condition():
    with pytest.raises(ValueError, match="2/q"):
        AdmissiblePair(4.0, 4.0, 0.5, 3)


def test_exponent_set_validation():
    e = ExponentSet(3, 3.6)
    assert 0 < e.gamma < 1 - 2 / 3.6
    assert e.cap_weight_exponent() >= 0 and e.sector_weight_exponent() <= 0
    with pytest.raises(ValueError):
        ExponentSet(3, 5.0)
    with pytest.raises(ValueError):
        ExponentSet(3, 3.6, s=2.0)
    with pytest.raises(ValueError):
        bilinear_exponents(3, 3.6, 1.5, "disc")


def test_report_ratio_consistency():
    with pytest.raises(ValueError):
        InequalityReport("x", 1.0, 2.0, 0.7)


@pytest.fixture(scope="module")
def shell_case():
    c = region_center(RegionId(2, 2, 0, (0, 0)), CFG).xi
    f = sample(Gaussian(tuple(c.tolist()), 0.4), cap_grid(2, 3, 0.5, 8, 3, CFG, radial_range=(0.5, 2.2)))
    lat = default_grid(f, R=3.0, oversample=2.0, t_max=24.0, max_nodes=5e4)
    return f, lat


def test_decoupling_report(shell_case):
    f, lat = shell_case
    rep = decoupling_report(f, 3.6, grid=lat)
    assert rep.kind == "decoupling" and rep.ratio > 0
    assert rep.ratio == pytest.approx(rep.lhs / rep.rhs)
    assert set(rep.details["shell_norms"]) >= {2}


def test_refined_report_witness_is_occupied(shell_case):
    f, lat = shell_case
    rep = refined_report(f, 2, ExponentSet(3, 3.6), grid=lat, r_min=0.5, max_regions=60, cfg=CFG)
    w = rep.details["witness_id"]
    assert isinstance(w, RegionId) and np.any(restrict(f, w, CFG).values)
    assert rep.ratio > 0


def test_bilinear_report_requires_separation(shell_case):
    f, lat = shell_case
    a = RegionId(2, 0.125, 0, (0, 0))
    b = separated_partners(a)[0]
    rep = bilinear_report(f, f, a, b, 1.5, 3.6, grid=lat, cfg=CFG)
    assert rep.lhs >= 0 and rep.rhs > 0
    with pytest.raises(ValueError):
        bilinear_report(f, f, a, a, 1.5, 3.6, grid=lat, cfg=CFG)


def test_whitney_reconstruction_identity():
    c = region_center(RegionId(2, 2, 0, (0, 0)), CFG).xi
    f = sample(Gaussian(tuple(c.tolist()), 0.6), cap_grid(2, 3, 0.5, 2, 2, CFG, eta_panels=2))
    res = whitney_reconstruction_check(f, 2, 3.6)
    assert res["pairs_covered"] == res["pairs_total"]
    assert res["max_rel_dev"] <= 1e-6
