import math

import pytest

from hyperbolax import get_constants
from hyperbolax.calibration import (
    _round_out,
    calibration_corpus,
    center_sweep,
    corpus_statistics,
    dyadic_levels,
    propose,
    recentered_mass,
    sumset_sweep,
    volume_extremes,
)


def test_round_out_moves_outward():
    assert _round_out(0.0523, False) == pytest.approx(0.053)
    assert _round_out(0.0523, True) == pytest.approx(0.052)
    assert _round_out(480.0, False) == pytest.approx(480.0)
    assert _round_out(481.0, False) == pytest.approx(490.0)
    assert _round_out(0.0, True) == 0.0


def test_dyadic_levels():
    lv = dyadic_levels(4, 0.5)
    assert (1.0, 1.0) in lv and (4.0, 0.5) in lv
    assert all(r <= N and r >= 0.5 for N, r in lv)
    assert len(lv) == 2 + 3 + 4


def test_frozen_file_matches_fresh_sweep():
    c = get_constants()
    for key, value in propose().items():
        assert getattr(c, key) == pytest.approx(value, rel=1e-9), key


@pytest.mark.parametrize("N,r", [(1, 1), (2, 0.25), (8, 4), (16, 2.0**-3)])
def test_fresh_volumes_inside_frozen(N, r):
    c = get_constants()
    lo, hi = volume_extremes(N, r)
    if r <= 1:
        assert c.volume_cap_lo <= lo <= hi <= c.volume_cap_hi
    else:
        assert c.volume_sector_lo <= lo <= hi <= c.volume_sector_hi


def test_other_seed_inside_frozen():
    c = get_constants()
    cen = center_sweep(n_max=8, seed=7)
    assert cen["center_radial"] <= c.center_radial_C
    assert cen["center_angular"] <= c.center_angular_C
    s = sumset_sweep(n_max=8, seed=7)
    assert c.sumset_band_lo <= s["band_lo"] <= s["band_hi"] <= c.sumset_band_hi
    assert s["radial"] <= c.sumset_radial_C and s["angular"] <= c.sumset_angular_C


def test_corpus_is_frozen():
    corpus = calibration_corpus()
    assert len(corpus) == 12
    assert len({e.name for e in corpus}) == 12
    assert {e.N for e in corpus} == {1, 2, 4}


def test_corpus_entry_respects_ceilings_and_thresholds():
    c = get_constants()
    entry = next(e for e in calibration_corpus() if e.name == "cap-n1")
    st = corpus_statistics(entry)
    assert 1.0 <= st["decoupling"] <= c.corpus_decoupling_max
    assert 1.0 <= st["refined"] <= c.corpus_refined_max
    assert st["shell_norm"] >= c.delta3
    assert st["region_norm"] >= c.delta4
    assert st["region_l2"] >= c.delta5
    before, after = recentered_mass(entry, c.ball_radius)
    assert after >= c.delta2
    assert math.isfinite(before)
