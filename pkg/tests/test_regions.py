import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperbolax import regions as rg
from hyperbolax.constants import get_constants
from hyperbolax.regions import BaseCubeConfig, RegionError, RegionId

CFG = BaseCubeConfig.from_constants()

levels = st.sampled_from([(N, r) for N in (1, 2, 4, 8) for r in (N, N / 2, N / 4, 0.5, 0.25) if r <= N])


def _ids(N, r, rng, n=10):
    J, m = rg.layer_count(r), rg.cubes_per_axis(N, r)
    return [RegionId(N, r, int(rng.integers(J)), tuple(int(x) for x in rng.integers(m, size=2))) for _ in range(n)]


def test_distortion_bound_holds_for_frozen_ell():
    lo, hi = rg.check_distortion(CFG)
    assert 1.0 <= lo <= hi <= 1.0 + CFG.eps1


def test_distortion_rejects_coarse_cube():
    with pytest.raises(RegionError):
        rg.check_distortion(BaseCubeConfig(ell=0.125, eps1=0.01))


@pytest.mark.parametrize("bad", [(3, 1), (2, 3), (1, 0.3), (1, 2)])
def test_invalid_scales_rejected(bad):
    with pytest.raises(RegionError):
        RegionId(bad[0], bad[1], 0, (0, 0))


def test_index_bounds_rejected():
    with pytest.raises(RegionError):
        RegionId(2, 0.5, 2, (0, 0))
    with pytest.raises(RegionError):
        RegionId(2, 0.5, 0, (8, 0))


@given(levels)
@settings(max_examples=20, deadline=None)
def test_children_partition_parent(level):
    N, r = level
    rng = np.random.default_rng(int(N * 64 + r * 64))
    for kid in _ids(N, r, rng, 4):
        if r <= 2.0**-5:
            continue
        ch = rg.children(kid)
        assert len(ch) == (8 if r <= 1 else 4)
        assert all(rg.parent(c) == kid for c in ch)
        v = rg.region_volume(rg.make_region(kid, CFG))
        s = sum(rg.region_volume(rg.make_region(c, CFG)) for c in ch)
        assert s == pytest.approx(v, rel=1e-9)


def test_ancestor_composes(rng):
    kid = RegionId(8, 2.0**-3, 5, (40, 22))
    assert rg.ancestor(kid, 3) == rg.parent(rg.parent(rg.parent(kid)))


@pytest.mark.parametrize("N,r", [(2, 0.5), (4, 0.5), (4, 0.25), (8, 1.0), (1, 0.125)])
def test_locate_is_nested_and_contained(N, r, rng):
    A = rg.make_region(RegionId(N, N, 0, (0, 0)), CFG)
    xi = rg.sample_region(A, 500, rng)
    j, k, ok = rg.locate(xi, N, r, CFG)
    assert ok.all()
    jp, kp, _ = rg.locate(xi, N, 2 * r, CFG)
    for a in range(0, 500, 25):
        kid = RegionId(N, r, j[a], tuple(k[a]))
        assert rg.region_contains(rg.make_region(kid, CFG), xi[a])
        assert rg.parent(kid) == RegionId(N, 2 * r, jp[a], tuple(kp[a]))


@pytest.mark.parametrize("N,r", [(2, 0.25), (4, 0.5), (8, 1.0), (8, 0.5), (16, 2.0)])
def test_partner_counts_match_brute_force(N, r):
    j, k = rg.index_arrays(N, r)
    fast = rg.partner_counts(N, r, j, k)
    pick = np.linspace(0, j.size - 1, 12).astype(int)
    for i in pick:
        assert fast[i] == int(rg.separated_indices(N, r, j[i], k[i], j, k).sum())
    assert fast.max() == rg.max_partner_count(N, r)


def test_separation_symmetric_and_irreflexive(rng):
    for a in _ids(4, 0.25, rng, 6):
        assert not rg.separated(a, a)
        for b in rg.separated_partners(a)[:20]:
            assert rg.separated(b, a)


def test_partner_max_frozen():
    assert rg.max_partner_count(64, 1 / 64) == get_constants().partner_max == 12096
    assert rg.max_partner_count(8, 0.5) == 384


def test_whitney_count_matches_enumeration():
    n = sum(1 for _ in rg.whitney(2, CFG, r_min=0.125))
    assert n == rg.whitney_count(2, r_min=0.125)


@pytest.mark.parametrize("N", [1, 2, 4])
def test_vectorized_hit_counts_match_scan(N, rng):
    A = rg.make_region(RegionId(N, N, 0, (0, 0)), CFG)
    xi, eta = rg.sample_region(A, 40, rng), rg.sample_region(A, 40, rng)
    hits, _ = rg.whitney_hit_counts(xi, eta, N, CFG)
    for a in range(40):
        assert hits[a] == len(rg.whitney_pair_level(xi[a], eta[a], N, CFG))


def test_whitney_cover_exact_on_samples(rng):
    N = 2
    A = rg.make_region(RegionId(N, N, 0, (0, 0)), CFG)
    xi, eta = rg.sample_region(A, 2000, rng), rg.sample_region(A, 2000, rng)
    hits, finest = rg.whitney_hit_counts(xi, eta, N, CFG)
    far = (rg.boundary_distance(xi, N, finest, CFG) > 1e-6) & (rg.boundary_distance(eta, N, finest, CFG) > 1e-6)
    assert far.mean() > 0.99
    assert np.all(hits[far] == 1)


def test_volume_ratio_within_frozen_interval(rng):
    c = get_constants()
    for N, r in [(1, 0.25), (4, 0.5), (8, 4.0), (16, 1.0)]:
        for kid in _ids(N, r, rng, 5):
            v = rg.volume_ratio(rg.make_region(kid, CFG))
            lo, hi = ((c.volume_cap_lo, c.volume_cap_hi) if kid.kind == "cap"
                      else (c.volume_sector_lo, c.volume_sector_hi))
            assert lo <= v <= hi


def test_sumset_box_contains_sampled_sums(rng):
    N, r = 8, 0.5
    a = RegionId(N, r, 0, (3, 3))
    ka = rg.make_region(a, CFG)
    for b in rg.separated_partners(a)[:: 50]:
        kb = rg.make_region(b, CFG)
        box = rg.sumset_box(ka, kb)
        assert box.contains(rg.sample_region(ka, 200, rng), rg.sample_region(kb, 200, rng)).all()


def test_sumset_requires_separation():
    a = rg.make_region(RegionId(4, 0.5, 0, (0, 0)), CFG)
    with pytest.raises(RegionError):
        rg.sumset_box(a, a)


def test_enumeration_order_and_count():
    ids = list(rg.iter_region_ids(2, 0.5))
    assert len(ids) == rg.count_regions(2, 0.5) == 2 * 16
    assert ids == sorted(ids, key=lambda x: (x.j, x.k))
    assert all(isinstance(r, rg.Region) for r in rg.enumerate_regions(1, 1.0, CFG))


def test_to_lines_carries_version():
    txt = rg.to_lines(rg.enumerate_regions(1, 1.0, CFG), "9.9")
    assert "9.9" in txt


def test_sample_region_stays_inside(rng):
    for kid in (RegionId(4, 0.25, 3, (3, 9)), RegionId(8, 4.0, 0, (1, 0))):
        kap = rg.make_region(kid, CFG)
        assert rg.region_contains(kap, rg.sample_region(kap, 300, rng), tol=1e-12).all()
