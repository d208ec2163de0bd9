import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperbolax.constants import POLICY
from hyperbolax.functions import (
    Boosted,
    BoxGrid,
    Gaussian,
    Modulated,
    RegionIndicator,
    Rotated,
    SampledFunction,
    Sum,
    adaptive_norm_sq,
    angular_piece,
    cap_grid,
    grid_from_spec,
    inner_hyperboloid,
    load_function,
    lp_multiplier,
    lp_piece,
    modulate,
    norm_L2_hyperboloid,
    occupied_shells,
    psi,
    pullback_boost,
    random_rotation,
    refine_grid,
    restrict,
    rotate,
    sample,
    save_function,
    sphere_grid,
    symbolic_from_record,
)
from hyperbolax.regions import BaseCubeConfig, RegionId, iter_region_ids

CFG = BaseCubeConfig.from_constants()


def test_psi_profile():
    assert psi(0.0) == 1.0 and psi(1.0) == 1.0 and psi(1.1) == 0.0 and psi(5.0) == 0.0
    rho = np.linspace(1.0, 1.1, 101)
    assert np.all(np.diff(psi(rho)) <= 0)


@given(st.floats(0.0, 200.0))
@settings(max_examples=100)
def test_lp_pieces_telescope(rho):
    xi = np.array([[0.0, 0.0, rho]])
    total = sum(lp_multiplier(xi, 2**m) for m in range(10))
    assert abs(total[0] - 1.0) <= POLICY.telescoping_atol


def test_sphere_grid_integrates_gaussian():
    g = Gaussian((0.3, -0.2, 0.5), 0.6)
    f = sample(g, sphere_grid(3, radius=4.0, n_radial=8, n_angular=8))
    ref = adaptive_norm_sq(g, np.array(g.center), 4.0)
    assert norm_L2_hyperboloid(f) ** 2 == pytest.approx(ref, rel=1e-6)


def test_refinement_converges():
    g = Gaussian((0.0, 0.0, 0.8), 0.4)
    base = sphere_grid(3, radius=3.0, n_radial=6, n_angular=6)
    n1 = norm_L2_hyperboloid(sample(g, base))
    n2 = norm_L2_hyperboloid(sample(g, refine_grid(base, 2)))
    assert abs(n1 - n2) / n2 < 1e-3


@pytest.mark.parametrize("nu", [(0.5, 0.0, 0.0), (0.3, -1.1, 0.8), (0.0, 0.0, 2.0)])
def test_pullback_is_exact_isometry(nu):
    f = sample(Gaussian((0.1, 0.2, 0.3), 0.5), BoxGrid((0.1, 0.2, 0.3), [2.5] * 3, 8, panels=2))
    g = pullback_boost(f, nu)
    assert norm_L2_hyperboloid(g) == pytest.approx(norm_L2_hyperboloid(f), rel=1e-12)
    # the pushforward grid carries the values exactly
    np.testing.assert_allclose(g.values, Boosted(f.symbolic, nu)(g.nodes), rtol=1e-12, atol=1e-14)


def test_pullback_onto_target_grid_uses_symbolic_form():
    f = sample(Gaussian((0.0, 0.0, 0.5), 0.5), sphere_grid(3, 3.0, 6, 6))
    grid = sphere_grid(3, 4.0, 6, 6)
    g = pullback_boost(f, (0.0, 0.0, 0.4), grid)
    assert g.grid is grid
    np.testing.assert_allclose(g.values, Boosted(f.symbolic, (0.0, 0.0, 0.4))(grid.nodes))


def test_modulation_and_rotation_preserve_norm(rng):
    f = sample(Gaussian((0.2, 0.0, 0.4), 0.5), sphere_grid(3, 3.0, 5, 5))
    n = norm_L2_hyperboloid(f)
    assert norm_L2_hyperboloid(modulate(f, (1.0, -2.0, 0.5), 3.0)) == pytest.approx(n, rel=1e-13)
    Q = random_rotation(3, rng)
    assert norm_L2_hyperboloid(rotate(f, Q)) == pytest.approx(n, rel=1e-13)


def test_restriction_partitions_function():
    f = sample(Gaussian((0.0, 0.0, 1.5), 0.5), cap_grid(2, 3, 0.5, 4, 3, CFG))
    parts = [restrict(f, kid, CFG) for kid in iter_region_ids(2, 0.5)]
    np.testing.assert_allclose(sum(p.values for p in parts), f.values, atol=0)
    assert sum(norm_L2_hyperboloid(p) ** 2 for p in parts) == pytest.approx(norm_L2_hyperboloid(f) ** 2)


@pytest.mark.parametrize("K", [1, 2, 4, 8])
def test_angular_pieces_partition(K):
    f = sample(Gaussian((0.0, 0.0, 0.0), 0.7), sphere_grid(3, 2.0, 3, 4))
    total = sum(angular_piece(f, k, K).values for k in range(1, K + 1))
    np.testing.assert_array_equal(total, f.values)


def test_lp_piece_and_shells():
    f = sample(Gaussian((0.0, 0.0, 0.0), 1.0), sphere_grid(3, 5.0, 4, 4))
    assert occupied_shells(f) == [1, 2, 4, 8]
    with pytest.raises(ValueError):
        lp_piece(f, 3)


def test_region_indicator_matches_restriction():
    kid = RegionId(2, 0.5, 0, (1, 2))
    g = cap_grid(2, 3, 0.5, 3, 3, CFG)
    ind = sample(RegionIndicator(kid, CFG.ell), g)
    ones = SampledFunction(g, np.ones(g.size))
    np.testing.assert_array_equal(ind.values != 0, restrict(ones, kid, CFG).values != 0)


def test_symbolic_records_round_trip():
    sym = Sum((Modulated(Boosted(Gaussian((0.0, 0.1, 0.2), 0.5), (0.1, 0.0, 0.3)), (1.0, 0.0, 0.0), 0.5),
               Rotated(Gaussian((0.0, 0.0, 1.0), 0.3), tuple(map(tuple, np.eye(3).tolist())))))
    back = symbolic_from_record(sym.record())
    xi = np.random.default_rng(0).normal(size=(20, 3))
    np.testing.assert_allclose(back(xi), sym(xi))


def test_save_load_round_trip(tmp_path):
    f = sample(Gaussian((0.0, 0.0, 0.6), 0.3, 1.0 + 0.5j), cap_grid(1, 3, 0.5, 3, 3, CFG))
    f = pullback_boost(f, (0.1, 0.0, 0.2))
    path = tmp_path / "f.hxf"
    save_function(f, path)
    g = load_function(path)
    np.testing.assert_array_equal(g.values, f.values)
    np.testing.assert_array_equal(g.nodes, f.nodes)
    assert grid_from_spec(f.grid.spec()).size == f.grid.size


def test_inner_product_is_sesquilinear():
    g = sphere_grid(3, 2.0, 3, 3)
    f = sample(Gaussian((0.0, 0.0, 0.3), 0.5), g)
    h = sample(Gaussian((0.2, 0.0, 0.0), 0.4), g)
    assert inner_hyperboloid(f * 2j, h) == pytest.approx(2j * inner_hyperboloid(f, h))
    assert inner_hyperboloid(f, f).real == pytest.approx(norm_L2_hyperboloid(f) ** 2)


def test_non_finite_values_rejected():
    g = sphere_grid(3, 1.0, 2, 2)
    with pytest.raises(ValueError):
        SampledFunction(g, np.full(g.size, np.nan))


def test_interpolation_reproduces_smooth_function():
    g = sphere_grid(3, 3.0, 8, 8)
    sym = Gaussian((0.0, 0.0, 0.5), 0.8)
    f = sample(sym, g)
    pts = np.random.default_rng(3).normal(scale=0.6, size=(50, 3))
    np.testing.assert_allclose(g.interpolate(f.values, pts), sym(pts), atol=1.5e-2)
