import numpy as np
import pytest

from hyperbolax.acceptance import bump_case
from hyperbolax.extension import extend
from hyperbolax.functions import Gaussian, modulate, norm_L2_hyperboloid, sample, sphere_grid
from hyperbolax.regions import region_center
from hyperbolax.search import (
    RecenterReport,
    SearchConfig,
    alignment_rotation,
    ascend,
    extract_modulation,
    find_distinguished_region,
    frequency_grid,
    gradient_check,
    mass_in_ball,
    normalize,
    quotient,
    random_start,
    recenter,
    run_pipeline,
    search_lattice,
    select_angular_sector,
)

TINY = dict(grid_radius=1.5, n_radial=3, n_angular=3, lattice_R=1.5, max_nodes=4e4, max_iters=40,
            restarts=2, epochs=2, max_regions=60, rescore_factor=1)


@pytest.fixture(scope="module")
def tiny():
    cfg = SearchConfig(**TINY)
    grid = frequency_grid(cfg)
    return cfg, grid, search_lattice(cfg, grid)


def test_config_validation():
    with pytest.raises(ValueError):
        SearchConfig(p=4.0)
    with pytest.raises(ValueError):
        SearchConfig(K=3)
    with pytest.raises(ValueError):
        SearchConfig(tol=0.0)


def test_config_mapping_round_trip():
    cfg = SearchConfig(p=3.5, delta2=0.2, seed=7)
    back = SearchConfig.from_mapping({k: str(v) for k, v in cfg.to_mapping().items()})
    assert back == cfg
    assert SearchConfig.from_mapping({"delta1": "auto"}).delta1 is None
    with pytest.raises((TypeError, KeyError, ValueError)):
        SearchConfig.from_mapping({"nonsense": "1"})


def test_random_start_is_unit_norm_and_seeded(tiny):
    cfg, grid, _ = tiny
    f = random_start(cfg, 3, grid)
    assert norm_L2_hyperboloid(f) == pytest.approx(1.0, abs=1e-10)
    np.testing.assert_array_equal(f.values, random_start(cfg, 3, grid).values)
    assert not np.array_equal(f.values, random_start(cfg, 4, grid).values)


def test_gradient_matches_finite_differences(tiny):
    cfg, grid, lat = tiny
    errs = gradient_check(random_start(cfg, 0, grid), cfg.p, lat, n_dirs=4)
    assert errs.max() <= 1e-4


def test_ascent_is_monotone(tiny):
    cfg, grid, lat = tiny
    st = ascend(random_start(cfg, 1, grid), cfg, lat)
    h = np.asarray(st.quotient_history)
    assert np.all(np.diff(h) >= 0)
    assert st.quotient == pytest.approx(quotient(st.f, cfg.p, lat))
    assert norm_L2_hyperboloid(st.f) == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("u", [(0, 0, 1), (0, 0, -1), (1, 2, -0.5), (1e-9, 0, 1)])
def test_alignment_rotation_is_proper(u):
    Q = alignment_rotation(np.asarray(u, dtype=float))
    np.testing.assert_allclose(Q @ Q.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(Q) == pytest.approx(1.0)
    v = np.asarray(u, dtype=float) / np.linalg.norm(u)
    np.testing.assert_allclose(Q @ v, [0, 0, 1], atol=1e-12)


def test_angular_sector_picks_heavy_orthant(tiny):
    cfg, grid, lat = tiny
    f = normalize(sample(Gaussian((0.6, 0.6, 0.6), 0.3), grid))
    k, norm = select_angular_sector(f, 8, cfg.p, lat)
    assert norm > 0
    from hyperbolax.functions import orthant_label

    assert k == orthant_label(np.array([[0.6, 0.6, 0.6]]), 8)[0]


def test_mass_in_ball():
    f = sample(Gaussian((0.0, 0.0, 0.0), 0.5), sphere_grid(3, 3.0, 4, 4))
    assert mass_in_ball(f, 100.0) == pytest.approx(1.0)
    assert 0.0 < mass_in_ball(f, 0.5) < 1.0


def test_recenter_preserves_norm(tiny):
    cfg, grid, lat = tiny
    f = normalize(sample(Gaussian((0.3, -0.2, 0.9), 0.25), sphere_grid(3, 2.0, 5, 5)))
    rep = find_distinguished_region(f, cfg, lat)
    assert isinstance(rep, RecenterReport) and 0.0 <= rep.mass_in_ball <= 1.0
    g, rep2 = recenter(f, rep, cfg)
    assert norm_L2_hyperboloid(g) == pytest.approx(1.0, abs=1e-10)
    assert rep2.mass_before == pytest.approx(mass_in_ball(f, rep.ball_radius))


def test_recentering_concentrated_bump_gains_ball_mass(tiny):
    # mass only moves into the ball for functions concentrated on one region
    cfg, grid, lat = tiny
    k0, f = bump_case()
    f = normalize(f)
    rep = find_distinguished_region(f, cfg, lat)
    g, rep2 = recenter(f, rep, cfg)
    assert rep2.mass_in_ball >= rep2.mass_before - 1e-12
    assert np.linalg.norm(rep.nu) == pytest.approx(np.linalg.norm(region_center(rep.kappa).xi))


def test_modulation_recovers_peak(tiny):
    cfg, grid, lat = tiny
    f = normalize(sample(Gaussian((0.0, 0.0, 0.0), 0.6), grid))
    x0, t0, degenerate = extract_modulation(f, lat)
    assert not degenerate
    assert np.allclose(x0, 0) and t0 == 0
    F = extend(modulate(f, (0.0, 0.0, 0.0), 0.0), lat)
    assert np.abs(F.values).max() == pytest.approx(abs(F.at_origin()))


def test_pipeline_records_provenance(tiny):
    cfg, _, lat = tiny
    state, reports, prov = run_pipeline(cfg, 0, lat)
    assert len(prov) == cfg.epochs and len(reports) == cfg.epochs - 1
    rec = prov[0]
    assert rec["quotient_tracked"] == pytest.approx(rec["quotient"], rel=1e-9)
    assert state.rescored == pytest.approx(state.quotient, rel=1e-9)
