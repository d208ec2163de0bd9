import math

import numpy as np
import pytest

from hyperbolax.constants import POLICY
from hyperbolax.extension import (
    DegenerateInput,
    NyquistError,
    SpacetimeGrid,
    adjoint_extend,
    bilinear_norm,
    boost_lattice,
    closed_form_ball_sigma,
    default_grid,
    extend,
    extend_at,
    field_inner,
    fourier_transform_check,
    kg_propagator_check,
    mixed_norm,
    norm_Lp_spacetime,
    radial_oracle,
    rayleigh,
)
from hyperbolax.functions import (
    Gaussian,
    SampledFunction,
    inner_hyperboloid,
    modulate,
    pullback_boost,
    sample,
    sphere_grid,
)


@pytest.fixture(scope="module")
def small():
    f = sample(Gaussian((0.2, -0.1, 0.3), 0.5), sphere_grid(3, 2.0, 4, 4))
    return f, default_grid(f, R=2.0, max_nodes=2e4)


def test_lattice_shape_and_origin(small):
    _, lat = small
    assert all(n % 2 == 1 for n in lat.shape)
    F = extend(small[0], lat)
    assert F.at_origin() == pytest.approx(extend_at(small[0], np.zeros((1, 3)), np.zeros(1))[0], rel=1e-10)


@pytest.mark.parametrize("method", ["nufft", "separable"])
def test_fast_paths_match_direct_sum(small, method):
    f, lat = small
    ref = extend(f, lat, method="direct").values
    got = extend(f, lat, method=method).values
    assert np.max(np.abs(got - ref)) <= 1e-9 * np.max(np.abs(ref))


def test_extend_at_matches_lattice(small, rng):
    f, lat = small
    F = extend(f, lat)
    idx = rng.choice(lat.size, 30, replace=False)
    x, t = lat.lab_points(idx)
    np.testing.assert_allclose(extend_at(f, x, t), F.values.reshape(-1)[idx], atol=1e-9 * np.abs(F.values).max())


def test_adjoint_identity(small, rng):
    f, lat = small
    h = f.with_values(rng.normal(size=f.grid.size) + 1j * rng.normal(size=f.grid.size))
    G = extend(f, lat).__class__(lat, rng.normal(size=lat.shape) + 0j)
    lhs = field_inner(extend(h, lat), G)
    rhs = inner_hyperboloid(h, adjoint_extend(G, f.grid))
    assert abs(lhs - rhs) <= POLICY.adjoint_rtol * abs(lhs)


def test_klein_gordon_and_fourier_identities(small):
    f, lat = small
    kg = kg_propagator_check(f, lat)
    ft = fourier_transform_check(f, lat)
    assert kg["passed"] and kg["max_rel_dev"] <= POLICY.identity_rtol
    assert ft["passed"] and ft["max_rel_dev"] <= POLICY.identity_rtol


def test_closed_form_ball():
    exact = 2 * math.pi * (math.sqrt(2) - math.log(1 + math.sqrt(2)))
    assert closed_form_ball_sigma(3) == pytest.approx(exact, rel=1e-14)
    g = sphere_grid(3, 1.0, 8, 4)
    val = extend_at(SampledFunction(g, np.ones(g.size)), np.zeros((1, 3)), np.zeros(1))[0]
    assert val.real == pytest.approx(exact, rel=1e-6)


def test_radial_oracle_agrees_with_lattice(rng):
    width = 0.7
    f = sample(Gaussian((0.0, 0.0, 0.0), width), sphere_grid(3, 4.0, 12, 24))
    lat = default_grid(f, max_nodes=2e5)
    F = extend(f, lat)
    idx = rng.choice(lat.size, 8, replace=False)
    x, t = lat.lab_points(idx)
    ref = [radial_oracle(lambda r: math.exp(-0.5 * r * r / width**2), 4.0, xi, ti) for xi, ti in zip(x, t)]
    err = np.max(np.abs(F.values.reshape(-1)[idx] - ref)) / np.abs(F.values).max()
    assert err <= POLICY.oracle_rtol


def test_nyquist_guard():
    f = sample(Gaussian((0.0, 0.0, 0.0), 1.0), sphere_grid(3, 3.0, 3, 3))
    coarse = SpacetimeGrid.lab(10.0, 5.0, 5, 5)
    with pytest.raises(NyquistError):
        extend(f, coarse)


def test_zero_function_is_degenerate():
    g = sphere_grid(3, 1.0, 2, 2)
    z = SampledFunction(g, np.zeros(g.size))
    with pytest.raises(DegenerateInput):
        default_grid(z)
    with pytest.raises(DegenerateInput):
        rayleigh(z, 3.6, SpacetimeGrid.lab(1.0, 1.0, 3, 3))


def test_boost_lattice_transports_field(small, rng):
    f, lat = small
    nu = np.array([0.4, -0.3, 0.6])
    g = pullback_boost(f, nu)
    lat_b = boost_lattice(lat, nu)
    idx = rng.choice(lat.size, 25, replace=False)
    x, t = lat_b.lab_points(idx)
    np.testing.assert_allclose(extend_at(g, x, t), extend(f, lat).values.reshape(-1)[idx],
                               atol=1e-9 * np.abs(extend(f, lat).values).max())


def test_modulation_shifts_field(small):
    f, lat = small
    x0, t0 = np.array([0.3, 0.0, -0.2]), 0.7
    g = modulate(f, x0, t0)
    pts = np.array([[0.5, 1.0, -0.4], [2.0, 0.0, 1.0]])
    ts = np.array([0.3, -1.2])
    np.testing.assert_allclose(extend_at(g, pts, ts), extend_at(f, pts + x0, ts + t0), rtol=1e-10)


def test_norms_and_tail_report(small):
    f, lat = small
    F = extend(f, lat)
    rep = norm_Lp_spacetime(F, 3.6)
    assert rep.value > 0 and rep.tail >= 0
    assert bilinear_norm(F, F, 1.8) == pytest.approx(rep.value**2, rel=1e-10)
    lab = SpacetimeGrid.lab(6.0, 4.0, 15, 11)
    G = extend(f, lab)
    assert mixed_norm(G, 3.6, 3.6) == pytest.approx(norm_Lp_spacetime(G, 3.6).value, rel=1e-10)


def test_lattice_refinement_keeps_domain(small):
    _, lat = small
    ref = lat.refine(2)
    assert ref.R_t == pytest.approx(lat.R_t) and ref.R_x == pytest.approx(lat.R_x)
    assert ref.h_t == pytest.approx(lat.h_t / 2)
