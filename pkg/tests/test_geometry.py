import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hyperbolax.constants import POLICY
from hyperbolax.geometry import (
    FrequencyPoint,
    HyperboloidPoint,
    LorentzBoost,
    boost_apply,
    boost_flat,
    boost_flat_jacobian,
    bracket,
    lift,
    minkowski_form,
)

coord = st.floats(-3.0, 3.0, allow_nan=False, allow_infinity=False)
vec3 = arrays(np.float64, 3, elements=coord)
pts = arrays(np.float64, (5, 3), elements=coord)


def test_bracket_values():
    assert bracket(np.zeros(3)) == 1.0
    np.testing.assert_allclose(bracket(np.array([[3.0, 4.0, 0.0]])), [np.sqrt(26.0)])


@given(pts)
def test_bracket_at_least_one(xi):
    assert np.all(bracket(xi) >= 1.0)


@given(vec3, pts)
@settings(max_examples=60)
def test_boost_preserves_minkowski_form(nu, xi):
    tau = np.linspace(-2.0, 2.0, len(xi))
    x2, t2 = boost_apply(nu, xi, tau)
    q0, q1 = minkowski_form(xi, tau), minkowski_form(x2, t2)
    scale = 1.0 + np.abs(q0) + np.sum(xi**2, axis=-1) * bracket(nu) ** 2
    assert np.all(np.abs(q1 - q0) <= POLICY.quadratic_form_rtol * scale)


@given(vec3, pts)
@settings(max_examples=60)
def test_boost_maps_hyperboloid_to_itself(nu, xi):
    x2, t2 = boost_apply(nu, xi, bracket(xi))
    np.testing.assert_allclose(t2, bracket(x2), rtol=1e-9)
    np.testing.assert_allclose(boost_flat(nu, xi), x2, atol=1e-9 * bracket(nu) ** 2 * np.max(bracket(xi)))


@given(vec3)
def test_boost_sends_nu_to_origin(nu):
    np.testing.assert_allclose(boost_flat(nu, nu), 0.0, atol=1e-9 * bracket(nu) ** 2)


@given(vec3, pts)
@settings(max_examples=60)
def test_inverse_round_trip(nu, xi):
    L = LorentzBoost(nu)
    back = L.inverse().flat(L.flat(xi))
    np.testing.assert_allclose(back, xi, atol=POLICY.roundtrip_atol * bracket(nu) ** 4 * 10)


@given(vec3)
def test_matrix_is_symmetric_with_unit_determinant(nu):
    m = LorentzBoost(nu).matrix()
    np.testing.assert_allclose(m, m.T)
    assert abs(np.linalg.det(m) - 1.0) <= 1e-8 * bracket(nu) ** 4


def test_matrix_agrees_with_apply(rng):
    nu = rng.normal(size=3)
    xi = rng.normal(size=(4, 3))
    tau = rng.normal(size=4)
    out = lift(xi)
    out[:, -1] = tau
    via_matrix = out @ LorentzBoost(nu).matrix().T
    x2, t2 = boost_apply(nu, xi, tau)
    np.testing.assert_allclose(via_matrix[:, :3], x2, atol=1e-12)
    np.testing.assert_allclose(via_matrix[:, 3], t2, atol=1e-12)


@given(vec3, vec3)
@settings(max_examples=40)
def test_jacobian_matches_finite_differences(nu, xi):
    h = 1e-6
    J = np.empty((3, 3))
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        J[:, i] = (boost_flat(nu, xi + e) - boost_flat(nu, xi - e)) / (2 * h)
    det = np.linalg.det(J)
    assert abs(det - boost_flat_jacobian(nu, xi)) <= POLICY.jacobian_fd_rtol * (1 + abs(det)) * bracket(nu) ** 2


def test_zero_boost_is_identity(rng):
    xi = rng.normal(size=(6, 3))
    np.testing.assert_array_equal(boost_flat(np.zeros(3), xi), xi)


def test_point_validation():
    with pytest.raises(ValueError):
        FrequencyPoint(np.array([np.nan, 0.0, 0.0]))
    with pytest.raises(ValueError):
        HyperboloidPoint(np.zeros(3), 2.0)
    p = HyperboloidPoint.from_xi(np.array([1.0, 2.0, 2.0]))
    assert p.tau == pytest.approx(np.sqrt(10.0))
    with pytest.raises(ValueError):
        LorentzBoost(np.array([np.inf, 0.0, 0.0]))
