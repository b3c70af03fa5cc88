import math

import numpy as np
import pytest

from nogtransfer.units_frames import (
    CanonicalUnits,
    ClassicalElements,
    EquinoctialElements,
    angle_diff,
    cartesian_to_coe,
    cartesian_to_meoe,
    coe_to_cartesian,
    coe_to_meoe,
    meoe_to_cartesian,
    meoe_to_coe,
)

MU_KM = 398600.47
INITIAL = dict(a=26571.429, e=0.75, i_deg=30.0, omega_deg=0.0, raan_deg=0.0)


def random_elements(rng, count):
    out = []
    for _ in range(count):
        out.append(ClassicalElements(
            a=rng.uniform(0.5, 5.0), e=rng.uniform(0.01, 0.9),
            i=rng.uniform(0.05, math.pi - 0.05), omega=rng.uniform(0, 2 * math.pi),
            raan=rng.uniform(0, 2 * math.pi), f=rng.uniform(0, 2 * math.pi)))
    return out


def assert_angle_close(a, b, tol):
    assert abs(angle_diff(a, b)) < tol


def test_circular_equatorial_identity():
    r, v = coe_to_cartesian(ClassicalElements(1.0, 0.0, 0.0, 0.0, 0.0, 0.0), 1.0)
    np.testing.assert_allclose(r, [1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(v, [0, 1, 0], atol=1e-15)
    el = cartesian_to_coe(r, v, 1.0)
    assert el.a == pytest.approx(1.0, abs=1e-14)
    assert el.e == pytest.approx(0.0, abs=1e-14)
    assert el.i == pytest.approx(0.0, abs=1e-14)


def test_initial_orbit_apogee_radius_and_inverse():
    el = ClassicalElements.from_degrees(INITIAL["a"], 0.75, 30.0, 0.0, 0.0, 180.0)
    r, v = coe_to_cartesian(el, MU_KM)
    assert np.linalg.norm(r) == pytest.approx(26571.429 * 1.75, rel=1e-12)
    assert np.linalg.norm(r) == pytest.approx(46500.0, abs=0.05)  # quoted to 0.1 km
    back = cartesian_to_coe(r, v, MU_KM)
    assert back.a == pytest.approx(26571.429, rel=1e-12)
    assert back.e == pytest.approx(0.75, rel=1e-12)
    assert math.degrees(back.i) == pytest.approx(30.0, rel=1e-12)


def test_coe_to_cartesian_invariants(rng):
    for el in random_elements(rng, 50):
        r, v = coe_to_cartesian(el, 1.0)
        h = np.cross(r, v)
        assert h @ h == pytest.approx(el.a * (1 - el.e**2), rel=1e-12)
        energy = 0.5 * v @ v - 1.0 / np.linalg.norm(r)
        assert energy == pytest.approx(-0.5 / el.a, rel=1e-12)


def test_initial_orbit_equinoctial_values():
    el = ClassicalElements.from_degrees(INITIAL["a"], 0.75, 30.0, 0.0, 0.0, 180.0)
    eq = coe_to_meoe(el)
    assert eq.P == pytest.approx(11625.0, rel=1e-6)
    assert eq.P == pytest.approx(26571.429 * (1 - 0.75**2), rel=1e-15)
    assert eq.ex == pytest.approx(0.75, abs=1e-15)
    assert eq.ey == pytest.approx(0.0, abs=1e-15)
    assert eq.l == pytest.approx(math.pi, abs=1e-15)
    assert eq.hx == pytest.approx(math.tan(math.radians(15.0)), rel=1e-15)


def test_circular_equatorial_equinoctial_is_zero():
    eq = coe_to_meoe(ClassicalElements(1.0, 0.0, 0.0, 0.0, 0.0, 0.3))
    assert (eq.ex, eq.ey, eq.hx, eq.hy) == (0.0, 0.0, 0.0, 0.0)


def test_round_trips(rng):
    for el in random_elements(rng, 100):
        r, v = coe_to_cartesian(el, 1.0)
        back = cartesian_to_coe(r, v, 1.0)
        assert back.a == pytest.approx(el.a, rel=1e-10)
        assert back.e == pytest.approx(el.e, abs=1e-10)
        assert back.i == pytest.approx(el.i, abs=1e-10)
        for a, b in ((back.omega, el.omega), (back.raan, el.raan), (back.f, el.f)):
            assert_angle_close(a, b, 1e-10)

        eq = coe_to_meoe(el)
        el2 = meoe_to_coe(eq)
        assert el2.a == pytest.approx(el.a, rel=1e-12)
        assert el2.e == pytest.approx(el.e, abs=1e-12)
        assert el2.i == pytest.approx(el.i, abs=1e-12)
        assert_angle_close(el2.f + el2.omega + el2.raan, el.f + el.omega + el.raan, 1e-12)

        r2, v2 = meoe_to_cartesian(eq, 1.0)
        np.testing.assert_allclose(r2, r, rtol=0, atol=1e-10 * np.linalg.norm(r))
        np.testing.assert_allclose(v2, v, rtol=0, atol=1e-10 * np.linalg.norm(v))
        eq2 = cartesian_to_meoe(r, v, 1.0, l_ref=eq.l)
        np.testing.assert_allclose(eq2.as_array(), eq.as_array(), atol=1e-10)


def test_cumulative_longitude_follows_reference():
    el = ClassicalElements(1.0, 0.1, 0.2, 0.0, 0.0, 0.5)
    r, v = coe_to_cartesian(el, 1.0)
    eq = cartesian_to_meoe(r, v, 1.0, l_ref=0.5 + 4 * math.pi)
    assert eq.l == pytest.approx(0.5 + 4 * math.pi, abs=1e-12)


def test_rejections():
    with pytest.raises(ValueError):
        coe_to_cartesian(ClassicalElements(-1.0, 0.5, 0.1, 0, 0, 0), 1.0)
    with pytest.raises(ValueError):
        cartesian_to_coe(np.array([1.0, 0, 0]), np.array([2.0, 0, 0]), 1.0)
    with pytest.raises(ValueError):
        coe_to_meoe(ClassicalElements(1.0, 0.1, math.pi, 0, 0, 0))
    with pytest.raises(ValueError):
        EquinoctialElements(-1.0, 0, 0, 0, 0, 0)
    with pytest.raises(ValueError):
        CanonicalUnits(1.0, 0.0, 1.0)


def test_canonical_units():
    u = CanonicalUnits.from_mu(42165.0, MU_KM, 300.0)
    assert u.mu_canonical(MU_KM) == pytest.approx(1.0, rel=1e-15)
    x = u.scale_state([7000.0, -1.0, 3.0], [1.0, 7.5, -0.2], 250.0)
    r, v, m = u.unscale_state(x)
    np.testing.assert_allclose(r, [7000.0, -1.0, 3.0], rtol=1e-15)
    np.testing.assert_allclose(v, [1.0, 7.5, -0.2], rtol=1e-15)
    assert m == pytest.approx(250.0, rel=1e-15)
    assert u.to_hours(u.hours(157.88)) == pytest.approx(157.88, rel=1e-15)
