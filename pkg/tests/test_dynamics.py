import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from nogtransfer.dynamics import (
    ControlSample,
    DynamicsError,
    EngineParams,
    SpacecraftState,
    drift_field,
    hamiltonian,
    hamiltonian_gradient,
    hessian_blocks,
    optimal_control,
    state_rate,
    switching_function,
    thrust_field,
)
from nogtransfer.units_frames import (
    ClassicalElements,
    cartesian_to_meoe_array,
    coe_to_cartesian,
    meoe_to_cartesian_array,
    rtn_basis,
)

ENG = EngineParams(0.15, 0.16, 0.5)


def random_point(rng):
    r = rng.standard_normal(3)
    r *= rng.uniform(0.8, 2.0) / np.linalg.norm(r)
    v = rng.standard_normal(3) * 0.6
    m = rng.uniform(0.6, 1.0)
    p = rng.standard_normal(7) * rng.uniform(0.5, 3.0)
    return np.concatenate([r, v, [m], p])


def fd_hessians(z, rho, h=1e-6):
    n = 7
    Hpx = np.zeros((n, n))
    Hpp = np.zeros((n, n))
    Hxx = np.zeros((n, n))
    for j in range(2 * n):
        e = np.zeros(2 * n)
        e[j] = h
        gx_p, gp_p = hamiltonian_gradient(z + e, rho, ENG)
        gx_m, gp_m = hamiltonian_gradient(z - e, rho, ENG)
        dgx = (gx_p - gx_m) / (2 * h)
        dgp = (gp_p - gp_m) / (2 * h)
        if j < n:
            Hpx[:, j] = dgp
            Hxx[:, j] = dgx
        else:
            Hpp[:, j - n] = dgp
    return Hpx, Hpp, Hxx


def test_drift_cartesian_identity():
    out = drift_field(np.array([1.0, 0, 0, 0, 1.0, 0, 1.0]))
    np.testing.assert_array_equal(out, [0, 1, 0, -1, 0, 0, 0])


def test_drift_meoe_only_longitude_moves():
    out = drift_field(np.array([1.0, 0.1, 0.0, 0.2, 0.0, 0.3, 1.0]), chart="meoe")
    assert np.count_nonzero(out) == 1 and out[5] > 0


def test_thrust_field_formula_and_errors():
    eng = EngineParams(0.1, 0.5, 0.2)
    out = thrust_field(np.array([1.0, 0, 0, 0, 1, 0, 1.0]), [0, 1, 0], eng)
    np.testing.assert_allclose(out, [0, 0, 0, 0, 0.1, 0, -0.05], atol=1e-17)
    with pytest.raises(DynamicsError):
        thrust_field(np.array([1.0, 0, 0, 0, 1, 0, 0.2]), [0, 1, 0], eng)
    with pytest.raises(DynamicsError):
        thrust_field(np.array([1.0, 0, 0, 0, 1, 0, 1.0]), [0, 1.1, 0], eng)
    with pytest.raises(ValueError):
        EngineParams(0.0, 1.0, 1.0)


def _coast(x0, t1, chart="cartesian"):
    sol = solve_ivp(lambda t, x: drift_field(x, 1.0, chart), (0, t1), x0, method="DOP853",
                    rtol=1e-13, atol=1e-13)
    return sol.y[:, -1]


def test_kepler_closure_and_energy():
    el = ClassicalElements.from_degrees(26571.429 / 42165.0, 0.75, 30.0, 0, 0, 180.0)
    r, v = coe_to_cartesian(el, 1.0)
    x0 = np.concatenate([r, v, [1.0]])
    period = 2 * math.pi * el.a**1.5
    x1 = _coast(x0, period)
    assert np.max(np.abs(x1 - x0)) < 1e-9
    xh = _coast(x0, 0.37 * period)
    energy = [0.5 * x[3:6] @ x[3:6] - 1 / np.linalg.norm(x[:3]) for x in (x0, xh, x1)]
    assert max(abs(e - energy[0]) for e in energy) < 1e-11 * abs(energy[0])


def test_constant_mass_flow_over_burn():
    x0 = np.array([1.0, 0, 0, 0, 1.0, 0, 1.0])
    tau = np.array([0.0, 1.0, 0.0])
    dt = 0.7
    sol = solve_ivp(lambda t, x: state_rate(x, 1.0, tau, ENG), (0, dt), x0, method="DOP853",
                    rtol=1e-13, atol=1e-13)
    assert sol.y[6, -1] - x0[6] == pytest.approx(-ENG.beta * ENG.u_max * dt, rel=1e-13)


def test_cross_chart_burn_agreement():
    el = ClassicalElements(1.2, 0.3, 0.4, 0.5, 0.6, 0.7)
    r, v = coe_to_cartesian(el, 1.0)
    xc = np.concatenate([r, v, [1.0]])
    xe = cartesian_to_meoe_array(xc)
    tau_rtn = np.array([0.3, 0.9, 0.1])
    tau_rtn /= np.linalg.norm(tau_rtn)

    def cart(t, x):
        tau = rtn_basis(x[:3], x[3:6]) @ tau_rtn
        return state_rate(x, 1.0, tau, ENG)

    def meoe(t, x):
        return state_rate(x, 1.0, tau_rtn, ENG, chart="meoe")

    opts = dict(method="DOP853", rtol=1e-13, atol=1e-13)
    yc = solve_ivp(cart, (0, 2.0), xc, **opts).y[:, -1]
    ye = solve_ivp(meoe, (0, 2.0), xe, **opts).y[:, -1]
    np.testing.assert_allclose(meoe_to_cartesian_array(ye), yc, atol=1e-8)


def test_spacecraft_state_charts_and_admissibility():
    s = SpacecraftState("cartesian", [1.0, 0, 0, 0, 1.0, 0, 0.9])
    back = s.to_meoe().to_cartesian()
    np.testing.assert_allclose(back.values, s.values, atol=1e-15)
    with pytest.raises(DynamicsError):
        s.check_admissible(m_dry=0.95)
    with pytest.raises(DynamicsError):
        s.check_admissible(r_min=1.5)
    with pytest.raises(DynamicsError):
        SpacecraftState("cartesian", [1.0, 0, 0, 2.0, 0, 0, 1.0]).check_admissible()


def test_control_law_and_switching_function():
    z = np.zeros(14)
    z[0], z[4], z[6] = 1.0, 1.0, 1.0
    z[10:13] = [0, 0, 2.0]
    np.testing.assert_allclose(optimal_control(z, ENG).tau, [0, 0, 1])
    eng = EngineParams(1.0, 1.0, 0.1)
    z[10:13] = [1.0, 0, 0]
    z[13] = 0.0
    assert switching_function(z, eng) == 0.0
    z[13] = -0.3
    assert switching_function(z, eng) == pytest.approx(0.3)
    assert optimal_control(z, eng).rho == 1.0
    z[13] = 0.3
    assert optimal_control(z, eng).rho == 0.0
    with pytest.raises(DynamicsError):
        z[10:13] = 0.0
        optimal_control(z, eng)


def test_maximum_condition_by_brute_force(rng):
    for _ in range(1000):
        z = random_point(rng)
        u = optimal_control(z, ENG)
        best = max(hamiltonian(z, ControlSample(rho, u.tau), ENG) for rho in (0.0, 1.0))
        assert hamiltonian(z, u, ENG) == best
    # the primer direction maximizes p_v . tau over the sphere
    z = random_point(rng)
    u = optimal_control(z, ENG)
    taus = rng.standard_normal((5000, 3))
    taus /= np.linalg.norm(taus, axis=1)[:, None]
    assert np.all(taus @ z[10:13] <= u.tau @ z[10:13] + 1e-15)


def test_hamiltonian_affine_in_throttle(rng):
    for _ in range(50):
        z = random_point(rng)
        tau = optimal_control(z, ENG).tau
        h0 = hamiltonian(z, ControlSample(0.0, tau), ENG)
        for rho in (0.25, 0.5, 1.0):
            h = hamiltonian(z, ControlSample(rho, tau), ENG)
            assert h - h0 == pytest.approx(rho * switching_function(z, ENG), abs=1e-13)


def test_hessian_blocks_against_finite_differences(rng):
    worst = 0.0
    for _ in range(100):
        z = random_point(rng)
        for rho in (0.0, 1.0):
            A = hessian_blocks(z, rho, ENG)
            B = fd_hessians(z, rho)
            for a, b in zip(A, B):
                scale = max(np.linalg.norm(a), 1e-300)
                err = np.linalg.norm(a - b) / scale if np.linalg.norm(a) else np.linalg.norm(b)
                worst = max(worst, err)
    assert worst < 1e-6


def test_hessian_structure(rng):
    z = random_point(rng)
    Hpx, Hpp, Hxx = hessian_blocks(z, 1.0, ENG)
    np.testing.assert_allclose(Hpp, Hpp.T, atol=1e-15)
    np.testing.assert_allclose(Hxx, Hxx.T, atol=1e-12)
    w = np.linalg.eigvalsh(Hpp)
    assert w.min() > -1e-14
    pv = np.zeros(7)
    pv[3:6] = z[10:13]
    assert np.linalg.norm(Hpp @ pv) < 1e-14 * np.linalg.norm(pv)
    assert np.linalg.matrix_rank(Hpp, tol=1e-12) == 2
    # coast: only the gravity-gradient part survives
    Hpx0, Hpp0, Hxx0 = hessian_blocks(z, 0.0, ENG)
    assert not Hpp0.any()
    assert Hxx0[6, 6] == 0.0 and not Hpx0[:, 6].any()
