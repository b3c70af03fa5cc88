from types import SimpleNamespace

import numpy as np
import pytest

from nogtransfer.gains_guidance import (
    GainError,
    GainSchedule,
    default_t_s,
    feedback,
    gains_from_riccati,
    gains_from_stm,
    inverse_rank_one_update,
    perturb_meoe,
    riccati_jump,
    simulate_guidance,
    switching_shifts,
)

ETA = np.ones(7)


@pytest.fixture(scope="module")
def sched(desk):
    return gains_from_stm(desk.hist)


@pytest.fixture(scope="module")
def riccati(desk):
    return gains_from_riccati(desk.traj, desk.hist)


def _S(hist, t, side):
    v = hist.at(t, side)
    return np.linalg.solve(v.X.T, v.P.T).T


def test_inverse_rank_one_update(rng):
    for _ in range(20):
        A = rng.standard_normal((7, 7)) + 4 * np.eye(7)
        b, c = rng.standard_normal(7), rng.standard_normal(7)
        ref = np.linalg.inv(A + np.outer(b, c))
        got = inverse_rank_one_update(np.linalg.inv(A), b, c)
        assert np.linalg.norm(got - ref) / np.linalg.norm(ref) < 1e-10
    with pytest.raises(np.linalg.LinAlgError):
        inverse_rank_one_update(np.eye(2), np.array([1.0, 0]), np.array([-1.0, 0]))


def test_riccati_jump_matches_variational_jump(desk):
    hist, system = desk.hist, desk.system
    t_s = default_t_s(desk.traj, hist)
    for s in hist.switches:
        if s.t >= t_s:
            continue
        z = hist.state(s.t, "right")
        S_left, _ = riccati_jump(_S(hist, s.t, "right"), s.dH1dx, s.dH1dp, s.h1dot,
                                 s.delta_rho, s.t)
        ref = _S(hist, s.t, "left")
        assert np.linalg.norm(S_left - ref) / np.linalg.norm(ref) < 1e-8
        assert system.h1_dot(z) == pytest.approx(s.h1dot, rel=1e-9)


def test_default_t_s(desk):
    sw = desk.traj.switching.times
    assert default_t_s(desk.traj) == sw[-2]
    assert default_t_s(desk.traj, desk.hist) == sw[-2]
    # a strict conditioning limit pushes the horizon further back
    assert default_t_s(desk.traj, desk.hist, cond_limit=1e4) < sw[-2]
    with pytest.raises(GainError):
        default_t_s(desk.traj, desk.hist, cond_limit=10.0)
    one = SimpleNamespace(switching=SimpleNamespace(times=[1.5]), t0=0.0)
    assert default_t_s(one) == 1.5
    with pytest.raises(GainError):
        default_t_s(SimpleNamespace(switching=SimpleNamespace(times=[]), t0=0.0))


def test_riccati_agrees_with_stm(desk, riccati):
    _, raw = riccati
    worst = 0.0
    for t, side, S in raw:
        ref = _S(desk.hist, t, "right" if side == "interior" else side)
        worst = max(worst, np.linalg.norm(S - ref) / np.linalg.norm(ref))
    assert worst < 1e-6


def test_riccati_switch_rows_match_stm(sched, riccati):
    ric, _ = riccati
    np.testing.assert_allclose(ric.switch_times, sched.switch_times, rtol=0, atol=0)
    scale = np.linalg.norm(sched.switch_rows, axis=1, keepdims=True)
    assert np.all(np.abs(ric.switch_rows - sched.switch_rows) <= 1e-6 * scale)


def test_schedule_text_round_trip(sched):
    text = sched.to_text(["config_hash=0"], include_full=True)
    back = GainSchedule.from_text(text)
    assert back.t_s == sched.t_s and back.has_full
    for a, b in zip(back.segments, sched.segments):
        np.testing.assert_array_equal(a.times, b.times)
        np.testing.assert_array_equal(a.S2, b.S2)
        np.testing.assert_array_equal(a.S3, b.S3)
        np.testing.assert_array_equal(a.S1, b.S1)
    np.testing.assert_array_equal(back.switch_rows, sched.switch_rows)
    rows_only = GainSchedule.from_text(sched.to_text())
    assert not rows_only.has_full
    with pytest.raises(ValueError):
        rows_only.S(sched.t0)
    with pytest.raises(ValueError):
        GainSchedule.from_text("t,S2\n")


def test_schedule_lookup_beyond_horizon(sched):
    assert sched.rows(sched.t_s + 1e-9) is None
    S2, S3 = sched.rows(sched.t0)
    assert S2.shape == (3, 7) and S3.shape == (1, 7)


def test_zero_deviation_reproduces_nominal_control(desk, sched):
    eng = desk.system.eng
    for t in np.linspace(desk.traj.t0, sched.t_s, 17)[:-1]:
        z = desk.traj.sample(t)
        S2, S3 = sched.rows(t)
        cmd = feedback(z, S2, S3, z[:7], eng)
        u = desk.system.control(z)
        assert cmd.rho == u.rho
        np.testing.assert_array_equal(cmd.tau, z[10:13] / np.linalg.norm(z[10:13]))
        assert cmd.h1 == desk.system.h1(z)


def test_unperturbed_flight_hits_target(desk, sched):
    res = simulate_guidance(desk.traj, sched, desk.bp.x0, desk.bp)
    assert res.phi_norm < 1e-8
    np.testing.assert_allclose(res.switch_times, desk.traj.switching.times, atol=1e-8)


def test_switching_shifts_linear(desk):
    assert not switching_shifts(np.zeros(7), desk.hist).any()
    c = np.arange(1.0, 8.0)
    dx = desk.hist.at(desk.traj.t0).X @ c
    expected = np.array([s.dtdq @ c for s in desk.hist.switches])
    np.testing.assert_allclose(switching_shifts(dx, desk.hist), expected, rtol=1e-6,
                               atol=1e-9 * np.abs(expected).max())


def test_rows_only_log_is_identical(desk, sched):
    x0 = perturb_meoe(desk.bp.x0, ETA, 1e-5, desk.mu)
    full = simulate_guidance(desk.traj, sched, x0, desk.bp, use_full=True)
    rows = simulate_guidance(desk.traj, sched.rows_only(), x0, desk.bp)
    assert full.command_log_text() == rows.command_log_text()
    np.testing.assert_array_equal(full.x_final, rows.x_final)


def test_guidance_beats_open_loop(desk, sched):
    x0 = perturb_meoe(desk.bp.x0, ETA, 1e-6, desk.mu)
    guided = simulate_guidance(desk.traj, sched, x0, desk.bp)
    open_loop = simulate_guidance(desk.traj, sched, x0, desk.bp, guided=False)
    assert guided.phi_norm < 0.1 * open_loop.phi_norm


def test_perturb_meoe_shifts_elements(desk):
    from nogtransfer.units_frames import cartesian_to_meoe_array

    x0 = desk.bp.x0
    x1 = perturb_meoe(x0, ETA, 1e-6, desk.mu)
    d = cartesian_to_meoe_array(x1, desk.mu) - cartesian_to_meoe_array(x0, desk.mu)
    np.testing.assert_allclose(d, 1e-6 * ETA, atol=1e-13)
