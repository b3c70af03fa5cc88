import numpy as np
import pytest

from nogtransfer.extremal import propagate_final
from nogtransfer.nominal_solver import (
    BoundaryProblem,
    ConstraintRankError,
    FixedComponents,
    FixedEquinoctial,
    TerminalConstraint,
    control_cost,
    fuel_used,
    multipliers,
    newton,
    parameter_continuation,
    random_costates,
    shooting_jacobian,
    shooting_residual,
    target_continuation,
)
from nogtransfer.units_frames import cartesian_to_meoe_array


@pytest.fixture(scope="module")
def energy(desk):
    traj, res = target_continuation(desk.bp, desk.cfg.target_meoe(), lam=0.0)
    return traj, res


def test_fully_fixed_endpoint_residual_is_state_error(desk):
    target = np.arange(7, dtype=float)
    bp = BoundaryProblem(desk.bp.x0, FixedComponents(range(7), target), 0.0, 1.0, desk.system)
    p0 = desk.traj.z0[7:]
    zf, _ = propagate_final(desk.traj.z0, 0.0, 1.0, desk.system)
    np.testing.assert_array_equal(shooting_residual(p0, bp), zf[:7] - target)


def test_converged_nominal_residual(desk):
    r = shooting_residual(desk.traj.z0[7:], desk.bp)
    assert np.linalg.norm(r) < 1e-10
    # the free-mass transversality row: p_m(tf) vanishes
    assert abs(desk.traj.zf[13]) < 1e-10


def test_shooting_jacobian_predicts_residual_change(desk, rng):
    p0 = desk.traj.z0[7:]
    J = shooting_jacobian(p0, desk.bp, 1.0)
    assert np.linalg.cond(J) < 1e12
    d = rng.standard_normal(7)
    d /= np.linalg.norm(d)
    r0 = shooting_residual(p0, desk.bp)
    errs = []
    for h in (1e-5, 1e-6):
        dr = shooting_residual(p0 + h * d, desk.bp) - r0
        errs.append(np.linalg.norm(dr - h * J @ d) / np.linalg.norm(h * J @ d))
    assert errs[1] < 1e-3
    assert errs[1] < errs[0]


def test_energy_solution_is_smooth_and_converged(energy, desk):
    traj, res = energy
    assert res.converged and res.residual_norm < 1e-10
    rho = np.array([r for _, _, r, _ in traj.nodes()])
    ts = np.array([t for t, _, _, _ in traj.nodes()])
    jumps = np.abs(np.diff(rho))
    steps = np.diff(ts)
    # continuous throttle: a jump never exceeds a bounded multiple of the step
    assert np.all(jumps <= 50.0 * steps + 1e-12)
    assert len(traj.switching) == 0
    assert traj.hamiltonian_drift() < 1e-8


def test_newton_merit_decreases(energy, desk):
    _, res = energy
    h = res.history
    assert all(b < a for a, b in zip(h[:-1], h[1:]))


def test_fuel_not_above_energy_solution(energy, desk):
    traj_e, _ = energy
    fuel_bang = control_cost(desk.traj, 1.0)
    assert fuel_bang == pytest.approx(fuel_used(desk.traj) / (desk.system.eng.beta
                                                             * desk.system.eng.u_max), rel=1e-9)
    assert fuel_bang <= control_cost(traj_e, 1.0)


def test_newton_recovers_from_perturbed_guess(desk):
    p0 = desk.traj.z0[7:]
    res = newton(p0 * (1 + 1e-4), desk.bp, 1.0, tol=1e-11)
    assert res.converged
    np.testing.assert_allclose(res.p0, p0, rtol=1e-7)


def test_multipliers_span_final_costate(desk):
    nu = multipliers(desk.bp, desk.traj.zf)
    J = desk.bp.constraint.jacobian(desk.traj.zf[:7])
    np.testing.assert_allclose(J.T @ nu, desk.traj.zf[7:], atol=1e-10)


def test_equinoctial_constraint_matches_state(desk):
    xf = desk.traj.zf[:7]
    goal = cartesian_to_meoe_array(xf, desk.mu, l_ref=desk.cfg.target_meoe()[5])[:6]
    con = FixedEquinoctial(range(6), goal, desk.mu)
    assert np.linalg.norm(con.phi(xf)) < 1e-12
    B = con.tangent_basis(xf)
    assert B.shape == (7, 1)
    assert np.linalg.norm(con.jacobian(xf) @ B) < 1e-9


def test_rank_deficient_constraint_rejected():
    class Degenerate(TerminalConstraint):
        n = 7
        l = 2

        def phi(self, x):
            return np.array([x[0] + x[1], 2.0 * (x[0] + x[1])])

    with pytest.raises(ConstraintRankError):
        Degenerate().tangent_basis(np.ones(7))


def test_random_costates_are_seeded(desk):
    a = random_costates(desk.bp, 5, seed=3)
    b = random_costates(desk.bp, 5, seed=3)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, random_costates(desk.bp, 5, seed=4))


def test_continuation_path_recorded(desk):
    path = desk.doc["continuation"]
    lams = [float(s["lambda"]) for s in path]
    assert lams[0] == 0.0 and lams[-1] == 1.0
    assert all(b > a for a, b in zip(lams[:-1], lams[1:]))
    assert path[-1]["switchings"] == len(desk.traj.switching)


def test_thrust_continuation_tracks_energy_solution(energy, desk):
    from dataclasses import replace

    def make(T):
        return replace(desk.cfg, thrust_N=T).boundary_problem()

    _, res = energy
    p, path = parameter_continuation(make, res.p0, 10.0, 9.0, tol=1e-10)
    assert path[-1][0] == 9.0
    assert [v for v, _ in path] == sorted((v for v, _ in path), reverse=True)
    assert np.linalg.norm(shooting_residual(p, make(9.0), 0.0)) < 1e-10
