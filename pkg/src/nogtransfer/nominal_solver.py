"""
Single-shooting solver for the fixed-time fuel-optimal transfer.

Unknowns are the initial costate p(t0). The residual stacks the terminal
constraint phi(x(tf)) and the projection of p(tf) on the tangent space of
the target manifold. A convex-combination homotopy

    J_lam = int lam*rho + (1 - lam)*rho^2 dt

connects the energy-optimal problem (lam = 0, continuous throttle) to the
fuel-optimal one (lam = 1, bang-bang).
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from .extremal import PropagationError, propagate, propagate_final
from .units_frames import cartesian_to_meoe_array

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual_norm=np.inf, p0=None):
        super().__init__(f"{message} (last residual norm {residual_norm:.3e})")
        self.residual_norm = residual_norm
        self.p0 = p0


class ConstraintRankError(ValueError):
    """The terminal-constraint Jacobian is rank deficient."""


# --------------------------------------------------------------------------
# terminal constraints


def _oriented_kernel(jac):
    """Orthonormal kernel basis with a deterministic sign convention."""
    B = null_space(jac, rcond=1e-12)
    for k in range(B.shape[1]):
        j = int(np.argmax(np.abs(B[:, k])))
        if B[j, k] < 0.0:
            B[:, k] = -B[:, k]
    return B


class TerminalConstraint:
    """phi: R^n -> R^l with Jacobian and multiplier-weighted Hessian.

    Subclasses implement ``phi``; ``jacobian`` and ``weighted_hessian``
    default to central differences.
    """

    n = 7
    fd_step = 1e-6

    @property
    def l(self):
        raise NotImplementedError

    def phi(self, x):
        raise NotImplementedError

    def jacobian(self, x):
        x = np.asarray(x, float)
        J = np.empty((self.l, self.n))
        for j in range(self.n):
            d = np.zeros(self.n)
            d[j] = self.fd_step * max(1.0, abs(x[j]))
            J[:, j] = (self.phi(x + d) - self.phi(x - d)) / (2 * d[j])
        return J

    def weighted_hessian(self, x, nu):
        """sum_i nu_i * Hessian(phi_i) at x."""
        x = np.asarray(x, float)
        Hs = np.empty((self.n, self.n))
        for j in range(self.n):
            d = np.zeros(self.n)
            d[j] = 1e-5 * max(1.0, abs(x[j]))
            Hs[:, j] = (nu @ self.jacobian(x + d) - nu @ self.jacobian(x - d)) / (2 * d[j])
        return 0.5 * (Hs + Hs.T)

    def tangent_basis(self, x):
        J = self.jacobian(x)
        if np.linalg.matrix_rank(J, tol=1e-10) < self.l:
            raise ConstraintRankError("terminal-constraint Jacobian is rank deficient")
        return _oriented_kernel(J)


class FixedComponents(TerminalConstraint):
    """Fix selected components of the chart in which x is expressed."""

    def __init__(self, indices, target, n=7):
        self.indices = np.asarray(indices, dtype=int)
        self.target = np.asarray(target, dtype=float)
        self.n = n

    @property
    def l(self):
        return len(self.indices)

    def phi(self, x):
        return np.asarray(x, float)[self.indices] - self.target

    def jacobian(self, x):
        J = np.zeros((self.l, self.n))
        J[np.arange(self.l), self.indices] = 1.0
        return J

    def weighted_hessian(self, x, nu):
        return np.zeros((self.n, self.n))

    def tangent_basis(self, x):
        free = [j for j in range(self.n) if j not in set(self.indices.tolist())]
        B = np.zeros((self.n, len(free)))
        B[free, np.arange(len(free))] = 1.0
        return B


def fixed_position_velocity(r_f, v_f):
    """Cartesian position and velocity fixed, mass free."""
    return FixedComponents(range(6), np.concatenate([r_f, v_f]))


class FixedEquinoctial(TerminalConstraint):
    """A subset of the equinoctial elements fixed, evaluated on a Cartesian x.

    The true longitude is compared modulo 2*pi around its target.
    """

    def __init__(self, indices, target, mu=1.0):
        self.indices = np.asarray(indices, dtype=int)
        self.target = np.asarray(target, dtype=float)
        self.mu = mu

    @property
    def l(self):
        return len(self.indices)

    def phi(self, x):
        l_ref = self.target[list(self.indices).index(5)] if 5 in self.indices else None
        e = cartesian_to_meoe_array(x, self.mu, l_ref=l_ref)
        return e[self.indices] - self.target


# --------------------------------------------------------------------------


@dataclass
class BoundaryProblem:
    """Fixed initial state, terminal manifold, and horizon (Cartesian chart)."""

    x0: np.ndarray
    constraint: TerminalConstraint
    t0: float
    tf: float
    system: object
    r_min: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        if not self.tf > self.t0:
            raise ValueError("final time must exceed initial time")
        if not 0 < self.constraint.l <= self.x0.size:
            raise ValueError("constraint dimension must satisfy 0 < l <= n")

    @property
    def n(self):
        return self.x0.size


def residual_from_final(bp, zf):
    n = bp.n
    xf, pf = zf[:n], zf[n:]
    B = bp.constraint.tangent_basis(xf)
    return np.concatenate([bp.constraint.phi(xf), B.T @ pf])


def multipliers(bp, zf):
    """Least-squares multipliers nu with p(tf) = grad(phi)^T nu."""
    n = bp.n
    J = bp.constraint.jacobian(zf[:n])
    nu, *_ = np.linalg.lstsq(J.T, zf[n:], rcond=None)
    return nu


def shooting_residual(p0, bp, lam=1.0, **prop_opts):
    z0 = np.concatenate([bp.x0, np.asarray(p0, float)])
    zf, _ = propagate_final(z0, bp.t0, bp.tf, bp.system, lam=lam, **prop_opts)
    return residual_from_final(bp, zf)


def _safe_residual(p0, bp, lam, prop_opts):
    try:
        r = shooting_residual(p0, bp, lam, **prop_opts)
    except (PropagationError, ValueError, ZeroDivisionError, FloatingPointError):
        return None
    if not np.all(np.isfinite(r)):
        return None
    return r


@dataclass
class NewtonResult:
    p0: np.ndarray
    residual: np.ndarray
    iterations: int
    history: list
    converged: bool

    @property
    def residual_norm(self):
        return float(np.linalg.norm(self.residual))


def shooting_jacobian(p0, bp, lam, r0=None, rel_step=1e-8, central=True, prop_opts=None):
    prop_opts = prop_opts or {}
    n = len(p0)
    if r0 is None:
        r0 = _safe_residual(p0, bp, lam, prop_opts)
    J = np.empty((len(r0), n))
    for j in range(n):
        d = rel_step * max(1.0, abs(p0[j]))
        pp = p0.copy()
        pp[j] += d
        rp = _safe_residual(pp, bp, lam, prop_opts)
        if central:
            pm = p0.copy()
            pm[j] -= d
            rm = _safe_residual(pm, bp, lam, prop_opts)
            if rp is None or rm is None:
                return None
            J[:, j] = (rp - rm) / (2 * d)
        else:
            if rp is None:
                return None
            J[:, j] = (rp - r0) / d
    return J


def newton(p0, bp, lam, tol=1e-10, max_iter=40, rel_step=1e-8, min_alpha=1e-4,
           prop_opts=None):
    """Damped Newton on the shooting residual.

    A trial step with damping alpha is accepted when the residual norm drops
    to at most (1 - alpha/2) of its current value.
    """
    prop_opts = prop_opts or {}
    p = np.array(p0, dtype=float)
    r = _safe_residual(p, bp, lam, prop_opts)
    if r is None:
        return NewtonResult(p, np.full(bp.n, np.inf), 0, [], False)
    history = [float(np.linalg.norm(r))]
    for it in range(1, max_iter + 1):
        nr = np.linalg.norm(r)
        if nr < tol:
            return NewtonResult(p, r, it - 1, history, True)
        J = shooting_jacobian(p, bp, lam, r, rel_step, prop_opts=prop_opts)
        if J is None or not np.all(np.isfinite(J)):
            break
        try:
            dp = -np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            dp = -np.linalg.lstsq(J, r, rcond=None)[0]
        alpha = 1.0
        accepted = False
        while alpha >= min_alpha:
            p_try = p + alpha * dp
            r_try = _safe_residual(p_try, bp, lam, prop_opts)
            if r_try is not None and np.linalg.norm(r_try) <= (1.0 - 0.5 * alpha) * nr:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        p, r = p_try, r_try
        history.append(float(np.linalg.norm(r)))
        log.debug("lam=%.6g it=%d |r|=%.3e alpha=%.3g", lam, it, history[-1], alpha)
    return NewtonResult(p, r, len(history) - 1, history, bool(np.linalg.norm(r) < tol))


# --------------------------------------------------------------------------
# initial guess and homotopy


def random_costates(bp, count, seed=0, scale=None):
    """Random initial costates scaled so the switching quantity is O(1)."""
    eng = bp.system.eng
    rng = np.random.default_rng(seed)
    s = scale if scale is not None else 1.0 / eng.u_max
    out = np.empty((count, 7))
    out[:, 0:3] = rng.standard_normal((count, 3)) * s
    out[:, 3:6] = rng.standard_normal((count, 3)) * s
    out[:, 6] = -rng.uniform(0.0, 1.0, count) * 0.1 / (eng.beta * eng.u_max)
    return out


def _screen_one(args):
    p, bp, prop_opts = args
    r = _safe_residual(p, bp, 0.0, prop_opts)
    return np.inf if r is None else float(np.linalg.norm(r))


def solve_smoothed(bp, lam=0.0, p_guess=None, seed=0, n_starts=64, n_newton=8,
                   tol=1e-10, workers=1, prop_opts=None):
    """Solve the smoothed problem at ``lam`` and return (trajectory, NewtonResult).

    Without a guess, random costates are screened by residual norm and the
    best few are refined by Newton until one converges.
    """
    prop_opts = prop_opts or {}
    if not 0.0 <= lam < 1.0:
        raise ValueError("smoothed problems need 0 <= lam < 1")
    if p_guess is not None:
        candidates = [np.asarray(p_guess, float)]
    else:
        cands = random_costates(bp, n_starts, seed)
        jobs = [(c, bp, prop_opts) for c in cands]
        if workers > 1:
            with ProcessPoolExecutor(workers) as ex:
                norms = list(ex.map(_screen_one, jobs))
        else:
            norms = [_screen_one(j) for j in jobs]
        order = np.argsort(norms, kind="stable")
        candidates = [cands[k] for k in order[:n_newton] if np.isfinite(norms[k])]
    best = None
    for c in candidates:
        res = newton(c, bp, lam, tol=tol, prop_opts=prop_opts)
        if best is None or res.residual_norm < best.residual_norm:
            best = res
        if res.converged:
            z0 = np.concatenate([bp.x0, res.p0])
            return propagate(z0, bp.t0, bp.tf, bp.system, lam=lam, **prop_opts), res
    raise ConvergenceError("smoothed shooting did not converge",
                           best.residual_norm if best else np.inf,
                           best.p0 if best else None)


@dataclass
class HomotopyStep:
    lam: float
    p0: np.ndarray
    residual_norm: float
    iterations: int
    switchings: int


def parameter_continuation(make_bp, p0, start, stop, lam=0.0, step=None, min_step=1e-3,
                           tol=1e-10, prop_opts=None):
    """Follow a converged solution while a scalar problem parameter moves.

    ``make_bp(value)`` builds the boundary problem for a parameter value.
    Steps grow by half after a success, are halved after a failure, and
    the run aborts once a step falls below ``min_step`` times the span.
    Returns (p0 at ``stop``, list of (value, NewtonResult)).
    """
    span = stop - start
    h = 0.25 * span if step is None else float(np.copysign(step, span))
    value, p = start, np.asarray(p0, float)
    path = []
    while value != stop:
        nxt = stop if abs(stop - value) <= abs(h) else value + h
        res = newton(p, make_bp(nxt), lam, tol=tol, prop_opts=prop_opts)
        if res.converged:
            value, p = nxt, res.p0
            path.append((value, res))
            log.info("parameter continuation %.6g |r|=%.2e its=%d", value, res.residual_norm,
                     res.iterations)
            h = float(np.copysign(min(1.5 * abs(h), 0.25 * abs(span)), span))
        else:
            h *= 0.5
            if abs(h) < min_step * abs(span):
                raise ConvergenceError(f"parameter continuation stalled at {value:.6g}",
                                       res.residual_norm, p)
    return p, path


def continue_to_fuel(bp, p0_start, lam_start=0.0, step=0.1, min_step=1e-4,
                     tol=1e-10, final_tol=1e-11, prop_opts=None):
    """Continue a converged smoothed solution to lam = 1.

    Returns (bang-bang trajectory, list of accepted HomotopyStep). The step
    is halved on failure and the run aborts below ``min_step``.
    """
    prop_opts = prop_opts or {}
    lam = lam_start
    p = np.asarray(p0_start, float)
    path = [HomotopyStep(lam, p.copy(), np.nan, 0, 0)]
    prev = None
    h = step
    while lam < 1.0:
        lam_next = min(1.0, lam + h)
        guess = p
        if prev is not None:
            # secant predictor in lambda
            guess = p + (p - prev[1]) * (lam_next - lam) / (lam - prev[0])
        res = newton(guess, bp, lam_next, tol=final_tol if lam_next >= 1.0 else tol,
                     prop_opts=prop_opts)
        if not res.converged and prev is not None:
            res = newton(p, bp, lam_next, tol=final_tol if lam_next >= 1.0 else tol,
                         prop_opts=prop_opts)
        if res.converged:
            prev = (lam, p.copy())
            lam, p = lam_next, res.p0
            z0 = np.concatenate([bp.x0, p])
            _, nsw = propagate_final(z0, bp.t0, bp.tf, bp.system, lam=lam, **prop_opts)
            path.append(HomotopyStep(lam, p.copy(), res.residual_norm, res.iterations, nsw))
            log.info("lam=%.6f |r|=%.2e its=%d events=%d", lam, res.residual_norm,
                     res.iterations, nsw)
            h = min(step, 1.5 * h)
        else:
            h *= 0.5
            log.info("lam step failed at %.6f, step -> %.3g", lam_next, h)
            if h < min_step:
                raise ConvergenceError(f"continuation stalled at lambda={lam:.6f}",
                                       res.residual_norm, p)
    z0 = np.concatenate([bp.x0, p])
    traj = propagate(z0, bp.t0, bp.tf, bp.system, lam=1.0, **prop_opts)
    return traj, path


def fuel_used(traj):
    return float(traj.z0[6] - traj.zf[6])


def control_cost(traj, lam=1.0, nodes_per_arc=64):
    """Evaluate int lam*rho + (1-lam)*rho^2 dt by Gauss-Legendre per arc."""
    xg, wg = np.polynomial.legendre.leggauss(nodes_per_arc)
    total = 0.0
    for arc in traj.arcs:
        a, b = arc.t_lo, arc.t_hi
        for xi, wi in zip(xg, wg):
            t = 0.5 * (b - a) * xi + 0.5 * (a + b)
            r = arc.rho(arc(t))
            total += 0.5 * (b - a) * wi * (lam * r + (1.0 - lam) * r * r)
    return total


def target_continuation(bp, target_meoe, lam=0.0, step=0.1, min_step=1e-3, tol=1e-10,
                        seed=0, prop_opts=None):
    """Solve the smoothed problem by moving the target from the coast endpoint.

    The coast from x0 defines the starting target; the target equinoctial
    elements (with cumulative true longitude) are then interpolated linearly
    to ``target_meoe``. For a target close to the coast endpoint the
    energy-optimal residual is nearly linear in p0, so a tiny random costate
    is a good first guess. Returns (trajectory, NewtonResult).
    """
    from .units_frames import meoe_to_cartesian_array

    prop_opts = prop_opts or {}
    mu = bp.system.mu
    coast = propagate(np.concatenate([bp.x0, np.zeros(3), [1e-9, 0.0, 0.0], [1.0]]), bp.t0, bp.tf,
                      bp.system, lam=lam, mode=0, **prop_opts)
    e_coast = cartesian_to_meoe_array(bp.x0, mu)
    # unwrap the longitude along the coast
    l_acc = e_coast[5]
    for t in np.linspace(bp.t0, bp.tf, 200)[1:]:
        l_acc = cartesian_to_meoe_array(coast.sample(t)[:7], mu, l_ref=l_acc)[5]
    e_start = cartesian_to_meoe_array(coast.zf[:7], mu, l_ref=l_acc)[:6]
    e_goal = np.asarray(target_meoe, float)[:6]

    def problem(s):
        e = (1.0 - s) * e_start + s * e_goal
        x = meoe_to_cartesian_array(np.concatenate([e, [1.0]]), mu)
        return BoundaryProblem(bp.x0, fixed_position_velocity(x[:3], x[3:6]), bp.t0, bp.tf,
                               bp.system, bp.r_min, bp.meta)

    rng = np.random.default_rng(seed)
    eng = bp.system.eng
    p = np.concatenate([1e-3 * rng.standard_normal(6) / eng.u_max, [0.0]])
    s, h = 0.0, step
    res = None
    while s < 1.0:
        s_next = min(1.0, s + h)
        res = newton(p, problem(s_next), lam, tol=tol, prop_opts=prop_opts)
        if res.converged:
            s, p = s_next, res.p0
            log.info("target continuation s=%.4f |r|=%.2e its=%d", s, res.residual_norm,
                     res.iterations)
            h = min(step, 1.5 * h)
        else:
            h *= 0.5
            if h < min_step:
                raise ConvergenceError(f"target continuation stalled at s={s:.4f}",
                                       res.residual_norm, p)
    final = newton(p, bp, lam, tol=tol, prop_opts=prop_opts)
    if not final.converged:
        raise ConvergenceError("target continuation end point failed", final.residual_norm, p)
    z0 = np.concatenate([bp.x0, final.p0])
    return propagate(z0, bp.t0, bp.tf, bp.system, lam=lam, **prop_opts), final
