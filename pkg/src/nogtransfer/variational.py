"""
Sensitivities of the extremal family with respect to its terminal parameters.

The family is parameterized by q = (nu, q1): nu are the terminal-constraint
multipliers and q1 are coordinates on the target manifold. Xq = dx/dq and
Pq = dp/dq are integrated backward from tf along the nominal with the
linearized canonical flow; at each switching the one-sided values are
related through the switching-time sensitivity dt_i/dq.
"""

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .extremal import REGULARITY_FLOOR

VAR_RTOL = 1e-12
VAR_ATOL = 1e-12


class RegularityError(RuntimeError):
    def __init__(self, epoch, h1dot):
        super().__init__(f"switching at t={epoch:.15g} is not regular (|dH1/dt|={abs(h1dot):.3e})")
        self.epoch = epoch


@dataclass(frozen=True)
class VariationalPair:
    X: np.ndarray
    P: np.ndarray
    t: float
    side: str = "right"


@dataclass(frozen=True)
class SwitchSensitivity:
    t: float
    dtdq: np.ndarray
    dH1dx: np.ndarray
    dH1dp: np.ndarray
    h1dot: float
    delta_rho: float


def terminal_values(constraint, zf, nu=None):
    """(Xq, Pq) at tf for q = (nu, q1).

    Xq(tf) = [0 | B],  Pq(tf) = [grad(phi)^T | sum_i nu_i Hess(phi_i) B]

    where the columns of B are an orthonormal basis of ker grad(phi). For a
    fully fixed endpoint this reduces to (0, I).
    """
    zf = np.asarray(zf, float)
    n = zf.size // 2
    xf, pf = zf[:n], zf[n:]
    J = constraint.jacobian(xf)
    B = constraint.tangent_basis(xf)
    l = J.shape[0]
    if nu is None:
        nu, *_ = np.linalg.lstsq(J.T, pf, rcond=None)
    X = np.zeros((n, n))
    P = np.zeros((n, n))
    X[:, l:] = B
    P[:, :l] = J.T
    if B.shape[1]:
        P[:, l:] = constraint.weighted_hessian(xf, nu) @ B
    return VariationalPair(X, P, float("nan"), "left")


def _jump_to_left(system, z, X, P, delta_rho, epoch=float("nan")):
    gx, gp = system.h1_gradients(z)
    hdot = system.h1_dot(z)
    if abs(hdot) < REGULARITY_FLOOR:
        raise RegularityError(epoch, hdot)
    dtdq = -(gx @ X + gp @ P) / hdot
    Xm = X + delta_rho * np.outer(gp, dtdq)
    Pm = P - delta_rho * np.outer(gx, dtdq)
    return Xm, Pm, dtdq, gx, gp, hdot


class _ArcSolution:
    def __init__(self, sol, n, t_lo, t_hi, rho_const):
        self.sol = sol
        self.n = n
        self.t_lo = t_lo
        self.t_hi = t_hi
        self.rho_const = rho_const
        self.nodes = np.sort(np.asarray(sol.t))

    def __call__(self, t):
        y = self.sol.sol(min(max(t, self.t_lo), self.t_hi))
        n = self.n
        z = y[: 2 * n]
        X = y[2 * n: 2 * n + n * n].reshape(n, n)
        P = y[2 * n + n * n:].reshape(n, n)
        return z, X, P


class VariationalHistory:
    """Piecewise dense (Xq, Pq) with both one-sided values at switchings."""

    def __init__(self, traj, arcs, switches, terminal):
        self.traj = traj
        self.arcs = arcs
        self.switches = switches
        self.terminal = terminal
        self._bounds = [a.t_lo for a in arcs]

    @property
    def n(self):
        return self.arcs[0].n

    @property
    def t0(self):
        return self.arcs[0].t_lo

    @property
    def tf(self):
        return self.arcs[-1].t_hi

    def _arc(self, t, side):
        k = int(np.searchsorted(self._bounds, t, side="right")) - 1
        k = min(max(k, 0), len(self.arcs) - 1)
        if side == "left" and k > 0 and t == self.arcs[k].t_lo:
            k -= 1
        return k

    def at(self, t, side="right"):
        k = self._arc(t, side)
        _, X, P = self.arcs[k](t)
        return VariationalPair(X, P, float(t), side)

    def state(self, t, side="right"):
        return self.arcs[self._arc(t, side)](t)[0]

    def det(self, t, side="right"):
        return float(np.linalg.det(self.at(t, side).X))

    def arc_intervals(self):
        return [(a.t_lo, a.t_hi) for a in self.arcs]

    def arc_nodes(self, k):
        return self.arcs[k].nodes

    def bilinear_form(self, t, side="right"):
        v = self.at(t, side)
        return v.X.T @ v.P - v.P.T @ v.X

    def to_csv(self, times=None, header_lines=()):
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        n = self.n
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "side", *[f"X{i}{j}" for i in range(n) for j in range(n)],
                    *[f"P{i}{j}" for i in range(n) for j in range(n)], "detX"])
        rows = []
        if times is None:
            for k, a in enumerate(self.arcs):
                for t in a.nodes:
                    side = "right" if t == a.t_lo else ("left" if t == a.t_hi else "interior")
                    rows.append((float(t), side, k))
        else:
            rows = [(float(t), "interior", self._arc(t, "right")) for t in times]
        for t, side, k in rows:
            _, X, P = self.arcs[k](t)
            w.writerow([repr(t), side, *[repr(float(c)) for c in X.ravel()],
                        *[repr(float(c)) for c in P.ravel()], repr(float(np.linalg.det(X)))])
        return buf.getvalue()


def _var_rhs(system, rho, n):
    def rhs(t, y):
        z = y[: 2 * n]
        X = y[2 * n: 2 * n + n * n].reshape(n, n)
        P = y[2 * n + n * n:].reshape(n, n)
        Hpx, Hpp, Hxx = system.hessian_blocks(z, rho)
        dX = Hpx @ X + Hpp @ P
        dP = -Hxx @ X - Hpx.T @ P
        return np.concatenate([system.rhs(z, rho), dX.ravel(), dP.ravel()])
    return rhs


def propagate_variational(traj, terminal, rtol=VAR_RTOL, atol=VAR_ATOL):
    """Integrate (Xq, Pq) backward over every arc of ``traj`` with jumps.

    Returns a :class:`VariationalHistory`; ``history.switches`` holds the
    :class:`SwitchSensitivity` of each switching in ascending order.
    """
    system = traj.system
    n = system.n
    X = np.array(terminal.X, float)
    P = np.array(terminal.P, float)
    sw = traj.switching
    sw_index = {float(t): i for i, t in enumerate(sw.times)}
    arcs_out = []
    switches = []
    for k in range(len(traj.arcs) - 1, -1, -1):
        arc = traj.arcs[k]
        z_hi = arc.z_hi
        rho = arc.rho(z_hi)
        y0 = np.concatenate([z_hi, X.ravel(), P.ravel()])
        sol = solve_ivp(_var_rhs(system, rho, n), (arc.t_hi, arc.t_lo), y0, method="DOP853",
                        rtol=rtol, atol=atol, dense_output=True)
        if not sol.success:
            raise RuntimeError(f"variational integration failed: {sol.message}")
        arcs_out.append(_ArcSolution(sol, n, arc.t_lo, arc.t_hi, rho))
        yl = sol.y[:, -1]
        X = yl[2 * n: 2 * n + n * n].reshape(n, n)
        P = yl[2 * n + n * n:].reshape(n, n)
        i = sw_index.get(float(arc.t_lo))
        if i is not None and k > 0:
            z_s = arc.z_lo
            X, P, dtdq, gx, gp, hdot = _jump_to_left(system, z_s, X, P, sw.delta_rho[i],
                                                     arc.t_lo)
            switches.append(SwitchSensitivity(float(arc.t_lo), dtdq, gx, gp, float(hdot),
                                              float(sw.delta_rho[i])))
    arcs_out.reverse()
    switches.reverse()
    return VariationalHistory(traj, arcs_out, switches, terminal)


def switch_sensitivity(system, z_switch, right: VariationalPair, delta_rho):
    """dt_i/dq from right-limit values at a switching."""
    _, _, dtdq, gx, gp, hdot = _jump_to_left(system, z_switch, right.X, right.P, delta_rho,
                                             right.t)
    return SwitchSensitivity(right.t, dtdq, gx, gp, float(hdot), float(delta_rho))
