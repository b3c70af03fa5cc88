"""
Propagation of the canonical system with event-located switchings.

A trajectory is a list of arcs in ascending time. Inside an arc the throttle
regime is fixed; arc boundaries at lambda = 1 are the switching times.
"""

import bisect
import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import _integrator as _ig

REGULARITY_FLOOR = 1e-10
DEFAULT_RTOL = 1e-12
DEFAULT_ATOL = 1e-12
DEFAULT_HMAX = 0.25

_STATUS_TEXT = {
    _ig.STATUS_STEP_COLLAPSE: "step size collapsed",
    _ig.STATUS_MAX_STEPS: "maximum number of steps exceeded",
    _ig.STATUS_FUEL: "fuel exhausted (mass reached dry mass)",
    _ig.STATUS_RADIUS: "radius fell below the admissible minimum",
}


class PropagationError(RuntimeError):
    def __init__(self, message, epoch, status):
        super().__init__(f"{message} at t={epoch:.15g}")
        self.epoch = epoch
        self.status = status


@dataclass(frozen=True)
class ExtremalPoint:
    t: float
    z: np.ndarray

    @property
    def x(self):
        return self.z[: len(self.z) // 2]

    @property
    def p(self):
        return self.z[len(self.z) // 2:]


@dataclass(frozen=True)
class SwitchingStructure:
    """Switching times with throttle jumps and H1 rates."""

    times: np.ndarray
    delta_rho: np.ndarray
    h1dot: np.ndarray

    def __len__(self):
        return len(self.times)

    @property
    def regular(self):
        return bool(np.all(np.abs(self.h1dot) > REGULARITY_FLOOR))

    @property
    def polarity_consistent(self):
        return bool(np.all(np.sign(self.delta_rho) == np.sign(self.h1dot)))

    def burn_count(self, rho_start):
        """Number of burn arcs given the throttle at the start."""
        starts = int(rho_start > 0.5) + int(np.sum(self.delta_rho > 0))
        return starts


class CompiledArc:
    """Arc produced by the compiled integrator (steps kept in ascending order)."""

    def __init__(self, ts, ys, Fs, mode, rho_fn):
        ts = np.asarray(ts)
        h = np.diff(ts)
        if len(h) and h[0] < 0:
            # backward integration: keep the step data but order by time
            self._t_old = ts[:-1][::-1].copy()
            self._h = h[::-1].copy()
            self._y_old = ys[:-1][::-1].copy()
            self._F = Fs[::-1].copy()
            self.nodes = ts[::-1].copy()
            node_vals = ys[::-1]
        else:
            self._t_old = ts[:-1].copy()
            self._h = h.copy()
            self._y_old = ys[:-1].copy()
            self._F = Fs.copy()
            self.nodes = ts.copy()
            node_vals = ys
        self.node_values = np.array(node_vals)
        self.t_lo = float(self.nodes[0])
        self.t_hi = float(self.nodes[-1])
        self.mode = int(mode)
        self._rho_fn = rho_fn
        self._buf = np.empty(ys.shape[1])
        # each step covers [min(t_old, t_old+h), max(...)]; lower ends
        self._lo = self.nodes[:-1]

    @property
    def z_lo(self):
        return self.node_values[0]

    @property
    def z_hi(self):
        return self.node_values[-1]

    def __call__(self, t):
        k = int(np.searchsorted(self._lo, t, side="right")) - 1
        k = min(max(k, 0), len(self._h) - 1)
        if t == self.nodes[k]:
            return self.node_values[k].copy()
        if t == self.nodes[k + 1]:
            return self.node_values[k + 1].copy()
        out = np.empty_like(self._buf)
        _ig.dense_eval(self._t_old[k], self._h[k], self._y_old[k], self._F[k], t, out)
        return out

    def rho(self, z):
        return self._rho_fn(self.mode, z)


class ScipyArc:
    """Arc backed by a scipy dense-output solution (used for generic systems)."""

    def __init__(self, sol, mode, rho_fn):
        self._sol = sol
        ts = np.asarray(sol.t)
        order = np.argsort(ts)
        self.nodes = ts[order]
        self.node_values = sol.y.T[order]
        self.t_lo = float(self.nodes[0])
        self.t_hi = float(self.nodes[-1])
        self.mode = int(mode)
        self._rho_fn = rho_fn

    @property
    def z_lo(self):
        return self.node_values[0]

    @property
    def z_hi(self):
        return self.node_values[-1]

    def __call__(self, t):
        return np.asarray(self._sol.sol(t), dtype=float)

    def rho(self, z):
        return self._rho_fn(self.mode, z)


def _rho_from_mode(system, lam):
    def fn(mode, z):
        if mode == 0:
            return 0.0
        if mode == 1:
            return 1.0
        sw = system.h1(z) + 1.0
        return float(min(1.0, max(0.0, (sw - lam) / (2.0 * (1.0 - lam)))))
    return fn


@dataclass
class ExtremalTrajectory:
    arcs: list
    system: object
    lam: float = 1.0
    switching: SwitchingStructure = field(init=False)

    def __post_init__(self):
        self._bounds = [a.t_lo for a in self.arcs]
        self.switching = self._build_switching()

    # --- basic geometry
    @property
    def t0(self):
        return self.arcs[0].t_lo

    @property
    def tf(self):
        return self.arcs[-1].t_hi

    @property
    def horizon(self):
        return (self.t0, self.tf)

    def _arc_index(self, t, side):
        if t < self.t0 - 1e-13 * max(1.0, abs(self.t0)) or t > self.tf + 1e-13 * max(1.0, abs(self.tf)):
            raise ValueError(f"epoch {t} outside horizon [{self.t0}, {self.tf}]")
        k = bisect.bisect_right(self._bounds, t) - 1
        k = min(max(k, 0), len(self.arcs) - 1)
        if side == "left" and k > 0 and t == self.arcs[k].t_lo:
            k -= 1
        return k

    def sample(self, t, side="right"):
        """State/costate at ``t``; at a switching, ``side`` picks the limit."""
        k = self._arc_index(t, side)
        arc = self.arcs[k]
        t_c = min(max(t, arc.t_lo), arc.t_hi)
        return arc(t_c)

    def point(self, t, side="right"):
        return ExtremalPoint(float(t), self.sample(t, side))

    def rho(self, t, side="right"):
        k = self._arc_index(t, side)
        return self.arcs[k].rho(self.sample(t, side))

    def h1(self, t, side="right"):
        return self.system.h1(self.sample(t, side))

    @property
    def z0(self):
        return self.arcs[0].z_lo.copy()

    @property
    def zf(self):
        return self.arcs[-1].z_hi.copy()

    def nodes(self):
        """Ascending (t, z, rho, arc index) records over all stored nodes."""
        rows = []
        for k, arc in enumerate(self.arcs):
            for t, z in zip(arc.nodes, arc.node_values):
                rows.append((float(t), z, arc.rho(z), k))
        return rows

    # --- switching data
    def _build_switching(self):
        times, drho, hdot = [], [], []
        if self.lam >= 1.0:
            for a, b in zip(self.arcs[:-1], self.arcs[1:]):
                if a.mode == b.mode:
                    continue
                z = b.z_lo
                times.append(b.t_lo)
                drho.append(b.rho(z) - a.rho(a.z_hi))
                hdot.append(self.system.h1_dot(z))
        return SwitchingStructure(np.array(times), np.array(drho), np.array(hdot))

    def burn_arcs(self):
        """Maximal intervals with rho = 1."""
        out = []
        for arc in self.arcs:
            if arc.mode == 1:
                if out and out[-1][1] == arc.t_lo:
                    out[-1] = (out[-1][0], arc.t_hi)
                else:
                    out.append((arc.t_lo, arc.t_hi))
        return out

    def hamiltonian_drift(self):
        """Maximum relative deviation of H over all nodes."""
        lam = self.lam
        # the running cost lam*rho + (1-lam)*rho^2 replaces the rho in h1
        vals = np.array([self.system.hamiltonian(z, r) + (1.0 - lam) * (r - r * r)
                         for _, z, r, _ in self.nodes()])
        scale = max(abs(vals[0]), 1.0)
        return float(np.max(np.abs(vals - vals[0])) / scale)

    def extend_backward(self, t_new, **opts):
        """Return a new trajectory that also covers [t_new, t0]."""
        if t_new >= self.t0:
            return self
        head = propagate(self.z0, self.t0, t_new, self.system, lam=self.lam,
                         mode=self.arcs[0].mode, **opts)
        return ExtremalTrajectory(head.arcs + self.arcs, self.system, self.lam)

    # --- export
    def to_csv(self, header_lines=()):
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        n = self.arcs[0].node_values.shape[1] // 2
        xs = [f"x{i}" for i in range(n)]
        ps = [f"p{i}" for i in range(n)]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", *xs, *ps, "rho", "H1", "H"])
        for t, z, r, _ in self.nodes():
            w.writerow([repr(t), *[repr(float(c)) for c in z], repr(float(r)),
                        repr(float(self.system.h1(z))),
                        repr(float(self.system.hamiltonian(z, r)))])
        return buf.getvalue()

    def switching_csv(self, header_lines=()):
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["i", "t_i", "delta_rho", "h1dot"])
        s = self.switching
        for i in range(len(s)):
            w.writerow([i + 1, repr(float(s.times[i])), repr(float(s.delta_rho[i])),
                        repr(float(s.h1dot[i]))])
        return buf.getvalue()


def initial_mode(system, z, lam):
    ga = system.h1(z) + 1.0 - lam
    gb = system.h1(z) + 1.0 - (2.0 - lam)
    return int(_ig.classify(ga, gb, lam))


def propagate(z0, t0, t1, system, lam=1.0, mode=None, rtol=DEFAULT_RTOL,
              atol=DEFAULT_ATOL, h_max=DEFAULT_HMAX, max_steps=2_000_000,
              max_events=100_000):
    """Integrate the canonical system from (t0, z0) to t1 (either direction).

    Switchings are located by event detection and the integration restarts
    at each one. Raises :class:`PropagationError` on fuel exhaustion, radius
    violation, or step-size collapse.
    """
    if not hasattr(system, "params"):
        return _propagate_generic(z0, t0, t1, system, rtol, atol)
    prm = system.params(lam)
    z = np.array(z0, dtype=float)
    if mode is None:
        mode = initial_mode(system, z, lam)
    rho_fn = _rho_from_mode(system, lam)
    arcs = []
    t = float(t0)
    h = 0.0
    for _ in range(max_events):
        status, t, z, new_mode, h, ts, ys, Fs, _ = _ig.integrate(
            _ig.KIND_CANONICAL, t, z, float(t1), prm, mode, True, rtol, atol, h, h_max, max_steps)
        if len(ts) > 1:
            arcs.append(CompiledArc(ts, ys, Fs, mode, rho_fn))
        if status == _ig.STATUS_DONE:
            break
        if status != _ig.STATUS_EVENT:
            raise PropagationError(_STATUS_TEXT.get(status, "integration failure"), t, status)
        mode = new_mode
    else:
        raise PropagationError("too many switchings", t, -1)
    if t1 < t0:
        arcs.reverse()
    return ExtremalTrajectory(arcs, system, lam)


def propagate_final(z0, t0, t1, system, lam=1.0, mode=None, rtol=DEFAULT_RTOL,
                    atol=DEFAULT_ATOL, h_max=DEFAULT_HMAX, max_steps=2_000_000,
                    max_events=100_000):
    """Endpoint-only variant of :func:`propagate`; returns (z(t1), n_events)."""
    prm = system.params(lam)
    z = np.array(z0, dtype=float)
    if mode is None:
        mode = initial_mode(system, z, lam)
    t = float(t0)
    h = 0.0
    for k in range(max_events):
        status, t, z, mode, h, *_ = _ig.integrate(
            _ig.KIND_CANONICAL, t, z, float(t1), prm, mode, True, rtol, atol, h, h_max, max_steps)
        if status == _ig.STATUS_DONE:
            return z, k
        if status != _ig.STATUS_EVENT:
            raise PropagationError(_STATUS_TEXT.get(status, "integration failure"), t, status)
    raise PropagationError("too many switchings", t, -1)


def _propagate_generic(z0, t0, t1, system, rtol, atol):
    from scipy.integrate import solve_ivp

    sol = solve_ivp(lambda t, z: system.rhs(z, 0.0), (t0, t1), np.asarray(z0, float),
                    method="DOP853", rtol=rtol, atol=atol, dense_output=True)
    if not sol.success:
        raise PropagationError(sol.message, float(sol.t[-1]), -1)
    return ExtremalTrajectory([ScipyArc(sol, 0, lambda mode, z: 0.0)], system, 1.0)


@dataclass(frozen=True)
class SwitchRefinement:
    t: float
    h1: float
    h1dot: float
    regular: bool


def refine_switching(traj, bracket, xtol=1e-15):
    """Locate a zero of H1 in ``bracket``.

    ``traj`` is either an :class:`ExtremalTrajectory` or a scalar function of
    time standing in for H1 (its rate is then obtained by a central
    difference).
    """
    lo, hi = bracket
    if isinstance(traj, ExtremalTrajectory):
        def f(t):
            return traj.h1(t)
    else:
        f = traj
    f_lo, f_hi = f(lo), f(hi)
    if f_lo * f_hi > 0.0:
        raise ValueError("no sign change of H1 in the bracket")
    if f_lo == 0.0:
        t_star = lo
    elif f_hi == 0.0:
        t_star = hi
    else:
        t_star = brentq(f, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=200)
    if isinstance(traj, ExtremalTrajectory):
        hdot = traj.system.h1_dot(traj.sample(t_star))
    else:
        d = 1e-6 * max(1.0, abs(t_star))
        hdot = (f(t_star + d) - f(t_star - d)) / (2 * d)
    return SwitchRefinement(float(t_star), float(f(t_star)), float(hdot),
                            bool(abs(hdot) > REGULARITY_FLOOR))


def sample(traj, t, side="right"):
    """Functional alias of :meth:`ExtremalTrajectory.point`."""
    return traj.point(t, side)
