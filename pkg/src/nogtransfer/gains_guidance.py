"""
Gain schedule S(t) = Pq Xq^-1 and the neighboring-optimal feedback laws.

Two construction routes are provided: the ratio of the variational matrices
and a backward Riccati integration with jumps at the switchings. Guidance
only needs the velocity-costate rows S2 (3 x n) and the mass-costate row
S3 (1 x n); the position-costate rows S1 are kept for diagnostics.
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from . import _integrator as _ig
from .extremal import PropagationError, _STATUS_TEXT
from .units_frames import cartesian_to_meoe_array

SCHEDULE_FORMAT = "nogtransfer-gain-schedule 1"
RICCATI_BLOWUP = 1e12
JUMP_GUARD = 1e-10
SCHEDULE_SUBSAMPLES = 3
COND_LIMIT = 1e6

ROWS_S1 = slice(0, 3)
ROWS_S2 = slice(3, 6)
ROWS_S3 = slice(6, 7)


class GainError(RuntimeError):
    def __init__(self, message, epoch):
        super().__init__(f"{message} at t={epoch:.15g}")
        self.epoch = epoch


def inverse_rank_one_update(A_inv, b, c):
    """(A + b c^T)^-1 from A^-1 (Sherman-Morrison)."""
    Ab = A_inv @ b
    cA = c @ A_inv
    den = 1.0 + c @ Ab
    if abs(den) < JUMP_GUARD:
        raise np.linalg.LinAlgError("rank-one update is singular")
    return A_inv - np.outer(Ab, cA) / den


def riccati_jump(S_plus, gx, gp, h1dot, delta_rho, epoch=float("nan")):
    """Left limit S(t_i-) from the right limit S(t_i+).

    With R = -(dH1/dx + dH1/dp S+)/dH1/dt (a row vector),
    S- = (S+ - drho dH1/dx R)(I + drho dH1/dp R)^-1.
    """
    R = -(gx + gp @ S_plus) / h1dot
    den = 1.0 + delta_rho * (R @ gp)
    if abs(den) < JUMP_GUARD:
        raise GainError("singular Riccati jump", epoch)
    n = len(gx)
    inv = inverse_rank_one_update(np.eye(n), delta_rho * gp, R)
    return (S_plus - delta_rho * np.outer(gx, R)) @ inv, R


# --------------------------------------------------------------------------


@dataclass
class GainSegment:
    """Gains on one inter-switching interval, nodes ascending."""

    t_lo: float
    t_hi: float
    times: np.ndarray
    S2: np.ndarray
    S3: np.ndarray
    S1: np.ndarray = None
    _splines: dict = field(default_factory=dict, repr=False)

    def _spline(self, name):
        if name not in self._splines:
            vals = getattr(self, name)
            flat = vals.reshape(len(self.times), -1)
            if len(self.times) >= 2:
                self._splines[name] = CubicSpline(self.times, flat, axis=0,
                                                  bc_type="not-a-knot" if len(self.times) > 3 else "natural")
            else:
                self._splines[name] = lambda t, f=flat: f[0]
        return self._splines[name]

    def eval(self, name, t):
        vals = getattr(self, name)
        shape = vals.shape[1:]
        return np.asarray(self._spline(name)(t)).reshape(shape)


@dataclass
class GainSchedule:
    segments: list
    t_s: float
    switch_times: np.ndarray
    switch_rows: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def has_full(self):
        return all(s.S1 is not None for s in self.segments)

    @property
    def t0(self):
        return self.segments[0].t_lo

    def _segment(self, t, side="right"):
        if t > self.t_s:
            return None
        bounds = [s.t_lo for s in self.segments]
        k = int(np.searchsorted(bounds, t, side="right")) - 1
        k = min(max(k, 0), len(self.segments) - 1)
        if side == "left" and k > 0 and t == self.segments[k].t_lo:
            k -= 1
        return self.segments[k]

    def rows(self, t, side="right"):
        """(S2, S3) at t, or None beyond the gain horizon."""
        seg = self._segment(t, side)
        if seg is None:
            return None
        return seg.eval("S2", t), seg.eval("S3", t)

    def S(self, t, side="right"):
        seg = self._segment(t, side)
        if seg is None:
            return None
        if seg.S1 is None:
            raise ValueError("schedule holds only the S2/S3 rows")
        return np.vstack([seg.eval("S1", t), seg.eval("S2", t), seg.eval("S3", t)])

    def rows_only(self):
        segs = [GainSegment(s.t_lo, s.t_hi, s.times, s.S2, s.S3) for s in self.segments]
        return GainSchedule(segs, self.t_s, self.switch_times, self.switch_rows, dict(self.meta))

    # --- file format
    def to_text(self, header_lines=(), include_full=False):
        buf = io.StringIO()
        buf.write(f"# {SCHEDULE_FORMAT}\n")
        for line in header_lines:
            buf.write(f"# {line}\n")
        buf.write(f"# t_s={self.t_s!r}\n")
        full = include_full and self.has_full
        buf.write(f"# full={int(full)}\n")
        for t, R in zip(self.switch_times, self.switch_rows):
            buf.write("# switch " + " ".join(repr(float(v)) for v in [t, *R]) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        n = self.segments[0].S3.shape[-1]
        cols = ["segment", "t", "side"]
        cols += [f"S2_{i}{j}" for i in range(3) for j in range(n)]
        cols += [f"S3_{j}" for j in range(n)]
        if full:
            cols += [f"S1_{i}{j}" for i in range(3) for j in range(n)]
        w.writerow(cols)
        for k, seg in enumerate(self.segments):
            for j, t in enumerate(seg.times):
                side = "right" if j == 0 else ("left" if j == len(seg.times) - 1 else "interior")
                row = [k, repr(float(t)), side]
                row += [repr(float(v)) for v in seg.S2[j].ravel()]
                row += [repr(float(v)) for v in seg.S3[j].ravel()]
                if full:
                    row += [repr(float(v)) for v in seg.S1[j].ravel()]
                w.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text):
        lines = text.splitlines()
        if not lines or lines[0] != f"# {SCHEDULE_FORMAT}":
            raise ValueError("not a gain schedule file (missing format line)")
        t_s = None
        full = False
        sw_t, sw_r = [], []
        body = []
        for line in lines:
            if line.startswith("# t_s="):
                t_s = float(line[6:])
            elif line.startswith("# full="):
                full = line[7:] == "1"
            elif line.startswith("# switch "):
                vals = [float(v) for v in line[9:].split()]
                sw_t.append(vals[0])
                sw_r.append(vals[1:])
            elif not line.startswith("#"):
                body.append(line)
        reader = csv.reader(body)
        header = next(reader)
        n = sum(1 for c in header if c.startswith("S3_"))
        data = {}
        for row in reader:
            k = int(row[0])
            vals = np.array([float(v) for v in row[3:]])
            data.setdefault(k, []).append((float(row[1]), vals))
        segs = []
        for k in sorted(data):
            ts = np.array([r[0] for r in data[k]])
            V = np.array([r[1] for r in data[k]])
            S2 = V[:, : 3 * n].reshape(-1, 3, n)
            S3 = V[:, 3 * n: 4 * n].reshape(-1, 1, n)
            S1 = V[:, 4 * n: 7 * n].reshape(-1, 3, n) if full else None
            segs.append(GainSegment(ts[0], ts[-1], ts, S2, S3, S1))
        return cls(segs, t_s, np.array(sw_t), np.array(sw_r) if sw_r else np.zeros((0, n)))


def default_t_s(traj, hist=None, cond_limit=COND_LIMIT):
    """End of the gain horizon.

    Xq is singular on the whole terminal arc: there the state does not
    depend on the scale of the costate, and p(tf) lies in the span of the
    constraint gradients, so Xq annihilates the multiplier direction. The
    horizon therefore has to stop at or before the last switching. Starting
    from the penultimate arc we step back one arc at a time while Xq on the
    arc is worse conditioned than ``cond_limit``; the horizon ends at the
    right end of the first acceptable arc. Without a variational history the
    penultimate switching is used.
    """
    sw = np.asarray(traj.switching.times, float)
    if sw.size == 0:
        raise GainError("no switching: Xq is singular on the whole extremal", traj.t0)
    if sw.size == 1:
        return float(sw[0])
    if hist is None:
        return float(sw[-2])
    intervals = hist.arc_intervals()
    for k in range(len(intervals) - 2, -1, -1):
        worst = max(np.linalg.cond(hist.arcs[k](t)[1]) for t in hist.arc_nodes(k))
        if worst < cond_limit:
            return float(intervals[k][1])
    raise GainError("Xq ill conditioned on every arc", traj.t0)


def _segment_grid(nodes, lo, hi, sub=SCHEDULE_SUBSAMPLES):
    nodes = np.asarray(nodes)
    nodes = np.unique(np.concatenate([[lo], nodes[(nodes > lo) & (nodes < hi)], [hi]]))
    parts = [np.linspace(a, b, sub + 2)[:-1] for a, b in zip(nodes[:-1], nodes[1:])]
    return np.concatenate(parts + [[hi]])


def _switch_rows(hist, schedule_S, t_s):
    times, rows = [], []
    for sw in hist.switches:
        if sw.t < t_s:
            S_plus = schedule_S(sw.t)
            rows.append(-(sw.dH1dx + sw.dH1dp @ S_plus) / sw.h1dot)
            times.append(sw.t)
    return np.array(times), np.array(rows)


def gains_from_stm(hist, t_s=None, keep_full=True):
    """S = Pq Xq^-1 on the variational grid of [t0, t_s]."""
    t_s = default_t_s(hist.traj, hist) if t_s is None else t_s
    segs = []
    for k, (a, b) in enumerate(hist.arc_intervals()):
        if a >= t_s:
            break
        hi = min(b, t_s)
        grid = _segment_grid(hist.arc_nodes(k), a, hi)
        Ss = []
        for t in grid:
            _, X, P = hist.arcs[k](t)
            try:
                Ss.append(np.linalg.solve(X.T, P.T).T)
            except np.linalg.LinAlgError:
                raise GainError("singular Xq in gain horizon", float(t)) from None
        Ss = np.array(Ss)
        segs.append(GainSegment(float(a), float(hi), grid, Ss[:, ROWS_S2], Ss[:, ROWS_S3],
                                Ss[:, ROWS_S1] if keep_full else None))
    sched = GainSchedule(segs, float(t_s), np.zeros(0), np.zeros((0, hist.n)),
                         {"route": "stm"})
    sw_t, sw_r = _switch_rows(hist, lambda t: sched.S(t, "right"), t_s)
    sched.switch_times, sched.switch_rows = sw_t, sw_r
    return sched


def _riccati_rhs(system, rho, n):
    def rhs(t, y):
        z = y[: 2 * n]
        S = y[2 * n:].reshape(n, n)
        Hpx, Hpp, Hxx = system.hessian_blocks(z, rho)
        dS = -Hxx - Hpx.T @ S - S @ Hpx - S @ Hpp @ S
        return np.concatenate([system.rhs(z, rho), dS.ravel()])
    return rhs


def gains_from_riccati(traj, hist, t_s=None, rtol=1e-12, atol=1e-12):
    """Backward Riccati integration from a seed S(t_s) taken from ``hist``.

    The variational history is only used on [t_s, tf] to build the seed.
    Returns (schedule, raw) where ``raw`` lists (t, side, S) at every
    integrator node, for comparisons that avoid interpolation.
    """
    system = traj.system
    n = system.n
    t_s = default_t_s(traj, hist) if t_s is None else t_s
    seed = hist.at(t_s, "left")
    S = np.linalg.solve(seed.X.T, seed.P.T).T
    sw_idx = {float(t): i for i, t in enumerate(traj.switching.times)}
    segs, raw = [], []
    sw_times, sw_rows = [], []

    def blowup(t, y):
        return RICCATI_BLOWUP - np.max(np.abs(y[2 * n:]))
    blowup.terminal = True

    for k in range(len(traj.arcs) - 1, -1, -1):
        arc = traj.arcs[k]
        if arc.t_lo >= t_s:
            continue
        hi = min(arc.t_hi, t_s)
        z_hi = arc(hi) if hi < arc.t_hi else arc.z_hi
        rho = arc.rho(z_hi)
        y0 = np.concatenate([z_hi, S.ravel()])
        sol = solve_ivp(_riccati_rhs(system, rho, n), (hi, arc.t_lo), y0, method="DOP853",
                        rtol=rtol, atol=atol, dense_output=True, events=blowup)
        if sol.status == 1:
            raise GainError("Riccati solution blew up", float(sol.t[-1]))
        if not sol.success:
            raise GainError(f"Riccati integration failed: {sol.message}", float(sol.t[-1]))
        grid = _segment_grid(sol.t, arc.t_lo, hi)
        Ss = np.array([sol.sol(t)[2 * n:].reshape(n, n) for t in grid])
        # exact end values instead of interpolated ones
        Ss[-1] = y0[2 * n:].reshape(n, n)
        Ss[0] = sol.y[2 * n:, -1].reshape(n, n)
        segs.append(GainSegment(float(arc.t_lo), float(hi), grid, Ss[:, ROWS_S2],
                                Ss[:, ROWS_S3], Ss[:, ROWS_S1]))
        for j, t in enumerate(sol.t):
            side = "left" if j == 0 else ("right" if j == len(sol.t) - 1 else "interior")
            raw.append((float(t), side, sol.y[2 * n:, j].reshape(n, n)))
        S = sol.y[2 * n:, -1].reshape(n, n)
        i = sw_idx.get(float(arc.t_lo))
        if i is not None and k > 0:
            z_s = arc.z_lo
            gx, gp = system.h1_gradients(z_s)
            S, R = riccati_jump(S, gx, gp, system.h1_dot(z_s), traj.switching.delta_rho[i],
                                arc.t_lo)
            sw_times.append(arc.t_lo)
            sw_rows.append(R)
    segs.reverse()
    raw.reverse()
    sched = GainSchedule(segs, float(t_s), np.array(sw_times[::-1]),
                         np.array(sw_rows[::-1]) if sw_rows else np.zeros((0, n)),
                         {"route": "riccati"})
    return sched, raw


# --------------------------------------------------------------------------
# feedback laws


@dataclass(frozen=True)
class FeedbackCommand:
    rho: float
    tau: np.ndarray
    h1: float
    gain_frozen: bool = False


def _rows_times(M, dx):
    """Row-by-row products so full-S and row-only evaluations agree bitwise."""
    return np.array([float(row @ dx) for row in np.atleast_2d(M)])


def feedback(z_nominal, S2, S3, x_measured, eng):
    """Neighboring-optimal throttle and direction.

    The throttle uses the sign of the perturbed switching function; an exact
    zero resolves to coasting so the command is never interior.
    """
    z_nominal = np.asarray(z_nominal, float)
    dx = np.asarray(x_measured, float) - z_nominal[:7]
    if S2 is None:
        pv = z_nominal[10:13]
        nrm = np.linalg.norm(pv)
        h1 = eng.u_max * nrm / z_nominal[6] - eng.beta * eng.u_max * z_nominal[13] - 1.0
        return FeedbackCommand(1.0 if h1 > 0 else 0.0, pv / nrm, h1, True)
    q = z_nominal[10:13] + _rows_times(S2, dx)
    pm = z_nominal[13] + _rows_times(S3, dx)[0]
    qn = np.linalg.norm(q)
    if qn == 0.0:
        raise ValueError("perturbed primer vector vanishes; direction undefined")
    h1 = eng.u_max * qn / (z_nominal[6] + dx[6]) - eng.beta * eng.u_max * pm - 1.0
    return FeedbackCommand(1.0 if h1 > 0.0 else 0.0, q / qn, h1)


def switching_shift(dx0, hist, i, t0=None):
    """First-order shift of switching i caused by a state deviation at t0."""
    t0 = hist.t0 if t0 is None else t0
    X0 = hist.at(t0, "right").X
    dq = np.linalg.solve(X0, np.asarray(dx0, float))
    return float(hist.switches[i].dtdq @ dq)


def switching_shifts(dx0, hist, t0=None):
    t0 = hist.t0 if t0 is None else t0
    dq = np.linalg.solve(hist.at(t0, "right").X, np.asarray(dx0, float))
    return np.array([float(s.dtdq @ dq) for s in hist.switches])


# --------------------------------------------------------------------------
# closed-loop simulation


@dataclass
class GuidanceResult:
    t: float
    x_final: np.ndarray
    phi: np.ndarray
    meoe_error: np.ndarray
    a_error: float
    fuel: float
    log: list
    switch_times: list
    status: str = "ok"

    @property
    def phi_norm(self):
        return float(np.linalg.norm(self.phi))

    def command_log_text(self):
        lines = []
        for rec in self.log:
            lines.append(" ".join(rec[0:1] + [repr(float(v)) for v in rec[1:]]))
        return "\n".join(lines) + "\n"


def _rho_nominal(traj, t):
    k = traj._arc_index(t, "right")
    arc = traj.arcs[k]
    return arc.rho(arc.z_hi if t >= arc.t_hi else arc(t))


def perturb_meoe(x0, eta, eps, mu=1.0):
    """Cartesian state whose equinoctial elements are shifted by eps*eta."""
    e = cartesian_to_meoe_array(x0, mu)
    from .units_frames import meoe_to_cartesian_array

    return meoe_to_cartesian_array(e + eps * np.asarray(eta, float), mu)


def simulate_guidance(traj, schedule, x0, bp, cycle=None, guided=True, use_full=False,
                      rtol=1e-12, atol=1e-12, h_max=0.25, length_unit=1.0):
    """Fly the truth model from ``x0`` with feedback (or nominal replay).

    Deviations are measured at cycle boundaries; the costate correction
    S*dx and the mass deviation are held until the next boundary while the
    nominal costate keeps evolving, so throttle switchings occur exactly
    where the commanded switching function crosses zero. Beyond the gain
    horizon t_s the nominal control is replayed.
    """
    system = traj.system
    eng = system.eng
    t0, tf = traj.t0, traj.tf
    cycle = (tf - t0) / 1000.0 if cycle is None else cycle
    t_s = schedule.t_s if (guided and schedule is not None) else t0
    prm = system.params(1.0)
    y = np.concatenate([np.asarray(x0, float), traj.z0])

    sw = [float(t) for t in traj.switching.times]
    n_cyc = int(np.floor((t_s - t0) / cycle + 1e-9))
    cyc = [t0 + k * cycle for k in range(n_cyc + 1) if t0 + k * cycle < t_s]
    marks = sorted(set(cyc) | set(sw) | {t_s, tf})
    marks = [t for t in marks if t0 <= t <= tf]
    cyc_set = set(cyc)
    log, switch_log = [], []
    mode = -1
    h = 0.0
    dpv = np.zeros(3)
    dpm = 0.0
    dm = 0.0

    for a, b in zip(marks[:-1], marks[1:]):
        prev = mode
        prm[_ig.P_RHO_NOM] = _rho_nominal(traj, a)
        active = guided and a < t_s
        if active and a in cyc_set:
            dx = y[:7] - y[7:14]
            rows = schedule.S(a) if use_full else schedule.rows(a)
            if use_full:
                full = _rows_times(rows, dx)
                dpv, dpm = full[3:6], float(full[6])
            else:
                dpv, dpm = _rows_times(rows[0], dx), float(_rows_times(rows[1], dx)[0])
            dm = float(dx[6])
        if active:
            prm[_ig.P_GUIDED] = 1.0
            prm[_ig.P_DPV:_ig.P_DPV + 3] = dpv
            prm[_ig.P_DPM] = dpm
            prm[_ig.P_DM] = dm
            g, _ = _ig.switch_values(_ig.KIND_TRACK, y, prm)
            if a in cyc_set or mode < 0:
                if abs(g) > 1e-10 or mode < 0:
                    mode = 1 if g > 0.0 else 0
                if abs(g) <= 1e-10:
                    mode = int(prm[_ig.P_RHO_NOM] > 0.5)
            elif abs(g) <= 1e-10:
                mode = int(prm[_ig.P_RHO_NOM] > 0.5)
            if a in cyc_set:
                log.append(["cycle", a, *dpv, dpm, dm, mode])
        else:
            prm[_ig.P_GUIDED] = 0.0
            mode = int(prm[_ig.P_RHO_NOM] > 0.5)
        # a switching that falls exactly on a mark is resolved here, not by an event
        if 0 <= prev != mode:
            switch_log.append(a)
            log.append(["switch", a, mode])
        t = a
        for _ in range(10000):
            status, t, y, new_mode, h, *_ = _ig.integrate(
                _ig.KIND_TRACK, t, y, b, prm, mode, active, rtol, atol, h, h_max, 10**6)
            if status == _ig.STATUS_DONE:
                break
            if status != _ig.STATUS_EVENT:
                raise PropagationError(_STATUS_TEXT.get(status, "integration failure"), t, status)
            mode = new_mode
            switch_log.append(t)
            log.append(["switch", t, mode])
    xf = y[:7]
    mu = system.mu
    phi = bp.constraint.phi(xf)
    target = bp.meta.get("target_meoe")
    e_f = cartesian_to_meoe_array(xf, mu, l_ref=None if target is None else target[5])
    if target is not None:
        err = e_f[:6] - np.asarray(target[:6])
        a_t = target[0] / (1.0 - target[1] ** 2 - target[2] ** 2)
        a_f = e_f[0] / (1.0 - e_f[1] ** 2 - e_f[2] ** 2)
        a_err = (a_f - a_t) * length_unit
    else:
        err = np.full(6, np.nan)
        a_err = float("nan")
    return GuidanceResult(float(t), xf, phi, err, float(a_err), float(x0[6] - xf[6]), log,
                          switch_log)
