"""
Second-order conditions along a bang-bang extremal.

* Jacobi condition: det Xq(t) has no zero inside any inter-switching
  interval of [t0, tf).
* Transversal condition: det Xq(t_i+) * det Xq(t_i-) > 0 at every switching.

Both only need determinant evaluations on a variational history. The
scanned quantity is sign(det Xq) * smin/smax: it has the sign of the
determinant, vanishes exactly where Xq is singular, and does not depend on
how the columns of Xq happen to be scaled.

On the terminal arc Xq is singular at every epoch, not just at tf. Scaling
the costate on an arc of fixed throttle leaves the state unchanged, and
p(tf) is spanned by the constraint gradients, so the q-direction w with
Xq(tf) w = 0 and Pq(tf) w = p(tf) stays in the kernel of Xq until the last
switching. Such an arc carries no conjugate-point information and is
reported as degenerate instead of being scanned.
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

DET_FLOOR = 1e-12
DEGENERACY_TOL = 1e-8
SUBSAMPLES = 8


@dataclass
class IntervalResult:
    t_lo: float
    t_hi: float
    min_abs_det: float
    argmin: float
    max_abs_det: float
    zeros: list = field(default_factory=list)
    degenerate: bool = False

    @property
    def passed(self):
        return self.degenerate or not self.zeros


@dataclass
class SwitchResult:
    t: float
    det_minus: float
    det_plus: float
    degenerate: bool = False

    @property
    def product(self):
        return self.det_minus * self.det_plus

    @property
    def passed(self):
        return self.degenerate or self.product > 0.0


@dataclass
class ConditionReport:
    intervals: list
    switches: list
    condition_number_t0: float
    horizon: tuple

    @property
    def jc_pass(self):
        return all(iv.passed for iv in self.intervals)

    @property
    def tc_pass(self):
        return all(s.passed for s in self.switches)

    @property
    def verdict(self):
        return self.jc_pass and self.tc_pass

    @property
    def conjugate_epochs(self):
        out = [z for iv in self.intervals for z in iv.zeros]
        out += [s.t for s in self.switches if not s.passed]
        return sorted(out)

    @property
    def first_failure(self):
        epochs = self.conjugate_epochs
        return epochs[0] if epochs else None

    def to_text(self, header_lines=(), time_label="t", time_scale=1.0):
        lines = [f"# {h}" for h in header_lines]
        lines.append(f"horizon: [{self.horizon[0]!r}, {self.horizon[1]!r})")
        lines.append(f"JC: {'PASS' if self.jc_pass else 'FAIL'}")
        lines.append(f"TC: {'PASS' if self.tc_pass else 'FAIL'}")
        lines.append(f"verdict: {'PASS' if self.verdict else 'FAIL'}")
        lines.append(f"cond(Xq(t0)): {self.condition_number_t0!r}")
        lines.append("")
        lines.append(f"intervals ({time_label}_lo, {time_label}_hi, min|rcond|, argmin, "
                     "max|rcond|, zeros)")
        for iv in self.intervals:
            if iv.degenerate:
                lines.append(f"{iv.t_lo * time_scale!r}, {iv.t_hi * time_scale!r}, "
                             "terminal arc, costate-scaling kernel, not scanned")
                continue
            zs = ";".join(repr(z * time_scale) for z in iv.zeros)
            lines.append(f"{iv.t_lo * time_scale!r}, {iv.t_hi * time_scale!r}, "
                         f"{iv.min_abs_det!r}, {iv.argmin * time_scale!r}, "
                         f"{iv.max_abs_det!r}, [{zs}]")
        lines.append("")
        lines.append(f"switchings ({time_label}_i, rcond-, rcond+, product, status)")
        for s in self.switches:
            status = ("right limit on terminal arc, not tested" if s.degenerate
                      else ("ok" if s.passed else "SIGN CHANGE"))
            lines.append(f"{s.t * time_scale!r}, {s.det_minus!r}, {s.det_plus!r}, "
                         f"{s.product!r}, {status}")
        lines.append("")
        lines.append("conjugate/focal epochs: "
                     + ", ".join(repr(t * time_scale) for t in self.conjugate_epochs))
        return "\n".join(lines) + "\n"


def signed_rcond(X):
    """sign(det X) times the reciprocal 2-norm condition number of X."""
    X = np.asarray(X, float)
    sv = np.linalg.svd(X, compute_uv=False)
    if sv[0] == 0.0:
        return 0.0
    return float(np.sign(np.linalg.det(X)) * sv[-1] / sv[0])


def scaling_direction(hist):
    """q-direction w with Xq(tf) w = 0 and Pq(tf) w = p(tf), or None."""
    term = hist.terminal
    n = hist.n
    pf = np.asarray(hist.traj.zf, float)[n:]
    w, *_ = np.linalg.lstsq(term.P, pf, rcond=None)
    if np.linalg.norm(term.P @ w - pf) > 1e-8 * max(1.0, np.linalg.norm(pf)):
        return None
    if np.linalg.norm(term.X @ w) > 1e-8 * np.linalg.norm(w):
        return None
    return w


def _arc_is_degenerate(hist, k, w, tol=DEGENERACY_TOL):
    if w is None:
        return False
    arc = hist.arcs[k]
    wn = np.linalg.norm(w)
    for t in arc.nodes:
        X = arc(t)[1]
        if np.linalg.norm(X @ w) > tol * max(np.linalg.norm(X), 1e-300) * wn:
            return False
    return True


def _scan_times(nodes, t_lo, t_hi, sub=SUBSAMPLES):
    nodes = np.asarray(nodes)
    nodes = nodes[(nodes >= t_lo) & (nodes <= t_hi)]
    nodes = np.unique(np.concatenate([[t_lo], nodes, [t_hi]]))
    pieces = [np.linspace(a, b, sub + 2)[:-1] for a, b in zip(nodes[:-1], nodes[1:])]
    return np.concatenate(pieces + [[nodes[-1]]])


def _interval_scan(hist, k, t_lo, t_hi, floor, include_hi):
    arc = hist.arcs[k]
    ts = _scan_times(arc.nodes, t_lo, t_hi)

    def det_at(t):
        return signed_rcond(arc(t)[1])

    d = np.array([det_at(t) for t in ts])
    if not include_hi:
        ts, d = ts[:-1], d[:-1]
    ad = np.abs(d)
    j = int(np.argmin(ad))
    res = IntervalResult(float(t_lo), float(t_hi), float(ad[j]), float(ts[j]), float(ad.max()))
    for a in range(len(ts) - 1):
        if d[a] == 0.0:
            res.zeros.append(float(ts[a]))
        elif d[a] * d[a + 1] < 0.0:
            res.zeros.append(float(brentq(det_at, ts[a], ts[a + 1], xtol=1e-14, rtol=1e-15)))
    # near-zero interior minima without a sign change
    for a in range(1, len(ts) - 1):
        if ad[a] <= ad[a - 1] and ad[a] <= ad[a + 1] and ad[a] < floor:
            if not any(abs(ts[a] - z) < 1e-9 for z in res.zeros):
                res.zeros.append(float(ts[a]))
    res.zeros.sort()
    return res


def jacobi_scan(hist, t_start=None, t_end=None, floor=DET_FLOOR):
    """Scan det Xq on every inter-switching interval of [t_start, t_end).

    The right end is excluded, since Xq(tf) is singular by construction for a
    terminal manifold of positive dimension. The terminal arc is not scanned
    when the costate-scaling direction lies in the kernel of Xq along it.
    """
    t_start = hist.t0 if t_start is None else t_start
    t_end = hist.tf if t_end is None else t_end
    w = scaling_direction(hist)
    intervals = hist.arc_intervals()
    out = []
    for k, (a, b) in enumerate(intervals):
        lo, hi = max(a, t_start), min(b, t_end)
        if hi <= lo:
            continue
        if k == len(intervals) - 1 and _arc_is_degenerate(hist, k, w):
            out.append(IntervalResult(float(lo), float(hi), 0.0, float(hi), 0.0,
                                      degenerate=True))
            continue
        include_hi = hi < t_end
        out.append(_interval_scan(hist, k, lo, hi, floor, include_hi))
    return out


def transversal_test(hist, t_start=None, t_end=None):
    t_start = hist.t0 if t_start is None else t_start
    t_end = hist.tf if t_end is None else t_end
    intervals = hist.arc_intervals()
    last = len(intervals) - 1
    terminal_degenerate = _arc_is_degenerate(hist, last, scaling_direction(hist))
    out = []
    for s in hist.switches:
        if t_start <= s.t < t_end:
            deg = terminal_degenerate and s.t == intervals[last][0]
            out.append(SwitchResult(s.t, signed_rcond(hist.at(s.t, "left").X),
                                    signed_rcond(hist.at(s.t, "right").X), deg))
    return out


def check_conditions(hist, t_start=None, t_end=None, floor=DET_FLOOR):
    t_start = hist.t0 if t_start is None else t_start
    t_end = hist.tf if t_end is None else t_end
    X0 = hist.at(t_start, "right").X
    return ConditionReport(jacobi_scan(hist, t_start, t_end, floor),
                           transversal_test(hist, t_start, t_end),
                           float(np.linalg.cond(X0)), (float(t_start), float(t_end)))


def emit_delta_curve(hist, kappa=1.0, t_start=None, t_end=None):
    """Rows (t, side, sgn(det)|det|^(1/kappa)) over every interval.

    Both one-sided values appear at each switching.
    """
    if kappa < 1.0:
        raise ValueError("kappa must be >= 1")
    t_start = hist.t0 if t_start is None else t_start
    t_end = hist.tf if t_end is None else t_end
    rows = []
    for k, (a, b) in enumerate(hist.arc_intervals()):
        lo, hi = max(a, t_start), min(b, t_end)
        if hi <= lo:
            continue
        arc = hist.arcs[k]
        for t in _scan_times(arc.nodes, lo, hi):
            d = float(np.linalg.det(arc(t)[1]))
            side = "right" if t == a else ("left" if t == b else "interior")
            rows.append((float(t), side, float(np.sign(d) * abs(d) ** (1.0 / kappa))))
    return rows


def delta_curve_csv(rows, header_lines=(), time_scale=1.0, time_label="t"):
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([time_label, "side", "delta_compressed"])
    for t, side, v in rows:
        w.writerow([repr(t * time_scale), side, repr(v)])
    return buf.getvalue()
