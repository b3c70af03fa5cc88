"""
Compiled DOP853 integrator with throttle-regime events.

The integrator advances one "arc" at a time: the throttle regime (mode) is
frozen inside an arc and the arc ends either at the requested final time or
at the first accepted step whose endpoint is inconsistent with the current
mode. The crossing is then located by re-stepping from the step start with a
shortened exact Runge-Kutta step, so the restart state carries the full
order of the method rather than the interpolant's.

Right-hand sides are selected by an integer ``kind``:

* ``KIND_CANONICAL``: state/costate (r, v, m, p_r, p_v, p_m), 14 components.
* ``KIND_TRACK``: truth state (7) co-integrated with the nominal
  state/costate (14). Used by the guidance simulator; the truth control is
  either the nominal one (replay) or the neighboring feedback law.

Modes: 0 coast, 1 full thrust, 2 interior (smoothed) throttle.
"""

import math

import numpy as np
from numba import njit
from scipy.integrate._ivp import dop853_coefficients as _dop

KIND_CANONICAL = 0
KIND_TRACK = 1

STATUS_DONE = 0
STATUS_EVENT = 1
STATUS_STEP_COLLAPSE = 2
STATUS_MAX_STEPS = 3
STATUS_FUEL = 4
STATUS_RADIUS = 5

# parameter vector layout
P_MU, P_UMAX, P_BETA, P_LAM, P_MDRY, P_RMIN = 0, 1, 2, 3, 4, 5
P_RHO_NOM, P_GUIDED, P_DPV, P_DPM, P_DM = 6, 7, 8, 11, 12
N_PARAMS = 13

_A = np.ascontiguousarray(_dop.A, dtype=np.float64)
_B = np.ascontiguousarray(_dop.B, dtype=np.float64)
_C = np.ascontiguousarray(_dop.C, dtype=np.float64)
_E3 = np.ascontiguousarray(_dop.E3, dtype=np.float64)
_E5 = np.ascontiguousarray(_dop.E5, dtype=np.float64)
_D = np.ascontiguousarray(_dop.D, dtype=np.float64)
N_STAGES = 12
N_DENSE = 7

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
ERR_EXP = -1.0 / 8.0


def make_params(mu, umax, beta, lam=1.0, m_dry=0.0, r_min=0.0):
    prm = np.zeros(N_PARAMS)
    prm[P_MU] = mu
    prm[P_UMAX] = umax
    prm[P_BETA] = beta
    prm[P_LAM] = lam
    prm[P_MDRY] = m_dry
    prm[P_RMIN] = r_min
    return prm


@njit(cache=True)
def _norm3(a, i0):
    return math.sqrt(a[i0] * a[i0] + a[i0 + 1] * a[i0 + 1] + a[i0 + 2] * a[i0 + 2])


@njit(cache=True)
def throttle(mode, sw, lam):
    if mode == 0:
        return 0.0
    if mode == 1:
        return 1.0
    rho = (sw - lam) / (2.0 * (1.0 - lam))
    if rho < 0.0:
        return 0.0
    if rho > 1.0:
        return 1.0
    return rho


@njit(cache=True)
def rhs(kind, y, prm, mode, out):
    mu = prm[P_MU]
    umax = prm[P_UMAX]
    beta = prm[P_BETA]
    if kind == KIND_CANONICAL:
        rn = _norm3(y, 0)
        r3 = rn * rn * rn
        r5 = r3 * rn * rn
        m = y[6]
        pvn = _norm3(y, 10)
        sw = umax * pvn / m - beta * umax * y[13]
        rho = throttle(mode, sw, prm[P_LAM])
        acc = rho * umax / (m * pvn)
        pvr = y[10] * y[0] + y[11] * y[1] + y[12] * y[2]
        for j in range(3):
            out[j] = y[3 + j]
            out[3 + j] = -mu * y[j] / r3 + acc * y[10 + j]
            out[7 + j] = mu * y[10 + j] / r3 - 3.0 * mu * pvr * y[j] / r5
            out[10 + j] = -y[7 + j]
        out[6] = -beta * umax * rho
        out[13] = rho * umax * pvn / (m * m)
    else:
        # nominal part (indices 7..20), nominal throttle is fixed on the arc
        rho_nom = prm[P_RHO_NOM]
        rn = _norm3(y, 7)
        r3 = rn * rn * rn
        r5 = r3 * rn * rn
        m = y[13]
        pvn = _norm3(y, 17)
        pvr = y[17] * y[7] + y[18] * y[8] + y[19] * y[9]
        acc = rho_nom * umax / (m * pvn)
        for j in range(3):
            out[7 + j] = y[10 + j]
            out[10 + j] = -mu * y[7 + j] / r3 + acc * y[17 + j]
            out[14 + j] = mu * y[17 + j] / r3 - 3.0 * mu * pvr * y[7 + j] / r5
            out[17 + j] = -y[14 + j]
        out[13] = -beta * umax * rho_nom
        out[20] = rho_nom * umax * pvn / (m * m)
        # truth state
        if prm[P_GUIDED] > 0.5:
            q0 = y[17] + prm[P_DPV]
            q1 = y[18] + prm[P_DPV + 1]
            q2 = y[19] + prm[P_DPV + 2]
            qn = math.sqrt(q0 * q0 + q1 * q1 + q2 * q2)
            rho = 1.0 if mode == 1 else 0.0
            t0, t1, t2 = q0 / qn, q1 / qn, q2 / qn
        else:
            rho = rho_nom
            t0, t1, t2 = y[17] / pvn, y[18] / pvn, y[19] / pvn
        xr = _norm3(y, 0)
        x3 = xr * xr * xr
        a = rho * umax / y[6]
        out[0] = y[3]
        out[1] = y[4]
        out[2] = y[5]
        out[3] = -mu * y[0] / x3 + a * t0
        out[4] = -mu * y[1] / x3 + a * t1
        out[5] = -mu * y[2] / x3 + a * t2
        out[6] = -beta * umax * rho


@njit(cache=True)
def switch_values(kind, y, prm):
    """Return the two regime-boundary functions (ga, gb).

    For the canonical system they are S - lam and S - (2 - lam) with
    S = umax*|p_v|/m - beta*umax*p_m; at lam = 1 both equal the switching
    function H1. For the tracking system both equal the commanded H1.
    """
    umax = prm[P_UMAX]
    beta = prm[P_BETA]
    if kind == KIND_CANONICAL:
        lam = prm[P_LAM]
        sw = umax * _norm3(y, 10) / y[6] - beta * umax * y[13]
        return sw - lam, sw - (2.0 - lam)
    q0 = y[17] + prm[P_DPV]
    q1 = y[18] + prm[P_DPV + 1]
    q2 = y[19] + prm[P_DPV + 2]
    qn = math.sqrt(q0 * q0 + q1 * q1 + q2 * q2)
    h1 = umax * qn / (y[13] + prm[P_DM]) - beta * umax * (y[20] + prm[P_DPM]) - 1.0
    return h1, h1


@njit(cache=True)
def classify(ga, gb, lam):
    if lam >= 1.0:
        return 1 if ga > 0.0 else 0
    if gb > 0.0:
        return 1
    if ga < 0.0:
        return 0
    return 2


@njit(cache=True)
def _consistent(mode, ga, gb):
    if mode == 0:
        return ga <= 0.0
    if mode == 1:
        return gb >= 0.0
    return ga >= 0.0 and gb <= 0.0


@njit(cache=True)
def _rk_step(kind, y, f, h, prm, mode, K, y_new, f_new, tmp):
    n = y.size
    for i in range(n):
        K[0, i] = f[i]
    for s in range(1, N_STAGES):
        for i in range(n):
            acc = 0.0
            for j in range(s):
                acc += _A[s, j] * K[j, i]
            tmp[i] = y[i] + h * acc
        rhs(kind, tmp, prm, mode, K[s])
    for i in range(n):
        acc = 0.0
        for j in range(N_STAGES):
            acc += _B[j] * K[j, i]
        y_new[i] = y[i] + h * acc
    rhs(kind, y_new, prm, mode, f_new)
    for i in range(n):
        K[N_STAGES, i] = f_new[i]


@njit(cache=True)
def _error_norm(K, h, y, y_new, rtol, atol):
    n = y.size
    e5 = 0.0
    e3 = 0.0
    for i in range(n):
        sc = atol + max(abs(y[i]), abs(y_new[i])) * rtol
        a5 = 0.0
        a3 = 0.0
        for j in range(N_STAGES + 1):
            a5 += K[j, i] * _E5[j]
            a3 += K[j, i] * _E3[j]
        a5 /= sc
        a3 /= sc
        e5 += a5 * a5
        e3 += a3 * a3
    if e5 == 0.0 and e3 == 0.0:
        return 0.0
    return abs(h) * e5 / math.sqrt((e5 + 0.01 * e3) * n)


@njit(cache=True)
def _dense_coeffs(kind, y_old, y_new, f_new, h, prm, mode, K, F, tmp):
    """Fill the 7 interpolation rows for the step y_old -> y_new."""
    n = y_old.size
    for s in range(N_STAGES + 1, 16):
        for i in range(n):
            acc = 0.0
            for j in range(s):
                acc += _A[s, j] * K[j, i]
            tmp[i] = y_old[i] + h * acc
        rhs(kind, tmp, prm, mode, K[s])
    for i in range(n):
        dy = y_new[i] - y_old[i]
        F[0, i] = dy
        F[1, i] = h * K[0, i] - dy
        F[2, i] = 2.0 * dy - h * (f_new[i] + K[0, i])
        for r in range(4):
            acc = 0.0
            for j in range(16):
                acc += _D[r, j] * K[j, i]
            F[3 + r, i] = h * acc


@njit(cache=True)
def dense_eval(t_old, h, y_old, F, t, out):
    x = (t - t_old) / h
    n = y_old.size
    for i in range(n):
        out[i] = 0.0
    for k in range(N_DENSE):
        row = N_DENSE - 1 - k
        for i in range(n):
            out[i] += F[row, i]
        if k % 2 == 0:
            for i in range(n):
                out[i] *= x
        else:
            for i in range(n):
                out[i] *= 1.0 - x
    for i in range(n):
        out[i] += y_old[i]


@njit(cache=True)
def _initial_step(kind, y0, f0, direction, span, prm, mode, rtol, atol):
    n = y0.size
    d0 = 0.0
    d1 = 0.0
    for i in range(n):
        sc = atol + abs(y0[i]) * rtol
        d0 += (y0[i] / sc) ** 2
        d1 += (f0[i] / sc) ** 2
    d0 = math.sqrt(d0 / n)
    d1 = math.sqrt(d1 / n)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, span)
    y1 = y0 + h0 * direction * f0
    f1 = np.empty(n)
    rhs(kind, y1, prm, mode, f1)
    d2 = 0.0
    for i in range(n):
        sc = atol + abs(y0[i]) * rtol
        d2 += ((f1[i] - f0[i]) / sc) ** 2
    d2 = math.sqrt(d2 / n) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 8.0)
    return min(100.0 * h0, h1, span)


@njit(cache=True)
def _event_fn(kind, y, prm, which):
    ga, gb = switch_values(kind, y, prm)
    return ga if which == 0 else gb


@njit(cache=True)
def integrate(kind, t0, y0, t1, prm, mode, detect, rtol, atol, h_init, h_max, max_steps):
    """Integrate one arc.

    Returns (status, t_end, y_end, new_mode, h_abs, ts, ys, Fs, nfev).
    ``ts``/``ys`` hold the accepted nodes including both ends and ``Fs`` the
    dense-output rows of each step.
    """
    n = y0.size
    lam = prm[P_LAM]
    direction = 1.0 if t1 >= t0 else -1.0
    span = abs(t1 - t0)

    cap = 64
    ts = np.empty(cap)
    ys = np.empty((cap, n))
    Fs = np.empty((cap, N_DENSE, n))
    ts[0] = t0
    ys[0] = y0
    nst = 0

    K = np.empty((16, n))
    tmp = np.empty(n)
    y = y0.copy()
    f = np.empty(n)
    y_new = np.empty(n)
    f_new = np.empty(n)
    y_ev = np.empty(n)
    f_ev = np.empty(n)
    F = np.empty((N_DENSE, n))
    rhs(kind, y, prm, mode, f)
    nfev = 1
    t = t0
    status = STATUS_DONE
    new_mode = mode

    if span == 0.0:
        return status, t, y, mode, h_init, ts[:1], ys[:1], Fs[:0], nfev

    if h_init > 0.0:
        h_abs = h_init
    else:
        h_abs = _initial_step(kind, y, f, direction, span, prm, mode, rtol, atol)
        nfev += 1
    h_abs = min(h_abs, h_max)

    while True:
        if direction * (t - t1) >= 0.0:
            status = STATUS_DONE
            break
        if nst >= max_steps:
            status = STATUS_MAX_STEPS
            break
        min_step = 10.0 * abs(np.nextafter(t, direction * np.inf) - t)
        rejected = False
        accepted = False
        while not accepted:
            if h_abs < min_step:
                status = STATUS_STEP_COLLAPSE
                break
            h = h_abs * direction
            t_new = t + h
            if direction * (t_new - t1) > 0.0:
                t_new = t1
            h = t_new - t
            h_abs = abs(h)
            _rk_step(kind, y, f, h, prm, mode, K, y_new, f_new, tmp)
            nfev += N_STAGES
            err = _error_norm(K, h, y, y_new, rtol, atol)
            if err < 1.0:
                if err == 0.0:
                    factor = MAX_FACTOR
                else:
                    factor = min(MAX_FACTOR, SAFETY * err ** ERR_EXP)
                if rejected:
                    factor = min(1.0, factor)
                h_next = min(h_abs * factor, h_max)
                accepted = True
            else:
                h_abs *= max(MIN_FACTOR, SAFETY * err ** ERR_EXP)
                rejected = True
        if not accepted:
            break

        # admissibility
        if kind == KIND_CANONICAL or kind == KIND_TRACK:
            if y_new[6] <= prm[P_MDRY] or (kind == KIND_TRACK and y_new[13] <= prm[P_MDRY]):
                status = STATUS_FUEL
                break
            if _norm3(y_new, 0) <= prm[P_RMIN]:
                status = STATUS_RADIUS
                break

        event = False
        if detect:
            ga, gb = switch_values(kind, y_new, prm)
            if not _consistent(mode, ga, gb):
                event = True
                if mode == 0:
                    which = 0
                    new_mode = 1 if lam >= 1.0 else 2
                elif mode == 1:
                    which = 1
                    new_mode = 0 if lam >= 1.0 else 2
                elif ga < 0.0:
                    which = 0
                    new_mode = 0
                else:
                    which = 1
                    new_mode = 1

        if event:
            # Illinois iteration on the exact shortened step
            g_lo = _event_fn(kind, y, prm, which)
            g_hi = _event_fn(kind, y_new, prm, which)
            th_lo = 0.0
            th_hi = 1.0
            th = 1.0
            side = 0
            for _ in range(100):
                if g_hi == g_lo:
                    th = 0.5 * (th_lo + th_hi)
                else:
                    th = (th_lo * g_hi - th_hi * g_lo) / (g_hi - g_lo)
                if not (th_lo < th < th_hi):
                    th = 0.5 * (th_lo + th_hi)
                _rk_step(kind, y, f, th * h, prm, mode, K, y_ev, f_ev, tmp)
                nfev += N_STAGES
                g = _event_fn(kind, y_ev, prm, which)
                if g == 0.0 or abs(g) < 1e-15:
                    break
                if (g > 0.0) == (g_hi > 0.0):
                    th_hi = th
                    g_hi = g
                    if side == 1:
                        g_lo *= 0.5
                    side = 1
                else:
                    th_lo = th
                    g_lo = g
                    if side == -1:
                        g_hi *= 0.5
                    side = -1
                if (th_hi - th_lo) * abs(h) <= 4e-16 * max(1.0, abs(t)):
                    break
            h_ev = th * h
            _rk_step(kind, y, f, h_ev, prm, mode, K, y_ev, f_ev, tmp)
            nfev += N_STAGES
            _dense_coeffs(kind, y, y_ev, f_ev, h_ev, prm, mode, K, F, tmp)
            nfev += 3
            if nst + 2 > cap:
                ts, ys, Fs, cap = _grow(ts, ys, Fs, cap)
            Fs[nst] = F
            nst += 1
            t = t + h_ev
            ts[nst] = t
            ys[nst] = y_ev
            y[:] = y_ev
            status = STATUS_EVENT
            h_abs = max(h_abs, abs(h_ev))
            break

        _dense_coeffs(kind, y, y_new, f_new, h, prm, mode, K, F, tmp)
        nfev += 3
        if nst + 2 > cap:
            ts, ys, Fs, cap = _grow(ts, ys, Fs, cap)
        Fs[nst] = F
        nst += 1
        t = t_new
        ts[nst] = t
        ys[nst] = y_new
        y[:] = y_new
        f[:] = f_new
        h_abs = h_next

    return status, t, y, new_mode, h_abs, ts[:nst + 1], ys[:nst + 1], Fs[:nst], nfev


@njit(cache=True)
def _grow(ts, ys, Fs, cap):
    new_cap = cap * 2
    ts2 = np.empty(new_cap)
    ys2 = np.empty((new_cap, ys.shape[1]))
    Fs2 = np.empty((new_cap, N_DENSE, ys.shape[1]))
    ts2[:cap] = ts
    ys2[:cap] = ys
    Fs2[:cap] = Fs
    return ts2, ys2, Fs2, new_cap


@njit(cache=True)
def dense_eval_many(t_old, h, y_old, F, idx, tq, out):
    """Evaluate stored steps ``idx[j]`` at times ``tq[j]`` into ``out[j]``."""
    for j in range(tq.size):
        k = idx[j]
        dense_eval(t_old[k], h[k], y_old[k], F[k], tq[j], out[j])
