"""
Vector fields, Hamiltonians, the maximum-condition control law and the
second-derivative blocks of the maximized Hamiltonian.

The working chart for everything that needs derivatives is Cartesian:
x = (r, v, m), p = (p_r, p_v, p_m), with the cost multiplier fixed at -1.
An extremal point is a flat 14-vector ``z = (x, p)``.

With tau = p_v/|p_v| substituted, the Hamiltonian splits as H = H0 + rho*H1:

    H0 = p_r.v - mu p_v.r/|r|^3
    H1 = u_max |p_v|/m - beta u_max p_m - 1
"""

from dataclasses import dataclass

import numpy as np

from . import _integrator as _ig
from .units_frames import (
    cartesian_to_meoe_array,
    meoe_to_cartesian_array,
    rtn_basis,
)

N_STATE = 7
CARTESIAN = "cartesian"
MEOE = "meoe"


class DynamicsError(ValueError):
    """Raised for inadmissible states or undefined controls."""


@dataclass(frozen=True)
class EngineParams:
    """Engine constants in canonical units (u_max in MU*DU/TU^2, beta in TU/DU)."""

    u_max: float
    beta: float
    m_dry: float

    def __post_init__(self):
        for name in ("u_max", "beta", "m_dry"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class SpacecraftState:
    """Seven state components tagged with their chart."""

    chart: str
    values: np.ndarray

    def __post_init__(self):
        if self.chart not in (CARTESIAN, MEOE):
            raise ValueError(f"unknown chart {self.chart!r}")
        arr = np.asarray(self.values, dtype=float).reshape(N_STATE)
        object.__setattr__(self, "values", arr)

    @property
    def m(self):
        return float(self.values[6])

    def to_cartesian(self, mu=1.0):
        if self.chart == CARTESIAN:
            return self
        return SpacecraftState(CARTESIAN, meoe_to_cartesian_array(self.values, mu))

    def to_meoe(self, mu=1.0, l_ref=None):
        if self.chart == MEOE:
            return self
        return SpacecraftState(MEOE, cartesian_to_meoe_array(self.values, mu, l_ref=l_ref))

    def check_admissible(self, m_dry=0.0, r_min=0.0, mu=1.0):
        c = self.to_cartesian(mu).values
        r, v = c[:3], c[3:6]
        if c[6] < m_dry:
            raise DynamicsError(f"mass {c[6]:.6g} below dry mass {m_dry:.6g}")
        rn = np.linalg.norm(r)
        if rn <= r_min or rn == 0.0:
            raise DynamicsError(f"radius {rn:.6g} not above {r_min:.6g}")
        if np.linalg.norm(np.cross(r, v)) == 0.0:
            raise DynamicsError("rectilinear state (r x v = 0)")


@dataclass(frozen=True)
class ControlSample:
    rho: float
    tau: np.ndarray


def _as_values(x, chart):
    if isinstance(x, SpacecraftState):
        return x.values, x.chart
    return np.asarray(x, dtype=float), chart


# --------------------------------------------------------------------------
# vector fields


def drift_field(x, mu=1.0, chart=CARTESIAN):
    """Uncontrolled two-body field f0 in either chart."""
    vals, chart = _as_values(x, chart)
    out = np.zeros(N_STATE)
    if chart == CARTESIAN:
        r = vals[:3]
        rn = np.linalg.norm(r)
        if rn == 0.0:
            raise DynamicsError("zero radius")
        out[:3] = vals[3:6]
        out[3:6] = -mu * r / rn**3
        return out
    P, ex, ey, _, _, L = vals[:6]
    if P <= 0.0:
        raise DynamicsError("non-positive semi-latus rectum")
    w = 1.0 + ex * np.cos(L) + ey * np.sin(L)
    out[5] = np.sqrt(mu * P) * (w / P) ** 2
    return out


def _gauss_matrix(vals, mu):
    """Rows map an RTN acceleration to rates of (P, ex, ey, hx, hy, l)."""
    P, ex, ey, hx, hy, L = vals[:6]
    sL, cL = np.sin(L), np.cos(L)
    w = 1.0 + ex * cL + ey * sL
    s2 = 1.0 + hx * hx + hy * hy
    k = np.sqrt(P / mu)
    z = hx * sL - hy * cL
    return k * np.array([
        [0.0, 2.0 * P / w, 0.0],
        [sL, ((w + 1.0) * cL + ex) / w, -z * ey / w],
        [-cL, ((w + 1.0) * sL + ey) / w, z * ex / w],
        [0.0, 0.0, s2 * cL / (2.0 * w)],
        [0.0, 0.0, s2 * sL / (2.0 * w)],
        [0.0, 0.0, z / w],
    ])


def thrust_field(x, tau, eng, mu=1.0, chart=CARTESIAN):
    """Full-thrust field f1.

    ``tau`` is an inertial unit vector in the Cartesian chart and an RTN unit
    vector in the MEOE chart.
    """
    vals, chart = _as_values(x, chart)
    tau = np.asarray(tau, dtype=float)
    if abs(np.linalg.norm(tau) - 1.0) > 1e-12:
        raise DynamicsError("thrust direction must be a unit vector")
    m = vals[6]
    if m <= eng.m_dry:
        raise DynamicsError(f"fuel exhausted: m={m:.6g} <= m_dry={eng.m_dry:.6g}")
    out = np.zeros(N_STATE)
    acc = eng.u_max / m * tau
    if chart == CARTESIAN:
        out[3:6] = acc
    else:
        out[:6] = _gauss_matrix(vals, mu) @ acc
    out[6] = -eng.beta * eng.u_max
    return out


def state_rate(x, rho, tau, eng, mu=1.0, chart=CARTESIAN):
    """f0 + rho*f1."""
    out = drift_field(x, mu, chart)
    if rho != 0.0:
        out = out + rho * thrust_field(x, tau, eng, mu, chart)
    return out


def rtn_direction(r, v, tau_inertial):
    """Express an inertial direction in the local RTN frame."""
    return rtn_basis(r, v).T @ np.asarray(tau_inertial, dtype=float)


# --------------------------------------------------------------------------
# Hamiltonian quantities (Cartesian chart)


def _split(z):
    z = np.asarray(z, dtype=float)
    return z[:3], z[3:6], z[6], z[7:10], z[10:13], z[13]


def _pv_norm(pv):
    n = np.linalg.norm(pv)
    if n == 0.0:
        raise DynamicsError("primer vector vanishes; thrust direction undefined")
    return n


def switching_function(z, eng):
    """H1 = u_max |p_v|/m - beta u_max p_m - 1."""
    _, _, m, _, pv, pm = _split(z)
    return eng.u_max * _pv_norm(pv) / m - eng.beta * eng.u_max * pm - 1.0


def optimal_control(z, eng):
    """Maximum-condition control: primer direction, bang-bang throttle.

    An exact zero of H1 resolves to coasting; propagation never relies on this
    because it tracks the regime through event detection.
    """
    pv = _split(z)[4]
    tau = pv / _pv_norm(pv)
    rho = 1.0 if switching_function(z, eng) > 0.0 else 0.0
    return ControlSample(rho, tau)


def h0(z, mu=1.0):
    r, v, _, pr, pv, _ = _split(z)
    return float(pr @ v - mu * (pv @ r) / np.linalg.norm(r) ** 3)


def hamiltonian(z, u, eng, mu=1.0):
    """H = H0 + rho*H1 for the control sample ``u`` (cost multiplier -1)."""
    r, v, m, pr, pv, pm = _split(z)
    tau = np.asarray(u.tau, dtype=float)
    h1_tau = eng.u_max * (pv @ tau) / m - eng.beta * eng.u_max * pm - 1.0
    return h0(z, mu) + u.rho * h1_tau


def canonical_rhs(z, rho, eng, mu=1.0):
    """Right-hand side of the canonical system for a given throttle."""
    r, v, m, pr, pv, pm = _split(z)
    rn = np.linalg.norm(r)
    pvn = _pv_norm(pv)
    out = np.empty(14)
    out[:3] = v
    out[3:6] = -mu * r / rn**3 + rho * eng.u_max * pv / (pvn * m)
    out[6] = -eng.beta * eng.u_max * rho
    out[7:10] = mu * pv / rn**3 - 3.0 * mu * (pv @ r) * r / rn**5
    out[10:13] = -pr
    out[13] = rho * eng.u_max * pvn / m**2
    return out


def hamiltonian_gradient(z, rho, eng, mu=1.0):
    """(dH/dx, dH/dp) of the maximized Hamiltonian at fixed throttle."""
    f = canonical_rhs(z, rho, eng, mu)
    return -f[7:], f[:7]


def hessian_blocks(z, rho, eng, mu=1.0):
    """Return (H_px, H_pp, H_xx) with H_px[i, j] = d^2H / dp_i dx_j.

    These are the blocks of the linearized canonical flow
    d(dx)/dt = H_px dx + H_pp dp,  d(dp)/dt = -H_xx dx - H_px^T dp.
    """
    r, v, m, pr, pv, pm = _split(z)
    rn = np.linalg.norm(r)
    pvn = _pv_norm(pv)
    u = eng.u_max
    eye = np.eye(3)
    s = pv @ r

    H_px = np.zeros((7, 7))
    H_px[0:3, 3:6] = eye
    H_px[3:6, 0:3] = -mu * (eye / rn**3 - 3.0 * np.outer(r, r) / rn**5)
    H_px[3:6, 6] = -rho * u * pv / (pvn * m * m)

    H_pp = np.zeros((7, 7))
    H_pp[3:6, 3:6] = rho * u * (eye * pvn**2 - np.outer(pv, pv)) / (m * pvn**3)

    H_xx = np.zeros((7, 7))
    H_xx[0:3, 0:3] = (3.0 * mu * (np.outer(pv, r) + np.outer(r, pv) + s * eye) / rn**5
                      - 15.0 * mu * s * np.outer(r, r) / rn**7)
    H_xx[6, 6] = 2.0 * rho * u * pvn / m**3
    return H_px, H_pp, H_xx


def h1_gradients(z, eng):
    """Gradients of H1 with respect to x and p.

    dH1/dp is the thrust field f1 (with tau = p_v/|p_v|); dH1/dx only has a
    mass component.
    """
    _, _, m, _, pv, _ = _split(z)
    pvn = _pv_norm(pv)
    u = eng.u_max
    gx = np.zeros(7)
    gx[6] = -u * pvn / m**2
    gp = np.zeros(7)
    gp[3:6] = u * pv / (pvn * m)
    gp[6] = -eng.beta * u
    return gx, gp


def h1_dot(z, eng):
    """Time derivative of H1 along the flow (independent of the throttle)."""
    _, _, m, pr, pv, _ = _split(z)
    return -eng.u_max * (pv @ pr) / (_pv_norm(pv) * m)


# --------------------------------------------------------------------------


class OrbitalSystem:
    """Two-body low-thrust problem in the Cartesian chart.

    Bundles the analytic quantities that the generic variational and gain
    machinery needs. The LQ toy in :mod:`nogtransfer.lqtoy` implements the
    same interface.
    """

    n = N_STATE

    def __init__(self, eng, mu=1.0, r_min=0.0):
        self.eng = eng
        self.mu = float(mu)
        self.r_min = float(r_min)

    def params(self, lam=1.0):
        return _ig.make_params(self.mu, self.eng.u_max, self.eng.beta, lam,
                               self.eng.m_dry, self.r_min)

    def rhs(self, z, rho):
        return canonical_rhs(z, rho, self.eng, self.mu)

    def hessian_blocks(self, z, rho):
        return hessian_blocks(z, rho, self.eng, self.mu)

    def h1(self, z):
        return switching_function(z, self.eng)

    def h1_gradients(self, z):
        return h1_gradients(z, self.eng)

    def h1_dot(self, z):
        return h1_dot(z, self.eng)

    def hamiltonian(self, z, rho):
        return h0(z, self.mu) + rho * self.h1(z)

    def control(self, z):
        return optimal_control(z, self.eng)
