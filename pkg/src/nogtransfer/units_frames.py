"""
Canonical units and orbital-element conversions.

Three charts are used throughout the package: classical orbital elements
(COE), inertial Cartesian position/velocity, and the modified equinoctial
set (P, ex, ey, hx, hy, l) with a cumulative true longitude ``l``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi
G0 = 9.80665  # m/s^2, only a default; configs may pass their own value


def wrap_2pi(angle: float) -> float:
    """Wrap an angle into [0, 2*pi)."""
    out = math.fmod(angle, TWO_PI)
    if out < 0.0:
        out += TWO_PI
    return out


def angle_diff(a: float, b: float) -> float:
    """Signed difference a - b reduced to (-pi, pi]."""
    d = math.fmod(a - b, TWO_PI)
    if d > math.pi:
        d -= TWO_PI
    elif d <= -math.pi:
        d += TWO_PI
    return d


@dataclass(frozen=True)
class CanonicalUnits:
    """Scale factors from canonical to physical units.

    ``length_unit`` is km per DU, ``time_unit`` is s per TU and ``mass_unit``
    is kg per MU. The time unit is tied to the length unit through ``mu`` so
    that the gravitational parameter is exactly one in canonical units.
    """

    length_unit: float
    time_unit: float
    mass_unit: float

    def __post_init__(self):
        if min(self.length_unit, self.time_unit, self.mass_unit) <= 0.0:
            raise ValueError("canonical scale factors must be strictly positive")

    @classmethod
    def from_mu(cls, length_km: float, mu_km3s2: float, mass_kg: float) -> "CanonicalUnits":
        if mu_km3s2 <= 0.0:
            raise ValueError("mu must be positive")
        return cls(length_km, math.sqrt(length_km**3 / mu_km3s2), mass_kg)

    @property
    def velocity_unit(self) -> float:
        """km/s per DU/TU."""
        return self.length_unit / self.time_unit

    @property
    def accel_unit(self) -> float:
        """m/s^2 per DU/TU^2."""
        return 1000.0 * self.length_unit / self.time_unit**2

    def mu_canonical(self, mu_km3s2: float) -> float:
        return mu_km3s2 * self.time_unit**2 / self.length_unit**3

    def thrust(self, newtons: float) -> float:
        """Thrust in MU*DU/TU^2."""
        return newtons / (self.mass_unit * self.accel_unit)

    def beta(self, isp_s: float, g0: float = G0) -> float:
        """Mass-flow coefficient 1/(Isp*g0) in TU/DU."""
        return 1000.0 * self.velocity_unit / (isp_s * g0)

    def hours(self, h: float) -> float:
        return h * 3600.0 / self.time_unit

    def to_hours(self, t: float) -> float:
        return t * self.time_unit / 3600.0

    def scale_state(self, r_km, v_kms, m_kg) -> np.ndarray:
        """Physical Cartesian state to the canonical 7-vector (r, v, m)."""
        return np.concatenate([
            np.asarray(r_km, float) / self.length_unit,
            np.asarray(v_kms, float) / self.velocity_unit,
            [m_kg / self.mass_unit],
        ])

    def unscale_state(self, x):
        x = np.asarray(x, float)
        return (x[0:3] * self.length_unit, x[3:6] * self.velocity_unit,
                float(x[6] * self.mass_unit))

    def header(self) -> dict:
        return {"DU_km": self.length_unit, "TU_s": self.time_unit, "MU_kg": self.mass_unit}


@dataclass(frozen=True)
class ClassicalElements:
    a: float
    e: float
    i: float
    omega: float
    raan: float
    f: float

    def __post_init__(self):
        if self.e < 0.0:
            raise ValueError("eccentricity must be non-negative")
        if not 0.0 <= self.i <= math.pi:
            raise ValueError("inclination must lie in [0, pi]")

    @property
    def p(self) -> float:
        return self.a * (1.0 - self.e**2)

    @classmethod
    def from_degrees(cls, a, e, i_deg, omega_deg, raan_deg, f_deg):
        return cls(a, e, math.radians(i_deg), math.radians(omega_deg),
                   math.radians(raan_deg), math.radians(f_deg))

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.e, self.i, self.omega, self.raan, self.f])


@dataclass(frozen=True)
class EquinoctialElements:
    P: float
    ex: float
    ey: float
    hx: float
    hy: float
    l: float
    m: float = 1.0

    def __post_init__(self):
        if self.P <= 0.0:
            raise ValueError("semi-latus rectum must be positive")

    def as_array(self, with_mass: bool = False) -> np.ndarray:
        vals = [self.P, self.ex, self.ey, self.hx, self.hy, self.l]
        if with_mass:
            vals.append(self.m)
        return np.array(vals, dtype=float)

    @classmethod
    def from_array(cls, arr) -> "EquinoctialElements":
        arr = np.asarray(arr, float)
        m = float(arr[6]) if arr.size > 6 else 1.0
        return cls(*map(float, arr[:6]), m=m)

    @property
    def a(self) -> float:
        return self.P / (1.0 - self.ex**2 - self.ey**2)


def coe_to_cartesian(el: ClassicalElements, mu: float):
    """Position and velocity from classical elements.

    Raises ValueError for a(1 - e^2) <= 0.
    """
    if mu <= 0.0:
        raise ValueError("mu must be positive")
    p = el.p
    if not p > 0.0:
        raise ValueError("degenerate orbit: a(1-e^2) <= 0")
    cf, sf = math.cos(el.f), math.sin(el.f)
    r = p / (1.0 + el.e * cf)
    r_pf = np.array([r * cf, r * sf, 0.0])
    sq = math.sqrt(mu / p)
    v_pf = np.array([-sq * sf, sq * (el.e + cf), 0.0])
    R = _perifocal_to_inertial(el.i, el.omega, el.raan)
    return R @ r_pf, R @ v_pf


def _perifocal_to_inertial(i, omega, raan) -> np.ndarray:
    cO, sO = math.cos(raan), math.sin(raan)
    co, so = math.cos(omega), math.sin(omega)
    ci, si = math.cos(i), math.sin(i)
    return np.array([
        [cO * co - sO * so * ci, -cO * so - sO * co * ci, sO * si],
        [sO * co + cO * so * ci, -sO * so + cO * co * ci, -cO * si],
        [so * si, co * si, ci],
    ])


def cartesian_to_coe(r, v, mu: float, tol: float = 1e-11) -> ClassicalElements:
    """Classical elements from a Cartesian state.

    For circular orbits omega is set to zero and f is the argument of
    latitude; for equatorial orbits raan is set to zero and omega is the
    longitude of periapsis.
    """
    r = np.asarray(r, float)
    v = np.asarray(v, float)
    rn = np.linalg.norm(r)
    if rn == 0.0:
        raise ValueError("zero position vector")
    h = np.cross(r, v)
    hn = np.linalg.norm(h)
    if hn <= tol * rn * max(np.linalg.norm(v), 1e-300):
        raise ValueError("rectilinear orbit: r x v = 0")
    e_vec = np.cross(v, h) / mu - r / rn
    e = float(np.linalg.norm(e_vec))
    p = hn**2 / mu
    a = p / (1.0 - e**2)
    i = math.acos(max(-1.0, min(1.0, h[2] / hn)))
    node = np.array([-h[1], h[0], 0.0])
    nn = np.linalg.norm(node)
    equatorial = nn <= tol * hn
    circular = e <= tol

    if equatorial:
        raan = 0.0
        node_dir = np.array([1.0, 0.0, 0.0])
    else:
        raan = wrap_2pi(math.atan2(node[1], node[0]))
        node_dir = node / nn
    # in-plane basis orthogonal to the node line
    h_hat = h / hn
    q_dir = np.cross(h_hat, node_dir)
    if circular:
        omega = 0.0
        f = wrap_2pi(math.atan2(r @ q_dir, r @ node_dir))
    else:
        omega = wrap_2pi(math.atan2(e_vec @ q_dir, e_vec @ node_dir))
        e_hat = e_vec / e
        f = wrap_2pi(math.atan2(np.cross(e_hat, r) @ h_hat, e_hat @ r))
    return ClassicalElements(a, e, i, omega, raan, f)


def coe_to_meoe(el: ClassicalElements, m: float = 1.0) -> EquinoctialElements:
    if el.i >= math.pi:
        raise ValueError("retrograde equatorial orbit: tan(i/2) undefined")
    p = el.p
    if not p > 0.0:
        raise ValueError("degenerate orbit: a(1-e^2) <= 0")
    lon_peri = el.omega + el.raan
    t = math.tan(el.i / 2.0)
    return EquinoctialElements(
        P=p,
        ex=el.e * math.cos(lon_peri),
        ey=el.e * math.sin(lon_peri),
        hx=t * math.cos(el.raan),
        hy=t * math.sin(el.raan),
        l=el.f + el.omega + el.raan,
        m=m,
    )


def meoe_to_coe(eq: EquinoctialElements) -> ClassicalElements:
    e = math.hypot(eq.ex, eq.ey)
    if e >= 1.0:
        raise ValueError("non-elliptic orbit")
    a = eq.P / (1.0 - e**2)
    tn = math.hypot(eq.hx, eq.hy)
    i = 2.0 * math.atan(tn)
    raan = wrap_2pi(math.atan2(eq.hy, eq.hx)) if tn > 0.0 else 0.0
    lon_peri = math.atan2(eq.ey, eq.ex) if e > 0.0 else raan
    omega = wrap_2pi(lon_peri - raan)
    f = wrap_2pi(eq.l - omega - raan)
    return ClassicalElements(a, e, i, omega, raan, f)


def meoe_to_cartesian(eq, mu: float):
    """Cartesian position/velocity from equinoctial elements (nonsingular form)."""
    if isinstance(eq, EquinoctialElements):
        P, f, g, h, k, L = eq.P, eq.ex, eq.ey, eq.hx, eq.hy, eq.l
    else:
        P, f, g, h, k, L = (float(c) for c in eq[:6])
    cL, sL = math.cos(L), math.sin(L)
    alpha2 = h * h - k * k
    s2 = 1.0 + h * h + k * k
    w = 1.0 + f * cL + g * sL
    r = P / w
    rv = (r / s2) * np.array([
        cL + alpha2 * cL + 2.0 * h * k * sL,
        sL - alpha2 * sL + 2.0 * h * k * cL,
        2.0 * (h * sL - k * cL),
    ])
    sq = math.sqrt(mu / P)
    vv = (-sq / s2) * np.array([
        sL + alpha2 * sL - 2.0 * h * k * cL + g - 2.0 * f * h * k + alpha2 * g,
        -cL + alpha2 * cL + 2.0 * h * k * sL - f + 2.0 * g * h * k + alpha2 * f,
        -2.0 * (h * cL + k * sL + f * h + g * k),
    ])
    return rv, vv


def cartesian_to_meoe(r, v, mu: float, l_ref: float | None = None, m: float = 1.0) -> EquinoctialElements:
    """Equinoctial elements from Cartesian state.

    The true longitude is returned in [0, 2*pi) unless ``l_ref`` is given, in
    which case it is unwrapped to the branch closest to ``l_ref``.
    """
    r = np.asarray(r, float)
    v = np.asarray(v, float)
    rn = np.linalg.norm(r)
    hvec = np.cross(r, v)
    hn = np.linalg.norm(hvec)
    if rn == 0.0 or hn == 0.0:
        raise ValueError("rectilinear or zero-radius state")
    h_hat = hvec / hn
    if h_hat[2] <= -1.0 + 1e-15:
        raise ValueError("retrograde equatorial orbit: tan(i/2) undefined")
    P = hn**2 / mu
    hx = -h_hat[1] / (1.0 + h_hat[2])
    hy = h_hat[0] / (1.0 + h_hat[2])
    # equinoctial frame
    s2 = 1.0 + hx * hx + hy * hy
    fhat = np.array([1.0 + hx * hx - hy * hy, 2.0 * hx * hy, -2.0 * hy]) / s2
    ghat = np.array([2.0 * hx * hy, 1.0 - hx * hx + hy * hy, 2.0 * hx]) / s2
    e_vec = np.cross(v, hvec) / mu - r / rn
    ex = float(e_vec @ fhat)
    ey = float(e_vec @ ghat)
    L = math.atan2(r @ ghat, r @ fhat)
    if l_ref is None:
        L = wrap_2pi(L)
    else:
        L = l_ref + angle_diff(L, l_ref)
    return EquinoctialElements(P, ex, ey, hx, hy, L, m=m)


def cartesian_to_meoe_array(x, mu: float = 1.0, l_ref: float | None = None) -> np.ndarray:
    """7-vector (r, v, m) to 7-vector (P, ex, ey, hx, hy, l, m)."""
    x = np.asarray(x, float)
    eq = cartesian_to_meoe(x[0:3], x[3:6], mu, l_ref=l_ref, m=float(x[6]))
    return eq.as_array(with_mass=True)


def meoe_to_cartesian_array(y, mu: float = 1.0) -> np.ndarray:
    y = np.asarray(y, float)
    r, v = meoe_to_cartesian(y, mu)
    return np.concatenate([r, v, [y[6]]])


def rtn_basis(r, v) -> np.ndarray:
    """Columns are the radial, transverse and normal unit vectors."""
    r = np.asarray(r, float)
    v = np.asarray(v, float)
    rh = r / np.linalg.norm(r)
    nh = np.cross(r, v)
    nh /= np.linalg.norm(nh)
    th = np.cross(nh, rh)
    return np.column_stack([rh, th, nh])
