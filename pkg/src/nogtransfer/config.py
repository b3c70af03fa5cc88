"""
Run configuration: a YAML problem file with explicit units.

Every quantity carries its unit in the key name (``thrust_N``, ``a_km``,
``duration_h`` ...). Loading validates each field and reports the dotted
path of the first offending one, so a malformed file fails with a message
such as ``spacecraft.isp_s: must be a positive number``.
"""

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .dynamics import EngineParams, OrbitalSystem
from .nominal_solver import BoundaryProblem, FixedEquinoctial, fixed_position_velocity
from .units_frames import (
    G0,
    CanonicalUnits,
    ClassicalElements,
    coe_to_cartesian,
    meoe_to_cartesian_array,
)

MEOE_NAMES = ("P", "ex", "ey", "hx", "hy", "l")


class ConfigError(ValueError):
    def __init__(self, field_path, message):
        super().__init__(f"{field_path}: {message}")
        self.field = field_path


def _section(raw, name, required=True):
    val = raw.get(name)
    if val is None:
        if required:
            raise ConfigError(name, "missing section")
        return {}
    if not isinstance(val, dict):
        raise ConfigError(name, "must be a mapping")
    return val


def _num(sec, path, key, default=None, positive=False, nonneg=False):
    full = f"{path}.{key}"
    if key not in sec or sec[key] is None:
        if default is None:
            raise ConfigError(full, "missing")
        return float(default)
    val = sec[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(full, f"must be a number, got {val!r}")
    val = float(val)
    if not math.isfinite(val):
        raise ConfigError(full, "must be finite")
    if positive and val <= 0:
        raise ConfigError(full, "must be a positive number")
    if nonneg and val < 0:
        raise ConfigError(full, "must be non-negative")
    return val


def _int(sec, path, key, default, minimum=0):
    full = f"{path}.{key}"
    val = sec.get(key, default)
    if isinstance(val, bool) or not isinstance(val, int):
        raise ConfigError(full, f"must be an integer, got {val!r}")
    if val < minimum:
        raise ConfigError(full, f"must be >= {minimum}")
    return val


def _choice(sec, path, key, default, options):
    val = sec.get(key, default)
    if val not in options:
        raise ConfigError(f"{path}.{key}", f"must be one of {', '.join(map(str, options))}")
    return val


@dataclass(frozen=True)
class SolveOptions:
    guess: str = "target"
    seed: int = 0
    starts: int = 64
    lambda_step: float = 0.1
    lambda_min_step: float = 1e-4
    tol: float = 1e-10
    final_tol: float = 1e-11
    workers: int = 1
    thrust_start_N: float = None


@dataclass(frozen=True)
class CheckOptions:
    kappa: float = 20.0
    extended: bool = False


@dataclass(frozen=True)
class GainOptions:
    t_s_h: float = None
    route: str = "stm"
    include_full: bool = False


@dataclass(frozen=True)
class SimulateOptions:
    eps: tuple = tuple(np.linspace(0.0, 1e-4, 11))
    eta: tuple = (1.0,) * 7
    cycle_fraction: float = 1e-3
    workers: int = 1


@dataclass(frozen=True)
class RunConfig:
    path: Path
    text: str
    units: CanonicalUnits
    mu_km3s2: float
    thrust_N: float
    isp_s: float
    g0: float
    mass_kg: float
    dry_mass_kg: float
    initial: dict
    target: dict
    active: tuple
    duration_h: float
    output_dir: Path
    solve: SolveOptions = field(default_factory=SolveOptions)
    check: CheckOptions = field(default_factory=CheckOptions)
    gains: GainOptions = field(default_factory=GainOptions)
    simulate: SimulateOptions = field(default_factory=SimulateOptions)

    @property
    def digest(self):
        """SHA-256 of the file contents, truncated to 16 hex digits."""
        return hashlib.sha256(self.text.encode()).hexdigest()[:16]

    def header_lines(self):
        u = self.units
        return [f"config_hash={self.digest}",
                f"units: DU={u.length_unit!r} km, TU={u.time_unit!r} s, MU={u.mass_unit!r} kg, "
                f"mu=1 DU^3/TU^2"]

    # --- derived problem objects
    @property
    def mu(self):
        return self.units.mu_canonical(self.mu_km3s2)

    def engine(self):
        u = self.units
        return EngineParams(u.thrust(self.thrust_N), u.beta(self.isp_s, self.g0),
                            self.dry_mass_kg / u.mass_unit)

    def system(self):
        return OrbitalSystem(self.engine(), self.mu)

    def x0(self):
        u = self.units
        ini = self.initial
        el = ClassicalElements.from_degrees(ini["a_km"] / u.length_unit, ini["e"], ini["i_deg"],
                                            ini["omega_deg"], ini["raan_deg"], ini["f_deg"])
        r, v = coe_to_cartesian(el, self.mu)
        return np.concatenate([r, v, [self.mass_kg / u.mass_unit]])

    def target_meoe(self):
        t = self.target
        return np.array([t["P_km"] / self.units.length_unit, t["ex"], t["ey"], t["hx"], t["hy"],
                         math.radians(t["l_deg"])])

    @property
    def tf(self):
        return self.units.hours(self.duration_h)

    def boundary_problem(self):
        system = self.system()
        goal = self.target_meoe()
        if len(self.active) == 6:
            x = meoe_to_cartesian_array(np.concatenate([goal, [1.0]]), self.mu)
            constraint = fixed_position_velocity(x[:3], x[3:6])
        else:
            idx = [MEOE_NAMES.index(name) for name in self.active]
            constraint = FixedEquinoctial(idx, goal[idx], self.mu)
        return BoundaryProblem(self.x0(), constraint, 0.0, self.tf, system,
                               meta={"target_meoe": list(map(float, goal))})


def parse_config(text, path=Path("<string>"), output_dir=None):
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError("<file>", "top level must be a mapping")

    us = _section(raw, "units")
    length = _num(us, "units", "length_km", positive=True)
    mu_km = _num(us, "units", "mu_km3s2", positive=True)

    sc = _section(raw, "spacecraft")
    thrust = _num(sc, "spacecraft", "thrust_N", positive=True)
    isp = _num(sc, "spacecraft", "isp_s", positive=True)
    g0 = _num(sc, "spacecraft", "g0_m_s2", default=G0, positive=True)
    mass = _num(sc, "spacecraft", "mass_kg", positive=True)
    dry = _num(sc, "spacecraft", "dry_mass_kg", positive=True)
    if dry >= mass:
        raise ConfigError("spacecraft.dry_mass_kg", "must be below mass_kg")
    mass_unit = _num(us, "units", "mass_kg", default=mass, positive=True)
    units = CanonicalUnits.from_mu(length, mu_km, mass_unit)

    io_ = _section(raw, "initial_orbit")
    initial = {"a_km": _num(io_, "initial_orbit", "a_km", positive=True),
               "e": _num(io_, "initial_orbit", "e", nonneg=True)}
    for key in ("i_deg", "omega_deg", "raan_deg", "f_deg"):
        initial[key] = _num(io_, "initial_orbit", key)
    if initial["e"] >= 1.0:
        raise ConfigError("initial_orbit.e", "only elliptic orbits are supported")
    if not 0.0 <= initial["i_deg"] < 180.0:
        raise ConfigError("initial_orbit.i_deg", "must lie in [0, 180)")

    tg = _section(raw, "target")
    target = {"P_km": _num(tg, "target", "P_km", positive=True)}
    for key in ("ex", "ey", "hx", "hy"):
        target[key] = _num(tg, "target", key, default=0.0)
    target["l_deg"] = _num(tg, "target", "l_deg")
    if target["ex"] ** 2 + target["ey"] ** 2 >= 1.0:
        raise ConfigError("target.ex", "eccentricity vector must have norm below 1")
    active = tg.get("active", list(MEOE_NAMES))
    if (not isinstance(active, list) or not active
            or any(a not in MEOE_NAMES for a in active) or len(set(active)) != len(active)):
        raise ConfigError("target.active", f"must be a non-empty subset of {list(MEOE_NAMES)}")
    active = tuple(a for a in MEOE_NAMES if a in active)

    tr = _section(raw, "transfer")
    duration = _num(tr, "transfer", "duration_h", positive=True)

    so = _section(raw, "solve", required=False)
    solve = SolveOptions(
        guess=_choice(so, "solve", "guess", "target", ("target", "random")),
        seed=_int(so, "solve", "seed", 0),
        starts=_int(so, "solve", "starts", 64, 1),
        lambda_step=_num(so, "solve", "lambda_step", 0.1, positive=True),
        lambda_min_step=_num(so, "solve", "lambda_min_step", 1e-4, positive=True),
        tol=_num(so, "solve", "tol", 1e-10, positive=True),
        final_tol=_num(so, "solve", "final_tol", 1e-11, positive=True),
        workers=_int(so, "solve", "workers", 1, 1),
        thrust_start_N=(_num(so, "solve", "thrust_start_N", positive=True)
                        if so.get("thrust_start_N") is not None else None),
    )
    if solve.guess == "target" and len(active) != 6:
        raise ConfigError("solve.guess", "target continuation needs all six elements active")

    ch = _section(raw, "check", required=False)
    kappa = _num(ch, "check", "kappa", 20.0, positive=True)
    if kappa < 1.0:
        raise ConfigError("check.kappa", "must be >= 1")
    extended = ch.get("extended", False)
    if not isinstance(extended, bool):
        raise ConfigError("check.extended", "must be true or false")
    check = CheckOptions(kappa, extended)

    gn = _section(raw, "gains", required=False)
    t_s_h = gn.get("t_s_h")
    if t_s_h is not None:
        t_s_h = _num(gn, "gains", "t_s_h", positive=True)
        if t_s_h >= duration:
            raise ConfigError("gains.t_s_h", "must be below transfer.duration_h")
    full = gn.get("include_full", False)
    if not isinstance(full, bool):
        raise ConfigError("gains.include_full", "must be true or false")
    gains = GainOptions(t_s_h, _choice(gn, "gains", "route", "stm", ("stm", "riccati")), full)

    sm = _section(raw, "simulate", required=False)
    eps = sm.get("eps", {"start": 0.0, "stop": 1e-4, "count": 11})
    if isinstance(eps, dict):
        lo = _num(eps, "simulate.eps", "start", nonneg=True)
        hi = _num(eps, "simulate.eps", "stop", nonneg=True)
        count = _int(eps, "simulate.eps", "count", 11, 1)
        eps = tuple(float(v) for v in np.linspace(lo, hi, count))
    elif isinstance(eps, list) and eps and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) and v >= 0 for v in eps):
        eps = tuple(float(v) for v in eps)
    else:
        raise ConfigError("simulate.eps", "must be a list of non-negative numbers "
                          "or a mapping with start, stop, count")
    eta = sm.get("eta", [1.0] * 7)
    if (not isinstance(eta, list) or len(eta) != 7
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in eta)):
        raise ConfigError("simulate.eta", "must list 7 numbers (P, ex, ey, hx, hy, l, m)")
    simulate = SimulateOptions(
        eps, tuple(float(v) for v in eta),
        _num(sm, "simulate", "cycle_fraction", 1e-3, positive=True),
        _int(sm, "simulate", "workers", 1, 1))
    if simulate.cycle_fraction >= 1.0:
        raise ConfigError("simulate.cycle_fraction", "must be below 1")

    out = raw.get("output_dir", "run")
    if not isinstance(out, str) or not out:
        raise ConfigError("output_dir", "must be a path string")
    base = Path(path).parent if str(path) != "<string>" else Path(".")
    out_dir = Path(output_dir) if output_dir is not None else (base / out).resolve()

    return RunConfig(Path(path), text, units, mu_km, thrust, isp, g0, mass, dry, initial,
                     target, active, duration, out_dir, solve, check, gains, simulate)


def load_config(path, output_dir=None):
    path = Path(path)
    if not path.is_file():
        raise ConfigError("<file>", f"{path} does not exist")
    return parse_config(path.read_text(), path, output_dir)
