"""
Solution archive: the text files one pipeline stage leaves for the next.

    solution.yaml   p0, multipliers, cost, residual, continuation path
    nominal.csv     dense nominal trajectory (canonical units)
    switching.csv   switching table

The trajectory is rebuilt from p0 on load; p0 is stored with repr() so the
rebuilt nominal is bit-identical to the one that was written. The rebuilt
switching times are checked against the table as a consistency guard.
"""

from pathlib import Path

import numpy as np
import yaml

from .extremal import propagate
from .nominal_solver import fuel_used, multipliers, residual_from_final

ARCHIVE_FORMAT = "nogtransfer-solution 1"
NOMINAL_COLUMNS = ("columns: t [TU]; x0..x2 = r [DU]; x3..x5 = v [DU/TU]; x6 = m [MU]; "
                   "p0..p6 = costates of (r, v, m); rho [-]; H1 [-]; H [1/TU]")


class ArchiveError(RuntimeError):
    pass


def _floats(a):
    return [repr(float(v)) for v in np.ravel(a)]


def write_solution(out_dir, cfg, traj, bp, path=(), residual_norm=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    head = cfg.header_lines()
    zf = traj.zf
    res = residual_from_final(bp, zf) if residual_norm is None else None
    doc = {
        "format": ARCHIVE_FORMAT,
        "config_hash": cfg.digest,
        "units": cfg.units.header(),
        "t0_TU": repr(float(traj.t0)),
        "tf_TU": repr(float(traj.tf)),
        "x0": _floats(traj.z0[:7]),
        "p0": _floats(traj.z0[7:]),
        "nu": _floats(multipliers(bp, zf)),
        "residual_norm": repr(float(np.linalg.norm(res) if res is not None else residual_norm)),
        "fuel_MU": repr(fuel_used(traj)),
        "fuel_kg": repr(fuel_used(traj) * cfg.units.mass_unit),
        "switchings": int(len(traj.switching)),
        "burn_arcs": int(len(traj.burn_arcs())),
        "hamiltonian_drift": repr(traj.hamiltonian_drift()),
        "continuation": [{"lambda": repr(float(s.lam)), "residual": repr(float(s.residual_norm)),
                          "iterations": int(s.iterations), "switchings": int(s.switchings)}
                         for s in path],
    }
    (out / "solution.yaml").write_text("".join(f"# {h}\n" for h in head)
                                       + yaml.safe_dump(doc, sort_keys=False))
    (out / "nominal.csv").write_text(traj.to_csv(head + [NOMINAL_COLUMNS]))
    (out / "switching.csv").write_text(traj.switching_csv(
        head + ["columns: i; t_i [TU]; delta_rho [-]; h1dot [1/TU]"]))
    return out


def read_solution(out_dir):
    path = Path(out_dir) / "solution.yaml"
    if not path.is_file():
        raise ArchiveError(f"{path} not found; run 'solve' first")
    doc = yaml.safe_load(path.read_text())
    if not isinstance(doc, dict) or doc.get("format") != ARCHIVE_FORMAT:
        raise ArchiveError(f"{path} is not a solution archive")
    return doc


def _switch_table(out_dir):
    path = Path(out_dir) / "switching.csv"
    if not path.is_file():
        raise ArchiveError(f"{path} not found")
    rows = [line for line in path.read_text().splitlines() if line and not line.startswith("#")]
    return np.array([float(r.split(",")[1]) for r in rows[1:]])


def load_nominal(out_dir, cfg, strict_hash=True):
    """Rebuild (trajectory, boundary problem, archive dict) from an archive."""
    doc = read_solution(out_dir)
    if strict_hash and doc["config_hash"] != cfg.digest:
        raise ArchiveError(f"archive config hash {doc['config_hash']} does not match "
                           f"{cfg.digest}; re-run 'solve' with this config")
    bp = cfg.boundary_problem()
    x0 = np.array([float(v) for v in doc["x0"]])
    p0 = np.array([float(v) for v in doc["p0"]])
    if not np.array_equal(x0, bp.x0):
        raise ArchiveError("archived initial state differs from the configured one")
    traj = propagate(np.concatenate([x0, p0]), float(doc["t0_TU"]), float(doc["tf_TU"]),
                     bp.system)
    stored = _switch_table(out_dir)
    if stored.shape != traj.switching.times.shape or (
            stored.size and np.max(np.abs(stored - traj.switching.times)) > 1e-9):
        raise ArchiveError("re-propagated switching times disagree with switching.csv")
    return traj, bp, doc
