from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

from nogtransfer import cli
from nogtransfer.archive import load_nominal
from nogtransfer.config import load_config
from nogtransfer.dynamics import EngineParams, OrbitalSystem
from nogtransfer.variational import propagate_variational, terminal_values

ROOT = Path(__file__).resolve().parents[1]
DESK = ROOT / "configs" / "desk.yaml"
GEO_FULL = ROOT / "configs" / "geo_full.yaml"


@pytest.fixture(scope="session")
def desk_dir(tmp_path_factory):
    """Archive of the desk-scale nominal, produced through the CLI once per session."""
    out = tmp_path_factory.mktemp("desk")
    assert cli.main(["solve", str(DESK), "-o", str(out)]) == 0
    return out


@pytest.fixture(scope="session")
def desk(desk_dir):
    cfg = load_config(DESK, desk_dir)
    traj, bp, doc = load_nominal(desk_dir, cfg)
    hist = propagate_variational(traj, terminal_values(bp.constraint, traj.zf))
    return SimpleNamespace(cfg=cfg, traj=traj, bp=bp, hist=hist, doc=doc, dir=desk_dir,
                           system=bp.system, mu=bp.system.mu)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def small_system():
    """Engine and system of roughly desk size for fast propagation tests."""
    eng = EngineParams(0.15, 0.16, 0.5)
    return OrbitalSystem(eng, 1.0)
