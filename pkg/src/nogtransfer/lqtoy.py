"""
Scalar linear-quadratic test problem with a known conjugate point.

    minimize  1/2 * integral (u^2 - x^2) dt,   x' = u,
    x(t0) and x(tf) fixed.

With the abnormal multiplier at -1 the Hamiltonian is H = p^2/2 + x^2/2, so
x' = p and p' = -x. Seeded at tf with Xq = 0 and Pq = 1, the variational
solution is Xq(t) = sin(t - tf), which first vanishes at tf - pi. The
problem has no control switchings, so it exercises the determinant scan
without any jump logic.
"""

import math

import numpy as np

from .extremal import propagate
from .nominal_solver import FixedComponents
from .variational import propagate_variational, terminal_values


class LQToySystem:
    n = 1
    mu = 1.0

    def rhs(self, z, rho=0.0):
        x, p = z
        return np.array([p, -x])

    def hessian_blocks(self, z, rho=0.0):
        return np.zeros((1, 1)), np.ones((1, 1)), np.ones((1, 1))

    def hamiltonian(self, z, rho=0.0):
        x, p = z
        return 0.5 * (p * p + x * x)

    def h1(self, z):
        return 0.0

    def h1_dot(self, z):
        return 0.0

    def h1_gradients(self, z):
        return np.zeros(1), np.zeros(1)


def conjugate_epoch(tf):
    """Closed-form conjugate epoch closest to tf."""
    return tf - math.pi


def build(x0=1.0, p0=0.3, t0=0.0, tf=5.0):
    """Return (trajectory, variational history) for the toy problem."""
    system = LQToySystem()
    traj = propagate(np.array([x0, p0]), t0, tf, system)
    xf = traj.zf[:1]
    constraint = FixedComponents([0], xf, n=1)
    hist = propagate_variational(traj, terminal_values(constraint, traj.zf))
    return traj, hist
