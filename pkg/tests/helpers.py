"""Shared numeric oracles for the test suite."""

import numpy as np

from ctlio.spline import SplineTrajectory


def numerical_jacobian(f, x, eps=1e-6):
    """Central-difference Jacobian of f: R^n -> R^m at x."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(f(x))
    J = np.zeros((f0.size, x.size))
    for i in range(x.size):
        dx = np.zeros_like(x)
        dx[i] = eps
        J[:, i] = (np.atleast_1d(f(x + dx)) - np.atleast_1d(f(x - dx))) / (2 * eps)
    return J


def random_trajectory(rng, dt=0.02, n_increments=7, rot_scale=0.1, pos_scale=0.05):
    tr = SplineTrajectory.initial(0.0, dt, n_increments=n_increments)
    tr.t0 = -(n_increments - 3) * dt
    tr.anchor_R = rand_rotation(rng)
    tr.anchor_p = rng.normal(size=3)
    tr.d_rot = rng.normal(scale=rot_scale, size=(n_increments, 3))
    tr.d_pos = rng.normal(scale=pos_scale, size=(n_increments, 3))
    tr._base_cache.clear()
    return tr


def rand_rotation(rng):
    from ctlio.lie import so3_exp

    v = rng.normal(size=3)
    v = v / np.linalg.norm(v) * rng.uniform(0, np.pi * 0.9)
    return so3_exp(v)


def rand_unit(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)
