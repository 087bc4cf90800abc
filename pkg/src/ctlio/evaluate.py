"""Absolute position error between two timestamped trajectories."""

import numpy as np


class NoOverlapError(ValueError):
    """The two trajectories share no timestamps within tolerance."""


def associate(t_ref, t_est, max_dt=0.05):
    """Nearest-neighbor timestamp pairing within max_dt.

    Returns (idx_ref, idx_est) index arrays, one pair per estimate sample
    that found a reference neighbor.
    """
    t_ref = np.asarray(t_ref, dtype=float)
    t_est = np.asarray(t_est, dtype=float)
    order = np.argsort(t_ref)
    ts = t_ref[order]
    pos = np.searchsorted(ts, t_est)
    pos_lo = np.clip(pos - 1, 0, ts.size - 1)
    pos_hi = np.clip(pos, 0, ts.size - 1)
    d_lo = np.abs(t_est - ts[pos_lo])
    d_hi = np.abs(t_est - ts[pos_hi])
    nearest = np.where(d_lo <= d_hi, pos_lo, pos_hi)
    dist = np.minimum(d_lo, d_hi)
    ok = dist <= max_dt
    return order[nearest[ok]], np.flatnonzero(ok)


def ape(t_ref, p_ref, t_est, p_est, max_dt=0.05, align_origin=False):
    """APE statistics {rmse, max, mean} in meters over associated pairs."""
    i_ref, i_est = associate(t_ref, t_est, max_dt)
    if i_ref.size < 2:
        raise NoOverlapError("fewer than 2 associated timestamp pairs")
    a = np.atleast_2d(p_ref)[i_ref]
    b = np.atleast_2d(p_est)[i_est]
    if align_origin:
        b = b + (a[0] - b[0])
    err = np.linalg.norm(a - b, axis=1)
    return {
        "rmse": float(np.sqrt(np.mean(err**2))),
        "max": float(np.max(err)),
        "mean": float(np.mean(err)),
        "pairs": int(err.size),
    }
