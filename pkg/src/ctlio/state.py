"""Hybrid estimation state: live spline increments, IMU biases, gravity.

Error-state layout (32 dims):
    0:12   rotational increments of the active window (4 x 3)
    12:24  positional increments (4 x 3)
    24:27  gyro bias
    27:30  accelerometer bias
    30:32  gravity direction tangent
"""

from dataclasses import dataclass

import numpy as np

from .lie import s2_boxminus, s2_boxplus
from .spline import SplineTrajectory

DIM = 32
CR = slice(0, 12)
CP = slice(12, 24)
BW = slice(24, 27)
BA = slice(27, 30)
G = slice(30, 32)


@dataclass
class HybridState:
    traj: SplineTrajectory
    b_w: np.ndarray
    b_a: np.ndarray
    g_dir: np.ndarray  # unit direction of the gravity term in the IMU model
    g_mag: float
    P: np.ndarray  # 32x32 error-state covariance
    stamp: float = 0.0  # time up to which the state has been predicted

    @classmethod
    def initial(cls, traj, g_dir=None, g_mag=9.81, P0=None):
        g_dir = np.array([0.0, 0.0, 1.0]) if g_dir is None else np.asarray(g_dir)
        if P0 is None:
            P0 = np.eye(DIM) * 1e-4
        return cls(traj, np.zeros(3), np.zeros(3), g_dir / np.linalg.norm(g_dir),
                   float(g_mag), np.asarray(P0, dtype=float).copy(),
                   stamp=traj.active_start)

    @property
    def gravity(self):
        """Full gravity vector as it appears in the accelerometer model."""
        return self.g_mag * self.g_dir

    def copy(self):
        tr = self.traj
        traj = SplineTrajectory(
            tr.t0, tr.dt, tr.anchor_R.copy(), tr.anchor_p.copy(),
            tr.d_rot.copy(), tr.d_pos.copy(),
        )
        return HybridState(traj, self.b_w.copy(), self.b_a.copy(),
                           self.g_dir.copy(), self.g_mag, self.P.copy(),
                           self.stamp)

    def boxplus(self, delta):
        """Apply a 32-dim error-state correction in place."""
        delta = np.asarray(delta, dtype=float)
        d_rot, d_pos = self.traj.live_increments()
        self.traj.set_live_increments(
            d_rot + delta[CR].reshape(4, 3), d_pos + delta[CP].reshape(4, 3)
        )
        self.b_w = self.b_w + delta[BW]
        self.b_a = self.b_a + delta[BA]
        self.g_dir = s2_boxplus(self.g_dir, delta[G])
        return self

    def boxminus(self, other):
        """32-dim error-state difference self (-) other (same knot grid)."""
        out = np.empty(DIM)
        d_rot, d_pos = self.traj.live_increments()
        o_rot, o_pos = other.traj.live_increments()
        out[CR] = (d_rot - o_rot).ravel()
        out[CP] = (d_pos - o_pos).ravel()
        out[BW] = self.b_w - other.b_w
        out[BA] = self.b_a - other.b_a
        out[G] = s2_boxminus(self.g_dir, other.g_dir)
        return out


def scatter_spline_jacobian(H, rows, smp, traj, rot_blocks=None, pos_blocks=None):
    """Scatter per-increment Jacobian blocks into live error-state columns.

    rot_blocks / pos_blocks have shape (n, 4, r, 3) giving, per sample and
    local increment j, the derivative of r residual rows. Columns belonging
    to frozen increments are dropped (their Jacobian is zero by contract).
    """
    offset = traj.n_increments - 4
    for j in range(4):
        slot = smp.seg - 1 + j - offset
        live = (slot >= 0) & (slot <= 3)
        if not np.any(live):
            continue
        for s in np.unique(slot[live]):
            sel = live & (slot == s)
            if rot_blocks is not None:
                H[np.ix_(rows[sel].ravel(), range(3 * s, 3 * s + 3))] += (
                    rot_blocks[sel, j].reshape(-1, 3)
                )
            if pos_blocks is not None:
                H[np.ix_(rows[sel].ravel(), range(12 + 3 * s, 12 + 3 * s + 3))] += (
                    pos_blocks[sel, j].reshape(-1, 3)
                )
