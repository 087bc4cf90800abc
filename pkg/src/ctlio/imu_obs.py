"""IMU residual block, online fitting-error estimation, forward propagation."""

from dataclasses import dataclass, field

import numpy as np

from .lie import s2_basis, s2_boxminus, s2_boxminus_jacobian, skew, so3_exp, so3_log
from .state import BA, BW, DIM, G, scatter_spline_jacobian


@dataclass
class ImuNoise:
    gyro_var: float = 1e-4  # (rad/s)^2 per sample
    accel_var: float = 1e-2  # (m/s^2)^2 per sample
    stride: int = 1  # keep every stride-th sample


@dataclass
class BiasGravityPrior:
    """Historical bias/gravity estimates with their marginal covariances."""

    b_w: np.ndarray
    b_a: np.ndarray
    g_dir: np.ndarray
    var_b_w: np.ndarray  # (3,)
    var_b_a: np.ndarray
    var_g: np.ndarray  # (2,)


def build_imu_residuals(state, t, gyro, accel, noise, prior=None):
    """Residuals, Jacobian and noise diagonal of the IMU observation block.

    Rows per kept sample: 3 accelerometer rows R(t)^T (a(t) + g) + b_a - a_m
    followed by 3 gyro rows w(t) + b_w - w_m. An optional 8-row block
    anchors biases and gravity direction to their historical estimates.
    Samples outside the trajectory span are skipped and counted.
    """
    traj = state.traj
    lo, hi = traj.span
    t = np.asarray(t, dtype=float)
    keep = (t >= lo) & (t <= hi)
    skipped = int(np.sum(~keep))
    t, gyro, accel = t[keep], np.atleast_2d(gyro)[keep], np.atleast_2d(accel)[keep]
    if noise.stride > 1 and t.size:
        t = t[:: noise.stride]
        gyro = gyro[:: noise.stride]
        accel = accel[:: noise.stride]

    n = t.size
    n_prior = 8 if prior is not None else 0
    r = np.zeros(6 * n + n_prior)
    H = np.zeros((6 * n + n_prior, DIM))
    Rdiag = np.empty(6 * n + n_prior)

    if n:
        smp = traj.sample(t, jacobians=True)
        g_vec = state.gravity
        ag = smp.a + g_vec  # (n, 3)
        Rt_ag = np.einsum("nji,nj->ni", smp.R, ag)  # R^T (a + g)
        r_a = Rt_ag + state.b_a - accel
        r_w = smp.omega + state.b_w - gyro
        rows_a = (6 * np.arange(n))[:, None] + np.arange(3)
        rows_w = rows_a + 3
        r[rows_a.ravel()] = r_a.ravel()
        r[rows_w.ravel()] = r_w.ravel()
        Rdiag[rows_a.ravel()] = noise.accel_var
        Rdiag[rows_w.ravel()] = noise.gyro_var

        # accelerometer rows: rotation enters through skew(R^T (a+g))
        dha_dR = skew(Rt_ag)  # (n, 3, 3)
        rot_blocks_a = np.einsum("nab,njbc->njac", dha_dR, smp.dR_dd)
        pos_blocks_a = smp.lam_dd[:, :, None, None] * np.swapaxes(smp.R, 1, 2)[:, None]
        scatter_spline_jacobian(H, rows_a, smp, traj, rot_blocks_a, pos_blocks_a)
        scatter_spline_jacobian(H, rows_w, smp, traj, rot_blocks=smp.dw_dd)

        for k in range(3):
            H[rows_a[:, k], BA.start + k] = 1.0
            H[rows_w[:, k], BW.start + k] = 1.0
        B_g = s2_basis(state.g_dir)
        dha_dg = -np.swapaxes(smp.R, 1, 2) @ skew(g_vec) @ B_g  # (n, 3, 2)
        H[np.ix_(rows_a.ravel(), range(G.start, G.stop))] = dha_dg.reshape(-1, 2)

    if prior is not None:
        base = 6 * n
        r[base : base + 3] = state.b_w - prior.b_w
        r[base + 3 : base + 6] = state.b_a - prior.b_a
        r[base + 6 : base + 8] = s2_boxminus(state.g_dir, prior.g_dir)
        H[base : base + 3, BW] = np.eye(3)
        H[base + 3 : base + 6, BA] = np.eye(3)
        H[base + 6 : base + 8, G] = s2_boxminus_jacobian(state.g_dir, prior.g_dir)
        Rdiag[base : base + 3] = prior.var_b_w
        Rdiag[base + 3 : base + 6] = prior.var_b_a
        Rdiag[base + 6 : base + 8] = prior.var_g

    return r, H, Rdiag, skipped


@dataclass
class FittingErrorModel:
    """Empirical covariances of the spline-vs-reference pose discrepancy."""

    cov_rot: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    cov_pos: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))


def estimate_fitting_error(traj, ref_t, ref_R, ref_p, cap_rot=0.05, cap_pos=0.05,
                           previous=None):
    """Mean outer-product covariance of reference-minus-spline pose errors.

    Reference poses outside the trajectory span are ignored; with no usable
    references the previous model (or zeros) is returned. Eigenvalues are
    capped to keep a momentarily bad fit from feeding back into divergence.
    """
    lo, hi = traj.span
    ref_t = np.asarray(ref_t, dtype=float)
    keep = (ref_t >= lo) & (ref_t <= hi)
    if not np.any(keep):
        return previous if previous is not None else FittingErrorModel()
    ref_t = ref_t[keep]
    ref_R = np.asarray(ref_R)[keep]
    ref_p = np.atleast_2d(ref_p)[keep]
    smp = traj.sample(ref_t)
    d_theta = np.array(
        [so3_log(Rs.T @ Rr) for Rs, Rr in zip(smp.R, ref_R)]
    )
    d_pos = ref_p - smp.p
    cov_rot = d_theta.T @ d_theta / len(ref_t)
    cov_pos = d_pos.T @ d_pos / len(ref_t)
    return FittingErrorModel(_cap_psd(cov_rot, cap_rot), _cap_psd(cov_pos, cap_pos))


def _cap_psd(M, cap):
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    w = np.clip(w, 0.0, cap)
    return (V * w) @ V.T


def imu_forward_propagate(t, gyro, accel, R0, p0, v0, b_w, b_a, g_vec):
    """Strapdown integration of IMU samples from a seed pose and velocity.

    Rotation uses the per-interval exponential of the averaged rate;
    translation uses the trapezoid rule on the rotated specific force.
    Returns (R, p, v) stacks aligned with t, the first entry being the
    seed state at t[0].
    """
    t = np.asarray(t, dtype=float)
    n = t.size
    R = np.empty((n, 3, 3))
    p = np.empty((n, 3))
    v = np.empty((n, 3))
    R[0], p[0], v[0] = R0, p0, v0
    for k in range(n - 1):
        dt = t[k + 1] - t[k]
        w_mid = 0.5 * (gyro[k] + gyro[k + 1]) - b_w
        R[k + 1] = R[k] @ so3_exp(w_mid * dt)
        a_w = 0.5 * (
            R[k] @ (accel[k] - b_a) + R[k + 1] @ (accel[k + 1] - b_a)
        ) - g_vec
        p[k + 1] = p[k] + v[k] * dt + 0.5 * a_w * dt * dt
        v[k + 1] = v[k] + a_w * dt
    return R, p, v


class ReferencePoseBuffer:
    """Time-sorted reference poses feeding the fitting-error estimate.

    Holds optimally estimated poses over the already-updated window and is
    topped up with IMU forward-propagated poses over the newest interval.
    """

    def __init__(self, max_len=400):
        self.max_len = max_len
        self.t = []
        self.R = []
        self.p = []

    def __len__(self):
        return len(self.t)

    def add(self, t, R, p):
        self.t.append(float(t))
        self.R.append(np.asarray(R))
        self.p.append(np.asarray(p))
        if len(self.t) > self.max_len:
            del self.t[0], self.R[0], self.p[0]

    def drop_after(self, t):
        """Remove poses at or after t (before re-propagating an interval)."""
        while self.t and self.t[-1] >= t - 1e-12:
            self.t.pop(), self.R.pop(), self.p.pop()

    def arrays(self):
        return np.asarray(self.t), np.asarray(self.R), np.asarray(self.p)
