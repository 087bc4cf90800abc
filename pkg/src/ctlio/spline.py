"""Uniform cumulative cubic B-spline trajectory on SO(3) x R^3.

The trajectory is parameterized by control-point increments: per knot pair
(m, m+1) a rotational increment d_R = Log(R_m^-1 R_{m+1}) and a positional
increment d_p = p_{m+1} - p_m. A segment starting at knot m is evaluated from
the anchor pose at knot m-1 and the four increments connecting knots
m-1 .. m+3; the first cumulative blending weight is identically 1, so the
anchor-relative form reproduces the classic control-point interpolation
exactly.
"""

from dataclasses import dataclass, field

import numpy as np

from .lie import skew, so3_exp, so3_log, so3_right_jacobian

# Cumulative blending matrix of the uniform cubic B-spline:
# [lam_0..lam_3]^T = CUM_BLENDING @ [1, u, u^2, u^3]^T, u in [0, 1).
CUM_BLENDING = np.array(
    [
        [6.0, 0.0, 0.0, 0.0],
        [5.0, 3.0, -3.0, 1.0],
        [1.0, 3.0, 3.0, -2.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
) / 6.0


def lambda_eval(u, dt, order=0):
    """Cumulative blending weights (or their time derivatives) at u in [0, 1].

    Returns an array of shape u.shape + (4,). Order 1 and 2 carry the 1/dt
    and 1/dt^2 factors of the chain rule through u(t).
    """
    u = np.asarray(u, dtype=float)
    pw = np.empty(u.shape + (4,))
    if order == 0:
        pw[..., 0] = 1.0
        pw[..., 1] = u
        pw[..., 2] = u * u
        pw[..., 3] = u * u * u
    elif order == 1:
        pw[..., 0] = 0.0
        pw[..., 1] = 1.0 / dt
        pw[..., 2] = 2.0 * u / dt
        pw[..., 3] = 3.0 * u * u / dt
    elif order == 2:
        pw[..., 0] = 0.0
        pw[..., 1] = 0.0
        pw[..., 2] = 2.0 / dt**2
        pw[..., 3] = 6.0 * u / dt**2
    else:
        raise ValueError(f"unsupported derivative order {order}")
    return pw @ CUM_BLENDING.T


class SpanError(ValueError):
    """Query time outside the represented trajectory span."""


@dataclass
class SplineSample:
    """Batched evaluation of the trajectory at a set of timestamps."""

    t: np.ndarray
    seg: np.ndarray  # segment index per timestamp
    u: np.ndarray
    lam: np.ndarray  # (n, 4) blending weights
    lam_d: np.ndarray
    lam_dd: np.ndarray
    R: np.ndarray  # (n, 3, 3)
    p: np.ndarray  # (n, 3)
    omega: np.ndarray  # body-frame angular rate (n, 3)
    v: np.ndarray
    a: np.ndarray
    dR_dd: np.ndarray | None = None  # (n, 4, 3, 3)
    dw_dd: np.ndarray | None = None  # (n, 4, 3, 3)


@dataclass
class SplineTrajectory:
    """Increment-parameterized trajectory over a uniform knot grid.

    Knot r (r = 0..n_increments) sits at time t0 + r*dt with the anchor pose
    at knot 0. Increment r connects knots r and r+1. Valid query segments are
    s = 1 .. n_increments-3; the last one is the active segment whose four
    increments are the live estimation variables.
    """

    t0: float
    dt: float
    anchor_R: np.ndarray
    anchor_p: np.ndarray
    d_rot: np.ndarray  # (K, 3)
    d_pos: np.ndarray  # (K, 3)
    _base_cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def initial(cls, t_start, dt, R0=None, p0=None, n_increments=7):
        """Zero-increment trajectory whose active segment starts at t_start."""
        R0 = np.eye(3) if R0 is None else np.asarray(R0, dtype=float)
        p0 = np.zeros(3) if p0 is None else np.asarray(p0, dtype=float)
        K = int(n_increments)
        t0 = t_start - (K - 3) * dt
        return cls(t0, dt, R0.copy(), p0.copy(), np.zeros((K, 3)), np.zeros((K, 3)))

    # -- span bookkeeping -------------------------------------------------

    @property
    def n_increments(self):
        return self.d_rot.shape[0]

    @property
    def active_segment(self):
        return self.n_increments - 3

    @property
    def span(self):
        """(t_min, t_max): closed interval of valid query times."""
        return (self.t0 + self.dt, self.t0 + (self.n_increments - 2) * self.dt)

    @property
    def active_start(self):
        return self.t0 + self.active_segment * self.dt

    @property
    def active_end(self):
        return self.t0 + (self.active_segment + 1) * self.dt

    def live_increments(self):
        """(d_rot, d_pos) views of the four live increments, each (4, 3)."""
        return self.d_rot[-4:], self.d_pos[-4:]

    def set_live_increments(self, d_rot, d_pos):
        self.d_rot[-4:] = d_rot
        self.d_pos[-4:] = d_pos
        self._base_cache.clear()

    def live_slot(self, seg, j):
        """Live-increment slot (0..3) of local increment j of segment seg.

        Returns None when that increment is frozen history.
        """
        slot = seg - 1 + j - (self.n_increments - 4)
        return slot if 0 <= slot <= 3 else None

    def _segments_and_u(self, ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        rel = (ts - self.t0) / self.dt
        seg = np.floor(rel + 1e-9).astype(int)
        smax = self.active_segment
        # closed right endpoint: evaluate at u = 1 of the last segment
        at_end = (seg == smax + 1) & (rel - seg < 1e-6)
        seg[at_end] = smax
        u = rel - seg
        u[at_end] = 1.0
        if np.any(seg < 1) or np.any(seg > smax):
            bad = ts[(seg < 1) | (seg > smax)]
            raise SpanError(f"query times {bad} outside span {self.span}")
        return seg, u

    def base_pose(self, seg):
        """Pose of control point seg-1 (left anchor of segment seg)."""
        cached = self._base_cache.get(seg)
        if cached is not None:
            return cached
        R = self.anchor_R.copy()
        p = self.anchor_p.copy()
        for r in range(seg - 1):
            R = R @ so3_exp(self.d_rot[r])
            p = p + self.d_pos[r]
        self._base_cache[seg] = (R, p)
        return R, p

    def control_point(self, idx):
        """Pose of control point idx (0 = anchor)."""
        return self.base_pose(idx + 1)

    # -- evaluation -------------------------------------------------------

    def sample(self, ts, jacobians=False):
        """Evaluate pose, derivatives and (optionally) increment Jacobians."""
        seg, u = self._segments_and_u(ts)
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        n = ts.shape[0]
        lam = lambda_eval(u, self.dt, 0)
        lam_d = lambda_eval(u, self.dt, 1)
        lam_dd = lambda_eval(u, self.dt, 2)

        R = np.empty((n, 3, 3))
        p = np.empty((n, 3))
        omega = np.empty((n, 3))
        v = np.empty((n, 3))
        a = np.empty((n, 3))
        dR_dd = np.empty((n, 4, 3, 3)) if jacobians else None
        dw_dd = np.empty((n, 4, 3, 3)) if jacobians else None

        for s in np.unique(seg):
            idx = np.flatnonzero(seg == s)
            R_base, p_base = self.base_pose(int(s))
            dR = self.d_rot[s - 1 : s + 3]  # (4, 3)
            dp = self.d_pos[s - 1 : s + 3]
            L = lam[idx]  # (m, 4)
            Ld = lam_d[idx]
            Ldd = lam_dd[idx]

            phi = L[:, :, None] * dR[None, :, :]  # (m, 4, 3)
            A = so3_exp(phi)  # (m, 4, 3, 3)
            Rc = np.broadcast_to(R_base, (idx.size, 3, 3))
            w = np.zeros((idx.size, 3))
            omg = [w]
            for j in range(4):
                w = np.einsum("nji,nj->ni", A[:, j], w) + Ld[:, j : j + 1] * dR[j]
                omg.append(w)
                Rc = Rc @ A[:, j]
            R[idx] = Rc
            omega[idx] = w
            p[idx] = p_base + L @ dp
            v[idx] = Ld @ dp
            a[idx] = Ldd @ dp

            if jacobians:
                # P_j = A_3^T ... A_{j+1}^T, built backwards
                P = np.empty((idx.size, 4, 3, 3))
                P[:, 3] = np.eye(3)
                for j in (2, 1, 0):
                    P[:, j] = P[:, j + 1] @ np.swapaxes(A[:, j + 1], -1, -2)
                Jr = so3_right_jacobian(phi)  # (m, 4, 3, 3)
                Jr_neg = so3_right_jacobian(-phi)
                for j in range(4):
                    dR_dd[idx, j] = L[:, j, None, None] * (P[:, j] @ Jr[:, j])
                    At = np.swapaxes(A[:, j], -1, -2)
                    inner = (
                        L[:, j, None, None] * (At @ skew(omg[j]) @ Jr_neg[:, j])
                        + Ld[:, j, None, None] * np.eye(3)
                    )
                    dw_dd[idx, j] = P[:, j] @ inner

        return SplineSample(
            ts, seg, u, lam, lam_d, lam_dd, R, p, omega, v, a, dR_dd, dw_dd
        )

    # scalar convenience accessors

    def interpolate_rotation(self, t):
        return self.sample(t).R[0]

    def interpolate_angular_rate(self, t):
        return self.sample(t).omega[0]

    def interpolate_position(self, t):
        return self.sample(t).p[0]

    def interpolate_velocity(self, t):
        return self.sample(t).v[0]

    def interpolate_acceleration(self, t):
        return self.sample(t).a[0]

    def jac_rotation_wrt_increments(self, t):
        return self.sample(t, jacobians=True).dR_dd[0]

    def jac_angular_rate_wrt_increments(self, t):
        return self.sample(t, jacobians=True).dw_dd[0]

    def jac_position_wrt_increments(self, t):
        """Blending weights: d p(t) / d d_{p,j} = lam_j(u) * I."""
        return self.sample(t).lam[0]

    # -- extension --------------------------------------------------------

    def extend_segment(self):
        """Advance the knot grid by one interval, constant-velocity init.

        The oldest increment is folded into the anchor, the live window
        shifts, and the new last increment duplicates the previous
        second-to-last one, which keeps linear velocity across the knot
        exactly and angular velocity to first order in the increments.
        """
        self.anchor_R = self.anchor_R @ so3_exp(self.d_rot[0])
        self.anchor_p = self.anchor_p + self.d_pos[0]
        self.t0 += self.dt
        new_rot = self.d_rot[-2].copy()
        new_pos = self.d_pos[-2].copy()
        self.d_rot = np.vstack([self.d_rot[1:], new_rot])
        self.d_pos = np.vstack([self.d_pos[1:], new_pos])
        self._base_cache.clear()

    def extend_until(self, t):
        """Extend segments until t lies within the active segment."""
        n = 0
        while t > self.active_end + 1e-12:
            self.extend_segment()
            n += 1
        return n

    # -- export -----------------------------------------------------------

    def sample_tum(self, rate_hz):
        """Sampled poses over the span as TUM lines 't x y z qx qy qz qw'."""
        from .io import rotation_to_quat

        t_min, t_max = self.span
        ts = np.arange(t_min, t_max, 1.0 / rate_hz)
        out = []
        smp = self.sample(ts)
        for t, R, p in zip(smp.t, smp.R, smp.p):
            q = rotation_to_quat(R)
            out.append(
                f"{t:.9f} {p[0]:.9f} {p[1]:.9f} {p[2]:.9f} "
                f"{q[0]:.9f} {q[1]:.9f} {q[2]:.9f} {q[3]:.9f}"
            )
        return out


def interpolate_classic(control_R, control_p, t0, dt, t):
    """Classic cumulative-form interpolation straight from control points.

    Control point m sits at knot time t0 + m*dt. Used as the reference
    implementation the increment form must reproduce.
    """
    rel = (t - t0) / dt
    i = int(np.floor(rel + 1e-9))
    u = rel - i
    lam = lambda_eval(u, dt, 0)
    R = control_R[i].copy()
    p = control_p[i].copy()
    for j in range(1, 4):
        d_rot = so3_exp(lam[j] * so3_log(control_R[i + j - 1].T @ control_R[i + j]))
        R = R @ d_rot
        p = p + lam[j] * (control_p[i + j] - control_p[i + j - 1])
    return R, p
