"""Rotation-group and unit-sphere calculus.

All rotations are 3x3 orthonormal matrices. Functions accept batched input
where noted: an array of shape (..., 3) is treated as a stack of vectors and
the matrix-valued results have shape (..., 3, 3).
"""

import numpy as np

_EXP_EPS = 1e-8
_JAC_EPS = 1e-6


def skew(v):
    """Skew-symmetric matrix such that skew(v) @ w == cross(v, w).

    Supports batched input of shape (..., 3).
    """
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


def so3_exp(phi):
    """Exponential map of SO(3) via the Rodrigues formula, batched."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1, keepdims=True)[..., None]
    S = skew(phi)
    S2 = S @ S
    eye = np.broadcast_to(np.eye(3), S.shape)
    small = theta < _EXP_EPS
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(theta) / theta)
        b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(theta)) / theta**2)
    return eye + a * S + b * S2


def so3_log(R):
    """Principal logarithm of a rotation matrix, ||result|| <= pi.

    The trace(R) ~ -1 branch is handled by axis extraction from the largest
    diagonal entry; the sign there is fixed so the last nonzero component of
    the result is nonnegative.
    """
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    c = np.clip((tr - 1.0) * 0.5, -1.0, 1.0)
    theta = np.arccos(c)
    if theta < 1e-10:
        # R ~ I: first-order term of the series
        return np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) * 0.5
    if np.pi - theta > 1e-6:
        w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        return w * (theta / (2.0 * np.sin(theta)))
    # theta ~ pi: axis from the dominant column of R + I
    M = R + np.eye(3)
    k = int(np.argmax(np.diag(M)))
    axis = M[:, k]
    axis = axis / np.linalg.norm(axis)
    # fix sign convention: last nonzero component nonnegative
    nz = np.flatnonzero(np.abs(axis) > 1e-12)
    if nz.size and axis[nz[-1]] < 0:
        axis = -axis
    return axis * theta


def so3_right_jacobian(phi):
    """Closed-form right Jacobian of SO(3), batched.

    so3_exp(phi + d) ~= so3_exp(phi) @ so3_exp(J_r(phi) @ d) for small d.
    """
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1, keepdims=True)[..., None]
    S = skew(phi)
    S2 = S @ S
    eye = np.broadcast_to(np.eye(3), S.shape)
    small = theta < _JAC_EPS
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(theta)) / theta**2)
        b = np.where(
            small, 1.0 / 6.0 - theta**2 / 120.0, (theta - np.sin(theta)) / theta**3
        )
    return eye - a * S + b * S2


def s2_basis(d):
    """Orthonormal 3x2 basis of the tangent plane at unit vector d."""
    d = np.asarray(d, dtype=float)
    e = np.zeros(3)
    e[int(np.argmin(np.abs(d)))] = 1.0
    b1 = np.cross(d, e)
    b1 /= np.linalg.norm(b1)
    b2 = np.cross(d, b1)
    return np.stack([b1, b2], axis=1)


def s2_boxplus(d, delta):
    """Retract a 2-dim tangent step onto the unit sphere at d."""
    d = np.asarray(d, dtype=float)
    delta = np.asarray(delta, dtype=float)
    return so3_exp(s2_basis(d) @ delta) @ d


def s2_boxminus(s, d):
    """Tangent-plane difference of two unit vectors at base point d.

    Returns the 2-vector delta with s2_boxplus(d, delta) == s. Raises
    ValueError for (near-)antipodal inputs where the difference is undefined.
    """
    s = np.asarray(s, dtype=float)
    d = np.asarray(d, dtype=float)
    w = np.cross(d, s)
    sn = np.linalg.norm(w)
    cn = float(d @ s)
    if cn < -1.0 + 1e-9 and sn < 1e-9:
        raise ValueError("boxminus undefined for antipodal directions")
    theta = np.arctan2(sn, cn)
    B = s2_basis(d)
    if sn < 1e-12:
        return B.T @ w  # theta/sin(theta) -> 1
    return B.T @ (w / sn) * theta


def s2_boxminus_jacobian(s, d):
    """2x2 Jacobian of (s boxplus delta) boxminus d with respect to delta at 0."""
    s = np.asarray(s, dtype=float)
    d = np.asarray(d, dtype=float)
    w = np.cross(d, s)
    sn = np.linalg.norm(w)
    cn = float(np.clip(d @ s, -1.0, 1.0))
    theta = np.arctan2(sn, cn)
    if theta < 1e-6:
        g = 1.0 + theta**2 / 6.0
        gp_over_sin = 1.0 / 3.0
    else:
        g = theta / sn
        gp = (sn - theta * cn) / sn**2
        gp_over_sin = gp / sn
    Bd = s2_basis(d)
    Bs = s2_basis(s)
    M = g * skew(d) - gp_over_sin * np.outer(w, d)
    return Bd.T @ M @ (-skew(s)) @ Bs
