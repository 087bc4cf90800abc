"""Point-to-plane and point-to-voxel residuals against the probabilistic map."""

from dataclasses import dataclass

import numpy as np

from .lie import skew
from .state import DIM, scatter_spline_jacobian
from .voxel import PLANE, VOXEL


@dataclass
class LidarNoise:
    sigma_r: float = 0.02  # range stddev along the beam, m
    sigma_theta: float = 0.001  # bearing stddev, rad
    sigma_q: float = 0.0  # extra stddev on the feature centroid, m
    max_points: int = 0  # 0 disables the row cap


def beam_covariance(p_lidar, sigma_r, sigma_theta):
    """Sensor-frame covariance of each return: range noise along the beam,
    bearing noise (r * sigma_theta) in the two tangential directions."""
    p_lidar = np.atleast_2d(p_lidar)
    r = np.linalg.norm(p_lidar, axis=1)
    r = np.maximum(r, 1e-9)
    d = p_lidar / r[:, None]
    outer = np.einsum("ni,nj->nij", d, d)
    tang = np.eye(3) - outer
    return (
        sigma_r**2 * outer
        + (r**2 * sigma_theta**2)[:, None, None] * tang
    )


def point_to_plane_residual(p_w, node, cov_pt=None, sigma_q=0.0):
    """Signed distance to the plane feature and its scalar noise variance.

    The variance combines the propagated world-point covariance with the
    feature's own normal-direction uncertainty and (optionally) an extra
    centroid term.
    """
    u1 = node.eigvecs[:, 0]
    q = node.mean
    diff = p_w - q
    r = float(u1 @ diff)
    var = 0.0
    if cov_pt is not None:
        var += float(u1 @ cov_pt @ u1)
    var += float(diff @ node.cov_u[0] @ diff)
    var += float(u1 @ u1) * sigma_q**2
    return r, var


def point_to_voxel_residual(p_w, node, sigma_r, cov_pt=None, sigma_q=0.0):
    """Whitened three-axis offset from the voxel feature centroid.

    Each eigen-direction is scaled by lambda_bar^-1/2 with the eigenvalues
    floored at (0.1 sigma_r)^2 so nearly flat voxels cannot produce
    unbounded weights.
    """
    lam_floor = (0.1 * sigma_r) ** 2
    lam_bar = np.maximum(node.eigvals, lam_floor)
    k = 1.0 / np.sqrt(lam_bar)
    U = node.eigvecs
    diff = p_w - node.mean
    r = k * (U.T @ diff)
    var = np.zeros(3)
    for i in range(3):
        if cov_pt is not None:
            var[i] += U[:, i] @ cov_pt @ U[:, i]
        var[i] += diff @ node.cov_u[i] @ diff
        var[i] += sigma_q**2
    # whitened population spread contributes unit variance per direction
    return r, 1.0 + k * k * var, k


def build_scan_residuals(state, t, p_lidar, vmap, R_IL, t_IL, cfg, fit,
                         rng=None):
    """Assemble the LiDAR residual block for one batch of timestamped points.

    Each point is interpolated on the spline at its own timestamp, projected
    to the world frame and associated with the deepest classified map node
    at its location. Plane features contribute one row, voxel features three
    rows; rows failing the 3-sigma gate (all rows of a point jointly) are
    dropped. Returns (r, H, Rdiag, counts) with counts keyed n_total,
    n_plane, n_voxel, n_gated, n_unmatched.
    """
    t = np.asarray(t, dtype=float)
    p_lidar = np.atleast_2d(p_lidar)
    n_in = t.size
    if cfg.max_points and n_in > cfg.max_points:
        if rng is None:
            rng = np.random.default_rng(0)
        sel = np.sort(rng.choice(n_in, size=cfg.max_points, replace=False))
        t, p_lidar = t[sel], p_lidar[sel]

    counts = {"n_total": int(t.size), "n_plane": 0, "n_voxel": 0,
              "n_gated": 0, "n_unmatched": 0}
    if t.size == 0:
        return np.zeros(0), np.zeros((0, DIM)), np.zeros(0), counts

    smp = state.traj.sample(t, jacobians=True)
    s_body = p_lidar @ R_IL.T + t_IL  # (n, 3)
    Rs = np.einsum("nij,nj->ni", smp.R, s_body)
    p_w = Rs + smp.p

    cov_L = beam_covariance(p_lidar, cfg.sigma_r, cfg.sigma_theta)
    RRl = smp.R @ R_IL  # (n, 3, 3)
    cov_pt = np.einsum("nab,nbc,ndc->nad", RRl, cov_L, RRl)
    if fit is not None:
        Sk = skew(s_body)
        cov_pt = cov_pt + fit.cov_pos + np.einsum(
            "nab,bc,ndc->nad", smp.R @ Sk, fit.cov_rot, smp.R @ Sk
        )

    res_rows, var_rows, row_pt, row_dir = [], [], [], []
    for i in range(t.size):
        node = vmap.query(p_w[i])
        if node is None:
            counts["n_unmatched"] += 1
            continue
        if node.classification == PLANE:
            r, var = point_to_plane_residual(
                p_w[i], node, cov_pt[i], cfg.sigma_q
            )
            if r * r > 9.0 * var:
                counts["n_gated"] += 1
                continue
            counts["n_plane"] += 1
            res_rows.append(r)
            var_rows.append(var)
            row_pt.append(i)
            row_dir.append(node.eigvecs[:, 0])
        elif node.classification == VOXEL:
            r3, var3, k = point_to_voxel_residual(
                p_w[i], node, cfg.sigma_r, cov_pt[i], cfg.sigma_q
            )
            if np.any(r3 * r3 > 9.0 * var3):
                counts["n_gated"] += 1
                continue
            counts["n_voxel"] += 1
            res_rows.extend(r3)
            var_rows.extend(var3)
            row_pt.extend([i, i, i])
            row_dir.extend(k[:, None] * node.eigvecs.T)
        else:
            counts["n_unmatched"] += 1

    n_rows = len(res_rows)
    r = np.asarray(res_rows)
    Rdiag = np.maximum(np.asarray(var_rows), 1e-12)
    H = np.zeros((n_rows, DIM))
    if n_rows:
        idx = np.asarray(row_pt)
        Jw = np.asarray(row_dir)  # (n_rows, 3) scaled world direction per row
        dRs = -smp.R @ skew(s_body)  # d(R s)/d(delta theta), (n, 3, 3)
        M = np.einsum("nab,njbc->njac", dRs, smp.dR_dd)
        rot_blocks = np.einsum("ra,rjab->rjb", Jw, M[idx])[:, :, None, :]
        pos_blocks = smp.lam[idx][:, :, None, None] * Jw[:, None, None, :]
        sub = SampleView(smp.seg[idx])
        scatter_spline_jacobian(
            H, np.arange(n_rows)[:, None], sub, state.traj,
            rot_blocks, pos_blocks,
        )
    return r, H, Rdiag, counts


class SampleView:
    """Minimal stand-in exposing only the segment indices of a sample."""

    def __init__(self, seg):
        self.seg = np.asarray(seg)
