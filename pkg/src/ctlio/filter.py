"""Hybrid-system prediction, iterated Kalman update, and the scan driver."""

from dataclasses import dataclass, field

import numpy as np

from .imu_obs import (
    BiasGravityPrior,
    FittingErrorModel,
    build_imu_residuals,
    estimate_fitting_error,
    imu_forward_propagate,
)
from .lidar_obs import build_scan_residuals
from .state import BA, BW, DIM, G
from .voxel import project_points

# live-slot sources after a knot jump: the window shifts left and the fresh
# increment copies the previous one (constant-velocity initialization)
JUMP_SRC = (1, 2, 3, 2)


@dataclass
class ProcessNoise:
    """Continuous flow noise densities and the per-knot jump injection."""

    incr_rot: float = 1e-5  # rad^2 / s on each rotational increment
    incr_pos: float = 1e-5  # m^2 / s on each positional increment
    bias_w: float = 1e-9
    bias_a: float = 1e-8
    gravity: float = 1e-12
    jump_rot: float = 1e-5  # variance seeded on the fresh increment
    jump_pos: float = 1e-5

    def flow_diag(self):
        d = np.empty(DIM)
        d[0:12] = self.incr_rot
        d[12:24] = self.incr_pos
        d[BW] = self.bias_w
        d[BA] = self.bias_a
        d[G] = self.gravity
        return d


def jump_matrix():
    """32x32 transition applied when the knot grid advances one interval."""
    A = np.zeros((DIM, DIM))
    for dst, src in enumerate(JUMP_SRC):
        A[3 * dst : 3 * dst + 3, 3 * src : 3 * src + 3] = np.eye(3)
        A[12 + 3 * dst : 12 + 3 * dst + 3, 12 + 3 * src : 12 + 3 * src + 3] = (
            np.eye(3)
        )
    A[24:, 24:] = np.eye(DIM - 24)
    return A


def predict(state, to_time, q):
    """Advance the state to to_time: flow between knots, jump at each knot.

    The mean is untouched by the flow; each knot crossing shifts the live
    increment window (duplicating the last increment) and reshuffles the
    covariance accordingly. Biases and gravity pass through unchanged.
    """
    if to_time < state.stamp - 1e-9:
        raise ValueError(
            f"predict target {to_time} behind current time {state.stamp}"
        )
    flow = q.flow_diag()
    while to_time > state.traj.active_end + 1e-12:
        t_knot = state.traj.active_end
        state.P[np.diag_indices(DIM)] += flow * max(t_knot - state.stamp, 0.0)
        state.stamp = t_knot
        A = jump_matrix()
        state.P = A @ state.P @ A.T
        state.P[9:12, 9:12] += q.jump_rot * np.eye(3)
        state.P[21:24, 21:24] += q.jump_pos * np.eye(3)
        state.traj.extend_segment()
    state.P[np.diag_indices(DIM)] += flow * max(to_time - state.stamp, 0.0)
    state.stamp = to_time
    state.P = 0.5 * (state.P + state.P.T)
    return state


@dataclass
class UpdateInfo:
    iterations: int = 0
    converged: bool = False
    aborted: bool = False
    counts: dict = field(default_factory=dict)


def iekf_update(state, residual_builder, max_iter=10, eps=1e-6,
                damping=1e-9):
    """Iterated extended Kalman (MAP) update on the hybrid state.

    residual_builder(state) -> (r, H, Rdiag, counts). Minimizes the
    measurement cost plus the prior term anchored at the incoming state;
    on non-finite residuals the prior is restored untouched.
    """
    prior = state.copy()
    P_prior = prior.P
    Pinv = np.linalg.inv(P_prior)
    info = UpdateInfo()
    S = None
    for it in range(max_iter):
        r, H, Rdiag, counts = residual_builder(state)
        info.counts = counts
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(H))):
            state.traj = prior.traj
            state.b_w, state.b_a = prior.b_w, prior.b_a
            state.g_dir, state.P = prior.g_dir, prior.P
            info.aborted = True
            return state, info
        W = 1.0 / Rdiag
        G_mat = H.T @ (H * W[:, None])
        b = H.T @ (r * W)
        S = G_mat + Pinv
        S[np.diag_indices(DIM)] += damping * np.trace(S) / DIM
        delta_prior = state.boxminus(prior)
        dx = -np.linalg.solve(S, b + Pinv @ delta_prior)
        state.boxplus(dx)
        info.iterations = it + 1
        if np.linalg.norm(dx) <= eps:
            info.converged = True
            break
    if S is not None:
        P_post = np.linalg.inv(S)
        state.P = 0.5 * (P_post + P_post.T)
    return state, info


@dataclass
class ReEstimationConfig:
    delta_t: float = 0.0125  # prediction interval; 0 means one knot
    n_thre: int = 1000
    k_max: int = 5
    iekf_max_iter: int = 10
    iekf_eps: float = 1e-6


@dataclass
class RunContext:
    """Everything run_scan needs besides the state and the measurements."""

    vmap: object
    lidar_cfg: object
    imu_noise: object
    R_IL: np.ndarray
    t_IL: np.ndarray
    process_noise: ProcessNoise = field(default_factory=ProcessNoise)
    fit_model: FittingErrorModel = field(default_factory=FittingErrorModel)
    fixed_fit: bool = False  # LO mode: keep the configured model as-is
    prior: BiasGravityPrior | None = None
    ref_buffer: object = None
    rng: np.random.Generator = field(
        default_factory=lambda: np.random.default_rng(0)
    )
    diagnostics: list = field(default_factory=list)
    pass_index: int = 0


def run_scan(state, scan_t, scan_p, imu_t, imu_w, imu_a, cfg, ctx):
    """Process one LiDAR scan plus its IMU window through the filter.

    Per prediction interval: predict across any knot crossings, then run
    one or more sample-estimate-resample passes over the interval's points
    (splitting whenever the count exceeds the threshold, at most k_max
    chunks). After each converged pass the chunk's points are projected
    with the refined trajectory and inserted into the map; the fitting
    error model is refreshed from reference poses at the end.
    """
    scan_t = np.asarray(scan_t, dtype=float)
    order = np.argsort(scan_t)
    scan_t, scan_p = scan_t[order], np.atleast_2d(scan_p)[order]
    t_end = float(scan_t[-1]) if scan_t.size else state.stamp
    dt_pred = cfg.delta_t if cfg.delta_t > 0 else state.traj.dt

    t_cur = state.stamp
    while t_cur < t_end - 1e-12:
        t_next = min(t_cur + dt_pred, t_end)
        predict(state, t_next, ctx.process_noise)
        in_iv = (scan_t > t_cur + 1e-12) & (scan_t <= t_next + 1e-12)
        pts_t, pts_p = scan_t[in_iv], scan_p[in_iv]
        # each IMU sample feeds exactly one update, otherwise its noise would
        # be counted several times across overlapping windows
        imu_in = (imu_t > t_cur + 1e-12) & (imu_t <= t_next + 1e-12)
        chunks = _split_chunks(pts_t.size, cfg, ctx.rng)
        for i_chunk, chunk in enumerate(chunks):
            ct, cp = pts_t[chunk], pts_p[chunk]
            # IMU information enters once per interval; repeating it in
            # every sub-pass would count the same samples several times
            use_imu = i_chunk == 0

            def builder(st, ct=ct, cp=cp, use_imu=use_imu):
                r_l, H_l, R_l, counts = build_scan_residuals(
                    st, ct, cp, ctx.vmap, ctx.R_IL, ctx.t_IL,
                    ctx.lidar_cfg, ctx.fit_model, ctx.rng,
                )
                if not use_imu:
                    return r_l, H_l, R_l, counts
                r_i, H_i, R_i, skipped = build_imu_residuals(
                    st, imu_t[imu_in], imu_w[imu_in], imu_a[imu_in],
                    ctx.imu_noise, ctx.prior,
                )
                counts = dict(counts, n_imu_skipped=skipped)
                return (
                    np.concatenate([r_i, r_l]),
                    np.vstack([H_i, H_l]),
                    np.concatenate([R_i, R_l]),
                    counts,
                )

            state, info = iekf_update(
                state, builder, cfg.iekf_max_iter, cfg.iekf_eps
            )
            ctx.diagnostics.append({
                "pass_index": ctx.pass_index,
                "n_total": info.counts.get("n_total", 0),
                "n_plane": info.counts.get("n_plane", 0),
                "n_voxel": info.counts.get("n_voxel", 0),
                "n_gated": info.counts.get("n_gated", 0),
                "iterations": info.iterations,
            })
            ctx.pass_index += 1
        # map insertion waits for the last sub-pass so every point is
        # projected with the fully refined trajectory
        if pts_t.size:
            _insert_chunk(state, pts_t, pts_p, ctx)
        if ctx.ref_buffer is not None:
            _add_references(state, imu_t, imu_w, imu_a, t_cur, t_next, ctx)
        _refresh_prior(state, ctx)
        t_cur = t_next
    if ctx.ref_buffer is not None and not ctx.fixed_fit:
        rt, rR, rp = ctx.ref_buffer.arrays()
        if rt.size:
            ctx.fit_model = estimate_fitting_error(
                state.traj, rt, rR, rp, previous=ctx.fit_model
            )
    return state


def _split_chunks(n, cfg, rng):
    """Index chunks of one interval's points: a single pass when small,
    otherwise up to k_max random slices (leftovers join the last one)."""
    if n == 0:
        return [np.arange(0)]
    if n <= cfg.n_thre:
        return [np.arange(n)]
    k = min(cfg.k_max, int(np.ceil(n / cfg.n_thre)))
    perm = rng.permutation(n)
    return [np.sort(c) for c in np.array_split(perm, k)]


def _insert_chunk(state, ct, cp, ctx):
    smp = state.traj.sample(ct)
    from .lidar_obs import beam_covariance

    cov_L = beam_covariance(cp, ctx.lidar_cfg.sigma_r, ctx.lidar_cfg.sigma_theta)
    s_body = cp @ ctx.R_IL.T + ctx.t_IL
    p_w = np.einsum("nij,nj->ni", smp.R, s_body) + smp.p
    RRl = smp.R @ ctx.R_IL
    cov_w = np.einsum("nab,nbc,ndc->nad", RRl, cov_L, RRl)
    fit = ctx.fit_model
    if fit is not None:
        from .lie import skew

        Sk = smp.R @ skew(s_body)
        cov_w = cov_w + fit.cov_pos + np.einsum(
            "nab,bc,ndc->nad", Sk, fit.cov_rot, Sk
        )
    ctx.vmap.insert_points(p_w, cov_w)


def _add_references(state, imu_t, imu_w, imu_a, t_cur, t_next, ctx):
    """Store IMU-propagated poses over the newest interval as fitting-error
    references. Seeding from the updated spline and integrating the raw
    measurements captures motion the finite-order spline cannot, which is
    exactly the discrepancy the fitting-error model measures."""
    lo, hi = state.traj.span
    sel = (imu_t >= max(t_cur, lo)) & (imu_t <= min(t_next, hi))
    ts = imu_t[sel]
    if ts.size < 2:
        return
    seed = state.traj.sample(ts[:1])
    R, p, _ = imu_forward_propagate(
        ts, imu_w[sel], imu_a[sel], seed.R[0], seed.p[0], seed.v[0],
        state.b_w, state.b_a, state.gravity,
    )
    ctx.ref_buffer.drop_after(ts[0])
    for k in range(ts.size):
        ctx.ref_buffer.add(ts[k], R[k], p[k])


def _refresh_prior(state, ctx):
    if ctx.prior is None:
        return
    ctx.prior = BiasGravityPrior(
        b_w=state.b_w.copy(),
        b_a=state.b_a.copy(),
        g_dir=state.g_dir.copy(),
        var_b_w=np.maximum(np.diag(state.P)[BW], 1e-12),
        var_b_a=np.maximum(np.diag(state.P)[BA], 1e-12),
        var_g=np.maximum(np.diag(state.P)[G], 1e-14),
    )


def complexity_probe(n, m):
    """Flop-count model of one covariance update and one gain computation.

    The cubic remainder terms are taken with unit constants, which keeps
    the model conservative for the gain.
    """
    s_p = 2 * n**3 + 2 * n**2 * m - n**2
    s_k = 6 * n**2 * m + 2 * n * m**2 + n**2 - 4 * m * n + m**3 + n**3
    return s_k, s_p
