import numpy as np
import pytest

from ctlio.filter import (
    ProcessNoise,
    ReEstimationConfig,
    RunContext,
    complexity_probe,
    iekf_update,
    jump_matrix,
    predict,
    run_scan,
)
from ctlio.imu_obs import FittingErrorModel, ImuNoise
from ctlio.lidar_obs import LidarNoise
from ctlio.spline import SplineTrajectory
from ctlio.state import DIM, HybridState
from ctlio.voxel import MapConfig, VoxelMap
from helpers import random_trajectory


def zero_noise():
    return ProcessNoise(incr_rot=0, incr_pos=0, bias_w=0, bias_a=0,
                        gravity=0, jump_rot=0, jump_pos=0)


def test_predict_within_segment_is_identity_with_zero_noise():
    rng = np.random.default_rng(110)
    st = HybridState.initial(random_trajectory(rng))
    P0 = st.P.copy()
    d0 = st.traj.d_rot.copy()
    predict(st, st.traj.active_end, zero_noise())
    assert np.allclose(st.P, P0)
    assert np.allclose(st.traj.d_rot, d0)


def test_predict_backward_raises():
    rng = np.random.default_rng(111)
    st = HybridState.initial(random_trajectory(rng))
    with pytest.raises(ValueError):
        predict(st, st.stamp - 1.0, ProcessNoise())


def test_predict_jump_mean_matches_transition_matrix():
    rng = np.random.default_rng(112)
    st = HybridState.initial(random_trajectory(rng))
    old_rot, old_pos = (a.copy() for a in st.traj.live_increments())
    predict(st, st.traj.active_end + st.traj.dt / 2, zero_noise())
    new_rot, new_pos = st.traj.live_increments()
    assert np.allclose(new_rot, old_rot[[1, 2, 3, 2]])
    assert np.allclose(new_pos, old_pos[[1, 2, 3, 2]])
    A = jump_matrix()
    x_old = np.concatenate([old_rot.ravel(), old_pos.ravel(), np.zeros(8)])
    assert np.allclose((A @ x_old)[:24].reshape(8, 3),
                       np.vstack([new_rot, new_pos]))


def test_predict_jump_preserves_biases_and_gravity():
    rng = np.random.default_rng(113)
    st = HybridState.initial(random_trajectory(rng))
    st.b_w = np.array([0.01, 0.02, 0.03])
    st.b_a = np.array([0.1, 0.2, 0.3])
    g0 = st.g_dir.copy()
    predict(st, st.traj.active_end + 2.5 * st.traj.dt, ProcessNoise())
    assert np.allclose(st.b_w, [0.01, 0.02, 0.03])
    assert np.allclose(st.b_a, [0.1, 0.2, 0.3])
    assert np.allclose(st.g_dir, g0)


def test_predict_covariance_stays_symmetric_psd():
    rng = np.random.default_rng(114)
    st = HybridState.initial(random_trajectory(rng))
    M = rng.normal(size=(DIM, DIM))
    st.P = M @ M.T / DIM + 1e-6 * np.eye(DIM)
    predict(st, st.traj.active_end + 3.2 * st.traj.dt, ProcessNoise())
    assert np.allclose(st.P, st.P.T)
    assert np.min(np.linalg.eigvalsh(st.P)) >= -1e-9


def test_iekf_zero_residual_no_change():
    rng = np.random.default_rng(115)
    st = HybridState.initial(random_trajectory(rng))
    d0 = st.traj.d_rot.copy()

    def builder(s):
        return np.zeros(4), np.zeros((4, DIM)), np.ones(4), {}

    st, info = iekf_update(st, builder)
    assert info.converged and info.iterations == 1
    assert np.allclose(st.traj.d_rot, d0)


def test_iekf_matches_scalar_kalman():
    rng = np.random.default_rng(116)
    st = HybridState.initial(random_trajectory(rng))
    st.P = np.eye(DIM) * 0.04
    k = 5  # one rotational increment component
    x0 = st.traj.live_increments()[0].ravel()[k]
    z = x0 + 0.3
    r_var = 0.01

    def builder(s):
        x = s.traj.live_increments()[0].ravel()[k]
        H = np.zeros((1, DIM))
        H[0, k] = 1.0
        return np.array([x - z]), H, np.array([r_var]), {}

    st, info = iekf_update(st, builder, max_iter=20, eps=1e-14, damping=0.0)
    gain = 0.04 / (0.04 + r_var)
    assert abs(st.traj.live_increments()[0].ravel()[k]
               - (x0 + gain * 0.3)) < 1e-10
    assert abs(st.P[k, k] - (1 - gain) * 0.04) < 1e-10


def test_iekf_nonfinite_residual_restores_prior():
    rng = np.random.default_rng(117)
    st = HybridState.initial(random_trajectory(rng))
    d0 = st.traj.d_rot.copy()
    P0 = st.P.copy()

    def builder(s):
        return np.array([np.nan]), np.zeros((1, DIM)), np.ones(1), {}

    st, info = iekf_update(st, builder)
    assert info.aborted
    assert np.allclose(st.traj.d_rot, d0)
    assert np.allclose(st.P, P0)


def test_complexity_probe_values():
    s_k, s_p = complexity_probe(1, 1)
    assert s_p == 3
    s_k, s_p = complexity_probe(32, 2000)
    assert s_p == 2 * 32**3 + 2 * 32**2 * 2000 - 32**2
    # splitting the observation into 5 slices reduces the modeled gain cost
    whole = complexity_probe(32, 2000)[0]
    split = 5 * complexity_probe(32, 400)[0]
    assert whole > split


def static_scene(n_points, n_thre, seed=0):
    rng = np.random.default_rng(seed)
    vmap = VoxelMap(MapConfig(root_size=1.0, min_points=20))
    floor = np.column_stack([
        rng.uniform(-4, 4, size=8000),
        rng.uniform(-4, 4, size=8000),
        np.full(8000, -0.7) + rng.normal(scale=5e-4, size=8000),
    ])
    vmap.insert_points(floor, 1e-8 * np.eye(3))

    traj = SplineTrajectory.initial(0.0, 0.0125)
    st = HybridState.initial(traj)
    scan_t = np.sort(rng.uniform(0.0, 0.05, size=n_points))
    scan_p = np.column_stack([
        rng.uniform(-0.5, 0.5, size=n_points),
        rng.uniform(-0.5, 0.5, size=n_points),
        np.full(n_points, -0.7),
    ])
    imu_t = np.arange(-0.05, 0.051, 0.005)
    imu_w = np.zeros((imu_t.size, 3))
    imu_a = np.tile([0.0, 0.0, 9.81], (imu_t.size, 1))
    cfg = ReEstimationConfig(delta_t=0.0125, n_thre=n_thre, k_max=5)
    ctx = RunContext(
        vmap=vmap, lidar_cfg=LidarNoise(), imu_noise=ImuNoise(),
        R_IL=np.eye(3), t_IL=np.zeros(3),
        process_noise=ProcessNoise(),
        fit_model=FittingErrorModel(),
        rng=np.random.default_rng(1),
    )
    return st, scan_t, scan_p, imu_t, imu_w, imu_a, cfg, ctx


def test_run_scan_single_pass_when_few_points():
    st, *args, cfg, ctx = static_scene(80, n_thre=1000)
    run_scan(st, *args, cfg, ctx)
    per_interval = {}
    for row in ctx.diagnostics:
        per_interval.setdefault(row["pass_index"], row)
    # 4 prediction intervals, one pass each
    assert len(ctx.diagnostics) == 4
    assert sum(r["n_total"] for r in ctx.diagnostics) == 80


def test_run_scan_splits_large_interval():
    st, *args, cfg, ctx = static_scene(600, n_thre=50)
    run_scan(st, *args, cfg, ctx)
    assert len(ctx.diagnostics) >= 3 * 4  # several chunks per interval
    assert sum(r["n_total"] for r in ctx.diagnostics) == 600


def test_run_scan_static_state_stays_put():
    st, scan_t, *rest, cfg, ctx = static_scene(400, n_thre=1000)
    run_scan(st, scan_t, *rest, cfg, ctx)
    smp = st.traj.sample(np.array([st.stamp]))
    assert np.linalg.norm(smp.p[0]) < 5e-3
    assert st.stamp == pytest.approx(scan_t[-1])
