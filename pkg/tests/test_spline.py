import numpy as np
import pytest
from scipy.interpolate import BSpline

from ctlio.lie import skew, so3_exp, so3_log
from ctlio.spline import (
    CUM_BLENDING,
    SpanError,
    SplineTrajectory,
    interpolate_classic,
    lambda_eval,
)
from helpers import numerical_jacobian, rand_rotation, random_trajectory


def cumulative_weights_deboor(u):
    """De Boor-Cox oracle for the uniform cubic cumulative weights."""
    knots = np.arange(-3.0, 6.0)
    basis = [BSpline.basis_element(knots[j : j + 5], extrapolate=False) for j in range(4)]
    # on segment [0, 1) the active basis functions in control-point order
    b = np.array([basis[l](u) for l in range(4)])
    b = np.nan_to_num(b)
    return np.array([b[j:].sum() for j in range(4)])


def test_blending_matrix_matches_deboor_cox():
    for u in np.linspace(0.0, 0.999, 57):
        expected = cumulative_weights_deboor(u)
        got = lambda_eval(u, 1.0, 0)
        assert np.allclose(got, expected, atol=1e-12), u


def test_lambda_at_zero():
    assert np.allclose(lambda_eval(0.0, 1.0, 0), [1.0, 5 / 6, 1 / 6, 0.0])


def test_lambda_first_entry_always_one():
    u = np.linspace(0, 1, 101)
    assert np.allclose(lambda_eval(u, 0.02, 0)[:, 0], 1.0)


def test_lambda_in_unit_interval_and_ordered():
    u = np.linspace(0, 1, 101)
    lam = lambda_eval(u, 1.0, 0)
    assert np.all(lam >= -1e-12) and np.all(lam <= 1 + 1e-12)
    assert np.all(np.diff(lam, axis=1) <= 1e-12)


@pytest.mark.parametrize("dt", [1.0, 0.02])
def test_lambda_derivatives_match_finite_difference(dt):
    h = 1e-6
    for u in np.linspace(h, 1 - h, 23):
        d0 = (lambda_eval(u + h, dt, 0) - lambda_eval(u - h, dt, 0)) / (2 * h * dt)
        assert np.allclose(d0, lambda_eval(u, dt, 1), atol=1e-7)
        d1 = (lambda_eval(u + h, dt, 1) - lambda_eval(u - h, dt, 1)) / (2 * h * dt)
        assert np.allclose(d1, lambda_eval(u, dt, 2), atol=1e-5 / dt**2)


def make_control_points(rng, n=10, dt=0.02, rot_scale=0.15):
    Rs = [rand_rotation(rng)]
    ps = [rng.normal(size=3)]
    for _ in range(n - 1):
        Rs.append(Rs[-1] @ so3_exp(rng.normal(scale=rot_scale, size=3)))
        ps.append(ps[-1] + rng.normal(scale=0.05, size=3))
    return np.array(Rs), np.array(ps)


def trajectory_from_control_points(Rs, ps, t0, dt):
    K = len(Rs) - 1
    d_rot = np.array([so3_log(Rs[m].T @ Rs[m + 1]) for m in range(K)])
    d_pos = np.diff(ps, axis=0)
    return SplineTrajectory(t0, dt, Rs[0].copy(), ps[0].copy(), d_rot, d_pos)


def test_increment_form_equals_classic_form():
    rng = np.random.default_rng(11)
    dt = 0.02
    for _ in range(50):
        Rs, ps = make_control_points(rng, n=10, dt=dt)
        tr = trajectory_from_control_points(Rs, ps, 0.0, dt)
        for t in rng.uniform(dt, (len(Rs) - 3) * dt, size=6):
            R_ref, p_ref = interpolate_classic(Rs, ps, 0.0, dt, t)
            assert np.allclose(tr.interpolate_rotation(t), R_ref, atol=1e-10)
            assert np.allclose(tr.interpolate_position(t), p_ref, atol=1e-10)


def test_zero_increments_constant_pose():
    tr = SplineTrajectory.initial(0.0, 0.02, n_increments=7)
    R0 = rand_rotation(np.random.default_rng(12))
    tr.anchor_R = R0
    tr.anchor_p = np.array([1.0, 2.0, 3.0])
    lo, hi = tr.span
    for t in np.linspace(lo, hi, 9):
        assert np.allclose(tr.interpolate_rotation(t), R0, atol=1e-14)
        assert np.allclose(tr.interpolate_position(t), [1, 2, 3], atol=1e-14)
        assert np.allclose(tr.interpolate_angular_rate(t), 0.0, atol=1e-14)
        assert np.allclose(tr.interpolate_velocity(t), 0.0, atol=1e-14)
        assert np.allclose(tr.interpolate_acceleration(t), 0.0, atol=1e-14)


def test_constant_yaw_rate():
    dt = 0.05
    theta = 0.1
    tr = SplineTrajectory.initial(0.0, dt, n_increments=7)
    tr.d_rot[:] = [0.0, 0.0, theta]
    tr._base_cache.clear()
    lo, hi = tr.span
    for t in np.linspace(lo, hi - 1e-9, 11):
        w = tr.interpolate_angular_rate(t)
        assert np.allclose(w, [0, 0, theta / dt], atol=1e-9)


def test_angular_rate_matches_rotation_derivative():
    rng = np.random.default_rng(13)
    for _ in range(20):
        tr = random_trajectory(rng)
        lo, hi = tr.span
        h = 1e-6
        for t in rng.uniform(lo + 2 * h, hi - 2 * h, size=3):
            Rm = tr.interpolate_rotation(t - h)
            Rp = tr.interpolate_rotation(t + h)
            w_num = so3_log(Rm.T @ Rp) / (2 * h)
            w = tr.interpolate_angular_rate(t)
            assert np.allclose(w, w_num, atol=1e-6 * (1 + np.linalg.norm(w)))


def test_velocity_acceleration_match_position_derivatives():
    rng = np.random.default_rng(14)
    for _ in range(20):
        tr = random_trajectory(rng)
        lo, hi = tr.span
        h = 1e-5
        for t in rng.uniform(lo + 2 * h, hi - 2 * h, size=3):
            v_num = (tr.interpolate_position(t + h) - tr.interpolate_position(t - h)) / (2 * h)
            a_num = (tr.interpolate_velocity(t + h) - tr.interpolate_velocity(t - h)) / (2 * h)
            assert np.allclose(tr.interpolate_velocity(t), v_num, atol=1e-6)
            assert np.allclose(tr.interpolate_acceleration(t), a_num, atol=1e-6)


def test_equal_increments_constant_velocity():
    dt = 0.05
    d = np.array([0.01, -0.02, 0.005])
    tr = SplineTrajectory.initial(0.0, dt, n_increments=7)
    tr.d_pos[:] = d
    tr._base_cache.clear()
    lo, hi = tr.span
    for t in np.linspace(lo, hi - 1e-9, 11):
        assert np.allclose(tr.interpolate_velocity(t), d / dt, atol=1e-9)
        assert np.allclose(tr.interpolate_acceleration(t), 0.0, atol=1e-9)


def _rotation_jac_fd(tr, t, j):
    seg = tr.sample(t).seg[0]
    r = seg - 1 + j

    def f(delta, tr=tr, t=t, r=r):
        tr2 = random_clone(tr)
        tr2.d_rot[r] = tr.d_rot[r] + delta
        R0 = tr.interpolate_rotation(t)
        return so3_log(R0.T @ tr2.interpolate_rotation(t))

    return numerical_jacobian(f, np.zeros(3))


def random_clone(tr):
    return SplineTrajectory(
        tr.t0, tr.dt, tr.anchor_R.copy(), tr.anchor_p.copy(),
        tr.d_rot.copy(), tr.d_pos.copy(),
    )


def test_rotation_jacobian_zero_increments():
    tr = SplineTrajectory.initial(0.0, 0.05, n_increments=7)
    t = tr.active_start + 0.02
    smp = tr.sample(t, jacobians=True)
    for j in range(4):
        assert np.allclose(smp.dR_dd[0, j], smp.lam[0, j] * np.eye(3), atol=1e-12)
        assert np.allclose(smp.dw_dd[0, j], smp.lam_d[0, j] * np.eye(3), atol=1e-12)


def test_rotation_jacobian_finite_difference():
    rng = np.random.default_rng(15)
    for _ in range(100):
        tr = random_trajectory(rng, rot_scale=0.3 / np.sqrt(3))
        lo, hi = tr.span
        t = rng.uniform(lo, hi - 1e-9)
        smp = tr.sample(t, jacobians=True)
        for j in range(4):
            J_fd = _rotation_jac_fd(tr, t, j)
            scale = max(1.0, np.abs(J_fd).max())
            assert np.allclose(smp.dR_dd[0, j], J_fd, atol=1e-5 * scale)


def test_angular_rate_jacobian_finite_difference():
    rng = np.random.default_rng(16)
    for _ in range(100):
        tr = random_trajectory(rng, rot_scale=0.3 / np.sqrt(3))
        lo, hi = tr.span
        t = rng.uniform(lo, hi - 1e-9)
        smp = tr.sample(t, jacobians=True)
        seg = smp.seg[0]
        for j in range(4):
            r = seg - 1 + j

            def f(delta, tr=tr, t=t, r=r):
                tr2 = random_clone(tr)
                tr2.d_rot[r] = tr.d_rot[r] + delta
                return tr2.interpolate_angular_rate(t)

            J_fd = numerical_jacobian(f, np.zeros(3))
            scale = max(1.0, np.abs(J_fd).max())
            assert np.allclose(smp.dw_dd[0, j], J_fd, atol=1e-5 * scale)


def test_position_jacobian_is_lambda():
    rng = np.random.default_rng(17)
    tr = random_trajectory(rng)
    lo, hi = tr.span
    t = rng.uniform(lo, hi)
    lam = tr.jac_position_wrt_increments(t)
    seg = tr.sample(t).seg[0]
    for j in range(4):
        r = seg - 1 + j

        def f(delta, tr=tr, t=t, r=r):
            tr2 = random_clone(tr)
            tr2.d_pos[r] = tr.d_pos[r] + delta
            return tr2.interpolate_position(t)

        J_fd = numerical_jacobian(f, np.zeros(3))
        assert np.allclose(J_fd, lam[j] * np.eye(3), atol=1e-9)


def test_jacobian_continuity_at_knot():
    rng = np.random.default_rng(18)
    tr = random_trajectory(rng, rot_scale=0.05)
    t_knot = tr.active_start
    h = 1e-9
    s_minus = tr.sample(t_knot - h, jacobians=True)
    s_plus = tr.sample(t_knot + h, jacobians=True)
    assert s_minus.seg[0] == s_plus.seg[0] - 1
    # adjacent segments share three increments; compare those columns
    scale = max(1.0, np.abs(s_plus.dw_dd).max())
    for j in range(3):
        assert np.allclose(
            s_minus.dw_dd[0, j + 1], s_plus.dw_dd[0, j], atol=1e-6 * scale
        )
        assert np.allclose(
            s_minus.dR_dd[0, j + 1], s_plus.dR_dd[0, j], atol=1e-6 * scale
        )


def test_out_of_span_raises():
    tr = SplineTrajectory.initial(0.0, 0.02, n_increments=7)
    lo, hi = tr.span
    with pytest.raises(SpanError):
        tr.interpolate_rotation(lo - 0.01)
    with pytest.raises(SpanError):
        tr.interpolate_position(hi + 0.01)


def test_extend_zero_increments_keeps_anchor_pose():
    tr = SplineTrajectory.initial(0.0, 0.02, n_increments=7)
    R0, p0 = tr.anchor_R.copy(), tr.anchor_p.copy()
    t0 = tr.t0
    tr.extend_segment()
    assert np.allclose(tr.anchor_R, R0)
    assert np.allclose(tr.anchor_p, p0)
    assert np.allclose(tr.d_rot, 0.0) and np.allclose(tr.d_pos, 0.0)
    assert tr.t0 == pytest.approx(t0 + tr.dt)


def test_extend_equal_increments_stay_equal():
    dt = 0.05
    tr = SplineTrajectory.initial(0.0, dt, n_increments=7)
    tr.d_rot[:] = [0.0, 0.01, 0.02]
    tr.d_pos[:] = [0.01, 0.0, -0.01]
    tr._base_cache.clear()
    v_before = tr.interpolate_velocity(tr.active_end)
    tr.extend_segment()
    assert np.allclose(tr.d_pos, [0.01, 0.0, -0.01])
    v_after = tr.interpolate_velocity(tr.active_start)
    assert np.allclose(v_before, v_after, atol=1e-12)


def test_extend_velocity_continuity_exact():
    rng = np.random.default_rng(19)
    for _ in range(20):
        tr = random_trajectory(rng)
        t_knot = tr.active_end
        v_minus = tr.interpolate_velocity(t_knot)
        tr.extend_segment()
        v_plus = tr.interpolate_velocity(t_knot)
        assert np.allclose(v_minus, v_plus, atol=1e-12)


def test_extend_angular_rate_continuity_small_increments():
    rng = np.random.default_rng(20)
    for _ in range(20):
        tr = random_trajectory(rng, rot_scale=0.05 / np.sqrt(3))
        t_knot = tr.active_end
        w_minus = tr.interpolate_angular_rate(t_knot)
        tr.extend_segment()
        w_plus = tr.interpolate_angular_rate(t_knot)
        assert np.allclose(w_minus, w_plus, atol=1e-6 / tr.dt)


def test_extend_pose_history_unchanged():
    rng = np.random.default_rng(21)
    tr = random_trajectory(rng)
    lo, hi = tr.span
    ts = np.linspace(lo + tr.dt, hi, 5)
    R_before = [tr.interpolate_rotation(t) for t in ts]
    p_before = [tr.interpolate_position(t) for t in ts]
    tr.extend_segment()
    for t, R, p in zip(ts, R_before, p_before):
        assert np.allclose(tr.interpolate_rotation(t), R, atol=1e-12)
        assert np.allclose(tr.interpolate_position(t), p, atol=1e-12)


def test_live_slot_mapping():
    tr = SplineTrajectory.initial(0.0, 0.02, n_increments=7)
    s = tr.active_segment
    assert [tr.live_slot(s, j) for j in range(4)] == [0, 1, 2, 3]
    assert [tr.live_slot(s - 1, j) for j in range(4)] == [None, 0, 1, 2]
    assert [tr.live_slot(s - 3, j) for j in range(4)] == [None, None, None, 0]
    assert [tr.live_slot(s - 4, j) for j in range(4)] == [None, None, None, None]
