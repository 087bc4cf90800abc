import math

import numpy as np

from ctlio.lie import so3_log
from ctlio.simulator import (
    Line,
    Ramped,
    ScenarioSpec,
    Sine,
    aggressive_scenario,
    benign_scenario,
    generate,
    generate_imu,
    generate_scan,
    raycast_box,
)


def test_static_window_imu_at_rest():
    spec = benign_scenario(duration=5.0)
    t, gyro, accel = generate_imu(spec)
    still = t < 1.0
    assert np.allclose(gyro[still], 0.0, atol=1e-14)
    assert np.allclose(accel[still], [0.0, 0.0, 9.81], atol=1e-12)


def test_static_pose_tilted_measures_rotated_gravity():
    spec = ScenarioSpec(duration=1.0)
    spec.pitch = Line(0.0, c=0.0)

    class FixedPitch:
        def value(self, t):
            return np.full_like(np.asarray(t, dtype=float), 0.3)

        def d1(self, t):
            return np.zeros_like(np.asarray(t, dtype=float))

        d2 = d1

    spec.pitch = FixedPitch()
    t, gyro, accel = generate_imu(spec)
    R, _ = spec.pose(np.array([0.5]))
    expected = R[0].T @ [0.0, 0.0, 9.81]
    assert np.allclose(gyro, 0.0, atol=1e-14)
    assert np.allclose(accel, expected, atol=1e-12)


def richardson_d2(f, t, h):
    def d2(hh):
        return (f(t + hh) - 2.0 * f(t) + f(t - hh)) / hh**2

    return (16.0 * d2(h / 2) - d2(h)) / 15.0


def test_ground_truth_derivative_consistency():
    spec = benign_scenario(duration=20.0)
    ts = np.linspace(2.0, 18.0, 25)
    R, p, omega, a = spec.motion(ts)
    h = 1e-3
    for i, t in enumerate(ts):
        # acceleration vs fourth-order second difference of the path
        fd_a = richardson_d2(lambda tt: spec.pose(tt)[1][0], t, h)
        assert np.allclose(fd_a, a[i], atol=1e-8)
        # body rate vs logarithmic derivative of R
        Rp = spec.pose(np.array([t + h]))[0][0]
        Rm = spec.pose(np.array([t - h]))[0][0]
        fd_w = so3_log(Rm.T @ Rp) / (2 * h)
        assert np.allclose(fd_w, omega[i], atol=1e-6)
        h2 = h / 2
        Rp2 = spec.pose(np.array([t + h2]))[0][0]
        Rm2 = spec.pose(np.array([t - h2]))[0][0]
        fd_w2 = so3_log(Rm2.T @ Rp2) / (2 * h2)
        fd_w4 = (4.0 * fd_w2 - fd_w) / 3.0
        assert np.allclose(fd_w4, omega[i], atol=1e-8)


def test_raycast_center_hits_walls():
    half = (5.0, 4.0, 2.0)
    o = np.zeros((3, 3))
    d = np.array([[1.0, 0, 0], [0, -1.0, 0], [0, 0, 1.0]])
    r = raycast_box(o, d, half)
    assert np.allclose(r, [5.0, 4.0, 2.0])


def test_raycast_oblique_and_offset():
    half = (5.0, 4.0, 2.0)
    o = np.array([[2.0, 1.0, 0.0]])
    d = np.array([[1.0, 0.0, 0.0]])
    assert np.allclose(raycast_box(o, d, half), [3.0])
    d = np.array([[1.0, 1.0, 0.0]]) / math.sqrt(2)
    # hits y = +4 first: 3 / (1/sqrt(2))
    assert np.allclose(raycast_box(o, d, half), [3.0 * math.sqrt(2)])


def test_constant_velocity_deskew_points_on_walls():
    spec = ScenarioSpec(duration=2.0)
    spec.x = Line(0.5)
    spec.yaw = Line(0.2)
    rng = np.random.default_rng(0)
    t, pts = generate_scan(spec, 0.3, rng)
    R, p = spec.pose(t)
    p_w = np.einsum("nij,nj->ni", R, pts) + p
    half = np.array(spec.room_half)
    dist_to_wall = np.min(np.abs(np.abs(p_w) - half), axis=1)
    assert np.max(dist_to_wall) < 1e-9


def test_generate_deterministic():
    s1 = generate(benign_scenario(duration=2.0, seed=3, noisy=True))
    s2 = generate(benign_scenario(duration=2.0, seed=3, noisy=True))
    assert np.array_equal(s1["imu_accel"], s2["imu_accel"])
    for (t1, p1), (t2, p2) in zip(s1["scans"], s2["scans"]):
        assert np.array_equal(t1, t2) and np.array_equal(p1, p2)
    s3 = generate(benign_scenario(duration=2.0, seed=4, noisy=True))
    assert not np.array_equal(s1["scans"][0][1], s3["scans"][0][1])


def test_scan_timestamps_span_period():
    spec = benign_scenario(duration=2.0)
    data = generate(spec)
    t, pts = data["scans"][3]
    assert t.min() >= 0.3 - 1e-12
    assert t.max() < 0.4
    assert t.size == pts.shape[0]
    assert np.all(np.diff(t) >= 0)


def test_aggressive_preset_pitch_range():
    spec = aggressive_scenario(duration=10.0)
    t = np.linspace(0, 10, 5000)
    pitch = spec.pitch.value(t)
    assert np.max(pitch) > math.radians(25)
    assert np.min(pitch) < -math.radians(25)


def test_ramp_is_smooth():
    f = Ramped(Sine(1.0, 0.5), t_start=1.0, t_ramp=2.0)
    for t in (1.0, 3.0, 2.2):
        h = 1e-5
        fd1 = (f.value(t + h) - f.value(t - h)) / (2 * h)
        fd2 = (f.value(t + h) - 2 * f.value(t) + f.value(t - h)) / h**2
        assert abs(fd1 - f.d1(t)) < 1e-7
        assert abs(fd2 - f.d2(t)) < 1e-4
    assert f.value(0.5) == 0.0 and f.d1(0.5) == 0.0 and f.d2(0.5) == 0.0
