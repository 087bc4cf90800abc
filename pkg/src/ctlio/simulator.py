"""Synthetic box-room world with analytic trajectories and sensor models.

Ground truth is built from closed-form scalar motions (value plus first and
second derivatives), so emitted IMU streams are exact rather than finite
differenced. LiDAR returns are ray casts against the room walls with one
timestamp per point spread across the scan period.
"""

import math
from dataclasses import dataclass, field

import numpy as np

# -- scalar motion primitives ------------------------------------------------


class Const:
    def __init__(self, c=0.0):
        self.c = c

    def value(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.c)

    def d1(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    d2 = d1


class Line:
    """c + v * t (constant-velocity component)."""

    def __init__(self, v, c=0.0):
        self.v = v
        self.c = c

    def value(self, t):
        return self.c + self.v * np.asarray(t, dtype=float)

    def d1(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.v)

    def d2(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))


class Sine:
    """a * sin(2 pi f t + phase)."""

    def __init__(self, amplitude, freq_hz, phase=0.0):
        self.a = amplitude
        self.w = 2.0 * math.pi * freq_hz
        self.phase = phase

    def value(self, t):
        return self.a * np.sin(self.w * np.asarray(t, dtype=float) + self.phase)

    def d1(self, t):
        return self.a * self.w * np.cos(self.w * np.asarray(t) + self.phase)

    def d2(self, t):
        return -self.a * self.w**2 * np.sin(self.w * np.asarray(t) + self.phase)


class Sum:
    def __init__(self, *parts):
        self.parts = parts

    def value(self, t):
        return sum(p.value(t) for p in self.parts)

    def d1(self, t):
        return sum(p.d1(t) for p in self.parts)

    def d2(self, t):
        return sum(p.d2(t) for p in self.parts)


class Ramped:
    """inner(t - t_start) faded in by a C^2 quintic smoothstep.

    Identically zero (with zero derivatives) before t_start, which gives
    every scenario a static bootstrap window.
    """

    def __init__(self, inner, t_start, t_ramp):
        self.inner = inner
        self.t_start = t_start
        self.t_ramp = t_ramp

    def _s(self, t):
        x = np.clip((np.asarray(t, dtype=float) - self.t_start) / self.t_ramp,
                    0.0, 1.0)
        s = x**3 * (10.0 - 15.0 * x + 6.0 * x**2)
        s1 = 30.0 * x**2 * (1.0 - x) ** 2 / self.t_ramp
        s2 = 60.0 * x * (1.0 - 3.0 * x + 2.0 * x**2) / self.t_ramp**2
        return s, s1, s2

    def value(self, t):
        tau = np.asarray(t, dtype=float) - self.t_start
        return self._s(t)[0] * self.inner.value(tau)

    def d1(self, t):
        tau = np.asarray(t, dtype=float) - self.t_start
        s, s1, _ = self._s(t)
        return s1 * self.inner.value(tau) + s * self.inner.d1(tau)

    def d2(self, t):
        tau = np.asarray(t, dtype=float) - self.t_start
        s, s1, s2 = self._s(t)
        return (s2 * self.inner.value(tau) + 2.0 * s1 * self.inner.d1(tau)
                + s * self.inner.d2(tau))


# -- scenario ----------------------------------------------------------------


@dataclass
class LidarModel:
    rays_per_scan: int = 2000
    scan_period: float = 0.1
    n_lines: int = 16
    elev_min: float = -0.4  # rad
    elev_max: float = 0.4
    sigma_r: float = 0.0
    sigma_dir: float = 0.0  # rad, bearing jitter


@dataclass
class ImuModel:
    rate_hz: float = 200.0
    gyro_sigma: float = 0.0  # rad/s per sample
    accel_sigma: float = 0.0  # m/s^2 per sample
    bias_w: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_a: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass
class ScenarioSpec:
    duration: float = 60.0
    room_half: tuple = (5.0, 4.0, 2.0)
    g_mag: float = 9.81
    seed: int = 0
    gt_rate_hz: float = 100.0
    lidar: LidarModel = field(default_factory=LidarModel)
    imu: ImuModel = field(default_factory=ImuModel)
    # scalar motions: positions in m, yaw/pitch in rad
    x: object = field(default_factory=Const)
    y: object = field(default_factory=Const)
    z: object = field(default_factory=Const)
    yaw: object = field(default_factory=Const)
    pitch: object = field(default_factory=Const)

    def pose(self, t):
        """Batched ground-truth (R, p) at times t."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        p = np.column_stack([f.value(t) for f in (self.x, self.y, self.z)])
        psi, th = self.yaw.value(t), self.pitch.value(t)
        R = _rz(psi) @ _ry(th)
        return R, p

    def motion(self, t):
        """(R, p, omega_body, accel_world) at times t, all analytic."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        R, p = self.pose(t)
        a = np.column_stack([f.d2(t) for f in (self.x, self.y, self.z)])
        th = self.pitch.value(t)
        psi_d, th_d = self.yaw.d1(t), self.pitch.d1(t)
        # R = Rz(yaw) Ry(pitch): body rate = yaw_dot Ry^T e_z + pitch_dot e_y
        Ry = _ry(th)
        e_z = np.einsum("nji,j->ni", Ry, np.array([0.0, 0.0, 1.0]))
        omega = psi_d[:, None] * e_z
        omega[:, 1] += th_d
        return R, p, omega, a


def _rz(psi):
    psi = np.atleast_1d(psi)
    c, s = np.cos(psi), np.sin(psi)
    R = np.zeros(psi.shape + (3, 3))
    R[..., 0, 0], R[..., 0, 1] = c, -s
    R[..., 1, 0], R[..., 1, 1] = s, c
    R[..., 2, 2] = 1.0
    return R


def _ry(th):
    th = np.atleast_1d(th)
    c, s = np.cos(th), np.sin(th)
    R = np.zeros(th.shape + (3, 3))
    R[..., 0, 0], R[..., 0, 2] = c, s
    R[..., 1, 1] = 1.0
    R[..., 2, 0], R[..., 2, 2] = -s, c
    return R


def benign_scenario(duration=60.0, seed=0, noisy=False):
    """Gentle sinusoidal wander inside the room after a 1 s static start."""
    spec = ScenarioSpec(duration=duration, seed=seed)
    r = lambda f: Ramped(f, t_start=1.0, t_ramp=2.0)
    spec.x = r(Sine(1.0, 0.10))
    spec.y = r(Sine(0.8, 0.13))
    spec.z = r(Sine(0.2, 0.17))
    spec.yaw = r(Sine(0.3, 0.10))
    spec.pitch = r(Sine(0.10, 0.15))
    if noisy:
        spec.lidar.sigma_r = 0.02
        spec.lidar.sigma_dir = 0.001
        spec.imu.gyro_sigma = 0.002
        spec.imu.accel_sigma = 0.02
        spec.imu.bias_w = np.array([0.002, -0.001, 0.0015])
        spec.imu.bias_a = np.array([0.02, -0.03, 0.01])
    return spec


def aggressive_scenario(duration=30.0, seed=0, noisy=False):
    """Fast pitch rocking (about +-30 deg at 1 Hz) with added vibration."""
    spec = ScenarioSpec(duration=duration, seed=seed)
    r = lambda f: Ramped(f, t_start=1.0, t_ramp=1.0)
    spec.x = r(Sine(0.5, 1.0))
    spec.y = r(Sine(0.4, 0.8))
    spec.z = r(Sine(0.1, 1.3))
    spec.yaw = r(Sine(0.5, 0.7))
    spec.pitch = r(Sum(Sine(math.radians(30.0), 1.0), Sine(0.05, 9.0)))
    if noisy:
        spec.lidar.sigma_r = 0.02
        spec.lidar.sigma_dir = 0.001
        spec.imu.gyro_sigma = 0.002
        spec.imu.accel_sigma = 0.02
    return spec


# -- sensor synthesis --------------------------------------------------------


def generate_imu(spec):
    """(t, gyro, accel) streams over the scenario duration."""
    rng = np.random.default_rng(spec.seed + 1)
    t = np.arange(0.0, spec.duration + 1e-9, 1.0 / spec.imu.rate_hz)
    R, _, omega, a = spec.motion(t)
    g = np.array([0.0, 0.0, spec.g_mag])
    accel = np.einsum("nji,nj->ni", R, a + g)
    gyro = omega + spec.imu.bias_w
    accel = accel + spec.imu.bias_a
    if spec.imu.gyro_sigma > 0:
        gyro = gyro + rng.normal(scale=spec.imu.gyro_sigma, size=gyro.shape)
    if spec.imu.accel_sigma > 0:
        accel = accel + rng.normal(scale=spec.imu.accel_sigma,
                                   size=accel.shape)
    return t, gyro, accel


def scan_directions(model, rng=None):
    """Unit ray directions of one scan: azimuth sweeps a full turn while
    the elevation cycles through the line set, like a spinning device."""
    n = model.rays_per_scan
    az = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    lines = np.linspace(model.elev_min, model.elev_max, model.n_lines)
    el = lines[np.arange(n) % model.n_lines]
    d = np.column_stack([
        np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)
    ])
    return d


def raycast_box(origins, dirs, half):
    """First wall hit of each interior ray; returns ranges (inf on a miss).

    Walls are the six inward faces of the axis-aligned box |x_i| <= half_i.
    """
    n = origins.shape[0]
    best = np.full(n, np.inf)
    for axis in range(3):
        for sign in (-1.0, 1.0):
            bound = sign * half[axis]
            denom = dirs[:, axis]
            with np.errstate(divide="ignore", invalid="ignore"):
                s = (bound - origins[:, axis]) / denom
            s = np.where(np.isfinite(s), s, -1.0)
            hit = origins + s[:, None] * dirs
            ok = (np.abs(denom) > 1e-12) & (s > 1e-9)
            for other in range(3):
                if other != axis:
                    ok &= np.abs(hit[:, other]) <= half[other] + 1e-9
            best = np.where(ok & (s < best), s, best)
    return best


def generate_scan(spec, t_start, rng):
    """One scan: per-point timestamps across the period, sensor-frame points."""
    model = spec.lidar
    n = model.rays_per_scan
    t = t_start + np.arange(n) / n * model.scan_period
    R, p = spec.pose(t)
    d_sensor = scan_directions(model)
    if model.sigma_dir > 0:
        jit = rng.normal(scale=model.sigma_dir, size=(n, 3))
        d_sensor = d_sensor + np.cross(jit, d_sensor)
        d_sensor /= np.linalg.norm(d_sensor, axis=1, keepdims=True)
    d_world = np.einsum("nij,nj->ni", R, d_sensor)
    rng_true = raycast_box(p, d_world, spec.room_half)
    keep = np.isfinite(rng_true)
    r = rng_true[keep]
    if model.sigma_r > 0:
        r = r + rng.normal(scale=model.sigma_r, size=r.shape)
    pts = d_sensor[keep] * r[:, None]
    return t[keep], pts


def generate(spec):
    """Full dataset: ground truth samples, IMU stream, and scan list."""
    rng = np.random.default_rng(spec.seed)
    gt_t = np.arange(0.0, spec.duration + 1e-9, 1.0 / spec.gt_rate_hz)
    gt_R, gt_p = spec.pose(gt_t)
    imu_t, gyro, accel = generate_imu(spec)
    scans = []
    t0 = 0.0
    while t0 + spec.lidar.scan_period <= spec.duration + 1e-9:
        scans.append(generate_scan(spec, t0, rng))
        t0 += spec.lidar.scan_period
    return {
        "gt_t": gt_t, "gt_R": gt_R, "gt_p": gt_p,
        "imu_t": imu_t, "imu_gyro": gyro, "imu_accel": accel,
        "scans": scans,
    }
