"""File ingestion and export: IMU CSV, per-scan CSV, TUM trajectories."""

import csv
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation


def rotation_to_quat(R):
    """Rotation matrix to quaternion (qx, qy, qz, qw)."""
    return Rotation.from_matrix(R).as_quat()


def quat_to_rotation(q):
    """Quaternion (qx, qy, qz, qw) to rotation matrix."""
    return Rotation.from_quat(q).as_matrix()


class MalformedInputError(ValueError):
    """Raised with the offending line number on unparseable input rows."""


def read_imu_csv(path):
    """Read IMU samples from CSV 't,wx,wy,wz,ax,ay,az' (SI units).

    Returns (t, gyro, accel) arrays of shapes (n,), (n, 3), (n, 3).
    """
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        for lineno, row in enumerate(reader, start=1):
            if not row or row[0].strip().startswith(("t", "#")):
                continue
            try:
                rows.append([float(x) for x in row[:7]])
            except (ValueError, IndexError) as e:
                raise MalformedInputError(f"{path}:{lineno}: bad IMU row") from e
    data = np.asarray(rows)
    if data.size == 0:
        return np.empty(0), np.empty((0, 3)), np.empty((0, 3))
    return data[:, 0], data[:, 1:4], data[:, 4:7]


def write_imu_csv(path, t, gyro, accel):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "wx", "wy", "wz", "ax", "ay", "az"])
        for ti, g, a in zip(t, gyro, accel):
            w.writerow([f"{ti:.9f}"] + [f"{x:.9f}" for x in (*g, *a)])


def read_scan_csv(path):
    """Read one scan from CSV 't,x,y,z' (sensor frame, per-point times).

    Returns (t, points) with shapes (n,) and (n, 3).
    """
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        for lineno, row in enumerate(reader, start=1):
            if not row or row[0].strip().startswith(("t", "#")):
                continue
            try:
                rows.append([float(x) for x in row[:4]])
            except (ValueError, IndexError) as e:
                raise MalformedInputError(f"{path}:{lineno}: bad scan row") from e
    data = np.asarray(rows)
    if data.size == 0:
        return np.empty(0), np.empty((0, 3))
    return data[:, 0], data[:, 1:4]


def write_scan_csv(path, t, points):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "x", "y", "z"])
        for ti, p in zip(t, points):
            w.writerow([f"{ti:.9f}", f"{p[0]:.9f}", f"{p[1]:.9f}", f"{p[2]:.9f}"])


def list_scan_files(scans_dir):
    """Numbered scan CSVs in a directory, sorted by filename."""
    return sorted(Path(scans_dir).glob("scan_*.csv"))


def read_tum(path):
    """Read a TUM trajectory: (t, positions, quaternions)."""
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                rows.append([float(x) for x in parts[:8]])
            except (ValueError, IndexError) as e:
                raise MalformedInputError(f"{path}:{lineno}: bad TUM row") from e
    data = np.asarray(rows)
    if data.size == 0:
        return np.empty(0), np.empty((0, 3)), np.empty((0, 4))
    return data[:, 0], data[:, 1:4], data[:, 4:8]


def write_tum(path, t, positions, quaternions):
    with open(path, "w") as f:
        for ti, p, q in zip(t, positions, quaternions):
            f.write(
                f"{ti:.9f} {p[0]:.9f} {p[1]:.9f} {p[2]:.9f} "
                f"{q[0]:.9f} {q[1]:.9f} {q[2]:.9f} {q[3]:.9f}\n"
            )
