"""Probabilistic adaptive voxel map.

Cells live on an integer lattice of configurable root size and subdivide
coarse-to-fine into octants. Each node accumulates point statistics and is
classified as a plane when its scatter is sufficiently flat, or as a volume
("voxel") feature when it is a leaf at maximum depth without a plane.
First-order uncertainty of the scatter eigenpairs is propagated from the
per-point world-frame covariances.
"""

from dataclasses import dataclass, field

import numpy as np

from .lie import skew

IMMATURE = "immature"
PLANE = "plane"
VOXEL = "voxel"


@dataclass
class MapConfig:
    root_size: float = 1.0
    max_depth: int = 3
    min_points: int = 20
    planarity: float = 0.01  # lambda_1 / lambda_3 acceptance ratio
    capacity: int = 100000  # max root cells before pruning
    eigen_gap_rel: float = 1e-6  # degenerate-eigenvalue guard
    max_dir_var: float = 1.0  # saturation for eigenvector covariance
    mean_cov_scale: float = 0.0  # weight on mean uncertainty (kept off)


def project_points(p_lidar, cov_lidar, R, p, cov_R, cov_t, R_IL, t_IL):
    """World-frame points and covariances from sensor-frame points.

    The covariance is the three-term sum: rotated measurement noise, the
    translation uncertainty, and the rotation uncertainty acting through the
    lever arm of the point in the body frame. Batched over the first axis;
    R may be (3, 3) or (n, 3, 3) for per-point poses.
    """
    p_lidar = np.atleast_2d(p_lidar)
    n = p_lidar.shape[0]
    s = p_lidar @ R_IL.T + t_IL  # body-frame point (n, 3)
    R = np.broadcast_to(R, (n, 3, 3)) if np.ndim(R) == 2 else R
    p = np.broadcast_to(p, (n, 3)) if np.ndim(p) == 1 else p
    p_world = np.einsum("nij,nj->ni", R, s) + p

    RRl = R @ R_IL
    cov_lidar = np.broadcast_to(cov_lidar, (n, 3, 3))
    cov = RRl @ cov_lidar @ np.swapaxes(RRl, -1, -2)
    cov = cov + np.broadcast_to(cov_t, (n, 3, 3))
    S = skew(s)
    cov_R = np.broadcast_to(cov_R, (n, 3, 3))
    lever = R @ S @ cov_R @ np.swapaxes(S, -1, -2) @ np.swapaxes(R, -1, -2)
    cov = cov + lever
    return p_world, 0.5 * (cov + np.swapaxes(cov, -1, -2))


def eigen_jacobians(points, q, eigvals, U):
    """Per-point derivative ingredients of the scatter eigendecomposition.

    Returns (e, a) with e_i = p_i - q and a[i, k] = e_i . u_k; the
    derivative formulas in feature_uncertainty are built from these.
    """
    e = points - q
    return e, e @ U


def feature_uncertainty(points, covs, q, eigvals, U, cfg):
    """First-order covariance of eigenvalues and eigenvectors.

    var_lambda[k] is the variance of eigenvalue k; cov_u[k] the 3x3
    covariance of eigenvector k. Near-degenerate eigenvalue pairs saturate
    the eigenvector covariance at cfg.max_dir_var. Mean uncertainty is not
    propagated.
    """
    n = points.shape[0]
    e, a = eigen_jacobians(points, q, eigvals, U)
    var_lambda = np.zeros(3)
    cov_u = np.zeros((3, 3, 3))
    uSu = np.einsum("ik,nkl,il->in", U.T, covs, U.T)  # u_k^T cov_n u_k -> (k, n)
    for k in range(3):
        g = (2.0 / n) * a[:, k]
        var_lambda[k] = np.sum(g * g * uSu[k])
        gap_ok = True
        J = np.zeros((n, 3, 3))
        for m in range(3):
            if m == k:
                continue
            gap = eigvals[k] - eigvals[m]
            if abs(gap) < cfg.eigen_gap_rel * max(eigvals[2], 1e-12):
                gap_ok = False
                break
            c = 1.0 / (n * gap)
            # v_{m,i} = a_k u_m + a_m u_k; J_i += c * u_m v_{m,i}^T
            v = a[:, k, None] * U[:, m] + a[:, m, None] * U[:, k]
            J += c * np.einsum("j,ni->nji", U[:, m], v)
        if not gap_ok:
            cov_u[k] = cfg.max_dir_var * np.eye(3)
            continue
        cov_u[k] = np.einsum("nij,njk,nlk->il", J, covs, J)
    return var_lambda, cov_u


@dataclass
class VoxelNode:
    key: tuple
    level: int
    origin: np.ndarray  # lower corner, world frame
    size: float
    classification: str = IMMATURE
    n: int = 0
    sum_p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    sum_ppT: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    raw_points: list = field(default_factory=list)
    raw_covs: list = field(default_factory=list)
    children: list | None = None
    mean: np.ndarray | None = None
    eigvals: np.ndarray | None = None  # ascending; eigvecs[:, 0] = normal
    eigvecs: np.ndarray | None = None
    var_lambda: np.ndarray | None = None
    cov_u: np.ndarray | None = None  # (3, 3, 3) per eigenvector

    def moments(self):
        """(mean, scatter) recomputed from the running sufficient statistics."""
        q = self.sum_p / self.n
        cov = self.sum_ppT / self.n - np.outer(q, q)
        return q, 0.5 * (cov + cov.T)

    @property
    def normal(self):
        return self.eigvecs[:, 0]

    def contains(self, p):
        rel = p - self.origin
        return np.all(rel > 0) and np.all(rel <= self.size) or (
            np.all(rel >= 0) and np.all(rel <= self.size)
        )

    def child_index(self, p):
        # boundary points go to the lower octant
        c = self.origin + 0.5 * self.size
        ix = int(p[0] > c[0])
        iy = int(p[1] > c[1])
        iz = int(p[2] > c[2])
        return ix * 4 + iy * 2 + iz


class VoxelMap:
    """Hash of root cells with adaptive octree refinement."""

    def __init__(self, cfg=None):
        self.cfg = cfg or MapConfig()
        self.roots: dict[tuple, VoxelNode] = {}
        self._touch: dict[tuple, int] = {}
        self._clock = 0

    def __len__(self):
        return len(self.roots)

    def root_key(self, p):
        # ceil - 1 puts face-boundary points into the lower cell
        return tuple((np.ceil(np.asarray(p) / self.cfg.root_size) - 1).astype(int))

    def insert_points(self, points, covs):
        """Insert world-frame points with covariances, updating features."""
        points = np.atleast_2d(points)
        covs = np.broadcast_to(covs, (points.shape[0], 3, 3))
        keys = (np.ceil(points / self.cfg.root_size) - 1).astype(int)
        order = np.lexsort(keys.T)
        keys = keys[order]
        points = points[order]
        covs = covs[order]
        splits = np.flatnonzero(np.any(np.diff(keys, axis=0) != 0, axis=1)) + 1
        for chunk_p, chunk_c, chunk_k in zip(
            np.split(points, splits), np.split(covs, splits), np.split(keys, splits)
        ):
            key = tuple(chunk_k[0])
            node = self.roots.get(key)
            if node is None:
                node = VoxelNode(
                    key,
                    0,
                    np.asarray(key, dtype=float) * self.cfg.root_size,
                    self.cfg.root_size,
                )
                self.roots[key] = node
            self._clock += 1
            self._touch[key] = self._clock
            self._insert_into(node, chunk_p, chunk_c)
        self._prune()

    def _insert_into(self, node, points, covs):
        if node.children is not None:
            idx = self._child_indices(node, points)
            for ci in np.unique(idx):
                sel = idx == ci
                self._insert_into(node.children[ci], points[sel], covs[sel])
            return
        node.n += points.shape[0]
        node.sum_p += points.sum(axis=0)
        node.sum_ppT += points.T @ points
        if node.classification == IMMATURE:
            node.raw_points.append(points)
            node.raw_covs.append(covs)
            if node.n >= self.cfg.min_points:
                self._classify(node)
        else:
            # classified leaf: keep moments fresh, refresh the eigenbasis
            self._refresh_eigen(node)

    @staticmethod
    def _child_indices(node, points):
        c = node.origin + 0.5 * node.size
        return (
            (points[:, 0] > c[0]).astype(int) * 4
            + (points[:, 1] > c[1]).astype(int) * 2
            + (points[:, 2] > c[2]).astype(int)
        )

    def _refresh_eigen(self, node):
        q, cov = node.moments()
        w, U = np.linalg.eigh(cov)
        node.mean = q
        node.eigvals = np.maximum(w, 0.0)
        node.eigvecs = U

    def _classify(self, node):
        self._refresh_eigen(node)
        lam = node.eigvals
        if lam[2] > 0 and lam[0] / lam[2] < self.cfg.planarity:
            self._finalize_feature(node, PLANE)
        elif node.level < self.cfg.max_depth:
            self._subdivide(node)
        else:
            self._finalize_feature(node, VOXEL)

    def _finalize_feature(self, node, kind):
        node.classification = kind
        pts = np.concatenate(node.raw_points)
        cvs = np.concatenate(node.raw_covs)
        node.var_lambda, node.cov_u = feature_uncertainty(
            pts, cvs, node.mean, node.eigvals, node.eigvecs, self.cfg
        )
        node.raw_points = []
        node.raw_covs = []

    def _subdivide(self, node):
        pts = np.concatenate(node.raw_points)
        cvs = np.concatenate(node.raw_covs)
        node.raw_points = []
        node.raw_covs = []
        half = 0.5 * node.size
        node.children = []
        for ci in range(8):
            off = np.array([ci // 4, (ci // 2) % 2, ci % 2], dtype=float) * half
            node.children.append(
                VoxelNode(node.key + (ci,), node.level + 1, node.origin + off, half)
            )
        idx = self._child_indices(node, pts)
        for ci in np.unique(idx):
            sel = idx == ci
            self._insert_into(node.children[ci], pts[sel], cvs[sel])

    def query(self, p):
        """Deepest classified node containing p, or None."""
        p = np.asarray(p, dtype=float)
        node = self.roots.get(self.root_key(p))
        best = None
        while node is not None:
            if node.classification != IMMATURE:
                best = node
            if node.children is None:
                break
            node = node.children[node.child_index(p)]
        return best

    def query_many(self, points):
        return [self.query(p) for p in np.atleast_2d(points)]

    def _prune(self):
        if len(self.roots) <= self.cfg.capacity:
            return
        by_age = sorted(self._touch.items(), key=lambda kv: kv[1])
        for key, _ in by_age[: len(self.roots) - self.cfg.capacity]:
            self.roots.pop(key, None)
            self._touch.pop(key, None)

    # -- export -----------------------------------------------------------

    def export_nodes_csv(self, path):
        """Per-node records 'level,key,q,lambda,normal,class,count'."""
        with open(path, "w") as f:
            f.write("level,key,qx,qy,qz,l1,l2,l3,nx,ny,nz,class,count\n")
            for node in self._walk():
                if node.n == 0:
                    continue
                if node.eigvals is None:
                    q = node.sum_p / node.n
                    lam = np.zeros(3)
                    nrm = np.zeros(3)
                else:
                    q, lam, nrm = node.mean, node.eigvals, node.normal
                key = ";".join(str(k) for k in node.key)
                f.write(
                    f"{node.level},{key},{q[0]:.6f},{q[1]:.6f},{q[2]:.6f},"
                    f"{lam[0]:.9g},{lam[1]:.9g},{lam[2]:.9g},"
                    f"{nrm[0]:.6f},{nrm[1]:.6f},{nrm[2]:.6f},"
                    f"{node.classification},{node.n}\n"
                )

    def export_means_ply(self, path):
        """Node means as an ASCII PLY point cloud for visualization."""
        rows = [n.mean for n in self._walk() if n.mean is not None]
        with open(path, "w") as f:
            f.write(
                "ply\nformat ascii 1.0\n"
                f"element vertex {len(rows)}\n"
                "property float x\nproperty float y\nproperty float z\n"
                "end_header\n"
            )
            for q in rows:
                f.write(f"{q[0]:.6f} {q[1]:.6f} {q[2]:.6f}\n")

    def _walk(self):
        stack = list(self.roots.values())
        while stack:
            node = stack.pop()
            yield node
            if node.children is not None:
                stack.extend(node.children)
