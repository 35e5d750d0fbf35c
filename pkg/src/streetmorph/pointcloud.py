"""Point clouds: construction, voxel downsampling and normal estimation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components, minimum_spanning_tree
from scipy.spatial import cKDTree

from . import kernels
from .errors import DegenerateGeometryError, InputError

logger = logging.getLogger(__name__)

NORMAL_TOL = 1e-6


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An immutable set of 3D points in meters, z up.

    ``normals`` is an optional (N, 3) array of unit vectors.  ``normal_valid``
    marks points whose normal could be estimated; invalid ones still carry a
    placeholder unit vector but are skipped by plane detection.  Extra per-point
    attributes (colour, intensity, labels) ride along in ``attributes``.
    """

    points: np.ndarray
    normals: np.ndarray | None = None
    normal_valid: np.ndarray | None = None
    attributes: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(pts).all():
            bad = int(np.flatnonzero(~np.isfinite(pts).all(axis=1))[0])
            raise InputError(f"non-finite coordinate at point {bad}")
        object.__setattr__(self, "points", _frozen(pts))
        n = len(pts)
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(nrm) != n:
                raise InputError(f"normal count {len(nrm)} does not match point count {n}")
            length = np.linalg.norm(nrm, axis=1)
            if n and np.abs(length - 1.0).max() > NORMAL_TOL:
                bad = int(np.argmax(np.abs(length - 1.0)))
                raise InputError(f"normal at point {bad} is not unit length (|n|={length[bad]:.6g})")
            object.__setattr__(self, "normals", _frozen(nrm))
            valid = np.ones(n, dtype=bool) if self.normal_valid is None else np.asarray(self.normal_valid, bool)
            if len(valid) != n:
                raise InputError("normal_valid length does not match point count")
            object.__setattr__(self, "normal_valid", _frozen(valid))
        elif self.normal_valid is not None:
            raise InputError("normal_valid given without normals")
        attrs = {}
        for name, values in self.attributes.items():
            values = np.asarray(values)
            if len(values) != n:
                raise InputError(f"attribute {name!r} has {len(values)} values for {n} points")
            attrs[name] = _frozen(values)
        object.__setattr__(self, "attributes", attrs)

    def __len__(self):
        return len(self.points)

    @property
    def has_normals(self):
        return self.normals is not None

    @property
    def bbox(self):
        """(min corner, max corner); zeros for an empty cloud."""
        if len(self.points) == 0:
            return np.zeros(3), np.zeros(3)
        return self.points.min(axis=0), self.points.max(axis=0)

    def subset(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        return PointCloud(
            self.points[idx],
            None if self.normals is None else self.normals[idx],
            None if self.normal_valid is None else self.normal_valid[idx],
            {k: v[idx] for k, v in self.attributes.items()},
        )

    def with_normals(self, normals, valid=None):
        return PointCloud(self.points, normals, valid, self.attributes)

    def transformed(self, rotation=None, translation=None, scale=1.0):
        """Rigid/similarity transform; normals rotate with the points."""
        rot = np.eye(3) if rotation is None else np.asarray(rotation, dtype=float)
        t = np.zeros(3) if translation is None else np.asarray(translation, dtype=float)
        pts = scale * (self.points @ rot.T) + t
        nrm = None if self.normals is None else self.normals @ rot.T
        return PointCloud(pts, nrm, self.normal_valid, self.attributes)


@dataclass(frozen=True)
class VoxelGrid:
    """Occupied cells of a world-anchored grid and their representative points."""

    cell_size: float
    origin: np.ndarray
    cells: dict  # (i, j, k) -> representative point index into the source cloud

    def cell_of(self, point):
        ijk = np.floor((np.asarray(point) - self.origin) / self.cell_size).astype(np.int64)
        return tuple(int(v) for v in ijk)


def voxel_grid(cloud: PointCloud, cell_size: float, origin=(0.0, 0.0, 0.0)) -> VoxelGrid:
    if not cell_size > 0:
        raise ValueError("cell_size must be positive")
    origin = np.asarray(origin, dtype=float)
    keys = kernels.cell_keys(cloud.points, cell_size, origin)
    chosen = kernels.voxel_select(keys, cloud.points)
    ijk = np.floor((cloud.points[chosen] - origin) / cell_size).astype(np.int64)
    cells = {tuple(int(v) for v in c): int(i) for c, i in zip(ijk, chosen)}
    return VoxelGrid(float(cell_size), origin, cells)


def downsample(cloud: PointCloud, cell_size: float, origin=(0.0, 0.0, 0.0)) -> PointCloud:
    """Keep one point per voxel: the original point nearest the cell's point centroid.

    Cells are anchored at ``origin`` (world zero by default) rather than the
    cloud's bounding box, which makes the operation idempotent.
    """
    if not cell_size > 0:
        raise ValueError("cell_size must be positive")
    if len(cloud) == 0:
        return cloud
    keys = kernels.cell_keys(cloud.points, cell_size, origin)
    return cloud.subset(kernels.voxel_select(keys, cloud.points))


def reduction_line(n_in: int, n_out: int) -> str:
    ratio = 0.0 if n_in == 0 else 1.0 - n_out / n_in
    return f"{n_in:,} -> {n_out:,} points ({ratio * 100:.2f}% reduction)"


def _orient(normals, neighbors):
    """Make normal signs consistent along a minimum spanning tree of the kNN graph."""
    n, k = neighbors.shape
    rows = np.repeat(np.arange(n), k)
    cols = neighbors.reshape(-1)
    keep = rows != cols
    rows, cols = rows[keep], cols[keep]
    dots = np.abs(np.einsum("ij,ij->i", normals[rows], normals[cols]))
    # zero weights would be dropped as missing edges
    weight = 1.0 - dots + 1e-6
    graph = coo_matrix((weight, (rows, cols)), shape=(n, n)).tocsr()
    graph = graph.maximum(graph.T)
    tree = minimum_spanning_tree(graph)
    tree = (tree + tree.T).tocoo()
    # a virtual root joins every tree of the forest to its lowest-index node
    _, comp = connected_components(tree, directed=False)
    roots = np.full(comp.max() + 1, n, dtype=np.int64)
    np.minimum.at(roots, comp, np.arange(n))
    r = np.r_[tree.row, np.full(len(roots), n), roots]
    c = np.r_[tree.col, roots, np.full(len(roots), n)]
    full = coo_matrix((np.ones(len(r)), (r, c)), shape=(n + 1, n + 1)).tocsr()
    order, pred = breadth_first_order(full, n, directed=False, return_predecessors=True)
    order = order[1:]
    parent = pred[:n].astype(np.int64)
    parent[(parent == n) | (parent < 0)] = -1
    sign = kernels.propagate_signs(order.astype(np.int64), parent, normals)
    return normals * sign[:, None]


def estimate_normals(cloud: PointCloud, k: int = 10, *, workers: int = 1, orient: bool = True) -> PointCloud:
    """Attach PCA normals from each point's k nearest neighbours.

    Points whose neighbourhood is (numerically) collinear get ``normal_valid``
    False.  Signs are made consistent by propagation over a minimum spanning
    tree seeded at the lowest index of each connected piece.
    """
    if k < 3:
        raise ValueError("k must be at least 3")
    n = len(cloud)
    if n < k + 1:
        raise DegenerateGeometryError(f"need at least {k + 1} points to estimate normals with k={k}, got {n}")
    pts = cloud.points
    _, nbr = cKDTree(pts).query(pts, k=k + 1, workers=workers)
    nbr = np.asarray(nbr, dtype=np.int64)
    local = pts[nbr] - pts[nbr].mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", local, local) / (k + 1)
    evals, evecs = np.linalg.eigh(cov)
    normals = np.ascontiguousarray(evecs[:, :, 0])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    scale = np.maximum(evals[:, 2], 1e-300)
    valid = evals[:, 1] > 1e-10 * scale
    normals[~valid] = (0.0, 0.0, 1.0)
    if orient:
        normals = _orient(normals, nbr)
    if (~valid).any():
        logger.info("%d of %d points have degenerate neighbourhoods", int((~valid).sum()), n)
    return cloud.with_normals(normals, valid)
