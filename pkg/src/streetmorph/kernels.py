"""Hot numeric kernels.

Every kernel exists twice: a numba ``@njit`` loop and a vectorized numpy
(or scipy) path.  The module-level names dispatch to whichever backend
``_backend.BACKEND`` selected; ``IMPLEMENTATIONS`` exposes both for tests
and benchmarks.  The two paths evaluate the same floating-point expressions
in the same order, so they agree bit-for-bit except where scipy's kd-tree
is involved (distance ties at exactly the radius).
"""
import math

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from ._backend import BACKEND, njit

__all__ = [
    "BACKEND",
    "IMPLEMENTATIONS",
    "cell_keys",
    "voxel_select",
    "count_inliers",
    "inlier_mask",
    "radius_components",
    "propagate_signs",
    "hull_chain",
    "convex_hull_indices",
]


def cell_keys(points, cell_size, origin=(0.0, 0.0, 0.0)):
    """Pack integer voxel coordinates into one sortable int64 key per point."""
    scaled = np.floor((points - np.asarray(origin, dtype=float)) / cell_size)
    if len(scaled) == 0:
        return np.zeros(0, dtype=np.int64)
    if np.abs(scaled).max() >= 2.0**62:
        raise ValueError(f"coordinates too far from the grid origin for cell size {cell_size}")
    ijk = scaled.astype(np.int64)
    ijk -= ijk.min(axis=0)
    dims = ijk.max(axis=0) + 1
    if float(dims[0]) * float(dims[1]) * float(dims[2]) < 2.0**62:
        return (ijk[:, 0] * dims[1] + ijk[:, 1]) * dims[2] + ijk[:, 2]
    _, inverse = np.unique(ijk, axis=0, return_inverse=True)
    return inverse.reshape(-1).astype(np.int64)


# --------------------------------------------------------------------------
# voxel representative selection


@njit(cache=True, nogil=True)
def _voxel_select_nb(keys, points):
    n = keys.shape[0]
    order = np.argsort(keys, kind="mergesort")
    out = np.empty(n, dtype=np.int64)
    m = 0
    start = 0
    while start < n:
        key = keys[order[start]]
        end = start + 1
        while end < n and keys[order[end]] == key:
            end += 1
        cx = 0.0
        cy = 0.0
        cz = 0.0
        for t in range(start, end):
            i = order[t]
            cx += points[i, 0]
            cy += points[i, 1]
            cz += points[i, 2]
        cnt = float(end - start)
        cx /= cnt
        cy /= cnt
        cz /= cnt
        best = -1
        best_d = np.inf
        for t in range(start, end):
            i = order[t]
            dx = points[i, 0] - cx
            dy = points[i, 1] - cy
            dz = points[i, 2] - cz
            d = dx * dx + dy * dy + dz * dz
            if d < best_d:
                best_d = d
                best = i
        out[m] = best
        m += 1
        start = end
    return np.sort(out[:m])


def _voxel_select_np(keys, points):
    n = keys.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    _, inv = np.unique(keys, return_inverse=True)
    inv = inv.reshape(-1)
    cnt = np.bincount(inv).astype(float)
    cx = np.bincount(inv, weights=points[:, 0]) / cnt
    cy = np.bincount(inv, weights=points[:, 1]) / cnt
    cz = np.bincount(inv, weights=points[:, 2]) / cnt
    dx = points[:, 0] - cx[inv]
    dy = points[:, 1] - cy[inv]
    dz = points[:, 2] - cz[inv]
    d = dx * dx + dy * dy + dz * dz
    order = np.lexsort((np.arange(n), d, inv))
    firsts = np.r_[0, np.flatnonzero(np.diff(inv[order])) + 1]
    return np.sort(order[firsts]).astype(np.int64)


# --------------------------------------------------------------------------
# plane candidate scoring


@njit(cache=True, nogil=True)
def _count_inliers_nb(points, normals, planes, eps, cos_alpha):
    n = points.shape[0]
    out = np.zeros(planes.shape[0], dtype=np.int64)
    for c in range(planes.shape[0]):
        a = planes[c, 0]
        b = planes[c, 1]
        g = planes[c, 2]
        d = planes[c, 3]
        cnt = 0
        for i in range(n):
            dist = points[i, 0] * a + points[i, 1] * b + points[i, 2] * g + d
            if abs(dist) <= eps:
                dot = normals[i, 0] * a + normals[i, 1] * b + normals[i, 2] * g
                if abs(dot) >= cos_alpha:
                    cnt += 1
        out[c] = cnt
    return out


@njit(cache=True, nogil=True)
def _inlier_mask_nb(points, normals, plane, eps, cos_alpha):
    n = points.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    a = plane[0]
    b = plane[1]
    g = plane[2]
    d = plane[3]
    for i in range(n):
        dist = points[i, 0] * a + points[i, 1] * b + points[i, 2] * g + d
        if abs(dist) <= eps:
            dot = normals[i, 0] * a + normals[i, 1] * b + normals[i, 2] * g
            if abs(dot) >= cos_alpha:
                out[i] = True
    return out


def _inlier_mask_np(points, normals, plane, eps, cos_alpha):
    a, b, g, d = (float(v) for v in plane)
    dist = points[:, 0] * a + points[:, 1] * b + points[:, 2] * g + d
    dot = normals[:, 0] * a + normals[:, 1] * b + normals[:, 2] * g
    return (np.abs(dist) <= eps) & (np.abs(dot) >= cos_alpha)


def _count_inliers_np(points, normals, planes, eps, cos_alpha):
    out = np.zeros(len(planes), dtype=np.int64)
    for c, plane in enumerate(planes):
        out[c] = np.count_nonzero(_inlier_mask_np(points, normals, plane, eps, cos_alpha))
    return out


# --------------------------------------------------------------------------
# connected components under a distance threshold (2D)


@njit(cache=True, nogil=True)
def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


@njit(cache=True, nogil=True)
def _union(parent, a, b):
    ra = _find(parent, a)
    rb = _find(parent, b)
    if ra < rb:
        parent[rb] = ra
    elif rb < ra:
        parent[ra] = rb


@njit(cache=True, nogil=True)
def _link_cells(xy, order, a0, a1, b0, b1, r2):
    for s in range(a0, a1):
        i = order[s]
        for t in range(b0, b1):
            j = order[t]
            dx = xy[i, 0] - xy[j, 0]
            dy = xy[i, 1] - xy[j, 1]
            if dx * dx + dy * dy <= r2:
                return True
    return False


@njit(cache=True, nogil=True)
def _radius_components_nb(xy, radius):
    # Cells of side radius/sqrt(2): points sharing a cell are always linked, so
    # only cell pairs up to two cells apart need an explicit distance check.
    # Points are bucketed by counting sort into a dense grid when it is small
    # enough, otherwise by sorting packed cell keys.
    n = xy.shape[0]
    parent = np.arange(n)
    if n == 0:
        return parent
    cell = radius / math.sqrt(2.0) * (1.0 - 1e-9)
    cx = np.floor(xy[:, 0] / cell).astype(np.int64)
    cy = np.floor(xy[:, 1] / cell).astype(np.int64)
    cx -= cx.min()
    cy -= cy.min()
    stride = cy.max() + 5
    key = (cx + 2) * stride + (cy + 2)
    n_keys = (cx.max() + 5) * stride
    r2 = radius * radius
    if n_keys <= 8 * n + 65536:
        count = np.zeros(n_keys + 1, dtype=np.int64)
        for i in range(n):
            count[key[i] + 1] += 1
        for k in range(n_keys):
            count[k + 1] += count[k]
        start = count  # start[k]..start[k+1] spans bucket k after the prefix sum
        fill = start[:-1].copy()
        order = np.empty(n, dtype=np.int64)
        for i in range(n):
            order[fill[key[i]]] = i
            fill[key[i]] += 1
        for i in range(n):
            k = key[i]
            first = order[start[k]]
            if first != i:
                _union(parent, first, i)
        for i in range(n):
            k = key[i]
            if order[start[k]] != i:
                continue  # visit each occupied cell once, through its first point
            for ox in range(0, 3):
                for oy in range(-2, 3):
                    if ox == 0 and oy <= 0:
                        continue
                    d = k + ox * stride + oy
                    if start[d] == start[d + 1]:
                        continue
                    if _find(parent, i) == _find(parent, order[start[d]]):
                        continue
                    if _link_cells(xy, order, start[k], start[k + 1], start[d], start[d + 1], r2):
                        _union(parent, i, order[start[d]])
    else:
        order = np.argsort(key, kind="mergesort")
        skey = key[order]
        starts = np.empty(n + 1, dtype=np.int64)
        m = 0
        for t in range(n):
            if t == 0 or skey[t] != skey[t - 1]:
                starts[m] = t
                m += 1
        starts[m] = n
        ukeys = np.empty(m, dtype=np.int64)
        for c in range(m):
            ukeys[c] = skey[starts[c]]
            first = order[starts[c]]
            for t in range(starts[c] + 1, starts[c + 1]):
                _union(parent, first, order[t])
        for c in range(m):
            for ox in range(0, 3):
                for oy in range(-2, 3):
                    if ox == 0 and oy <= 0:
                        continue
                    k = ukeys[c] + ox * stride + oy
                    d = np.searchsorted(ukeys, k)
                    if d >= m or ukeys[d] != k:
                        continue
                    a0 = order[starts[c]]
                    b0 = order[starts[d]]
                    if _find(parent, a0) == _find(parent, b0):
                        continue
                    if _link_cells(xy, order, starts[c], starts[c + 1], starts[d], starts[d + 1], r2):
                        _union(parent, a0, b0)
    for i in range(n):
        parent[i] = _find(parent, i)
    return parent


def _radius_components_np(xy, radius):
    n = len(xy)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    pairs = cKDTree(xy).query_pairs(radius, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, lab = connected_components(graph, directed=False)
    lowest = np.full(lab.max() + 1, n, dtype=np.int64)
    np.minimum.at(lowest, lab, np.arange(n))
    return lowest[lab]


# --------------------------------------------------------------------------
# normal sign propagation along a rooted tree


@njit(cache=True, nogil=True)
def _propagate_signs_nb(order, parent, normals):
    sign = np.ones(normals.shape[0])
    for t in range(order.shape[0]):
        i = order[t]
        p = parent[i]
        if p >= 0:
            dot = normals[i, 0] * normals[p, 0] + normals[i, 1] * normals[p, 1] + normals[i, 2] * normals[p, 2]
            sign[i] = sign[p] if dot >= 0.0 else -sign[p]
    return sign


def _propagate_signs_np(order, parent, normals):
    n = len(normals)
    has = parent >= 0
    ptr = np.where(has, parent, np.arange(n))
    dot = np.einsum("ij,ij->i", normals, normals[ptr])
    val = np.where(has & (dot < 0.0), -1.0, 1.0)
    while True:
        nxt = ptr[ptr]
        if np.array_equal(nxt, ptr):
            return val
        val = val * val[ptr]
        ptr = nxt


# --------------------------------------------------------------------------
# convex hull: Andrew's monotone chain over lexicographically sorted input


@njit(cache=True, nogil=True)
def _hull_chain_nb(xs, ys):
    n = xs.shape[0]
    hull = np.empty(2 * n + 1, dtype=np.int64)
    k = 0
    for i in range(n):
        while k >= 2:
            o = hull[k - 2]
            a = hull[k - 1]
            cr = (xs[a] - xs[o]) * (ys[i] - ys[o]) - (ys[a] - ys[o]) * (xs[i] - xs[o])
            if cr > 0.0:
                break
            k -= 1
        hull[k] = i
        k += 1
    t = k + 1
    for i in range(n - 2, -1, -1):
        while k >= t:
            o = hull[k - 2]
            a = hull[k - 1]
            cr = (xs[a] - xs[o]) * (ys[i] - ys[o]) - (ys[a] - ys[o]) * (xs[i] - xs[o])
            if cr > 0.0:
                break
            k -= 1
        hull[k] = i
        k += 1
    return hull[: max(k - 1, 1)]


def _hull_chain_py(xs, ys):
    xs = xs.tolist()
    ys = ys.tolist()
    n = len(xs)

    def turns_left(o, a, i):
        return (xs[a] - xs[o]) * (ys[i] - ys[o]) - (ys[a] - ys[o]) * (xs[i] - xs[o]) > 0.0

    hull = []
    for i in range(n):
        while len(hull) >= 2 and not turns_left(hull[-2], hull[-1], i):
            hull.pop()
        hull.append(i)
    lower = len(hull) + 1
    for i in range(n - 2, -1, -1):
        while len(hull) >= lower and not turns_left(hull[-2], hull[-1], i):
            hull.pop()
        hull.append(i)
    return np.asarray(hull[: max(len(hull) - 1, 1)], dtype=np.int64)


def _octagon_filter(xy):
    """Indices of points not strictly inside the octagon of extreme points."""
    x = xy[:, 0]
    y = xy[:, 1]
    ext = [
        np.argmin(y), np.argmax(x - y), np.argmax(x), np.argmax(x + y),
        np.argmax(y), np.argmin(x - y), np.argmin(x), np.argmin(x + y),
    ]
    poly = []
    for i in ext:
        if not poly or (xy[i] != xy[poly[-1]]).any():
            poly.append(i)
    while len(poly) > 1 and (xy[poly[0]] == xy[poly[-1]]).all():
        poly.pop()
    if len(poly) < 3:
        return np.arange(len(xy))
    span = float(np.ptp(xy, axis=0).max())
    tol = 1e-12 * span * span
    inside = np.ones(len(xy), dtype=bool)
    verts = xy[poly]
    for a, b in zip(verts, np.roll(verts, -1, axis=0)):
        cr = (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0])
        inside &= cr > tol
    return np.flatnonzero(~inside)


def _make_hull(chain):
    def convex_hull_indices(xy):
        xy = np.asarray(xy, dtype=float)
        if len(xy) == 0:
            return np.zeros(0, dtype=np.int64)
        keep = _octagon_filter(xy) if len(xy) > 16 else np.arange(len(xy))
        sub = xy[keep]
        order = np.lexsort((sub[:, 1], sub[:, 0]))
        xs = np.ascontiguousarray(sub[order, 0])
        ys = np.ascontiguousarray(sub[order, 1])
        return keep[order[chain(xs, ys)]]

    return convex_hull_indices


# --------------------------------------------------------------------------

IMPLEMENTATIONS = {
    "numba": {
        "voxel_select": _voxel_select_nb,
        "count_inliers": _count_inliers_nb,
        "inlier_mask": _inlier_mask_nb,
        "radius_components": _radius_components_nb,
        "propagate_signs": _propagate_signs_nb,
        "hull_chain": _hull_chain_nb,
        "convex_hull_indices": _make_hull(_hull_chain_nb),
    },
    "numpy": {
        "voxel_select": _voxel_select_np,
        "count_inliers": _count_inliers_np,
        "inlier_mask": _inlier_mask_np,
        "radius_components": _radius_components_np,
        "propagate_signs": _propagate_signs_np,
        "hull_chain": _hull_chain_py,
        "convex_hull_indices": _make_hull(_hull_chain_py),
    },
}

_active = IMPLEMENTATIONS[BACKEND]
voxel_select = _active["voxel_select"]
count_inliers = _active["count_inliers"]
inlier_mask = _active["inlier_mask"]
radius_components = _active["radius_components"]
propagate_signs = _active["propagate_signs"]
hull_chain = _active["hull_chain"]
convex_hull_indices = _active["convex_hull_indices"]
