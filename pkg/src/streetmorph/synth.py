"""Synthetic labelled scenes and slow brute-force oracles.

A ``SceneSpec`` is a list of parallelogram planes (origin plus two edge
vectors), each tagged with a role, plus clutter boxes.  ``generate`` samples
it into a labelled point cloud; ``analytic_truth`` derives the expected scene
metrics from the spec geometry alone, without looking at any points.

The ``oracle_*`` functions are deliberately naive re-implementations used to
cross-check the fast paths in tests.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError
from .pointcloud import PointCloud

CLUTTER = -1
STREET = "street"
FACADE = "facade"
OTHER = "other"


@dataclass
class PlaneSpec:
    label: int
    origin: list
    edge_u: list
    edge_v: list
    role: str = OTHER
    pitch: float = 0.05
    sigma: float = 0.0
    side: str = ""  # expected side label for facades of a single-street spec

    @property
    def normal(self):
        n = np.cross(self.edge_u, self.edge_v)
        return n / np.linalg.norm(n)

    @property
    def corners(self):
        o = np.asarray(self.origin, dtype=float)
        u = np.asarray(self.edge_u, dtype=float)
        v = np.asarray(self.edge_v, dtype=float)
        return np.array([o, o + u, o + u + v, o + v])

    @property
    def area(self):
        return float(np.linalg.norm(np.cross(self.edge_u, self.edge_v)))

    @property
    def center(self):
        return self.corners.mean(axis=0)

    @property
    def height(self):
        z = self.corners[:, 2]
        return float(z.max() - z.min())


@dataclass
class ClutterSpec:
    lo: list
    hi: list
    count: int


@dataclass
class SceneSpec:
    planes: list
    clutter: list = field(default_factory=list)
    seed: int = 0
    name: str = "scene"

    def problems(self):
        out = []
        labels = [p.label for p in self.planes]
        if len(set(labels)) != len(labels):
            out.append("plane labels must be unique")
        for p in self.planes:
            if np.linalg.norm(np.cross(p.edge_u, p.edge_v)) <= 1e-12:
                out.append(f"plane {p.label} has zero extent")
            if not p.pitch > 0:
                out.append(f"plane {p.label} pitch must be > 0")
            if p.sigma < 0:
                out.append(f"plane {p.label} sigma must be >= 0")
            if p.role not in (STREET, FACADE, OTHER):
                out.append(f"plane {p.label} has unknown role {p.role!r}")
        for c in self.clutter:
            if c.count < 0 or np.any(np.asarray(c.hi) < np.asarray(c.lo)):
                out.append("clutter box must have lo <= hi and count >= 0")
        return out

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(
            planes=[PlaneSpec(**p) for p in d["planes"]],
            clutter=[ClutterSpec(**c) for c in d.get("clutter", [])],
            seed=int(d.get("seed", 0)),
            name=d.get("name", "scene"),
        )

    @classmethod
    def from_json(cls, text: str):
        return cls.from_dict(json.loads(text))

    def streets(self):
        return [p for p in self.planes if p.role == STREET]

    def facades(self):
        return [p for p in self.planes if p.role == FACADE]


def sample_plane(p: PlaneSpec, rng):
    u = np.asarray(p.edge_u, dtype=float)
    v = np.asarray(p.edge_v, dtype=float)
    nu = max(1, int(round(np.linalg.norm(u) / p.pitch)))
    nv = max(1, int(round(np.linalg.norm(v) / p.pitch)))
    a, b = np.meshgrid(np.arange(nu + 1) / nu, np.arange(nv + 1) / nv, indexing="ij")
    pts = np.asarray(p.origin, dtype=float) + np.outer(a.ravel(), u) + np.outer(b.ravel(), v)
    if p.sigma > 0:
        pts = pts + np.outer(rng.normal(0.0, p.sigma, len(pts)), p.normal)
    return pts


def generate(spec: SceneSpec, *, with_normals: bool = False):
    """Sample ``spec``; returns (cloud, labels, truth).

    Labels hold the plane label per point, or ``CLUTTER``.  With
    ``with_normals`` the cloud carries generator normals (random unit vectors
    for clutter).
    """
    problems = spec.problems()
    if problems:
        raise ConfigError(problems)
    rng = np.random.default_rng(spec.seed)
    chunks, labels, normals = [], [], []
    for p in spec.planes:
        pts = sample_plane(p, rng)
        chunks.append(pts)
        labels.append(np.full(len(pts), p.label))
        normals.append(np.tile(p.normal, (len(pts), 1)))
    for c in spec.clutter:
        pts = rng.uniform(c.lo, c.hi, size=(c.count, 3))
        chunks.append(pts)
        labels.append(np.full(c.count, CLUTTER))
        rnd = rng.normal(size=(c.count, 3))
        normals.append(rnd / np.linalg.norm(rnd, axis=1, keepdims=True))
    pts = np.concatenate(chunks) if chunks else np.zeros((0, 3))
    lab = np.concatenate(labels) if labels else np.zeros(0, dtype=int)
    nrm = (np.concatenate(normals) if normals else np.zeros((0, 3))) if with_normals else None
    cloud = PointCloud(pts, nrm, None, {"label": lab.astype(np.int32)})
    return cloud, lab, analytic_truth(spec)


# --------------------------------------------------------------------------
# analytic ground truth


def _street_axis(p: PlaneSpec):
    u = np.asarray(p.edge_u, dtype=float)[:2]
    v = np.asarray(p.edge_v, dtype=float)[:2]
    axis = u if np.linalg.norm(u) >= np.linalg.norm(v) else v
    axis = axis / np.linalg.norm(axis)
    if axis[0] < -1e-12 or (abs(axis[0]) <= 1e-12 and axis[1] < 0):
        axis = -axis
    return axis


def _side(axis, street_center, facade_center, tol=0.25):
    d = facade_center[:2] - street_center[:2]
    cr = axis[0] * d[1] - axis[1] * d[0]
    if abs(cr) < tol:
        return "unknown"
    return "A" if cr > 0 else "B"


def _pair_width(f_normal, f_point, g_normal, g_point, at, max_angle_deg=15.0):
    nf = np.asarray(f_normal, dtype=float)
    ng = np.asarray(g_normal, dtype=float)
    if nf @ ng < 0:
        ng = -ng
    if nf @ ng < math.cos(math.radians(max_angle_deg)):
        return None
    sf = nf @ (at - f_point)
    sg = ng @ (at - g_point)
    if not sf * sg < 0:
        return None
    m = nf + ng
    m /= np.linalg.norm(m)
    tf = -sf / (nf @ m)
    tg = -sg / (ng @ m)
    return abs(tf - tg)


def analytic_truth(spec: SceneSpec, adjacency_radius: float = 1.0) -> list:
    """Per-street expected metrics computed from exact spec geometry."""
    out = []
    for s in spec.streets():
        sc = s.center
        plan = _convex_plan(s.corners)
        members = []
        for f in spec.facades():
            if f.center[2] < sc[2]:
                continue
            if oracle_polygon_distance(plan, _convex_plan(f.corners)) <= adjacency_radius:
                members.append(f)
        axis = _street_axis(s)
        sides = [_side(axis, sc, f.center) for f in members]
        widths = []
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                if {sides[i], sides[j]} != {"A", "B"}:
                    continue
                w = _pair_width(members[i].normal, members[i].origin, members[j].normal, members[j].origin, sc)
                if w is not None:
                    widths.append(w)
        heights = [f.height for f in members]
        width = float(np.mean(widths)) if widths else None
        out.append({
            "street_label": s.label,
            "facade_labels": [f.label for f in members],
            "sides": sides,
            "width": width,
            "elevation": float(sc[2]),
            "heterogeneity": oracle_sigma(heights) if heights else 0.0,
            "density": len(members) / s.area,
            "canyon": (max(heights) / width) if (width and heights) else None,
            "max_height": max(heights) if heights else None,
            "length": float(max(np.linalg.norm(np.asarray(s.edge_u)[:2]), np.linalg.norm(np.asarray(s.edge_v)[:2]))),
        })
    return out


# --------------------------------------------------------------------------
# scene builders


def _rotate_z(vec, yaw):
    c, s = math.cos(yaw), math.sin(yaw)
    x, y, z = vec
    return [c * x - s * y, s * x + c * y, z]


def street_spec(length, width, facades, *, z0=0.0, slope=0.0, pitch=0.05, sigma=0.0, yaw=0.0,
                offset=(0.0, 0.0), clutter_count=0, seed=0, label_start=0, name="street"):
    """A straight street along local +x with facades on side A (+y) and B (-y).

    ``facades`` holds (side, start, frontage, height) tuples measured along
    the street.  ``slope`` raises the street (and facade bases) by slope*x.
    """
    ox, oy = offset

    def place(origin, eu, ev):
        o = _rotate_z(origin, yaw)
        return [o[0] + ox, o[1] + oy, o[2]], _rotate_z(eu, yaw), _rotate_z(ev, yaw)

    planes = []
    o, eu, ev = place([0.0, -width / 2, z0], [length, 0.0, slope * length], [0.0, width, 0.0])
    planes.append(PlaneSpec(label_start, o, eu, ev, role=STREET, pitch=pitch, sigma=sigma))
    for k, (side, start, frontage, height) in enumerate(facades, start=1):
        y = width / 2 if side == "A" else -width / 2
        o, eu, ev = place([start, y, z0 + slope * start], [frontage, 0.0, slope * frontage], [0.0, 0.0, height])
        planes.append(PlaneSpec(label_start + k, o, eu, ev, role=FACADE, pitch=pitch, sigma=sigma, side=side))
    clutter = []
    if clutter_count:
        lo = [0.5, -width / 2 + 0.3, z0 + 0.2]
        hi = [length - 0.5, width / 2 - 0.3, z0 + 2.0 + slope * length]
        corners = np.array([place([x, y, lo[2]], [0, 0, 0], [0, 0, 0])[0] for x in (lo[0], hi[0]) for y in (lo[1], hi[1])])
        clutter.append(ClutterSpec(corners.min(axis=0).tolist(),
                                   (corners.max(axis=0) + [0, 0, hi[2] - lo[2]]).tolist(), int(clutter_count)))
    return SceneSpec(planes=planes, clutter=clutter, seed=seed, name=name)


def corridor_spec(length=10.0, width=3.0, height=6.0, **kw):
    """Floor flanked by one wall per side, both of the same height."""
    facades = [("A", 0.0, length, height), ("B", 0.0, length, height)]
    return street_spec(length, width, facades, name=kw.pop("name", "corridor"), **kw)


def frontage_layout(count, frontage=3.5, gap=0.4):
    """Starts of ``count`` buildings of equal frontage separated by gaps."""
    return [k * (frontage + gap) for k in range(count)], count * frontage + max(count - 1, 0) * gap


TABLE_A2 = [
    # scene, width m, elevation m, max building height m, building count
    (1, 6.21, 177.0, 18.23, 12),
    (2, 5.78, 172.0, 8.71, 3),
    (3, 3.29, 193.0, 10.28, 6),
    (4, 2.67, 198.0, 2.62, 2),
    (5, 3.41, 187.0, 3.61, 2),
    (6, 0.81, 189.0, 9.42, 2),
    (7, 1.94, 190.0, 6.03, 2),
    (8, 1.73, 181.0, 6.35, 2),
    (9, 2.29, 182.0, 5.21, 2),
    (10, 2.10, 177.0, 3.86, 3),
]


def table_fixture_spec(scene, *, pitch=0.04, sigma=0.003, frontage=3.5, gap=0.4, seed=None):
    """Synthetic street rebuilt from one row of the validation table."""
    row = {r[0]: r for r in TABLE_A2}[scene]
    _, width, elevation, max_height, count = row
    rng = np.random.default_rng(1000 + scene if seed is None else seed)
    n_a = (count + 1) // 2
    n_b = count // 2
    starts_a, length = frontage_layout(n_a, frontage, gap)
    starts_b, _ = frontage_layout(n_b, frontage, gap)
    heights = [max_height] + [max(2.2, max_height * f) for f in rng.uniform(0.45, 0.9, count - 1)]
    facades = [("A", s, frontage, h) for s, h in zip(starts_a, heights[:n_a])]
    facades += [("B", s, frontage, h) for s, h in zip(starts_b, heights[n_a:])]
    return street_spec(length, width, facades, z0=elevation, pitch=pitch, sigma=sigma,
                       seed=scene, name=f"table_scene_{scene}")


def random_street_spec(seed, *, pitch=0.05, sigma=0.003):
    """Randomized two-sided street used for oracle-equivalence runs."""
    rng = np.random.default_rng(seed)
    n_a = int(rng.integers(1, 4))
    n_b = int(rng.integers(1, 4))
    frontage = float(rng.uniform(2.5, 4.0))
    gap = 0.4
    starts_a, len_a = frontage_layout(n_a, frontage, gap)
    starts_b, len_b = frontage_layout(n_b, frontage, gap)
    length = max(len_a, len_b)
    # keep the street clearly longer than wide so its axis is well defined
    width = float(rng.uniform(1.8, max(2.0, min(6.0, length / 1.5))))
    starts_b = [s + (length - len_b) / 2 for s in starts_b]
    starts_a = [s + (length - len_a) / 2 for s in starts_a]
    while True:
        heights = rng.uniform(2.5, 10.0, n_a + n_b)
        if np.std(heights) >= 1.0:
            break
    facades = [("A", s, frontage, float(h)) for s, h in zip(starts_a, heights[:n_a])]
    facades += [("B", s, frontage, float(h)) for s, h in zip(starts_b, heights[n_a:])]
    return street_spec(
        length, width, facades,
        z0=float(rng.uniform(-5.0, 60.0)),
        slope=float(rng.uniform(0.0, 0.08)),
        pitch=pitch, sigma=sigma,
        yaw=float(rng.uniform(0, 2 * math.pi)),
        offset=tuple(rng.uniform(-50, 50, 2)),
        seed=seed, name=f"random_{seed}",
    )


def hillside_spec(pitch=0.05, sigma=0.003, seed=0):
    """Three terraces at z = 0, 1.8, 3.6 joined by retaining walls, with side walls."""
    planes = []
    label = 0

    def add(origin, eu, ev, role, side=""):
        nonlocal label
        planes.append(PlaneSpec(label, origin, eu, ev, role=role, pitch=pitch, sigma=sigma, side=side))
        label += 1

    w = 3.0
    for k, z in enumerate((0.0, 1.8, 3.6)):
        add([6.0 * k, -w / 2, z], [6.0, 0, 0], [0, w, 0], STREET)
    add([6.0, -w / 2, 0.0], [0, w, 0], [0, 0, 1.8], FACADE)  # retaining wall T0|T1
    add([12.0, -w / 2, 1.8], [0, w, 0], [0, 0, 1.8], FACADE)  # retaining wall T1|T2
    for x0, z, side, h in ((0.0, 0.0, "A", 3.0), (0.0, 0.0, "B", 5.0),
                           (7.2, 1.8, "A", 7.0), (7.2, 1.8, "B", 4.0), (13.2, 3.6, "A", 5.0)):
        y = w / 2 if side == "A" else -w / 2
        add([x0, y, z], [4.8, 0, 0], [0, 0, h], FACADE, side)
    return SceneSpec(planes=planes, seed=seed, name="hillside")


def separated_planes_spec(seed, n_planes=None, *, min_gap=1.5, pitch=0.05, sigma=0.003,
                          clutter_fraction=0.08, size_range=(3.0, 8.0), region=40.0):
    """Randomly oriented rectangles kept at least ``min_gap`` apart, plus clutter."""
    rng = np.random.default_rng(seed)
    n_planes = int(rng.integers(3, 9)) if n_planes is None else n_planes
    planes = []
    tries = 0
    while len(planes) < n_planes:
        tries += 1
        if tries > 10_000:
            raise RuntimeError("could not place planes")
        normal = rng.normal(size=3)
        normal /= np.linalg.norm(normal)
        helper = np.array([0.0, 0.0, 1.0]) if abs(normal[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        eu = np.cross(normal, helper)
        eu /= np.linalg.norm(eu)
        ev = np.cross(normal, eu)
        a, b = rng.uniform(*size_range, 2)
        origin = rng.uniform(0, region, 3) * [1, 1, 0.3]
        cand = PlaneSpec(len(planes), origin.tolist(), (eu * a).tolist(), (ev * b).tolist(),
                         pitch=pitch, sigma=sigma)
        if all(_rect_distance(cand, q) > min_gap for q in planes):
            planes.append(cand)
    n_plane_pts = sum(len(sample_plane(p, np.random.default_rng(0))) for p in planes)
    count = int(clutter_fraction * n_plane_pts / (1 - clutter_fraction))
    corners = np.vstack([p.corners for p in planes])
    clutter = [ClutterSpec(corners.min(axis=0).tolist(), corners.max(axis=0).tolist(), count)]
    return SceneSpec(planes=planes, clutter=clutter, seed=seed, name=f"planes_{seed}")


def _rect_distance(p: PlaneSpec, q: PlaneSpec, samples=25):
    """Approximate min distance between two rectangles by dense edge/grid sampling."""
    t = np.linspace(0, 1, samples)
    a, b = np.meshgrid(t, t, indexing="ij")

    def grid(r):
        return np.asarray(r.origin) + np.outer(a.ravel(), r.edge_u) + np.outer(b.ravel(), r.edge_v)

    gp, gq = grid(p), grid(q)
    d = np.linalg.norm(gp[:, None, :] - gq[None, :, :], axis=2)
    return float(d.min())


# --------------------------------------------------------------------------
# brute-force oracles


def oracle_sigma(values) -> float:
    """Two-pass population standard deviation with exactly rounded sums."""
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("oracle_sigma of empty sequence")
    mean = math.fsum(vals) / len(vals)
    return math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / len(vals))


_OCTANTS = np.array([[1, 0], [1, 1], [0, 1], [-1, 1], [-1, 0], [-1, -1], [0, -1], [1, -1]], dtype=float)


def _inside_extremes(pts):
    """Points strictly inside the polygon of the eight directional extremes.

    That polygon lies inside the hull, so these points are never hull
    vertices; dropping them keeps the cubic pair test affordable.
    """
    if len(pts) < 8:
        return np.zeros(len(pts), dtype=bool)
    ext = pts[np.argmax(pts @ _OCTANTS.T, axis=0)]  # counterclockwise by construction
    inside = np.ones(len(pts), dtype=bool)
    for a, b in zip(ext, np.roll(ext, -1, axis=0)):
        e = b - a
        norm = math.hypot(e[0], e[1])
        if norm == 0.0:
            continue
        cross = e[0] * (pts[:, 1] - a[1]) - e[1] * (pts[:, 0] - a[0])
        inside &= cross > 1e-9 * norm * (1.0 + np.abs(pts).max())
    return inside


def oracle_hull_area(points2d) -> float:
    """Convex hull area by testing every ordered point pair as a candidate edge."""
    pts = np.unique(np.asarray(points2d, dtype=float).reshape(-1, 2), axis=0)
    pts = pts[~_inside_extremes(pts)]
    n = len(pts)
    area2 = 0.0
    for i in range(n):
        d = pts - pts[i]  # vectors i -> j (rows) and i -> k (cols)
        cross = d[:, None, 0] * d[None, :, 1] - d[:, None, 1] * d[None, :, 0]
        dot = d[:, None, 0] * d[None, :, 0] + d[:, None, 1] * d[None, :, 1]
        len2 = (d * d).sum(axis=1)
        scale = np.sqrt(len2[:, None] * len2[None, :])
        left = cross > 1e-12 * scale
        on_seg = (np.abs(cross) <= 1e-12 * scale) & (dot >= 0) & (dot <= len2[:, None])
        edge = (left | on_seg).all(axis=1)
        edge[i] = False
        for j in np.flatnonzero(edge):
            area2 += pts[i, 0] * pts[j, 1] - pts[j, 0] * pts[i, 1]
    return 0.5 * area2


def oracle_partition(s_values, origin, width, n_bands):
    """Band index per coordinate by scanning intervals one at a time."""
    out = []
    for s in s_values:
        rel = s - origin
        idx = None
        for k in range(n_bands):
            if k * width <= rel < (k + 1) * width:
                idx = k
                break
        if idx is None:
            idx = 0 if rel < 0 else n_bands - 1
        out.append(idx)
    return np.asarray(out, dtype=np.int64)


def _convex_plan(corners3d):
    """CCW convex hull of xy points by gift wrapping (small inputs only)."""
    pts = np.unique(np.round(np.asarray(corners3d, dtype=float)[:, :2], 12), axis=0)
    if len(pts) <= 2:
        return pts
    start = int(np.lexsort((pts[:, 1], pts[:, 0]))[0])
    hull = [start]
    while True:
        cur = hull[-1]
        cand = (cur + 1) % len(pts)
        for k in range(len(pts)):
            a = pts[cand] - pts[cur]
            b = pts[k] - pts[cur]
            cr = a[0] * b[1] - a[1] * b[0]
            if cr < -1e-12 or (abs(cr) <= 1e-12 and b @ b > a @ a):
                cand = k
        if cand == start:
            break
        hull.append(cand)
        if len(hull) > len(pts):
            break
    return pts[hull]


def _seg_point(p, a, b):
    ab = b - a
    denom = ab @ ab
    t = 0.0 if denom == 0 else min(1.0, max(0.0, (p - a) @ ab / denom))
    return float(np.linalg.norm(p - (a + t * ab)))


def _segments_cross(a, b, c, d):
    def orient(p, q, r):
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    o1, o2, o3, o4 = orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b)
    return (o1 * o2 <= 0) and (o3 * o4 <= 0) and not (o1 == o2 == 0 and
                                                     (max(a[0], b[0]) < min(c[0], d[0]) or max(c[0], d[0]) < min(a[0], b[0])))


def _inside(poly, p):
    if len(poly) < 3:
        return False
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        if (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) < -1e-12:
            return False
    return True


def _edges(poly):
    if len(poly) == 1:
        return [(poly[0], poly[0])]
    if len(poly) == 2:
        return [(poly[0], poly[1])]
    return list(zip(poly, np.roll(poly, -1, axis=0)))


def oracle_polygon_distance(p, q) -> float:
    """Exact distance between two convex plan polygons (0 when they touch)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if any(_inside(p, v) for v in q) or any(_inside(q, v) for v in p):
        return 0.0
    best = math.inf
    for a, b in _edges(p):
        for c, d in _edges(q):
            if _segments_cross(a, b, c, d):
                return 0.0
            best = min(best, _seg_point(a, c, d), _seg_point(b, c, d), _seg_point(c, a, b), _seg_point(d, a, b))
    return best


def oracle_adjacency(streets, facades, radius):
    """(street_id, facade_id) pairs by exhaustive pairwise polygon distances."""
    pairs = set()
    for s in streets:
        splan = _convex_plan(s.hull3d)
        for f in facades:
            if f.centroid[2] < s.centroid[2]:
                continue
            if oracle_polygon_distance(splan, _convex_plan(f.hull3d)) <= radius:
                pairs.add((s.entity_id, f.entity_id))
    return pairs
