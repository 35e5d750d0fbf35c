"""Stage-2 plane regression, 2D projection, convex hulls and plane entities."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegenerateGeometryError

logger = logging.getLogger(__name__)

HORIZONTAL = "horizontal"
VERTICAL = "vertical"
OBLIQUE = "oblique"

Z = np.array([0.0, 0.0, 1.0])
SIGN_TIE = 1e-12


def canonical_sign(normal):
    """Sign making n_z >= 0, ties broken by n_x >= 0 then n_y >= 0."""
    for c in (normal[2], normal[0], normal[1]):
        if abs(c) > SIGN_TIE:
            return 1.0 if c > 0 else -1.0
    return 1.0


@dataclass(frozen=True, eq=False)
class PlaneModel:
    """Plane {p : normal . p + d = 0} with a unit, canonically signed normal."""

    normal: np.ndarray
    d: float

    @classmethod
    def from_coefficients(cls, a, b, c, d):
        n = np.array([a, b, c], dtype=float)
        length = np.linalg.norm(n)
        if not length > 0:
            raise DegenerateGeometryError("plane normal has zero length")
        n /= length
        d = float(d) / length
        s = canonical_sign(n)
        return cls(normal=n * s, d=d * s)

    @property
    def coefficients(self):
        return np.r_[self.normal, self.d]

    def signed_distance(self, points):
        return np.asarray(points) @ self.normal + self.d


def _svd_plane(points):
    c = points.mean(axis=0)
    _, s, vt = np.linalg.svd(points - c, full_matrices=False)
    if len(s) < 2 or s[1] <= 1e-9 * max(s[0], 1e-300):
        raise DegenerateGeometryError("points are collinear; no unique plane")
    n = vt[-1]
    return n, -float(n @ c)


def fit_plane(points, inlier_tol: float, rng_seed: int = 0, *, confidence=0.999, max_iterations=500) -> PlaneModel:
    """RANSAC over 3-point samples, then a least-squares refit on the consensus set."""
    pts = np.asarray(points, dtype=float)
    if len(pts) < 3:
        raise DegenerateGeometryError(f"need >= 3 points to fit a plane, got {len(pts)}")
    _svd_plane(pts)  # rejects collinear input up front
    rng = np.random.default_rng(np.random.SeedSequence([int(rng_seed), 2]))
    n = len(pts)
    best_count = -1
    best_plane = None
    budget = max_iterations
    done = 0
    while done < budget:
        m = min(64, budget - done)
        tri = rng.integers(0, n, size=(m, 3))
        a, b, c = pts[tri[:, 0]], pts[tri[:, 1]], pts[tri[:, 2]]
        nrm = np.cross(b - a, c - a)
        length = np.linalg.norm(nrm, axis=1)
        good = length > 1e-12
        nrm = nrm[good] / length[good, None]
        dd = -np.einsum("ij,ij->i", nrm, a[good])
        done += m
        if len(nrm) == 0:
            continue
        counts = (np.abs(pts @ nrm.T + dd) <= inlier_tol).sum(axis=0)
        i = int(np.argmax(counts))
        if counts[i] > best_count:
            best_count = int(counts[i])
            best_plane = (nrm[i], dd[i])
            w = best_count / n
            need = math.log(1 - confidence) / math.log1p(-(w**3)) if w < 1 else 1
            budget = int(min(max_iterations, max(20, math.ceil(need))))
    if best_plane is None:
        normal, d = _svd_plane(pts)
    else:
        normal, d = best_plane
        for _ in range(2):
            inl = np.abs(pts @ normal + d) <= inlier_tol
            if inl.sum() < 3:
                break
            try:
                normal, d = _svd_plane(pts[inl])
            except DegenerateGeometryError:
                break
    return PlaneModel.from_coefficients(*normal, d)


def classify_orientation(model) -> str:
    normal = model.normal if isinstance(model, PlaneModel) else np.asarray(model, dtype=float)
    nz = abs(float(normal[2]))
    if nz > 0.95:
        return HORIZONTAL
    if nz < 0.05:
        return VERTICAL
    return OBLIQUE


def plane_axes(model: PlaneModel, orientation: str | None = None):
    """In-plane (u, v) with u x v = n.

    Horizontal planes take u from world x; other planes take v from world z,
    so v runs along the height of a facade.
    """
    n = model.normal
    orientation = orientation or classify_orientation(model)
    if orientation == HORIZONTAL:
        u = np.array([1.0, 0.0, 0.0]) - n[0] * n
        u /= np.linalg.norm(u)
        v = np.cross(n, u)
    else:
        v = Z - n[2] * n
        v /= np.linalg.norm(v)
        u = np.cross(v, n)
    return u, v


def project_to_2d(points, model: PlaneModel, origin=None):
    """Return (u, v, origin, uv) where uv are in-plane coordinates about ``origin``."""
    pts = np.asarray(points, dtype=float)
    u, v = plane_axes(model)
    origin = pts.mean(axis=0) if origin is None else np.asarray(origin, dtype=float)
    rel = pts - origin
    return u, v, origin, np.column_stack([rel @ u, rel @ v])


def polygon_area(poly) -> float:
    poly = np.asarray(poly, dtype=float)
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def convex_hull(points2d) -> np.ndarray:
    """Vertices of the convex hull, counterclockwise, without collinear vertices."""
    pts = np.asarray(points2d, dtype=float).reshape(-1, 2)
    if len(pts) < 3:
        raise DegenerateGeometryError(f"need >= 3 points for a hull, got {len(pts)}")
    idx = kernels.convex_hull_indices(pts)
    hull = pts[idx]
    span = float(np.ptp(pts, axis=0).max())
    if len(hull) < 3 or polygon_area(hull) <= 1e-12 * span * span:
        raise DegenerateGeometryError("points are collinear; hull has no area")
    return hull


def point_in_convex(poly, pts, tol=1e-9):
    """Mask of points inside or on a CCW convex polygon (within ``tol``)."""
    pts = np.atleast_2d(pts)
    inside = np.ones(len(pts), dtype=bool)
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        edge = b - a
        length = np.hypot(*edge)
        cr = (edge[0] * (pts[:, 1] - a[1]) - edge[1] * (pts[:, 0] - a[0])) / length
        inside &= cr >= -tol
    return inside


@dataclass(frozen=True, eq=False)
class PlaneEntity:
    """A fitted planar primitive with its footprint and summary measures."""

    entity_id: int
    indices: np.ndarray
    model: PlaneModel
    u: np.ndarray
    v: np.ndarray
    origin: np.ndarray
    hull2d: np.ndarray
    orientation: str
    centroid: np.ndarray
    height_extent: float
    area: float
    density: float
    scan: str = ""

    @property
    def n_points(self):
        return len(self.indices)

    @property
    def hull3d(self):
        """Hull vertices lifted back onto the plane in world coordinates."""
        base = self.origin - self.model.signed_distance(self.origin) * self.model.normal
        return base + np.outer(self.hull2d[:, 0], self.u) + np.outer(self.hull2d[:, 1], self.v)

    @property
    def plan_footprint(self):
        return self.hull3d[:, :2]


def make_entity(points, model: PlaneModel, indices=None, entity_id: int = 0, scan: str = "") -> PlaneEntity:
    pts = np.asarray(points, dtype=float)
    if indices is None:
        indices = np.arange(len(pts))
    orientation = classify_orientation(model)
    u, v, origin, uv = project_to_2d(pts, model)
    hull = convex_hull(uv)
    area = polygon_area(hull)
    return PlaneEntity(
        entity_id=int(entity_id),
        indices=np.asarray(indices, dtype=np.int64),
        model=model,
        u=u,
        v=v,
        origin=origin,
        hull2d=hull,
        orientation=orientation,
        centroid=origin.copy(),
        height_extent=float(pts[:, 2].max() - pts[:, 2].min()),
        area=area,
        density=len(pts) / area,
        scan=scan,
    )


def entities_from_fragments(points, fragments, inlier_tol: float, *, seed: int = 0, stream=(), scan: str = ""):
    """Fit and wrap each fragment; ``entity_id`` is the fragment's position.

    Fragments too degenerate to fit (collinear, or a hull with no area) are
    dropped and logged.
    """
    from .detection import derive_seed

    out = []
    points = np.asarray(points)
    for j, frag in enumerate(fragments):
        pts = points[frag.indices]
        try:
            model = fit_plane(pts, inlier_tol, rng_seed=derive_seed(seed, *stream, j))
            out.append(make_entity(pts, model, frag.indices, entity_id=j, scan=scan))
        except DegenerateGeometryError as exc:
            logger.warning("fragment %d skipped: %s", j, exc)
    return out


def entity_to_dict(e: PlaneEntity) -> dict:
    return {
        "entity_id": e.entity_id,
        "scan": e.scan,
        "orientation": e.orientation,
        "normal": e.model.normal.tolist(),
        "d": e.model.d,
        "u": e.u.tolist(),
        "v": e.v.tolist(),
        "origin": e.origin.tolist(),
        "hull2d": e.hull2d.tolist(),
        "centroid": e.centroid.tolist(),
        "height_m": e.height_extent,
        "area_m2": e.area,
        "density_ppm2": e.density,
        "indices": e.indices.tolist(),
    }


def entity_from_dict(d: dict) -> PlaneEntity:
    return PlaneEntity(
        entity_id=int(d["entity_id"]),
        indices=np.asarray(d["indices"], dtype=np.int64),
        model=PlaneModel(np.asarray(d["normal"], dtype=float), float(d["d"])),
        u=np.asarray(d["u"], dtype=float),
        v=np.asarray(d["v"], dtype=float),
        origin=np.asarray(d["origin"], dtype=float),
        hull2d=np.asarray(d["hull2d"], dtype=float).reshape(-1, 2),
        orientation=d["orientation"],
        centroid=np.asarray(d["centroid"], dtype=float),
        height_extent=float(d["height_m"]),
        area=float(d["area_m2"]),
        density=float(d["density_ppm2"]),
        scan=d.get("scan", ""),
    )


def entities_geojson(entities) -> dict:
    features = []
    for e in entities:
        ring = e.hull3d.tolist()
        ring.append(ring[0])
        features.append({
            "type": "Feature",
            "id": e.entity_id,
            "geometry": {"type": "Polygon", "coordinates": [ring]},
            "properties": {
                "entity_id": e.entity_id,
                "scan": e.scan,
                "orientation": e.orientation,
                "area_m2": e.area,
                "height_m": e.height_extent,
                "density_ppm2": e.density,
                "point_count": e.n_points,
            },
        })
    return {"type": "FeatureCollection", "features": features}
