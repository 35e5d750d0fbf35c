"""Group street planes with the facades that face them."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from shapely.geometry import MultiPoint

from .geometry import HORIZONTAL, VERTICAL, PlaneEntity

logger = logging.getLogger(__name__)

SIDE_A = "A"
SIDE_B = "B"
SIDE_UNKNOWN = "unknown"
DEFAULT_MIN_DENSITY = 150.0
DEFAULT_ADJACENCY_RADIUS = 1.0
SIDE_OFFSET = 0.25


@dataclass(frozen=True, eq=False)
class StreetScene:
    scene_id: int
    street: PlaneEntity
    facades: list
    sides: list
    primary_axis: np.ndarray
    scan: str = ""

    def roster(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "scan": self.scan,
            "street_entity_id": self.street.entity_id,
            "facade_entity_ids": [f.entity_id for f in self.facades],
            "sides": list(self.sides),
            "primary_axis": [float(v) for v in self.primary_axis],
        }


def filter_noise(entities, min_density: float = DEFAULT_MIN_DENSITY):
    """Split entities into (kept, noise) by points per square meter of hull area."""
    kept = [e for e in entities if e.density >= min_density]
    noise = [e for e in entities if e.density < min_density]
    return kept, noise


def primary_axis(points_xy) -> np.ndarray:
    """Unit first principal direction of plan-view points, signed x >= 0 (then y >= 0)."""
    xy = np.asarray(points_xy, dtype=float)
    centered = xy - xy.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    axis = vt[0]
    if axis[0] < -1e-12 or (abs(axis[0]) <= 1e-12 and axis[1] < 0):
        axis = -axis
    return axis


def side_of(axis, street_centroid, facade_centroid, tol: float = SIDE_OFFSET) -> str:
    d = np.asarray(facade_centroid)[:2] - np.asarray(street_centroid)[:2]
    cross = axis[0] * d[1] - axis[1] * d[0]
    if abs(cross) < tol:
        return SIDE_UNKNOWN
    return SIDE_A if cross > 0 else SIDE_B


def assign_sides(scene: StreetScene) -> StreetScene:
    sides = [side_of(scene.primary_axis, scene.street.centroid, f.centroid) for f in scene.facades]
    return StreetScene(scene.scene_id, scene.street, list(scene.facades), sides, scene.primary_axis, scene.scan)


def _plan_geometry(entity):
    return MultiPoint([tuple(p) for p in entity.plan_footprint]).convex_hull


def adjacent(street: PlaneEntity, facade: PlaneEntity, radius: float, street_geom=None) -> bool:
    if facade.centroid[2] < street.centroid[2]:
        return False
    geom = _plan_geometry(street) if street_geom is None else street_geom
    return geom.distance(_plan_geometry(facade)) <= radius


def build_scenes(entities, cloud_points=None, *, adjacency_radius: float = DEFAULT_ADJACENCY_RADIUS,
                 first_id: int = 1, scan: str = ""):
    """Pair each horizontal entity with the vertical entities beside and above it.

    ``cloud_points`` supplies the street fragment coordinates for the primary
    axis; without it the street hull vertices are used.  Scenes are numbered
    from ``first_id`` in descending street elevation.
    """
    streets = [e for e in entities if e.orientation == HORIZONTAL]
    facades = [e for e in entities if e.orientation == VERTICAL]
    if not streets:
        logger.warning("no horizontal planes; no street scenes built")
        return []
    order = sorted(range(len(streets)), key=lambda i: (-streets[i].centroid[2], i))
    scenes = []
    for i in order:
        street = streets[i]
        geom = _plan_geometry(street)
        members = [f for f in facades if adjacent(street, f, adjacency_radius, geom)]
        if not members:
            continue
        if cloud_points is not None:
            xy = np.asarray(cloud_points)[street.indices, :2]
        else:
            xy = street.plan_footprint
        axis = primary_axis(xy)
        scene = StreetScene(first_id + len(scenes), street, members, [SIDE_UNKNOWN] * len(members), axis, scan)
        scenes.append(assign_sides(scene))
    n_planes = [1 + len(s.facades) for s in scenes]
    if scenes:
        logger.info("built %d street scenes holding %d-%d planes each", len(scenes), min(n_planes), max(n_planes))
    return scenes
