"""Per-scene morphology metrics and cross-scene normalization."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError
from .scenes import SIDE_A, SIDE_B

PARALLEL_TOLERANCE_DEG = 15.0
METRICS = ("width", "elevation", "heterogeneity", "density", "canyon")


@dataclass(frozen=True)
class GlobalMetrics:
    scene_id: int
    street_width: float | None
    street_elevation: float
    facade_heterogeneity: float
    facade_density: float
    street_canyon: float | None
    scan: str = ""

    def values(self) -> dict:
        return {
            "width": self.street_width,
            "elevation": self.street_elevation,
            "heterogeneity": self.facade_heterogeneity,
            "density": self.facade_density,
            "canyon": self.street_canyon,
        }


@dataclass(frozen=True)
class MetricProfile:
    maxima: dict  # metric -> max raw value, or None when every value is absent
    normalized: list  # per scene: metric -> normalized value or None
    scene_ids: list


def pair_width(f, g, at, max_angle_deg=PARALLEL_TOLERANCE_DEG):
    """Distance between two facade planes along their mean normal, through ``at``.

    Returns None unless the planes are within ``max_angle_deg`` of parallel and
    ``at`` lies strictly between them.
    """
    nf = f.model.normal
    ng = g.model.normal
    if nf @ ng < 0:
        ng = -ng
        dg = -g.model.d
    else:
        dg = g.model.d
    if nf @ ng < math.cos(math.radians(max_angle_deg)):
        return None
    sf = nf @ at + f.model.d
    sg = ng @ at + dg
    if not sf * sg < 0:
        return None
    m = nf + ng
    m /= np.linalg.norm(m)
    return abs(sf / (nf @ m) - sg / (ng @ m))


def width_from(facades, sides, at):
    widths = []
    for i in range(len(facades)):
        for j in range(i + 1, len(facades)):
            if {sides[i], sides[j]} != {SIDE_A, SIDE_B}:
                continue
            w = pair_width(facades[i], facades[j], at)
            if w is not None:
                widths.append(w)
    return float(np.mean(widths)) if widths else None


def street_width(scene):
    return width_from(scene.facades, scene.sides, scene.street.centroid)


def street_elevation(scene) -> float:
    return float(scene.street.centroid[2])


def facade_heterogeneity(scene) -> float:
    heights = np.array([f.height_extent for f in scene.facades], dtype=float)
    if len(heights) <= 1:
        return 0.0
    return float(np.std(heights))


def facade_density(scene) -> float:
    area = scene.street.area
    if not area > 0:
        raise DegenerateGeometryError(f"scene {scene.scene_id}: street has zero area")
    return len(scene.facades) / area


def street_canyon(scene, width=None):
    width = street_width(scene) if width is None else width
    if width is None:
        return None
    return max(f.height_extent for f in scene.facades) / width


def compute(scene) -> GlobalMetrics:
    width = street_width(scene)
    return GlobalMetrics(
        scene_id=scene.scene_id,
        street_width=width,
        street_elevation=street_elevation(scene),
        facade_heterogeneity=facade_heterogeneity(scene),
        facade_density=facade_density(scene),
        street_canyon=street_canyon(scene, width) if width is not None else None,
        scan=scene.scan,
    )


def normalize_profiles(metrics) -> MetricProfile:
    """Divide every metric by its maximum over the scene set; absences stay absent."""
    if not metrics:
        raise ValueError("normalize_profiles needs at least one scene")
    maxima = {}
    for name in METRICS:
        present = [m.values()[name] for m in metrics if m.values()[name] is not None]
        top = max(present) if present else None
        maxima[name] = top if (top is not None and top > 0) else None
    rows = []
    for m in metrics:
        vals = m.values()
        rows.append({
            name: (None if vals[name] is None or maxima[name] is None else vals[name] / maxima[name])
            for name in METRICS
        })
    return MetricProfile(maxima=maxima, normalized=rows, scene_ids=[m.scene_id for m in metrics])


def _fmt(v):
    return "" if v is None else repr(float(v))


CSV_COLUMNS = ["scene_id", "width_m", "elevation_m", "heterogeneity_m", "density_per_m2", "canyon"]


def to_csv(metrics, profile: MetricProfile | None = None) -> str:
    if profile is None and metrics:
        profile = normalize_profiles(metrics)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS + [f"normalized_{n}" for n in METRICS] + ["scan"])
    for m, norm in zip(metrics, profile.normalized if metrics else []):
        v = m.values()
        w.writerow([m.scene_id] + [_fmt(v[n]) for n in METRICS] + [_fmt(norm[n]) for n in METRICS] + [m.scan])
    return buf.getvalue()


def from_csv(text: str) -> list:
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        def g(key):
            return None if row[key] == "" else float(row[key])

        out.append(GlobalMetrics(int(row["scene_id"]), g("width_m"), g("elevation_m"), g("heterogeneity_m"),
                                 g("density_per_m2"), g("canyon"), row.get("scan", "")))
    return out
