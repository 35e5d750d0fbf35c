"""Half-meter bands along each scene and their local metrics."""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .detection import BAND_FIT_STREAM, BAND_STREAM, DetectionParams, detect_planes, fit_tolerance
from .geometry import HORIZONTAL, VERTICAL, entities_from_fragments
from .metrics_global import width_from
from .scenes import DEFAULT_MIN_DENSITY, SIDE_A, SIDE_B, filter_noise

BAND_WIDTH = 0.5
MIN_BAND_TAU = 50
SLIVER = 0.01


@dataclass(frozen=True, eq=False)
class Band:
    scene_id: int
    index: int
    s_start: float
    s_end: float
    indices: np.ndarray  # into the source cloud
    owners: np.ndarray  # parent entity id per point
    partial: bool


@dataclass(frozen=True)
class BandRecord:
    scene_id: int
    band_index: int
    s_start: float
    s_end: float
    anchor: tuple
    width: float | None
    elevation: float | None
    facade_height: float | None
    canyon: float | None
    partial: bool = False
    scan: str = ""

    @property
    def s_mid(self):
        return 0.5 * (self.s_start + self.s_end)

    def value(self, metric):
        return {"width": self.width, "elevation": self.elevation,
                "facade_height": self.facade_height, "canyon": self.canyon}[metric]


def band_layout(scene, points, band_width=BAND_WIDTH):
    """(origin s0, street length, band count) along the scene's primary axis."""
    s = np.asarray(points)[scene.street.indices, :2] @ scene.primary_axis
    s0 = float(s.min())
    length = float(s.max()) - s0
    # a remainder under 1% of a band is projection jitter; it joins the last band
    n = max(1, math.ceil(length / band_width - SLIVER))
    return s0, length, n


def assign_bands(s, s0, band_width, n_bands):
    rel = np.asarray(s, dtype=float) - s0
    k = np.floor(rel / band_width).astype(np.int64)
    # division can round across an edge; settle against the k*w products directly
    k -= (k * band_width > rel)
    k += ((k + 1) * band_width <= rel)
    return np.clip(k, 0, n_bands - 1)


def slice_bands(scene, points, band_width: float = BAND_WIDTH):
    """Cut the scene into contiguous bands of ``band_width`` across its street.

    Positions are measured from the street's lowest axis coordinate.  Facade
    points past either street end join the nearest end band, so every scene
    point lands in exactly one band.  The last band may be partial.
    """
    points = np.asarray(points)
    s0, length, n = band_layout(scene, points, band_width)
    idx = [scene.street.indices]
    owners = [np.full(len(scene.street.indices), scene.street.entity_id)]
    for f in scene.facades:
        idx.append(f.indices)
        owners.append(np.full(len(f.indices), f.entity_id))
    idx = np.concatenate(idx)
    owners = np.concatenate(owners)
    s = points[idx, :2] @ scene.primary_axis
    k = assign_bands(s, s0, band_width, n)
    order = np.lexsort((idx, k))
    idx, owners, k = idx[order], owners[order], k[order]
    bounds = np.searchsorted(k, np.arange(n + 1))
    bands = []
    for b in range(n):
        sl = slice(bounds[b], bounds[b + 1])
        end = length if b == n - 1 else (b + 1) * band_width
        bands.append(Band(scene.scene_id, b, b * band_width, end, idx[sl], owners[sl],
                          partial=(b == n - 1 and end < (b + 1) * band_width - 1e-9)))
    return bands


def band_tau(tau: int, band_width: float, scene_length: float) -> int:
    scaled = tau * band_width / max(scene_length, 1e-12)
    return int(min(tau, max(MIN_BAND_TAU, round(scaled))))


def band_planes(cloud, band: Band, params: DetectionParams, *, scene_length: float,
                band_width: float = BAND_WIDTH, min_density: float = DEFAULT_MIN_DENSITY):
    """Detect and fit planes inside one band; returns (entities, owner id per entity)."""
    if len(band.indices) < 3:
        return [], []
    sub = cloud.subset(band.indices)
    bp = params.replace(tau=band_tau(params.tau, band_width, scene_length))
    if len(sub) < bp.tau:
        return [], []
    stream = (BAND_STREAM, band.scene_id, band.index)
    result = detect_planes(sub, bp, stream=stream)
    entities = entities_from_fragments(sub.points, result.fragments, fit_tolerance(bp.epsilon_for(cloud)),
                                       seed=params.seed, stream=(BAND_FIT_STREAM,) + stream[1:])
    owners = []
    for e in entities:
        vals, counts = np.unique(band.owners[e.indices], return_counts=True)
        owners.append(int(vals[np.argmax(counts)]))
    # entity indices were positions in the band; map them back to the source cloud
    entities = [replace(e, indices=band.indices[e.indices]) for e in entities]
    kept, _ = filter_noise(entities, min_density)
    keep = {id(e) for e in kept}
    return ([e for e in entities if id(e) in keep],
            [o for e, o in zip(entities, owners) if id(e) in keep])


def band_metrics(scene, band: Band, entities, owners, points) -> BandRecord:
    """Local width, elevation, facade height and canyon for one band."""
    points = np.asarray(points)
    sides_by_id = {f.entity_id: s for f, s in zip(scene.facades, scene.sides)}
    street_ids = scene.street.entity_id
    streets = [e for e, o in zip(entities, owners) if e.orientation == HORIZONTAL and o == street_ids]
    street = max(streets, key=lambda e: (e.n_points, -e.entity_id)) if streets else None
    facades, sides = [], []
    for e, o in zip(entities, owners):
        if e.orientation != VERTICAL or o not in sides_by_id:
            continue
        if street is not None and e.centroid[2] < street.centroid[2]:
            continue
        facades.append(e)
        sides.append(sides_by_id[o])
    own_street = band.indices[band.owners == street_ids]
    if len(own_street):
        anchor = points[own_street].mean(axis=0)
    else:
        s0 = float((points[scene.street.indices, :2] @ scene.primary_axis).min())
        base = scene.street.centroid[:2] - (scene.street.centroid[:2] @ scene.primary_axis) * scene.primary_axis
        xy = base + (s0 + 0.5 * (band.s_start + band.s_end)) * scene.primary_axis
        anchor = np.array([xy[0], xy[1], scene.street.centroid[2]])
    elevation = None if street is None else float(street.centroid[2])
    width = None if street is None else width_from(facades, sides, street.centroid)
    side_max = {}
    for f, s in zip(facades, sides):
        if s in (SIDE_A, SIDE_B):
            side_max[s] = max(side_max.get(s, 0.0), f.height_extent)
    facade_height = float(np.mean(list(side_max.values()))) if side_max else None
    canyon = facade_height / width if (facade_height is not None and width) else None
    return BandRecord(
        scene_id=scene.scene_id, band_index=band.index, s_start=band.s_start, s_end=band.s_end,
        anchor=tuple(float(v) for v in anchor), width=width, elevation=elevation,
        facade_height=facade_height, canyon=canyon, partial=band.partial, scan=scene.scan,
    )


def compute_bands(scene, cloud, params: DetectionParams, *, band_width: float = BAND_WIDTH,
                  min_density: float = DEFAULT_MIN_DENSITY, threads: int = 1):
    bands = slice_bands(scene, cloud.points, band_width)
    _, length, _ = band_layout(scene, cloud.points, band_width)

    def one(band):
        ents, owners = band_planes(cloud, band, params, scene_length=length,
                                   band_width=band_width, min_density=min_density)
        return band_metrics(scene, band, ents, owners, cloud.points)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, bands))
    return [one(b) for b in bands]


CSV_COLUMNS = ["scene_id", "band_index", "s_mid_m", "width_m", "elevation_m", "facade_height_m", "canyon",
               "partial_flag", "s_start_m", "s_end_m", "anchor_x_m", "anchor_y_m", "anchor_z_m", "scan"]


def _fmt(v):
    return "" if v is None else repr(float(v))


def to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow([r.scene_id, r.band_index, _fmt(r.s_mid), _fmt(r.width), _fmt(r.elevation),
                    _fmt(r.facade_height), _fmt(r.canyon), int(r.partial), _fmt(r.s_start), _fmt(r.s_end),
                    *(_fmt(a) for a in r.anchor), r.scan])
    return buf.getvalue()


def from_csv(text: str):
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        def g(key):
            return None if row[key] == "" else float(row[key])

        out.append(BandRecord(
            scene_id=int(row["scene_id"]), band_index=int(row["band_index"]),
            s_start=g("s_start_m"), s_end=g("s_end_m"),
            anchor=(g("anchor_x_m"), g("anchor_y_m"), g("anchor_z_m")),
            width=g("width_m"), elevation=g("elevation_m"), facade_height=g("facade_height_m"),
            canyon=g("canyon"), partial=row["partial_flag"] == "1", scan=row.get("scan", ""),
        ))
    return out
