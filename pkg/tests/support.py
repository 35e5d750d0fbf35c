"""Shared builders for tests: entities straight from generator labels, stub scenes."""
from __future__ import annotations

from pathlib import Path
from types import SimpleNamespace

import numpy as np

from streetmorph import synth
from streetmorph.config import build_config
from streetmorph.geometry import fit_plane, make_entity
from streetmorph.scenes import StreetScene, assign_sides, primary_axis

REPO_ROOT = Path(__file__).resolve().parents[1]
SOURCE_TEXT = REPO_ROOT / "paper.md"


def source_text() -> str:
    return SOURCE_TEXT.read_text(encoding="utf-8")


def exact_config(**extra):
    """Hillside preset without downsampling, plus ``key=value`` overrides."""
    items = ["voxel_size=0"] + [f"{k}={v}" for k, v in extra.items()]
    return build_config("hillside", items)


def entities_from_spec(spec, tol=0.01, with_normals=False):
    """One entity per labelled plane, fitted from its own generated points."""
    cloud, labels, truth = synth.generate(spec, with_normals=with_normals)
    out = {}
    for p in spec.planes:
        idx = np.flatnonzero(labels == p.label)
        pts = cloud.points[idx]
        out[p.label] = make_entity(pts, fit_plane(pts, tol), idx, entity_id=p.label)
    return cloud, out, truth


def scene_from(street, facades, points=None, scene_id=1):
    xy = street.plan_footprint if points is None else np.asarray(points)[street.indices, :2]
    scene = StreetScene(scene_id, street, list(facades), ["unknown"] * len(facades), primary_axis(xy))
    return assign_sides(scene)


def stub_facade(height, normal=(0.0, 1.0, 0.0), d=0.0):
    model = SimpleNamespace(normal=np.asarray(normal, dtype=float), d=float(d))
    return SimpleNamespace(height_extent=float(height), model=model, centroid=np.zeros(3))


def stub_scene(heights, sides, street_area=10.0, scene_id=1):
    street = SimpleNamespace(area=float(street_area), centroid=np.zeros(3))
    return SimpleNamespace(scene_id=scene_id, street=street, facades=[stub_facade(h) for h in heights],
                           sides=list(sides), scan="")


def band_points(records, metric):
    return [r for r in records if r.value(metric) is not None]
