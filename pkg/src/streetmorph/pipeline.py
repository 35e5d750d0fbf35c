"""File-based pipeline stages over a run directory.

Layout of a run directory::

    scans/<scan>/downsampled.ply     downsample
    scans/<scan>/planes.json         detect (fragments and fitted entities)
    scans/<scan>/planes.geojson      detect
    scans/<scan>/scenes.json         scenes
    scans/<scan>/bands.csv           local
    global_metrics.csv               global (normalized over every scene in the run)
    maps/<metric>__<scan>.svg|.json|.geojson   map

Every stage writes ``<stage>.manifest.json`` beside its artifacts.

Seeds: all randomness derives from the configured seed.  Global detection
uses stream (SCAN_STREAM,), plane regression of fragment j uses
(FIT_STREAM, j), band detection uses (BAND_STREAM, scene_id, band_index) and
band regression (BAND_FIT_STREAM, scene_id, band_index, j).
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from pathlib import Path

import numpy as np

from . import cloud_io, maps
from . import metrics_global as mg
from . import metrics_local as ml
from .config import PipelineConfig
from .detection import FIT_STREAM, SCAN_STREAM, Fragment, detect_planes, fit_tolerance
from .errors import ConfigError, InputError, MissingArtifactError
from .geometry import entities_from_fragments, entities_geojson, entity_from_dict, entity_to_dict
from .pointcloud import downsample, estimate_normals, reduction_line
from .scenes import StreetScene, build_scenes, filter_noise

logger = logging.getLogger(__name__)

VERSION = "0.1.0"
STAGES = ("downsample", "detect", "scenes", "global", "local", "map")


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _dump(obj, compact=False) -> str:
    if compact:
        return json.dumps(obj, separators=(",", ":"), sort_keys=True) + "\n"
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def scan_name(path) -> str:
    return "stdin" if str(path) == "-" else Path(path).stem


class RunDir:
    def __init__(self, root):
        self.root = Path(root)

    def scan_dir(self, scan):
        return self.root / "scans" / scan

    def artifact(self, scan, name):
        return self.scan_dir(scan) / name

    def scans(self):
        base = self.root / "scans"
        if not base.is_dir():
            return []
        return sorted(p.name for p in base.iterdir() if (p / "downsampled.ply").is_file())

    def require(self, path, stage):
        path = Path(path)
        if not path.is_file():
            raise MissingArtifactError(path, stage)
        return path

    def select(self, scans=None):
        found = self.scans()
        if not found:
            raise MissingArtifactError(self.root / "scans" / "<scan>" / "downsampled.ply", "downsample")
        if not scans:
            return found
        missing = [s for s in scans if s not in found]
        if missing:
            raise MissingArtifactError(self.root / "scans" / missing[0] / "downsampled.ply", "downsample")
        return list(scans)


class Manifest:
    """Collects hashes, counts and timing for one stage invocation."""

    def __init__(self, stage, cfg: PipelineConfig, threads: int):
        self.stage = stage
        self.cfg = cfg
        self.threads = threads
        self.inputs = {}
        self.outputs = {}
        self.counts = {}
        self.start = time.perf_counter()

    def read(self, path):
        data = Path(path).read_bytes()
        self.inputs[str(path)] = sha256(data)
        return data

    def write(self, path, data):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(data, str):
            data = data.encode("utf-8")
        path.write_bytes(data)
        self.outputs[str(path)] = sha256(data)

    def save(self, path):
        doc = {
            "stage": self.stage,
            "version": VERSION,
            "config": self.cfg.to_dict(),
            "seed": self.cfg.seed,
            "threads": self.threads,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "counts": self.counts,
            "wall_time_s": round(time.perf_counter() - self.start, 6),
        }
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(_dump(doc), encoding="utf-8")
        return doc


# --------------------------------------------------------------------------
# in-memory stage cores (the file stages below are thin wrappers)


def prepare_cloud(cloud, cfg: PipelineConfig, *, threads=1):
    if cfg.voxel_size > 0:
        cloud = downsample(cloud, cfg.voxel_size)
    if not cloud.has_normals:
        if len(cloud) <= cfg.normal_k:
            raise InputError(f"{len(cloud)} points is too few for {cfg.normal_k}-neighbor normals")
        cloud = estimate_normals(cloud, cfg.normal_k, workers=threads)
    return cloud


def extract_entities(cloud, cfg: PipelineConfig, *, threads=1, scan=""):
    params = cfg.detection
    result = detect_planes(cloud, params, threads=threads, stream=(SCAN_STREAM,))
    entities = entities_from_fragments(cloud.points, result.fragments, fit_tolerance(params.epsilon_for(cloud)),
                                       seed=params.seed, stream=(FIT_STREAM,), scan=scan)
    return result, entities


def assemble_scenes(cloud, entities, cfg: PipelineConfig, *, scan=""):
    kept, noise = filter_noise(entities, cfg.min_density)
    return build_scenes(kept, cloud.points, adjacency_radius=cfg.adjacency_radius, scan=scan), noise


def analyze(cloud, cfg: PipelineConfig, *, threads=1, scan="", bands=False):
    """Whole pipeline in memory; returns a dict of every intermediate product."""
    cfg.validate()
    cloud = prepare_cloud(cloud, cfg, threads=threads)
    result, entities = extract_entities(cloud, cfg, threads=threads, scan=scan)
    scenes, noise = assemble_scenes(cloud, entities, cfg, scan=scan)
    out = {"cloud": cloud, "detection": result, "entities": entities, "noise": noise, "scenes": scenes,
           "metrics": [mg.compute(s) for s in scenes]}
    if bands:
        out["bands"] = [ml.compute_bands(s, cloud, cfg.detection, band_width=cfg.band_width,
                                         min_density=cfg.min_density, threads=threads) for s in scenes]
    return out


# --------------------------------------------------------------------------
# stages


def run_downsample(inputs, out, cfg: PipelineConfig, *, threads=1, scan=None):
    """Load each input, voxel-downsample it and attach normals."""
    cfg.validate()
    run = RunDir(out)
    names = [scan] if (scan and len(inputs) == 1) else [scan_name(p) for p in inputs]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ConfigError([f"inputs share the scan name {d!r}; rename a file or pass --scan" for d in dupes])
    for path, name in zip(inputs, names):
        m = Manifest("downsample", cfg, threads)
        data = cloud_io.read_bytes(path)
        m.inputs[str(path)] = sha256(data)
        cloud = cloud_io.parse(data, path)
        n_in = len(cloud)
        try:
            cloud = prepare_cloud(cloud, cfg, threads=threads)
        except InputError as exc:
            raise InputError(f"{path}: {exc}") from exc
        line = reduction_line(n_in, len(cloud))
        logger.info("%s: %s", name, line)
        m.write(run.artifact(name, "downsampled.ply"), cloud_io.to_bytes(cloud, "ply-binary-le"))
        m.counts = {"points_in": n_in, "points_out": len(cloud), "reduction": line,
                    "invalid_normals": int((~cloud.normal_valid).sum())}
        m.save(run.artifact(name, "downsample.manifest.json"))
    return names


def _load_cloud(run, scan, m):
    path = run.require(run.artifact(scan, "downsampled.ply"), "downsample")
    return cloud_io.parse(m.read(path), path)


def run_detect(out, cfg: PipelineConfig, *, threads=1, scans=None):
    cfg.validate()
    run = RunDir(out)
    for scan in run.select(scans):
        m = Manifest("detect", cfg, threads)
        cloud = _load_cloud(run, scan, m)
        result, entities = extract_entities(cloud, cfg, threads=threads, scan=scan)
        doc = {
            "scan": scan,
            "n_points": result.n_points,
            "rounds": result.rounds,
            "residual_count": int(len(result.residual)),
            "fragments": [{"plane": f.plane.tolist(), "indices": f.indices.tolist()} for f in result.fragments],
            "entities": [entity_to_dict(e) for e in entities],
        }
        m.write(run.artifact(scan, "planes.json"), _dump(doc, compact=True))
        m.write(run.artifact(scan, "planes.geojson"), _dump(entities_geojson(entities)))
        m.counts = {"fragments": len(result.fragments), "entities": len(entities),
                    "residual": int(len(result.residual)), "rounds": result.rounds}
        m.save(run.artifact(scan, "detect.manifest.json"))


def load_planes(run, scan, m=None):
    path = run.require(run.artifact(scan, "planes.json"), "detect")
    data = m.read(path) if m else path.read_bytes()
    doc = json.loads(data)
    frags = [Fragment(np.asarray(f["indices"], dtype=np.int64), np.asarray(f["plane"])) for f in doc["fragments"]]
    return frags, [entity_from_dict(e) for e in doc["entities"]]


def run_scenes(out, cfg: PipelineConfig, *, threads=1, scans=None):
    cfg.validate()
    run = RunDir(out)
    for scan in run.select(scans):
        m = Manifest("scenes", cfg, threads)
        cloud = _load_cloud(run, scan, m)
        _, entities = load_planes(run, scan, m)
        scenes, noise = assemble_scenes(cloud, entities, cfg, scan=scan)
        doc = {"scan": scan, "noise_entity_ids": [e.entity_id for e in noise],
               "scenes": [s.roster() for s in scenes]}
        m.write(run.artifact(scan, "scenes.json"), _dump(doc))
        m.counts = {"entities": len(entities), "noise": len(noise), "scenes": len(scenes)}
        m.save(run.artifact(scan, "scenes.manifest.json"))


def load_scenes(run, scan, m=None):
    path = run.require(run.artifact(scan, "scenes.json"), "scenes")
    data = m.read(path) if m else path.read_bytes()
    doc = json.loads(data)
    _, entities = load_planes(run, scan, m)
    by_id = {e.entity_id: e for e in entities}
    return [
        StreetScene(r["scene_id"], by_id[r["street_entity_id"]], [by_id[i] for i in r["facade_entity_ids"]],
                    list(r["sides"]), np.asarray(r["primary_axis"], dtype=float), r["scan"])
        for r in doc["scenes"]
    ]


def run_global(out, cfg: PipelineConfig, *, threads=1, scans=None):
    cfg.validate()
    run = RunDir(out)
    m = Manifest("global", cfg, threads)
    metrics = []
    for scan in run.select(scans):
        metrics.extend(mg.compute(s) for s in load_scenes(run, scan, m))
    m.write(run.root / "global_metrics.csv", mg.to_csv(metrics))
    m.counts = {"scenes": len(metrics), "absent_width": sum(g.street_width is None for g in metrics)}
    m.save(run.root / "global.manifest.json")
    return metrics


def run_local(out, cfg: PipelineConfig, *, threads=1, scans=None):
    cfg.validate()
    run = RunDir(out)
    for scan in run.select(scans):
        m = Manifest("local", cfg, threads)
        cloud = _load_cloud(run, scan, m)
        records = []
        for scene in load_scenes(run, scan, m):
            records.extend(ml.compute_bands(scene, cloud, cfg.detection, band_width=cfg.band_width,
                                            min_density=cfg.min_density, threads=threads))
        m.write(run.artifact(scan, "bands.csv"), ml.to_csv(records))
        m.counts = {"bands": len(records), "partial": sum(r.partial for r in records),
                    "absent_width": sum(r.width is None for r in records)}
        m.save(run.artifact(scan, "local.manifest.json"))


def run_map(out, cfg: PipelineConfig, *, threads=1, scans=None):
    cfg.validate()
    run = RunDir(out)
    m = Manifest("map", cfg, threads)
    records, outlines = [], {}
    for scan in run.select(scans):
        path = run.require(run.artifact(scan, "bands.csv"), "local")
        records.extend(ml.from_csv(m.read(path).decode("utf-8")))
        outlines[scan] = tuple(tuple(map(tuple, s.street.plan_footprint.tolist())) for s in load_scenes(run, scan, m))
    layers = maps.build_layers(records)
    for layer in layers:
        stem = run.root / "maps" / f"{layer.metric}__{layer.scan}"
        style = maps.MapStyle(outlines=outlines.get(layer.scan, ()))
        m.write(stem.with_suffix(".svg"), maps.render_svg(layer, style))
        m.write(stem.with_suffix(".json"), maps.sidecar_json(layer))
        m.write(stem.with_suffix(".geojson"), maps.layer_geojson(layer))
    m.counts = {"layers": len(layers), "glyphs": sum(len(layer.pixels) for layer in layers)}
    m.save(run.root / "map.manifest.json")
    return layers


def run_all(inputs, out, cfg: PipelineConfig, *, threads=1):
    cfg.validate()
    scans = run_downsample(inputs, out, cfg, threads=threads)
    run_detect(out, cfg, threads=threads, scans=scans)
    run_scenes(out, cfg, threads=threads, scans=scans)
    run_global(out, cfg, threads=threads, scans=scans)
    run_local(out, cfg, threads=threads, scans=scans)
    run_map(out, cfg, threads=threads, scans=scans)
    return scans
