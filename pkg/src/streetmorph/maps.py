"""Morphological maps: one grayscale glyph per band at the street centerline."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

logger = logging.getLogger(__name__)

LOCAL_METRICS = ("width", "elevation", "facade_height", "canyon")
UNITS = {"width": "m", "elevation": "m", "facade_height": "m", "canyon": "ratio"}


@dataclass(frozen=True)
class Pixel:
    x: float
    y: float
    value: float  # normalized, in [0, 1]
    raw: float
    scene_id: int
    band_index: int


@dataclass(frozen=True)
class MapLayer:
    metric: str
    scan: str
    pixels: tuple
    max_raw: float | None
    min_raw: float | None = None

    @property
    def units(self):
        return UNITS[self.metric]

    def metadata(self) -> dict:
        return {"metric": self.metric, "scan": self.scan, "max_raw": self.max_raw,
                "units": self.units, "pixel_count": len(self.pixels)}


@dataclass(frozen=True)
class MapStyle:
    glyph_size: float = 0.5  # meters, one band
    pixels_per_meter: float = 20.0
    margin: float = 1.0  # meters
    legend_height: float = 40.0  # svg px
    outlines: tuple = field(default_factory=tuple)  # plan-view polygons drawn behind the glyphs


def normalize(metric, raws):
    """Per-scan scaling to [0, 1].

    Ratios and lengths divide by the scan maximum.  Elevation can be negative
    in a scan frame, so it is shifted by the scan minimum first.
    """
    hi = max(raws)
    if metric == "elevation":
        lo = min(raws)
        span = hi - lo
        return [1.0 if span <= 0 else (r - lo) / span for r in raws], lo
    if hi <= 0:
        return [1.0 for _ in raws], None
    return [r / hi for r in raws], None


def build_layers(records, metrics=LOCAL_METRICS):
    """One layer per (metric, scan) from band records; absent values make no pixel."""
    scans = sorted({r.scan for r in records})
    layers = []
    for metric in metrics:
        for scan in scans:
            present = [r for r in records if r.scan == scan and r.value(metric) is not None]
            present.sort(key=lambda r: (r.scene_id, r.band_index))
            if not present:
                logger.warning("metric %s has no values in scan %r; layer is empty", metric, scan)
                layers.append(MapLayer(metric, scan, (), None))
                continue
            raws = [float(r.value(metric)) for r in present]
            values, lo = normalize(metric, raws)
            pixels = tuple(Pixel(float(r.anchor[0]), float(r.anchor[1]), float(v), raw, r.scene_id, r.band_index)
                           for r, v, raw in zip(present, values, raws))
            layers.append(MapLayer(metric, scan, pixels, max(raws), lo))
    return layers


def darkness(value: float) -> float:
    """Fraction of black for a normalized value; strictly increasing."""
    return min(1.0, max(0.0, float(value)))


def _gray(value):
    level = 100.0 * (1.0 - darkness(value))
    return f"rgb({level:.6f}%,{level:.6f}%,{level:.6f}%)"


def _num(v):
    return f"{v:.4f}"


def render_svg(layer: MapLayer, style: MapStyle | None = None) -> str:
    """SVG 1.1 document for ``layer``; a pure function of its arguments."""
    style = style or MapStyle()
    ppm = style.pixels_per_meter
    half = style.glyph_size / 2
    xs = [p.x for p in layer.pixels] + [x for poly in style.outlines for x, _ in poly]
    ys = [p.y for p in layer.pixels] + [y for poly in style.outlines for _, y in poly]
    if xs:
        x0, x1 = min(xs) - half - style.margin, max(xs) + half + style.margin
        y0, y1 = min(ys) - half - style.margin, max(ys) + half + style.margin
    else:
        x0, x1, y0, y1 = 0.0, 10.0, 0.0, 0.0
    width = max((x1 - x0) * ppm, 200.0)
    map_h = (y1 - y0) * ppm
    height = map_h + style.legend_height

    def sx(x):
        return (x - x0) * ppm

    def sy(y):  # plan y points up, svg y points down
        return (y1 - y) * ppm

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_num(width)}" height="{_num(height)}" '
        f'viewBox="0 0 {_num(width)} {_num(height)}">',
        f"<title>{layer.metric} ({layer.scan or 'scan'})</title>",
        f'<rect x="0" y="0" width="{_num(width)}" height="{_num(height)}" fill="white"/>',
    ]
    if style.outlines:
        out.append('<g id="outlines" fill="none" stroke="#b0b0b0" stroke-width="1">')
        for poly in style.outlines:
            pts = " ".join(f"{_num(sx(x))},{_num(sy(y))}" for x, y in poly)
            out.append(f'<polygon points="{pts}"/>')
        out.append("</g>")
    out.append('<g id="glyphs" stroke="none">')
    side = style.glyph_size * ppm
    for p in layer.pixels:
        out.append(
            f'<rect class="glyph" data-scene="{p.scene_id}" data-band="{p.band_index}" '
            f'x="{_num(sx(p.x - half))}" y="{_num(sy(p.y + half))}" width="{_num(side)}" height="{_num(side)}" '
            f'fill="{_gray(p.value)}"/>'
        )
    out.append("</g>")
    top = map_h + 8
    out.append('<g id="legend" font-family="sans-serif" font-size="11">')
    out.append('<defs><linearGradient id="ramp" x1="0" x2="1" y1="0" y2="0">'
               f'<stop offset="0" stop-color="{_gray(0.0)}"/><stop offset="1" stop-color="{_gray(1.0)}"/>'
               "</linearGradient></defs>")
    out.append(f'<rect x="8" y="{_num(top)}" width="120" height="10" fill="url(#ramp)" stroke="black" stroke-width="0.5"/>')
    if layer.max_raw is None:
        label = f"{layer.metric}: no values"
    elif layer.metric == "elevation":
        label = f"{layer.metric}: {layer.min_raw:.2f} to {layer.max_raw:.2f} {layer.units}"
    else:
        label = f"{layer.metric}: 0 to {layer.max_raw:.2f} {layer.units}"
    out.append(f'<text x="136" y="{_num(top + 9)}">{label}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def sidecar_json(layer: MapLayer) -> str:
    return json.dumps(layer.metadata(), indent=2, sort_keys=True) + "\n"


def layer_geojson(layer: MapLayer) -> str:
    features = [
        {
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [p.x, p.y]},
            "properties": {"metric": layer.metric, "scan": layer.scan, "scene_id": p.scene_id,
                           "band_index": p.band_index, "value": p.value, "raw": p.raw},
        }
        for p in layer.pixels
    ]
    return json.dumps({"type": "FeatureCollection", "features": features}, indent=2, sort_keys=True) + "\n"
