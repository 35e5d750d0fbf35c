"""Pipeline configuration: presets, overrides and validation."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields

from .detection import PRESETS, DetectionParams
from .errors import ConfigError

OUT_ENV = "STREETMORPH_OUT"
DEFAULT_OUT = "streetmorph-out"

_DETECTION_KEYS = {f.name for f in fields(DetectionParams)}
ALIASES = {"epsilon_m": "epsilon", "r_m": "r", "min_support": "tau", "alpha": "alpha_deg",
           "rng_seed": "seed", "voxel_size_m": "voxel_size", "band_width_m": "band_width",
           "adjacency_radius_m": "adjacency_radius"}


def read_config_text(text: str, source="<config>"):
    """``key = value`` lines (``:`` or whitespace also separate); ``#`` starts a comment.

    Returns (pairs, problems).
    """
    pairs, problems = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        for sep in ("=", ":", None):
            parts = line.split(sep, 1)
            if len(parts) == 2:
                break
        if len(parts) != 2 or not parts[0].strip():
            problems.append(f"{source} line {lineno}: expected 'key = value', got {raw.strip()!r}")
            continue
        pairs.append((parts[0].strip(), parts[1].strip()))
    return pairs, problems


@dataclass(frozen=True)
class PipelineConfig:
    detection: DetectionParams = field(default_factory=lambda: PRESETS["hillside"])
    voxel_size: float = 0.05  # 0 disables downsampling
    normal_k: int = 10
    min_density: float = 150.0
    adjacency_radius: float = 1.0
    band_width: float = 0.5
    preset: str = "hillside"

    @property
    def seed(self) -> int:
        return int(self.detection.seed)

    def problems(self) -> list:
        out = list(self.detection.problems())
        if not self.voxel_size >= 0:
            out.append(f"voxel_size must be >= 0 (got {self.voxel_size!r})")
        if not (isinstance(self.normal_k, int) and self.normal_k >= 3):
            out.append(f"normal_k must be an integer >= 3 (got {self.normal_k!r})")
        if not self.min_density >= 0:
            out.append(f"min_density must be >= 0 (got {self.min_density!r})")
        if not self.adjacency_radius >= 0:
            out.append(f"adjacency_radius must be >= 0 (got {self.adjacency_radius!r})")
        if not self.band_width > 0:
            out.append(f"band_width must be > 0 (got {self.band_width!r})")
        return out

    def validate(self) -> "PipelineConfig":
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["detection"] = asdict(self.detection)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        det = DetectionParams(**d.pop("detection", {}))
        return cls(detection=det, **d)


def _coerce(key, text, template):
    """Parse ``text`` to the type of ``template``; returns (value, problem)."""
    try:
        if isinstance(template, bool):
            low = str(text).strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True, None
            if low in ("0", "false", "no", "off"):
                return False, None
            raise ValueError(text)
        if isinstance(template, int):
            return int(text), None
        if isinstance(template, float):
            return float(text), None
        return str(text), None
    except (TypeError, ValueError):
        return None, f"{key}: cannot parse {text!r} as {type(template).__name__}"


def build_config(preset: str | None = None, overrides=None, config_file=None) -> PipelineConfig:
    """Preset, then a key-value config file, then ``key=value`` overrides.

    Every problem found (unknown keys, bad values, failed constraints) is
    collected and raised together as one ConfigError.
    """
    problems = []
    preset = preset or "hillside"
    if preset not in PRESETS:
        problems.append(f"preset: unknown preset {preset!r} (choose from {', '.join(sorted(PRESETS))})")
        preset = "hillside"
    base = PipelineConfig(detection=PRESETS[preset], preset=preset)
    top = {k: v for k, v in base.to_dict().items() if k not in ("detection", "preset")}
    det = asdict(base.detection)

    pairs = []
    if config_file is not None:
        try:
            with open(config_file, encoding="utf-8") as fh:
                found, bad = read_config_text(fh.read(), str(config_file))
            pairs.extend(found)
            problems.extend(bad)
        except OSError as exc:
            problems.append(f"config file {config_file}: {exc.strerror}")
    for item in overrides or ():
        if "=" not in item:
            problems.append(f"--set {item!r}: expected key=value")
            continue
        k, v = item.split("=", 1)
        pairs.append((k.strip(), v.strip()))

    for key, raw in pairs:
        key = ALIASES.get(key, key)
        if key == "preset":
            problems.append("preset: choose the preset with --preset, not as a setting")
            continue
        if key in _DETECTION_KEYS:
            val, err = _coerce(key, raw, det[key])
            target = det
        elif key in top:
            val, err = _coerce(key, raw, top[key])
            target = top
        else:
            problems.append(f"{key}: unknown setting")
            continue
        if err:
            problems.append(err)
        else:
            target[key] = val

    cfg = PipelineConfig(detection=DetectionParams(**det), preset=preset, **top)
    problems.extend(cfg.problems())
    if problems:
        raise ConfigError(problems)
    return cfg


def default_out_dir() -> str:
    return os.environ.get(OUT_ENV, DEFAULT_OUT)
