"""Street morphology from terrestrial LiDAR point clouds."""
from .detection import DetectionParams, detect_planes
from .errors import (ConfigError, DegenerateGeometryError, InputError, MissingArtifactError, ParseError,
                     StreetMorphError)
from .pointcloud import PointCloud, downsample, estimate_normals

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DegenerateGeometryError", "DetectionParams", "InputError", "MissingArtifactError",
    "ParseError", "PointCloud", "StreetMorphError", "detect_planes", "downsample", "estimate_normals",
]
