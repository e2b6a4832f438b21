"""Point cloud loading, range/height filtering and yaw rotation."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MalformedRecord, MissingFile, NonFiniteCoordinate, ConfigError


@dataclass(frozen=True)
class PointCloud:
    """Sensor-frame 3D points in meters, shape ``(count, 3)``."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise NonFiniteCoordinate("point cloud contains non-finite coordinates")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @property
    def count(self):
        return self.points.shape[0]

    def __len__(self):
        return self.count

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)))


@dataclass(frozen=True)
class FilterConfig:
    """Crop window applied before binning.

    Heights are measured from ``ground_z_m``; points at or below the ground
    threshold are dropped (plain height filter, no plane fit).
    """

    max_range_m: float = 80.0
    min_z_m: float = 0.0
    max_z_m: float = 20.0
    ground_z_m: float = -1.5

    def __post_init__(self):
        if not self.max_range_m > 0:
            raise ConfigError(f"max_range_m must be positive, got {self.max_range_m}")
        if not self.min_z_m < self.max_z_m:
            raise ConfigError(f"min_z_m ({self.min_z_m}) must be < max_z_m ({self.max_z_m})")


def load_point_cloud(path, format="xyz-binary"):
    """Read a point cloud from disk.

    Parameters
    ----------
    path : str or Path
        File to read.
    format : {"xyz-binary", "xyz-csv"}
        ``xyz-binary`` is headerless little-endian float32 triples;
        ``xyz-csv`` is one ``x,y,z`` line per point.

    Returns
    -------
    PointCloud
        Points in file order.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"no such point cloud file: {path}")
    if format == "xyz-binary":
        raw = path.read_bytes()
        if len(raw) % 12:
            raise MalformedRecord(len(raw) // 12,
                                  f"file length {len(raw)} is not a multiple of 12 bytes")
        pts = np.frombuffer(raw, dtype="<f4").reshape(-1, 3).astype(np.float64)
        bad = ~np.all(np.isfinite(pts), axis=1)
        if bad.any():
            raise NonFiniteCoordinate(f"non-finite coordinate in record {int(np.argmax(bad))}")
        return PointCloud(pts)
    if format == "xyz-csv":
        rows = []
        with open(path, "r", encoding="ascii") as fh:
            for i, line in enumerate(fh):
                line = line.strip()
                if not line:
                    if i == 0:
                        continue
                    raise MalformedRecord(i, "empty line")
                fields = line.split(",")
                if len(fields) != 3:
                    raise MalformedRecord(i, f"expected 3 fields, got {len(fields)}")
                try:
                    xyz = [float(f) for f in fields]
                except ValueError as exc:
                    raise MalformedRecord(i, str(exc)) from None
                if not all(np.isfinite(xyz)):
                    raise NonFiniteCoordinate(f"non-finite coordinate in row {i}")
                rows.append(xyz)
        return PointCloud(np.array(rows, dtype=np.float64).reshape(-1, 3))
    raise ValueError(f"unknown point cloud format {format!r}")


def save_point_cloud(pc, path, format="xyz-binary"):
    path = Path(path)
    if format == "xyz-binary":
        path.write_bytes(np.ascontiguousarray(pc.points, dtype="<f4").tobytes())
    elif format == "xyz-csv":
        with open(path, "w", encoding="ascii") as fh:
            for x, y, z in pc.points.tolist():
                fh.write(f"{x!r},{y!r},{z!r}\n")
    else:
        raise ValueError(f"unknown point cloud format {format!r}")


def filter_mask(points, cfg):
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    r = np.hypot(x, y)
    h = z - cfg.ground_z_m
    return (r <= cfg.max_range_m) & (z > cfg.ground_z_m) & (h >= cfg.min_z_m) & (h <= cfg.max_z_m)


def filter_points(pc, cfg=FilterConfig()):
    """Keep points inside the planar range and height window, order preserved."""
    return PointCloud(pc.points[filter_mask(pc.points, cfg)])


def rotation_about_z(yaw_deg):
    t = np.deg2rad(yaw_deg)
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotate_point_cloud(pc, yaw_deg):
    """Rotate every point counter-clockwise about +z by ``yaw_deg`` degrees."""
    if not np.isfinite(yaw_deg):
        raise ValueError("yaw_deg must be finite")
    if yaw_deg == 0:
        return pc
    return PointCloud(pc.points @ rotation_about_z(yaw_deg).T)
