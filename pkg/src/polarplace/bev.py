"""Polar bird's-eye-view grids.

Points are binned straight into (ring, sector, layer) cells, so a yaw
rotation of the cloud by a whole number of sectors is exactly a circular
shift of the sector axis.
"""

import struct
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, PointOutOfBounds


class BevVariant(str, Enum):
    OCCUPIED = "occupied"
    DENSITY = "density"
    HEIGHT = "height"


_VARIANT_CODES = {BevVariant.OCCUPIED: 0, BevVariant.DENSITY: 1, BevVariant.HEIGHT: 2}
_CODE_VARIANTS = {v: k for k, v in _VARIANT_CODES.items()}


@dataclass(frozen=True)
class BevConfig:
    rings: int = 40
    sectors: int = 120
    layers: int = 20
    max_range_m: float = 80.0
    height_span_m: float = 20.0
    variant: BevVariant = BevVariant.OCCUPIED

    def __post_init__(self):
        object.__setattr__(self, "variant", BevVariant(self.variant))
        if self.variant is BevVariant.HEIGHT and self.layers != 1:
            object.__setattr__(self, "layers", 1)
        if self.rings < 1 or self.layers < 1:
            raise ConfigError("rings and layers must be positive")
        if self.sectors < 2:
            raise ConfigError("sectors must be at least 2")
        if not (self.max_range_m > 0 and self.height_span_m > 0):
            raise ConfigError("max_range_m and height_span_m must be positive")

    @property
    def sector_deg(self):
        return 360.0 / self.sectors

    @property
    def ring_m(self):
        return self.max_range_m / self.rings

    @property
    def layer_m(self):
        return self.height_span_m / self.layers

    @property
    def shape(self):
        return (self.rings, self.sectors, self.layers)


@dataclass(frozen=True)
class PolarBev:
    cells: np.ndarray
    config: BevConfig

    def __post_init__(self):
        if self.cells.shape != self.config.shape:
            raise ConfigError(f"cells shape {self.cells.shape} != config shape {self.config.shape}")

    def __eq__(self, other):
        return (isinstance(other, PolarBev) and self.config == other.config
                and np.array_equal(self.cells, other.cells))


def polar_indices(points, cfg, height_origin_m=0.0):
    """Return ``(ring, sector, layer, height)`` index arrays for each point.

    The azimuth is ``atan2(y, x)`` folded into [0, 360); a point sitting on a
    sector edge belongs to the sector that starts at that edge.
    """
    x, y = points[:, 0], points[:, 1]
    h = points[:, 2] - height_origin_m
    r = np.hypot(x, y)
    bad = (r > cfg.max_range_m) | (h < 0) | (h > cfg.height_span_m)
    if bad.any():
        i = int(np.argmax(bad))
        raise PointOutOfBounds(
            f"point {i} at range {r[i]:.6g} m, height {h[i]:.6g} m is outside "
            f"range {cfg.max_range_m} m / height [0, {cfg.height_span_m}] m")
    phi = np.degrees(np.arctan2(y, x)) % 360.0
    ring = np.minimum((r / cfg.ring_m).astype(np.int64), cfg.rings - 1)
    # fp rounding can push phi/width up to exactly `sectors`
    sector = np.floor(phi / cfg.sector_deg).astype(np.int64) % cfg.sectors
    layer = np.minimum((h / cfg.layer_m).astype(np.int64), cfg.layers - 1)
    return ring, sector, layer, h


def build_polar_bev(pc, cfg=BevConfig(), height_origin_m=0.0):
    """Bin a filtered point cloud into a polar BEV grid.

    Parameters
    ----------
    pc : PointCloud
        Points with planar range <= ``max_range_m`` and height (``z`` minus
        ``height_origin_m``) inside ``[0, height_span_m]``.
    cfg : BevConfig
    height_origin_m : float
        z value that maps to height 0, usually the ground threshold.

    Returns
    -------
    PolarBev
    """
    cells = np.zeros(cfg.shape, dtype=np.float64)
    if pc.count == 0:
        return PolarBev(cells, cfg)
    ring, sector, layer, h = polar_indices(pc.points, cfg, height_origin_m)
    if cfg.variant is BevVariant.HEIGHT:
        np.maximum.at(cells, (ring, sector, np.zeros_like(ring)), h)
    else:
        np.add.at(cells, (ring, sector, layer), 1.0)
        if cfg.variant is BevVariant.OCCUPIED:
            cells = (cells > 0).astype(np.float64)
    return PolarBev(cells, cfg)


def rotate_polar_bev(bev, shift_cols):
    """Circularly shift the sector axis; +1 column is +360/sectors degrees of yaw."""
    k = int(shift_cols) % bev.config.sectors
    if k == 0:
        return bev
    return PolarBev(np.roll(bev.cells, k, axis=1), bev.config)


def channel_pool(bev, mode="max"):
    """Collapse the layer axis with a max or sum reduction."""
    if mode == "max":
        cells = bev.cells.max(axis=2, keepdims=True)
    elif mode == "sum":
        cells = bev.cells.sum(axis=2, keepdims=True)
    else:
        raise ValueError(f"unknown pooling mode {mode!r}")
    return PolarBev(cells, replace(bev.config, layers=1))


_PBEV_HEADER = struct.Struct("<4sIIIIdd")


def save_polar_bev(bev, path):
    cfg = bev.config
    header = _PBEV_HEADER.pack(b"PBEV", cfg.rings, cfg.sectors, cfg.layers,
                               _VARIANT_CODES[cfg.variant], cfg.max_range_m, cfg.height_span_m)
    Path(path).write_bytes(header + np.ascontiguousarray(bev.cells, dtype="<f4").tobytes())


def load_polar_bev(path):
    raw = Path(path).read_bytes()
    if len(raw) < _PBEV_HEADER.size:
        raise FormatError("truncated PBEV header")
    magic, rings, sectors, layers, code, max_range, span = _PBEV_HEADER.unpack_from(raw)
    if magic != b"PBEV":
        raise FormatError(f"bad magic {magic!r}")
    if code not in _CODE_VARIANTS:
        raise FormatError(f"unknown variant code {code}")
    cfg = BevConfig(rings, sectors, layers, max_range, span, _CODE_VARIANTS[code])
    body = raw[_PBEV_HEADER.size:]
    if len(body) != 4 * rings * sectors * layers:
        raise FormatError("PBEV body length does not match header")
    cells = np.frombuffer(body, dtype="<f4").reshape(cfg.shape).astype(np.float64)
    return PolarBev(cells, cfg)
