"""End-to-end scan encoding: filter, polar BEV, features, spectrum, signature."""

import time
from dataclasses import dataclass, field

import numpy as np

from .bev import BevConfig, build_polar_bev
from .correlate import DEFAULT_SHARPNESS_THRESHOLD, estimate_yaw
from .errors import ConfigError
from .features import feature_forward, init_params
from .pointcloud import FilterConfig, filter_points
from .spectrum import CropConfig, fft2_per_channel, magnitude_signature


@dataclass(frozen=True)
class EncodedScan:
    bev: object
    features: np.ndarray
    spectrum: np.ndarray
    signature: np.ndarray


@dataclass
class ScanEncoder:
    """Bundles every stage needed to turn a raw cloud into a signature.

    ``params=None`` uses identity features (optionally channel-pooled).
    """

    filter_cfg: FilterConfig = field(default_factory=FilterConfig)
    bev_cfg: BevConfig = field(default_factory=BevConfig)
    crop: CropConfig = field(default_factory=CropConfig)
    params: object = None
    pool: str = None
    normalized: bool = False
    reduction: str = "row0"
    softmax_w: float = None
    softmax_b: float = 0.0
    threshold: float = DEFAULT_SHARPNESS_THRESHOLD
    timings: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        c_in = 1 if self.pool else self.bev_cfg.layers
        if self.params is not None and self.params.in_channels != c_in:
            raise ConfigError(
                f"feature stack expects {self.params.in_channels} channels, BEV gives {c_in}")

    @classmethod
    def default(cls, seed=0, **kw):
        """Default stack: seeded two-layer 3x3 conv, layers -> 8 -> 4 channels."""
        enc = cls(**kw)
        c_in = 1 if enc.pool else enc.bev_cfg.layers
        enc.params = init_params(c_in, (8, 4), seed=seed)
        return enc

    @property
    def out_channels(self):
        if self.params is not None:
            return self.params.out_channels
        return 1 if self.pool else self.bev_cfg.layers

    @property
    def signature_length(self):
        return self.crop.signature_length(self.out_channels)

    def bev(self, pc):
        return build_polar_bev(filter_points(pc, self.filter_cfg), self.bev_cfg,
                               height_origin_m=self.filter_cfg.ground_z_m)

    def encode_bev(self, bev):
        g = feature_forward(bev, self.params, self.pool)
        s = fft2_per_channel(g)
        return EncodedScan(bev, g, s, magnitude_signature(s, self.crop))

    def encode(self, pc):
        t0 = time.perf_counter()
        bev = self.bev(pc)
        t1 = time.perf_counter()
        enc = self.encode_bev(bev)
        t2 = time.perf_counter()
        self.timings = {"preprocess_ms": 1e3 * (t1 - t0), "signature_ms": 1e3 * (t2 - t1)}
        return enc

    def yaw(self, query, match, mode="argmax"):
        """Relative yaw of ``query`` w.r.t. ``match`` (both EncodedScan)."""
        return estimate_yaw(None, None, mode, self.normalized, self.reduction,
                            self.softmax_w, self.softmax_b, self.threshold,
                            spectra=(query.spectrum, match.spectrum))
