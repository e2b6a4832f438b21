"""Flat ``key = value`` run configuration.

One line per key, ``#`` starts a comment. Unknown or repeated keys are
errors. :func:`render_config` writes every key (defaults included) back out
in a fixed order, and that text is what commands echo next to their outputs.
"""

from dataclasses import field, make_dataclass, replace
from pathlib import Path

from .bev import BevConfig
from .errors import ConfigError, MissingFile
from .features import init_params, load_params
from .learn import LossConfig
from .pipeline import ScanEncoder
from .pointcloud import FilterConfig
from .spectrum import CropConfig


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _channels(s):
    out = tuple(int(t) for t in s.replace(" ", "").split(",") if t)
    if not out or min(out) < 1:
        raise ValueError("channels must be a comma-separated list of positive ints")
    return out


def _auto_float(s):
    return None if s.strip().lower() == "auto" else float(s)


def _auto_int(s):
    return None if s.strip().lower() == "auto" else int(s)


def _opt_str(s):
    s = s.strip()
    return None if s.lower() in ("", "none") else s


def _opt_int(s):
    s = s.strip()
    return None if s.lower() in ("", "none") else int(s)


def _choice(*options):
    def parse(s):
        s = s.strip()
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return s
    return parse


def _fmt(v, parser=None):
    if v is None:
        return "auto" if parser in (_auto_float, _auto_int) else "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


# key, parser, default, description
KEYS = [
    ("max_range_m", float, 80.0, "drop points farther than this and size the polar grid"),
    ("min_z_m", float, 0.0, "lowest kept height above the ground threshold"),
    ("max_z_m", float, 20.0, "highest kept height above the ground threshold"),
    ("ground_z_m", float, -1.5, "z in the sensor frame at or below which points are ground"),
    ("rings", int, 40, "radial bins"),
    ("sectors", int, 120, "azimuth bins (360 / sectors degrees each)"),
    ("layers", int, 20, "height bins"),
    ("height_span_m", float, 20.0, "height covered by the layers"),
    ("variant", _choice("occupied", "density", "height"), "occupied", "cell value"),
    ("features", _choice("conv", "identity"), "conv", "feature stack or raw grid"),
    ("channels", _channels, (8, 4), "conv output channels per layer"),
    ("kernel", int, 3, "odd conv kernel size"),
    ("feature_seed", int, 0, "conv weight initialisation seed"),
    ("params_path", _opt_str, None, "trained FeatureParams file overriding the seeded stack"),
    ("pool", _choice("none", "max", "sum"), "none", "collapse height layers before features"),
    ("crop_h", int, 16, "signature crop rows per channel"),
    ("crop_w", int, 16, "signature crop columns per channel"),
    ("crop_mode", _choice("low-pass", "high-pass"), "low-pass", "which spectrum block to keep"),
    ("signature_dim", _auto_int, 1024, "expected signature length, checked against the crop"),
    ("normalized", _bool, False, "normalise the cross-power spectrum (phase only)"),
    ("reduction", _choice("row0", "max"), "row0", "collapse the correlation surface to yaw"),
    ("softmax_w", _auto_float, None, "softmax scale; auto = 10 / std(correlation)"),
    ("softmax_b", float, 0.0, "softmax offset"),
    ("sharpness_threshold", float, 1.05, "peak/mean ratio below which yaw is degenerate"),
    ("alpha1", float, 0.5, "first quadruplet margin"),
    ("alpha2", float, 0.2, "second quadruplet margin"),
    ("lambda", float, 1.0, "rotation loss weight"),
    ("lr", float, 1e-5, "learning rate"),
    ("momentum", float, 0.0, "SGD momentum"),
    ("optimizer", _choice("sgd", "adam"), "sgd", "update rule"),
    ("epochs", int, 1, "training epochs"),
    ("train_softmax", _bool, True, "update softmax W and b during training"),
    ("hard_negative_epoch", _opt_int, None, "epoch from which negatives are mined"),
    ("radius", float, 1.5, "retrieval success radius in metres"),
    ("k", int, 25, "ranks evaluated / returned"),
    ("backend", _choice("exact", "tree"), "exact", "nearest-neighbour backend"),
    ("leafsize", int, 16, "KD-tree leaf size"),
    ("seed", int, 0, "master seed for synthetic data and gradient checks"),
    ("world_landmarks", int, 150, "landmarks in the synthetic world"),
    ("world_extent_m", float, 240.0, "side of the square synthetic world"),
    ("n_places", int, 200, "synthetic database places"),
    ("n_queries", int, 100, "synthetic queries"),
    ("revisit_fraction", float, 1.0, "share of queries that revisit a place"),
    ("yaw_distribution", _choice("uniform", "aligned", "flip", "mixed"), "uniform",
     "query yaw relative to the revisited place"),
    ("range_noise_sigma_m", float, 0.0, "range noise along each ray"),
    ("dropout_prob", float, 0.0, "probability a return is dropped"),
    ("position_perturbation_m", float, 0.5, "max revisit offset from the place"),
    ("place_spacing_m", float, 6.0, "min distance between database places"),
    ("novel_min_distance_m", float, 10.0, "min distance from a novel query to any place"),
    ("beams", int, 720, "simulated azimuth beams"),
    ("scan_rings", int, 16, "simulated elevation channels"),
    ("gradcheck_limit", _opt_int, 24, "coordinates sampled per tensor in large checks"),
]

_KEY_INDEX = {k: i for i, (k, *_rest) in enumerate(KEYS)}


def _field_name(key):
    return "lam" if key == "lambda" else key


RunConfig = make_dataclass(
    "RunConfig", [(_field_name(k), object, field(default=d)) for k, _p, d, _doc in KEYS],
    frozen=True, namespace={"__doc__": "Every tunable of a run; see ``KEYS`` for meanings."})
RunConfig.__module__ = __name__


def _validate(cfg):
    if cfg.features == "conv":
        out_c = cfg.channels[-1]
    else:
        out_c = 1 if cfg.pool != "none" else (1 if cfg.variant == "height" else cfg.layers)
    dim = cfg.crop_h * cfg.crop_w * out_c
    if cfg.signature_dim is not None and cfg.signature_dim != dim:
        raise ConfigError(
            f"signature_dim={cfg.signature_dim} but crop {cfg.crop_h}x{cfg.crop_w} over "
            f"{out_c} channels gives {dim}")
    if cfg.crop_h > cfg.rings or cfg.crop_w > cfg.sectors:
        raise ConfigError(f"crop {cfg.crop_h}x{cfg.crop_w} exceeds grid {cfg.rings}x{cfg.sectors}")
    if cfg.kernel % 2 == 0 or cfg.kernel < 1:
        raise ConfigError("kernel must be a positive odd integer")
    if cfg.k < 1:
        raise ConfigError("k must be >= 1")
    # build the module configs once so their own checks run at parse time
    filter_config(cfg), bev_config(cfg), crop_config(cfg), loss_config(cfg)
    return cfg


def parse_config(text, source="<config>"):
    """Parse ``key = value`` text into a :class:`RunConfig`."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, val = (t.strip() for t in line.split("=", 1))
        if key not in _KEY_INDEX:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: config key {key!r} given twice")
        parser = KEYS[_KEY_INDEX[key]][1]
        try:
            values[key] = parser(val)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
    return _validate(RunConfig(**{_field_name(k): v for k, v in values.items()}))


def load_config(path=None):
    if path is None:
        return _validate(RunConfig())
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"config file not found: {path}")
    return parse_config(path.read_text(), str(path))


def override(cfg, **kw):
    return _validate(replace(cfg, **{_field_name(k): v for k, v in kw.items()}))


def render_config(cfg):
    """Canonical text of ``cfg``: every key, in declaration order."""
    return "".join(f"{k} = {_fmt(getattr(cfg, _field_name(k)), p)}\n" for k, p, *_ in KEYS)


def describe_keys():
    """``(key, default text, description)`` rows for documentation."""
    return [(k, _fmt(d, p), doc) for k, p, d, doc in KEYS]


def filter_config(cfg):
    return FilterConfig(cfg.max_range_m, cfg.min_z_m, cfg.max_z_m, cfg.ground_z_m)


def bev_config(cfg):
    return BevConfig(cfg.rings, cfg.sectors, cfg.layers, cfg.max_range_m, cfg.height_span_m,
                     cfg.variant)


def crop_config(cfg):
    return CropConfig(cfg.crop_h, cfg.crop_w, cfg.crop_mode)


def _pool(cfg):
    return None if cfg.pool == "none" else cfg.pool


def loss_config(cfg):
    return LossConfig(alpha1=cfg.alpha1, alpha2=cfg.alpha2, lam=cfg.lam, learning_rate=cfg.lr,
                      momentum=cfg.momentum, optimizer=cfg.optimizer, crop=crop_config(cfg),
                      pool=_pool(cfg), train_softmax=cfg.train_softmax,
                      hard_negative_epoch=cfg.hard_negative_epoch, seed=cfg.seed)


def build_encoder(cfg):
    """ScanEncoder for ``cfg``; loads ``params_path`` when set."""
    enc = ScanEncoder(filter_config(cfg), bev_config(cfg), crop_config(cfg), None, _pool(cfg),
                      cfg.normalized, cfg.reduction, cfg.softmax_w, cfg.softmax_b,
                      cfg.sharpness_threshold)
    if cfg.features == "conv":
        if cfg.params_path:
            params = load_params(cfg.params_path)
        else:
            params = init_params(1 if enc.pool else enc.bev_cfg.layers, cfg.channels,
                                 kernel=cfg.kernel, seed=cfg.feature_seed)
        enc = replace(enc, params=params)
    if enc.signature_length != (cfg.signature_dim or enc.signature_length):
        raise ConfigError(f"encoder signature length {enc.signature_length} "
                          f"!= signature_dim {cfg.signature_dim}")
    return enc


def scan_kwargs(cfg):
    return {"beams": cfg.beams, "rings": cfg.scan_rings}


__all__ = ["KEYS", "RunConfig", "parse_config", "load_config", "render_config", "override",
           "describe_keys", "filter_config", "bev_config", "crop_config", "loss_config",
           "build_encoder", "scan_kwargs"]
