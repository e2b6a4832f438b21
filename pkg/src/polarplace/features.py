"""Learnable feature layer applied to polar BEV grids.

A stack of 2D convolutions, circular along the sector axis and zero-padded
along the ring axis, so every layer commutes with column shifts. Feature
maps are plain ``(rings, sectors, channels)`` float64 arrays.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bev import channel_pool
from .errors import ConfigError, FormatError, ShapeMismatch

ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class ConvLayer:
    """One convolution: ``weight`` is ``(k_h, k_w, c_in, c_out)``, ``bias`` is ``(c_out,)``."""

    weight: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        w = np.array(self.weight, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64).reshape(-1)
        if w.ndim != 4:
            raise ShapeMismatch(f"kernel must be 4-D, got shape {w.shape}")
        if w.shape[0] % 2 == 0 or w.shape[1] % 2 == 0:
            raise ShapeMismatch(f"kernel spatial dims must be odd, got {w.shape[:2]}")
        if b.shape != (w.shape[3],):
            raise ShapeMismatch(f"bias shape {b.shape} does not match c_out={w.shape[3]}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ConfigError("layer parameters must be finite")
        w.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_channels(self):
        return self.weight.shape[2]

    @property
    def out_channels(self):
        return self.weight.shape[3]


@dataclass(frozen=True)
class FeatureParams:
    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ConfigError("a feature stack needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.out_channels != b.in_channels:
                raise ShapeMismatch(
                    f"layer chain mismatch: {a.out_channels} -> {b.in_channels}")
        object.__setattr__(self, "layers", layers)

    @property
    def in_channels(self):
        return self.layers[0].in_channels

    @property
    def out_channels(self):
        return self.layers[-1].out_channels

    @property
    def n_params(self):
        return sum(l.weight.size + l.bias.size for l in self.layers)

    def arrays(self):
        """Flat list ``[w0, b0, w1, b1, ...]``."""
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def with_arrays(self, arrays):
        it = iter(arrays)
        return FeatureParams(tuple(
            ConvLayer(next(it), next(it), l.activation) for l in self.layers))

    def __eq__(self, other):
        if not isinstance(other, FeatureParams) or len(self.layers) != len(other.layers):
            return False
        return all(a.activation == b.activation and np.array_equal(a.weight, b.weight)
                   and np.array_equal(a.bias, b.bias)
                   for a, b in zip(self.layers, other.layers))


def init_params(in_channels, channels=(8, 4), kernel=3, activations=None, seed=0):
    """Glorot-uniform kernels and zero biases from a seeded generator.

    The default activations are relu on every layer except the last.
    """
    rng = np.random.default_rng(seed)
    channels = tuple(channels)
    if activations is None:
        activations = ("relu",) * (len(channels) - 1) + ("identity",)
    layers = []
    c_in = in_channels
    for c_out, act in zip(channels, activations):
        fan_in = kernel * kernel * c_in
        fan_out = kernel * kernel * c_out
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(kernel, kernel, c_in, c_out))
        layers.append(ConvLayer(w, np.zeros(c_out), act))
        c_in = c_out
    return FeatureParams(tuple(layers))


def _pad(x, ph, pw):
    # circular along sectors, zeros along rings
    if pw:
        x = np.concatenate([x[:, -pw:], x, x[:, :pw]], axis=1)
    if ph:
        z = np.zeros((ph,) + x.shape[1:])
        x = np.concatenate([z, x, z], axis=0)
    return x


def _unpad_grad(gp, ph, pw, h, w):
    g = gp[ph:ph + h] if ph else gp
    if not pw:
        return g.copy()
    out = g[:, pw:pw + w].copy()
    out[:, w - pw:] += g[:, :pw]
    out[:, :pw] += g[:, pw + w:]
    return out


def conv2d_circular(x, weight, bias):
    """Cross-correlation of ``x`` (H, W, C_in) with ``weight``, 'same' output size."""
    kh, kw, c_in, c_out = weight.shape
    if x.shape[2] != c_in:
        raise ShapeMismatch(f"input has {x.shape[2]} channels, kernel expects {c_in}")
    h, w = x.shape[:2]
    ph, pw = kh // 2, kw // 2
    if pw > w:
        raise ShapeMismatch(f"kernel width {kw} too large for {w} sectors")
    xp = _pad(x, ph, pw)
    out = np.empty((h, w, c_out))
    out[...] = bias
    for i in range(kh):
        for j in range(kw):
            out += xp[i:i + h, j:j + w] @ weight[i, j]
    return out


def _conv2d_backward(x, weight, grad_out):
    kh, kw, c_in, c_out = weight.shape
    h, w = x.shape[:2]
    ph, pw = kh // 2, kw // 2
    xp = _pad(x, ph, pw)
    gw = np.empty_like(weight)
    gxp = np.zeros_like(xp)
    g2 = grad_out.reshape(-1, c_out)
    for i in range(kh):
        for j in range(kw):
            patch = xp[i:i + h, j:j + w]
            gw[i, j] = patch.reshape(-1, c_in).T @ g2
            gxp[i:i + h, j:j + w] += grad_out @ weight[i, j].T
    gb = grad_out.sum(axis=(0, 1))
    return gw, gb, _unpad_grad(gxp, ph, pw, h, w)


def _as_grid(bev):
    return bev.cells if hasattr(bev, "cells") else np.asarray(bev, dtype=np.float64)


def forward_with_cache(x, params):
    """Run the stack on a (H, W, C) array; returns output and per-layer inputs/pre-activations."""
    cache = []
    for layer in params.layers:
        z = conv2d_circular(x, layer.weight, layer.bias)
        cache.append((x, z))
        x = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return x, cache


def backward_from_cache(params, cache, grad_out):
    grads = [None] * (2 * len(params.layers))
    g = grad_out
    for idx in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[idx]
        x, z = cache[idx]
        if layer.activation == "relu":
            g = g * (z > 0)
        gw, gb, g = _conv2d_backward(x, layer.weight, g)
        grads[2 * idx], grads[2 * idx + 1] = gw, gb
    return grads, g


def feature_forward(bev, params=None, pool=None):
    """Map a PolarBev (or raw grid) to a feature map.

    Parameters
    ----------
    bev : PolarBev or ndarray
    params : FeatureParams or None
        ``None`` selects the identity mode, which copies the grid.
    pool : {None, "max", "sum"}
        Optional channel pooling applied before the stack.

    Returns
    -------
    ndarray of shape (rings, sectors, C_out)
    """
    if pool is not None:
        bev = channel_pool(bev, pool)
    x = _as_grid(bev)
    if params is None:
        return x.copy()
    if x.shape[2] != params.in_channels:
        raise ShapeMismatch(
            f"grid has {x.shape[2]} layers but params expect {params.in_channels}")
    return forward_with_cache(x, params)[0]


def feature_backward(bev, params, upstream_grad, pool=None):
    """Reverse-mode gradients of :func:`feature_forward`.

    Returns ``(param_grads, input_grads)`` where ``param_grads`` is the flat
    ``[dw0, db0, dw1, db1, ...]`` list matching ``params.arrays()`` and
    ``input_grads`` has the shape of the (pooled) input grid.
    """
    if pool is not None:
        bev = channel_pool(bev, pool)
    x = _as_grid(bev)
    if params is None:
        return [], np.array(upstream_grad, dtype=np.float64)
    if x.shape[2] != params.in_channels:
        raise ShapeMismatch(
            f"grid has {x.shape[2]} layers but params expect {params.in_channels}")
    out, cache = forward_with_cache(x, params)
    upstream_grad = np.asarray(upstream_grad, dtype=np.float64)
    if upstream_grad.shape != out.shape:
        raise ShapeMismatch(f"upstream grad shape {upstream_grad.shape} != output {out.shape}")
    return backward_from_cache(params, cache, upstream_grad)


_FPRM_VERSION = 1
_ACT_CODES = {"relu": 0, "identity": 1}


def save_params(params, path):
    """Write layer-ordered float32 tensors with shape headers."""
    chunks = [struct.pack("<4sII", b"FPRM", _FPRM_VERSION, len(params.layers))]
    for layer in params.layers:
        kh, kw, ci, co = layer.weight.shape
        chunks.append(struct.pack("<IIIII", kh, kw, ci, co, _ACT_CODES[layer.activation]))
        chunks.append(np.ascontiguousarray(layer.weight, dtype="<f4").tobytes())
        chunks.append(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_params(path):
    try:
        return _parse_params(Path(path).read_bytes())
    except (struct.error, ValueError, KeyError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"corrupt params file {path}: {exc}") from None


def _parse_params(raw):
    magic, version, n = struct.unpack_from("<4sII", raw, 0)
    if magic != b"FPRM":
        raise FormatError(f"bad magic {magic!r}")
    if version != _FPRM_VERSION:
        raise FormatError(f"unsupported params version {version}")
    off = 12
    acts = {v: k for k, v in _ACT_CODES.items()}
    layers = []
    for _ in range(n):
        kh, kw, ci, co, act = struct.unpack_from("<IIIII", raw, off)
        off += 20
        nw = kh * kw * ci * co
        w = np.frombuffer(raw, dtype="<f4", count=nw, offset=off).reshape(kh, kw, ci, co)
        off += 4 * nw
        b = np.frombuffer(raw, dtype="<f4", count=co, offset=off)
        off += 4 * co
        layers.append(ConvLayer(w.astype(np.float64), b.astype(np.float64), acts[act]))
    if off != len(raw):
        raise FormatError("trailing bytes after last layer")
    return FeatureParams(tuple(layers))
