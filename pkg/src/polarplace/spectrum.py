"""Frequency-domain signatures.

The signature is the magnitude of the per-channel 2D DFT of a feature map,
cropped around the zero frequency. A circular shift of the feature map only
changes spectral phase, so the signature is invariant to yaw rotations that
land on whole sector columns.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, CropTooLarge, FormatError, LengthMismatch


def fft2_per_channel(g):
    """Unnormalized forward 2D DFT over the (ring, sector) axes of each channel."""
    return np.fft.fft2(np.asarray(g, dtype=np.float64), axes=(0, 1))


def ifft2_per_channel(s):
    return np.fft.ifft2(s, axes=(0, 1))


@dataclass(frozen=True)
class CropConfig:
    crop_h: int = 16
    crop_w: int = 16
    mode: str = "low-pass"

    def __post_init__(self):
        if self.mode not in ("low-pass", "high-pass"):
            raise ConfigError(f"unknown crop mode {self.mode!r}")
        if self.crop_h < 1 or self.crop_w < 1:
            raise ConfigError("crop dimensions must be positive")

    def signature_length(self, channels):
        return self.crop_h * self.crop_w * channels


def _crop_slices(n, c):
    """Index array of the ``c`` bins kept along an axis of length ``n`` after fftshift."""
    start = n // 2 - c // 2
    return np.arange(start, start + c)


def crop_indices(shape, crop):
    """Row and column indices into the *fftshifted* magnitude grid.

    Low-pass keeps the centered block. High-pass keeps the four corner blocks
    of the shifted grid, tiled into a ``crop_h x crop_w`` block.
    """
    h, w = shape[:2]
    if crop.crop_h > h or crop.crop_w > w:
        raise CropTooLarge(f"crop {crop.crop_h}x{crop.crop_w} exceeds spectrum {h}x{w}")
    if crop.mode == "low-pass":
        return _crop_slices(h, crop.crop_h), _crop_slices(w, crop.crop_w)
    th, tw = (crop.crop_h + 1) // 2, (crop.crop_w + 1) // 2
    rows = np.concatenate([np.arange(th), np.arange(h - (crop.crop_h - th), h)])
    cols = np.concatenate([np.arange(tw), np.arange(w - (crop.crop_w - tw), w)])
    return rows, cols


def magnitude_signature(s, crop=CropConfig()):
    """Flatten the cropped, centered spectral magnitude into a signature vector.

    Parameters
    ----------
    s : complex ndarray (H, W, C)
        Output of :func:`fft2_per_channel`.
    crop : CropConfig

    Returns
    -------
    ndarray of length ``crop_h * crop_w * C``, channel-major then row-major.
    """
    rows, cols = crop_indices(s.shape, crop)
    mag = np.fft.fftshift(np.abs(s), axes=(0, 1))
    block = mag[np.ix_(rows, cols)]
    return np.ascontiguousarray(np.moveaxis(block, 2, 0)).reshape(-1)


def signature_backward(s, crop, grad_sig):
    """Gradient of a loss w.r.t. the real feature map, given d loss / d signature.

    Uses d|X|/dg = Re(FFT(a * conj(X) / |X|)); bins with zero magnitude take
    a zero subgradient.
    """
    h, w, c = s.shape
    rows, cols = crop_indices(s.shape, crop)
    a_shift = np.zeros((h, w, c))
    a_shift[np.ix_(rows, cols)] = np.moveaxis(
        np.asarray(grad_sig, dtype=np.float64).reshape(c, len(rows), len(cols)), 0, 2)
    a = np.fft.ifftshift(a_shift, axes=(0, 1))
    mag = np.abs(s)
    phase = np.divide(np.conj(s), mag, out=np.zeros_like(s), where=mag > 0)
    return np.fft.fft2(a * phase, axes=(0, 1)).real


def signature_distance(a, b):
    """Euclidean distance between two signatures."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"signature lengths differ: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.sqrt(np.dot(d, d)))


_DSIG_HEADER = struct.Struct("<4sII")
_DSIG_META = np.dtype([("id", "<u8"), ("x", "<f8"), ("y", "<f8"), ("yaw", "<f8")])


def write_signature_file(path, length, ids, poses, signatures):
    """Write a ``DSIG`` file.

    ``poses`` is an ``(n, 3)`` array of ``(x, y, yaw_deg)``; ``signatures`` is
    ``(n, length)`` and is stored as float32.
    """
    ids = np.asarray(ids, dtype=np.uint64).reshape(-1)
    n = ids.shape[0]
    poses = np.asarray(poses, dtype=np.float64).reshape(n, 3)
    sigs = np.asarray(signatures, dtype=np.float32).reshape(n, length)
    rec = np.dtype(_DSIG_META.descr + [("sig", "<f4", (length,))])
    table = np.zeros(n, dtype=rec)
    table["id"] = ids
    table["x"], table["y"], table["yaw"] = poses[:, 0], poses[:, 1], poses[:, 2]
    table["sig"] = sigs
    Path(path).write_bytes(_DSIG_HEADER.pack(b"DSIG", length, n) + table.tobytes())


def read_signature_file(path):
    """Returns ``(length, ids, poses, signatures)``; signatures come back as float32."""
    raw = Path(path).read_bytes()
    if len(raw) < _DSIG_HEADER.size:
        raise FormatError("truncated DSIG header")
    magic, length, n = _DSIG_HEADER.unpack_from(raw)
    if magic != b"DSIG":
        raise FormatError(f"bad magic {magic!r}")
    rec = np.dtype(_DSIG_META.descr + [("sig", "<f4", (length,))])
    body = raw[_DSIG_HEADER.size:]
    if len(body) != n * rec.itemsize:
        raise FormatError(f"DSIG body is {len(body)} bytes, expected {n * rec.itemsize}")
    table = np.frombuffer(body, dtype=rec, count=n)
    poses = np.stack([table["x"], table["y"], table["yaw"]], axis=1) if n else np.zeros((0, 3))
    sigs = np.array(table["sig"], dtype=np.float32).reshape(n, length)
    return length, table["id"].astype(np.int64), poses, sigs
