"""Relative yaw from polar feature maps.

Conventions: a yaw of ``theta`` degrees means the query is the map scan
rotated by ``theta``, i.e. ``gq == roll(gs, theta / res)`` along the sector
axis. Every estimator here (exhaustive sweep, FFT correlation and softmax
expectation) reports the same quantity.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDistribution, ShapeMismatch
from .spectrum import ifft2_per_channel

DEFAULT_SHARPNESS_THRESHOLD = 1.05


@dataclass(frozen=True)
class YawEstimate:
    yaw_deg: float
    bin_index: int
    peak_sharpness: float


@dataclass(frozen=True)
class CorrelationDistribution:
    probs: np.ndarray
    W: float
    b: float


def _check_shapes(a, b):
    if np.shape(a) != np.shape(b):
        raise ShapeMismatch(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def _as3d(g):
    g = np.asarray(g, dtype=np.float64)
    return g[:, :, None] if g.ndim == 2 else g


def peak_sharpness(corr):
    """Peak-to-mean ratio of a correlation vector.

    Defined as ``max / mean`` for a positive mean. For a non-positive mean the
    ratio is meaningless, so any vector with a peak above its mean counts as
    infinitely sharp and a flat one as 1.
    """
    corr = np.asarray(corr, dtype=np.float64)
    peak, mean = corr.max(), corr.mean()
    if mean > 0:
        return float(peak / mean)
    return float("inf") if peak > mean else 1.0


def _argmax_estimate(corr, sectors):
    k = int(np.argmax(corr))
    return YawEstimate(k * 360.0 / sectors, k, peak_sharpness(corr))


def shift_sweep(gq, gs, metric="inner"):
    """Score every column shift of ``gs`` against ``gq`` exhaustively.

    Returns the per-shift vector: inner products for ``"inner"``, Euclidean
    distances for ``"l2"``.
    """
    gq, gs = _as3d(gq), _as3d(gs)
    _check_shapes(gq, gs)
    w = gq.shape[1]
    out = np.empty(w)
    for d in range(w):
        shifted = np.roll(gs, d, axis=1)
        if metric == "inner":
            out[d] = np.sum(gq * shifted)
        elif metric == "l2":
            out[d] = np.sqrt(np.sum((gq - shifted) ** 2))
        else:
            raise ValueError(f"unknown metric {metric!r}")
    return out


def brute_force_yaw(gq, gs, metric="l2"):
    """Exhaustive yaw search over all integer column shifts; ties go to the smallest bin."""
    scores = shift_sweep(gq, gs, metric)
    w = scores.shape[0]
    k = int(np.argmin(scores) if metric == "l2" else np.argmax(scores))
    sharp = peak_sharpness(shift_sweep(gq, gs, "inner")) if metric == "l2" else peak_sharpness(scores)
    return YawEstimate(k * 360.0 / w, k, sharp)


def cross_power(sq, ss, normalized=False):
    """Channel-summed ``sq * conj(ss)``; with ``normalized`` each bin is scaled to unit magnitude."""
    _check_shapes(sq, ss)
    cp = sq * np.conj(ss)
    if cp.ndim == 3:
        cp = cp.sum(axis=2)
    if normalized:
        mag = np.abs(cp)
        cp = np.divide(cp, mag, out=np.zeros_like(cp), where=mag >= 1e-12)
    return cp


def correlation_surface(cp):
    """Real part of the inverse DFT of a cross-power grid, (ring shift, sector shift)."""
    return ifft2_per_channel(cp[:, :, None])[:, :, 0].real


def correlation_1d(cp, reduction="row0"):
    """Angular-shift correlation vector from a cross-power grid.

    ``reduction="row0"`` keeps the zero ring-shift row, which equals the
    exhaustive inner-product sweep; ``"max"`` takes the maximum over ring
    shifts instead.
    """
    surface = correlation_surface(cp)
    if reduction == "row0":
        return surface[0].copy()
    if reduction == "max":
        return surface.max(axis=0)
    raise ValueError(f"unknown reduction {reduction!r}")


def default_softmax_scale(corr):
    sd = float(np.std(corr))
    return 10.0 / sd if sd > 0 else 1.0


def _signed_offsets(n, center):
    o = (np.arange(n) - center) % n
    return np.where(o > n / 2, o - n, o).astype(np.float64)


def _softmax(z):
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def softmax_expectation_yaw(corr, W=None, b=0.0, threshold=DEFAULT_SHARPNESS_THRESHOLD):
    """Differentiable yaw: circular expectation of ``softmax(W * corr + b)``.

    Bins are re-indexed to signed offsets in (-n/2, n/2] around the argmax so
    the mean does not wrap at the 0/360 seam.

    Parameters
    ----------
    corr : ndarray (n,)
        Angular correlation vector.
    W : float or None
        Softmax scale; ``None`` uses ``10 / std(corr)``.
    b : float
        Softmax offset.
    threshold : float
        Minimum peak-to-mean ratio.

    Returns
    -------
    (YawEstimate, CorrelationDistribution)
    """
    corr = np.asarray(corr, dtype=np.float64)
    if not np.all(np.isfinite(corr)):
        raise ValueError("correlation vector must be finite")
    sharp = peak_sharpness(corr)
    if sharp < threshold:
        raise DegenerateDistribution(sharp, threshold)
    if W is None:
        W = default_softmax_scale(corr)
    if not W > 0:
        raise ValueError(f"softmax scale W must be positive, got {W}")
    n = corr.shape[0]
    center = int(np.argmax(corr))
    p = _softmax(W * corr + b)
    offsets = _signed_offsets(n, center)
    theta_bins = center + float(np.dot(offsets, p))
    yaw = (theta_bins * 360.0 / n) % 360.0
    return YawEstimate(yaw, center, sharp), CorrelationDistribution(p, float(W), float(b))


def softmax_expectation_backward(corr, W=None, b=0.0, upstream=1.0,
                                 threshold=DEFAULT_SHARPNESS_THRESHOLD):
    """Gradients of the expected yaw (degrees) w.r.t. ``corr``, ``W`` and ``b``.

    The argmax center is piecewise constant and the final wrap to [0, 360)
    is ignored. When ``W`` is None the adaptive scale is treated as a constant.
    """
    est, dist = softmax_expectation_yaw(corr, W, b, threshold)
    corr = np.asarray(corr, dtype=np.float64)
    n = corr.shape[0]
    p = dist.probs
    scale = 360.0 / n * upstream
    offsets = _signed_offsets(n, est.bin_index)
    mean_off = float(np.dot(offsets, p))
    # d theta / d z_j = p_j (o_j - E[o]) with z = W corr + b
    dz = p * (offsets - mean_off) * scale
    return dz * dist.W, float(np.dot(dz, corr)), 0.0


def estimate_yaw(gq, gs, mode="argmax", normalized=False, reduction="row0", W=None, b=0.0,
                 threshold=DEFAULT_SHARPNESS_THRESHOLD, spectra=None):
    """Relative yaw between two feature maps via FFT correlation.

    ``spectra`` may carry precomputed ``(sq, ss)`` DFTs to skip the forward
    transforms.
    """
    if spectra is None:
        gq, gs = _as3d(gq), _as3d(gs)
        _check_shapes(gq, gs)
        sq, ss = np.fft.fft2(gq, axes=(0, 1)), np.fft.fft2(gs, axes=(0, 1))
    else:
        sq, ss = spectra
    corr = correlation_1d(cross_power(sq, ss, normalized), reduction)
    if mode == "argmax":
        return _argmax_estimate(corr, corr.shape[0])
    if mode == "expectation":
        return softmax_expectation_yaw(corr, W, b, threshold)[0]
    raise ValueError(f"unknown mode {mode!r}")
