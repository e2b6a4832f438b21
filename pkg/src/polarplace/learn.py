"""Training objectives and a small gradient-descent loop.

The joint objective is a quadruplet hinge loss on signatures plus a weighted
cross-entropy on the softmax correlation distribution. Both heads share the
feature stack and its gradients are accumulated from both.
"""

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .bev import rotate_polar_bev, channel_pool
from .correlate import cross_power, correlation_1d, default_softmax_scale
from .errors import ConfigError, LengthMismatch, NTooLarge, NonFiniteLoss, ZeroProbabilityAtTarget
from .features import backward_from_cache, forward_with_cache
from .spectrum import CropConfig, fft2_per_channel, magnitude_signature, signature_backward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingTuple:
    query: object
    positive: object
    negatives: tuple
    true_yaw_deg: float = 0.0
    place_id: int = None

    def __post_init__(self):
        negs = tuple(self.negatives)
        if len(negs) < 2:
            raise ConfigError("a training tuple needs at least two negatives")
        object.__setattr__(self, "negatives", negs)


@dataclass(frozen=True)
class LossConfig:
    alpha1: float = 0.5
    alpha2: float = 0.2
    lam: float = 1.0
    learning_rate: float = 1e-5
    momentum: float = 0.0
    optimizer: str = "sgd"
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    crop: CropConfig = field(default_factory=CropConfig)
    pool: str = None
    train_softmax: bool = True
    hard_negative_epoch: int = None
    shuffle: bool = False
    seed: int = 0

    def __post_init__(self):
        if not (self.alpha1 > 0 and self.alpha2 > 0):
            raise ConfigError("margins must be positive")
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        if self.learning_rate < 0:
            raise ConfigError("learning rate must be non-negative")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


def quadruplet_loss(dq, ds, negs_i, negs_j, cfg=LossConfig()):
    """Quadruplet hinge loss and its gradients.

    ``sum_i [|q-s|^2 - |q-n_i|^2 + a1]_+ + sum_{i,j} [|q-s|^2 - |n_i-n_j|^2 + a2]_+``

    Returns
    -------
    loss : float
    grads : dict with keys ``dq``, ``ds`` (arrays) and ``negs_i``, ``negs_j`` (lists)
    """
    dq = np.asarray(dq, dtype=np.float64)
    ds = np.asarray(ds, dtype=np.float64)
    negs_i = [np.asarray(n, dtype=np.float64) for n in negs_i]
    negs_j = [np.asarray(n, dtype=np.float64) for n in negs_j]
    if not negs_i or not negs_j:
        raise ConfigError("negative lists must be non-empty")
    for v in [ds] + negs_i + negs_j:
        if v.shape != dq.shape:
            raise LengthMismatch(f"signature shape {v.shape} != {dq.shape}")

    pos = dq - ds
    pos_sq = float(pos @ pos)
    g_q = np.zeros_like(dq)
    g_s = np.zeros_like(dq)
    g_i = [np.zeros_like(dq) for _ in negs_i]
    g_j = [np.zeros_like(dq) for _ in negs_j]
    loss = 0.0
    for a, ni in enumerate(negs_i):
        dn = dq - ni
        t = pos_sq - float(dn @ dn) + cfg.alpha1
        if t > 0:
            loss += t
            g_q += 2 * pos - 2 * dn
            g_s -= 2 * pos
            g_i[a] += 2 * dn
        for c, nj in enumerate(negs_j):
            dd = ni - nj
            t = pos_sq - float(dd @ dd) + cfg.alpha2
            if t > 0:
                loss += t
                g_q += 2 * pos
                g_s -= 2 * pos
                g_i[a] -= 2 * dd
                g_j[c] += 2 * dd
    return loss, {"dq": g_q, "ds": g_s, "negs_i": g_i, "negs_j": g_j}


def yaw_to_bin(yaw_deg, n):
    return int(round(yaw_deg / (360.0 / n))) % n


def rotation_loss(p, true_yaw_deg):
    """Cross-entropy ``-log p[target]`` against the one-hot ground-truth bin.

    ``p`` may be a probability vector or a CorrelationDistribution.
    Returns ``(loss, grad_wrt_p)``.
    """
    probs = np.asarray(getattr(p, "probs", p), dtype=np.float64)
    k = yaw_to_bin(true_yaw_deg, probs.shape[0])
    if probs[k] < 1e-300:
        raise ZeroProbabilityAtTarget(f"p[{k}] = {probs[k]:.3g}")
    grad = np.zeros_like(probs)
    grad[k] = -1.0 / probs[k]
    return max(0.0, -float(np.log(probs[k]))), grad


@dataclass(frozen=True)
class JointGrads:
    params: list
    W: float
    b: float


def _bev_grid(bev, pool):
    if pool is not None:
        bev = channel_pool(bev, pool)
    return bev.cells if hasattr(bev, "cells") else np.asarray(bev, dtype=np.float64)


def _encode(bev, params, cfg):
    x = _bev_grid(bev, cfg.pool)
    if params is None:
        g, cache = x.copy(), None
    else:
        g, cache = forward_with_cache(x, params)
    s = fft2_per_channel(g)
    return g, cache, s, magnitude_signature(s, cfg.crop)


def split_negatives(negatives):
    """First-term negatives and the extra negative used by the second term."""
    return list(negatives[:-1]), [negatives[-1]]


def joint_loss(tup, params, cfg=LossConfig(), W=1.0, b=0.0):
    """Joint quadruplet + rotation loss with gradients for the stack and softmax head.

    Returns
    -------
    total : float
    grads : JointGrads
    parts : dict with ``quad`` and ``rot`` loss values
    """
    bevs = [tup.query, tup.positive] + list(tup.negatives)
    enc = [_encode(bev, params, cfg) for bev in bevs]
    sigs = [e[3] for e in enc]
    neg_i, neg_j = split_negatives(sigs[2:])
    quad, qg = quadruplet_loss(sigs[0], sigs[1], neg_i, neg_j, cfg)
    sig_grads = [qg["dq"], qg["ds"]] + qg["negs_i"] + qg["negs_j"]
    g_grads = [signature_backward(e[2], cfg.crop, gs) for e, gs in zip(enc, sig_grads)]

    gq, _, sq, _ = enc[0]
    gs, _, ss, _ = enc[1]
    corr = correlation_1d(cross_power(sq, ss))
    n = corr.shape[0]
    z = W * corr + b
    zmax = z.max()
    lse = zmax + np.log(np.sum(np.exp(z - zmax)))
    k = yaw_to_bin(tup.true_yaw_deg, n)
    rot = float(lse - z[k])
    p = np.exp(z - lse)
    dz = cfg.lam * p
    dz[k] -= cfg.lam
    dW = float(dz @ corr)
    db = float(dz.sum())
    if cfg.lam:
        dc = W * dz
        fdc = np.fft.fft(dc)[None, :, None]
        g_grads[0] += np.fft.ifft(fdc * np.fft.fft(gs, axis=1), axis=1).real
        g_grads[1] += np.fft.ifft(np.conj(fdc) * np.fft.fft(gq, axis=1), axis=1).real

    param_grads = []
    if params is not None:
        param_grads = [np.zeros_like(a) for a in params.arrays()]
        for (_, cache, _, _), dg in zip(enc, g_grads):
            grads, _ = backward_from_cache(params, cache, dg)
            for acc, g in zip(param_grads, grads):
                acc += g
    total = quad + cfg.lam * rot
    return total, JointGrads(param_grads, dW, db), {"quad": quad, "rot": rot}


def n_way_augment(bev, n, seed=0):
    """``n`` distinct column shifts of ``bev`` (shift 0 first) with their yaw labels."""
    sectors = bev.config.sectors
    if n < 1:
        raise ValueError("n must be positive")
    if n > sectors:
        raise NTooLarge(f"n={n} exceeds {sectors} sectors")
    rng = np.random.default_rng(seed)
    shifts = [0] + sorted(rng.choice(np.arange(1, sectors), size=n - 1, replace=False).tolist())
    return [(rotate_polar_bev(bev, k), k * 360.0 / sectors) for k in shifts]


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    quad_loss: float
    rot_loss: float
    total: float
    grad_norm: float


@dataclass(frozen=True)
class TrainResult:
    params: object
    W: float
    b: float
    history: list


def write_telemetry(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "quad_loss", "rot_loss", "total", "grad_norm"])
        for s in history:
            w.writerow([s.epoch, repr(s.quad_loss), repr(s.rot_loss), repr(s.total),
                        repr(s.grad_norm)])


def initial_softmax_scale(tup, params, cfg):
    _, _, sq, _ = _encode(tup.query, params, cfg)
    _, _, ss, _ = _encode(tup.positive, params, cfg)
    return default_softmax_scale(correlation_1d(cross_power(sq, ss)))


def mine_hard_negatives(tuples, params, cfg, pool):
    """Replace each tuple's negatives by its nearest pool entries from other places."""
    pool_ids = np.array([pid for pid, _ in pool])
    pool_sigs = np.stack([_encode(bev, params, cfg)[3] for _, bev in pool])
    out = []
    for t in tuples:
        if t.place_id is None:
            out.append(t)
            continue
        q = _encode(t.query, params, cfg)[3]
        d = np.sqrt(np.sum((pool_sigs - q) ** 2, axis=1))
        d[pool_ids == t.place_id] = np.inf
        order = np.lexsort((np.arange(len(d)), d))
        chosen = [pool[i][1] for i in order[:len(t.negatives)] if np.isfinite(d[i])]
        out.append(replace(t, negatives=tuple(chosen)) if len(chosen) >= 2 else t)
    return out


class _Optimizer:
    """In-place SGD (with optional momentum) or Adam over a list of arrays."""

    def __init__(self, cfg, arrays):
        self.cfg = cfg
        self.arrays = arrays
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays] if cfg.optimizer == "adam" else None
        self.t = 0

    def step(self, grads):
        cfg = self.cfg
        lr = cfg.learning_rate
        self.t += 1
        if cfg.optimizer == "sgd":
            for a, m, g in zip(self.arrays, self.m, grads):
                m *= cfg.momentum
                m += g
                a -= lr * m
            return
        b1, b2 = cfg.adam_betas
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for a, m, v, g in zip(self.arrays, self.m, self.v, grads):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            a -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)


def train(tuples, params, cfg=LossConfig(), epochs=1, W=None, b=0.0, negative_pool=None):
    """Per-tuple descent steps over the stack and the softmax head.

    One step per tuple, in order (or shuffled with ``cfg.seed``); SGD with
    optional momentum or Adam per ``cfg.optimizer``.

    Parameters
    ----------
    tuples : iterable of TrainingTuple
    params : FeatureParams or None
        ``None`` trains only the softmax head on identity features.
    cfg : LossConfig
    epochs : int
    W, b : float
        Initial softmax parameters; ``W=None`` derives the scale from the
        first tuple.
    negative_pool : list of (place_id, PolarBev), optional
        Candidates for hard-negative mining once ``cfg.hard_negative_epoch``
        is reached.

    Returns
    -------
    TrainResult
    """
    tuples = list(tuples)
    if not tuples:
        raise ConfigError("training needs at least one tuple")
    if W is None:
        W = initial_softmax_scale(tuples[0], params, cfg)
    rng = np.random.default_rng(cfg.seed)
    arrays = [a.copy() for a in params.arrays()] if params is not None else []
    head = np.array([W, b], dtype=np.float64)
    opt = _Optimizer(cfg, arrays + [head])
    history = []
    for epoch in range(epochs):
        if (negative_pool and cfg.hard_negative_epoch is not None
                and epoch >= cfg.hard_negative_epoch):
            tuples = mine_hard_negatives(tuples, params, cfg, negative_pool)
        order = rng.permutation(len(tuples)) if cfg.shuffle else range(len(tuples))
        sums = np.zeros(4)
        for step, idx in enumerate(order):
            total, grads, parts = joint_loss(tuples[idx], params, cfg, float(head[0]), float(head[1]))
            g_head = (np.array([grads.W, grads.b]) if cfg.train_softmax else np.zeros(2))
            gn2 = sum(float(np.sum(g * g)) for g in grads.params) + float(g_head @ g_head)
            if not np.isfinite(total) or not np.isfinite(gn2):
                raise NonFiniteLoss(epoch, step, {"quad": parts["quad"], "rot": parts["rot"],
                                                  "W": float(head[0]), "b": float(head[1]),
                                                  "grad_norm_sq": gn2})
            sums += (parts["quad"], parts["rot"], total, np.sqrt(gn2))
            if cfg.learning_rate == 0:
                continue
            opt.step(grads.params + [g_head])
            head[0] = max(head[0], 1e-8)
            if params is not None:
                params = params.with_arrays(arrays)
        m = sums / len(tuples)
        history.append(EpochStats(epoch, *map(float, m)))
        log.info("epoch %d quad %.6g rot %.6g total %.6g grad_norm %.6g", epoch, *m)
    return TrainResult(params, float(head[0]), float(head[1]), history)
