"""Central finite-difference checks for every analytic gradient in the package.

Each check builds a small seeded problem, perturbs coordinates one at a time
and compares against the analytic gradient. Coordinates whose perturbation
flips a relu mask or hinge activity are skipped, since the function is not
differentiable there.
"""

from dataclasses import dataclass

import numpy as np

from .bev import BevConfig, PolarBev
from .correlate import (correlation_1d, cross_power, softmax_expectation_backward,
                        softmax_expectation_yaw)
from .features import feature_backward, forward_with_cache, init_params
from .learn import LossConfig, TrainingTuple, _encode, joint_loss, quadruplet_loss, rotation_loss, split_negatives
from .spectrum import CropConfig, fft2_per_channel, magnitude_signature, signature_backward


@dataclass(frozen=True)
class CheckResult:
    name: str
    worst_rel_error: float
    tolerance: float
    checked: int
    skipped: int

    @property
    def passed(self):
        return self.checked > 0 and self.worst_rel_error < self.tolerance


def rel_error(analytic, numeric, floor=1e-8):
    """``|a - n| / max(|a|, |n|, floor)``, elementwise."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def _coords(size, limit, rng):
    if limit is None or size <= limit:
        return np.arange(size)
    return np.sort(rng.choice(size, size=limit, replace=False))


def _same(a, base, b):
    return a == base == b


def fd_check(name, f, arrays, grads, tol, h=1e-4, state=None, limit=None, seed=0,
             same_piece=_same):
    """Compare ``grads`` against central differences of scalar ``f()``.

    ``f`` reads the (mutable) ``arrays`` in place. ``state()``, if given,
    describes the active pieces of the function; a coordinate is skipped when
    ``same_piece(state_plus, state_center, state_minus)`` is false.
    Gradients smaller than the level at which roundoff in ``f`` alone could
    exceed ``tol`` are compared on that absolute scale instead.
    """
    rng = np.random.default_rng(seed)
    worst, checked, skipped = 0.0, 0, 0
    base_state = state() if state else None
    noise = 100 * np.finfo(np.float64).eps * max(1.0, abs(float(f()))) / (h * tol)
    for arr, g in zip(arrays, grads):
        flat = arr.reshape(-1)
        gflat = np.asarray(g, dtype=np.float64).reshape(-1)
        for i in _coords(flat.size, limit, rng):
            old = flat[i]
            flat[i] = old + h
            fp = f()
            sp = state() if state else None
            flat[i] = old - h
            fm = f()
            sm = state() if state else None
            flat[i] = old
            if state and not same_piece(sp, base_state, sm):
                skipped += 1
                continue
            num = (fp - fm) / (2 * h)
            worst = max(worst, float(rel_error(gflat[i], num, floor=max(1e-8, noise))))
            checked += 1
    return CheckResult(name, worst, tol, checked, skipped)


def _random_bev(rng, shape, density=0.15):
    rings, sectors, layers = shape
    cfg = BevConfig(rings, sectors, layers, variant="density")
    cells = (rng.random(shape) < density) * rng.integers(1, 4, size=shape)
    return PolarBev(cells.astype(np.float64), cfg)


def _mutable(params):
    arrays = [a.copy() for a in params.arrays()]
    return arrays, (lambda: params.with_arrays(arrays))


def check_features(seed=0, shape=(8, 16, 3), channels=(4, 2), tol=1e-4, limit=None, kernel=3):
    rng = np.random.default_rng(seed)
    bev = _random_bev(rng, shape)
    params = init_params(shape[2], channels, kernel=kernel, seed=seed)
    params = params.with_arrays([a + 0.05 * rng.standard_normal(a.shape) for a in params.arrays()])
    up = rng.standard_normal(shape[:2] + (channels[-1],))
    grads, gx = feature_backward(bev, params, up)
    arrays, current = _mutable(params)

    def f():
        return float(np.sum(forward_with_cache(bev.cells, current())[0] * up))

    def state():
        _, cache = forward_with_cache(bev.cells, current())
        return tuple(np.packbits(z > 0).tobytes() for _, z in cache)

    r1 = fd_check("features/params", f, arrays, grads, tol, state=state, limit=limit, seed=seed)
    x = bev.cells.copy()

    def fx():
        return float(np.sum(forward_with_cache(x, params)[0] * up))

    def sx():
        return tuple(np.packbits(z > 0).tobytes() for _, z in forward_with_cache(x, params)[1])

    r2 = fd_check("features/input", fx, [x], [gx], tol, state=sx, limit=limit, seed=seed)
    return [r1, r2]


def check_signature(seed=0, shape=(8, 12, 2), crop=CropConfig(4, 6), tol=1e-4):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal(shape)
    w = rng.standard_normal(crop.signature_length(shape[2]))
    grad = signature_backward(fft2_per_channel(g), crop, w)

    def f():
        return float(magnitude_signature(fft2_per_channel(g), crop) @ w)

    return [fd_check("spectrum/signature", f, [g], [grad], tol)]


def check_softmax(seed=0, n=24, tol=1e-4):
    rng = np.random.default_rng(seed)
    corr = rng.standard_normal(n)
    corr[n // 3] += 3.0
    wb = np.array([1.5, 0.3])
    gc, gw, gb = softmax_expectation_backward(corr, wb[0], wb[1])

    def f():
        return softmax_expectation_yaw(corr, wb[0], wb[1], threshold=-np.inf)[0].yaw_deg

    def state():
        return int(np.argmax(corr))

    return [fd_check("softmax/expectation", f, [corr, wb], [gc, np.array([gw, gb])], tol,
                     state=state)]


def check_quadruplet(seed=0, dim=12, n_i=2, n_j=2, tol=1e-4):
    rng = np.random.default_rng(seed)
    cfg = LossConfig()
    for _ in range(1000):
        vecs = [rng.standard_normal(dim) * 0.4 for _ in range(2 + n_i + n_j)]
        q, s = vecs[0], vecs[1]
        ni, nj = vecs[2:2 + n_i], vecs[2 + n_i:]
        pos = np.sum((q - s) ** 2)
        args = [pos - np.sum((q - a) ** 2) + cfg.alpha1 for a in ni]
        args += [pos - np.sum((a - b) ** 2) + cfg.alpha2 for a in ni for b in nj]
        args = np.array(args)
        if np.min(np.abs(args)) > 1e-3 and np.any(args > 0):
            break
    _, g = quadruplet_loss(q, s, ni, nj, cfg)

    def f():
        return quadruplet_loss(q, s, ni, nj, cfg)[0]

    def state():
        pos = np.sum((q - s) ** 2)
        t = [pos - np.sum((q - a) ** 2) + cfg.alpha1 > 0 for a in ni]
        t += [pos - np.sum((a - b) ** 2) + cfg.alpha2 > 0 for a in ni for b in nj]
        return tuple(t)

    return [fd_check("loss/quadruplet", f, [q, s] + ni + nj,
                     [g["dq"], g["ds"]] + g["negs_i"] + g["negs_j"], tol, state=state)]


def check_rotation_loss(seed=0, n=24, tol=1e-4):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(n))
    yaw = 7 * 360.0 / n
    _, g = rotation_loss(p, yaw)

    def f():
        return rotation_loss(p, yaw)[0]

    return [fd_check("loss/rotation", f, [p], [g], tol, h=1e-7)]


def make_joint_problem(seed=0, shape=(16, 24, 3), channels=(4, 2), crop=CropConfig(8, 8),
                       kernel=3):
    """A random tuple, stack and loss config with both heads active."""
    rng = np.random.default_rng(seed)
    q = _random_bev(rng, shape)
    shift = int(rng.integers(0, shape[1]))
    pos_cells = np.roll(q.cells, shift, axis=1) + (rng.random(shape) < 0.03)
    pos = PolarBev(pos_cells, q.config)
    negs = (_random_bev(rng, shape), _random_bev(rng, shape))
    tup = TrainingTuple(q, pos, negs, (-shift) * 360.0 / shape[1] + 6.0)
    params = init_params(shape[2], channels, kernel=kernel, seed=seed)
    params = params.with_arrays([a + 0.05 * rng.standard_normal(a.shape) for a in params.arrays()])
    cfg = LossConfig(crop=crop, alpha1=0.5, alpha2=0.2, lam=1.0)
    enc = [_encode(b, params, cfg) for b in (q, pos)]
    corr = correlation_1d(cross_power(enc[0][2], enc[1][2]))
    W = 0.5 / float(np.std(corr))
    # put the hinges near their working point: scale margins to the distances
    sigs = [_encode(b, params, cfg)[3] for b in (q, pos) + negs]
    d_pos = np.sum((sigs[0] - sigs[1]) ** 2)
    d_neg = np.sum((sigs[0] - sigs[2]) ** 2)
    d_nn = np.sum((sigs[2] - sigs[3]) ** 2)
    cfg = LossConfig(crop=crop, alpha1=max(0.5, d_neg - d_pos + 0.1 * abs(d_neg)),
                     alpha2=max(0.2, d_nn - d_pos + 0.1 * abs(d_nn)), lam=1.0)
    return tup, params, cfg, W, 0.1


def check_joint(seed=0, tol=1e-3, limit=None, **problem):
    tup, params, cfg, W, b = make_joint_problem(seed, **problem)
    _, grads, _ = joint_loss(tup, params, cfg, W, b)
    arrays, current = _mutable(params)
    # W is checked as W0 * u so the step is relative to its (possibly tiny) scale
    head = np.array([1.0, b])

    def f():
        return joint_loss(tup, current(), cfg, W * head[0], head[1])[0]

    def state():
        p = current()
        masks, sigs, spectra = [], [], []
        for bev in [tup.query, tup.positive] + list(tup.negatives):
            _, cache, spec, sig = _encode(bev, p, cfg)
            masks += [np.packbits(z > 0).tobytes() for _, z in cache]
            sigs.append(sig)
            spectra.append(spec.reshape(-1))
        ni, nj = split_negatives(sigs[2:])
        pos = np.sum((sigs[0] - sigs[1]) ** 2)
        hinge = [pos - np.sum((sigs[0] - a) ** 2) + cfg.alpha1 > 0 for a in ni]
        hinge += [pos - np.sum((a - c) ** 2) + cfg.alpha2 > 0 for a in ni for c in nj]
        return tuple(masks) + tuple(hinge), np.concatenate(spectra)

    def same_piece(plus, base, minus):
        # |X| has a cone at X = 0: reject steps that move any coefficient by
        # more than a small fraction of its distance from the origin
        if not plus[0] == base[0] == minus[0]:
            return False
        step = np.maximum(np.abs(plus[1] - base[1]), np.abs(minus[1] - base[1]))
        return bool(np.all(step <= 0.02 * np.abs(base[1])))

    r = fd_check("joint/params+softmax", f, arrays + [head],
                 grads.params + [np.array([W * grads.W, grads.b])], tol, state=state, limit=limit,
                 seed=seed, same_piece=same_piece)
    return [r]


def run_all(seed=0, joint_shape=(16, 24, 3), limit=None, feature_shape=(8, 16, 3)):
    """Run every check; returns a list of CheckResult."""
    results = []
    results += check_features(seed, shape=feature_shape, limit=limit)
    results += check_signature(seed)
    results += check_softmax(seed)
    results += check_quadruplet(seed)
    results += check_rotation_loss(seed)
    results += check_joint(seed, shape=joint_shape, limit=limit)
    return results
