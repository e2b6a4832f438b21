import csv
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from polarplace.bev import BevConfig, PolarBev, rotate_polar_bev
from polarplace.errors import ConfigError, LengthMismatch, NonFiniteLoss, NTooLarge, ZeroProbabilityAtTarget
from polarplace.features import init_params
from polarplace.gradcheck import make_joint_problem
from polarplace.learn import (LossConfig, TrainingTuple, _encode, joint_loss, mine_hard_negatives,
                              n_way_augment, quadruplet_loss, rotation_loss, split_negatives, train,
                              write_telemetry, yaw_to_bin)
from polarplace.spectrum import CropConfig

SHAPE = (10, 24, 4)
CROP = CropConfig(4, 6)


def _bev(rng, shape=SHAPE):
    cells = (rng.random(shape) < 0.2) * rng.integers(1, 4, size=shape)
    return PolarBev(cells.astype(np.float64), BevConfig(*shape, variant="density"))


@pytest.fixture(scope="module")
def problem():
    return make_joint_problem(0, shape=SHAPE, crop=CROP)


# quadruplet ---------------------------------------------------------------

def test_quadruplet_hand_example():
    cfg = LossConfig(alpha1=0.5, alpha2=0.2)
    q, s = np.array([0.0, 0.0]), np.array([1.0, 0.0])
    ni, nj = [np.array([0.0, 1.0])], [np.array([0.0, 2.0])]
    # |q-s|^2 = 1, |q-ni|^2 = 1, |ni-nj|^2 = 1
    loss, _ = quadruplet_loss(q, s, ni, nj, cfg)
    assert loss == pytest.approx(0.5 + 0.2)


def test_quadruplet_zero_when_separated():
    q = np.zeros(3)
    loss, g = quadruplet_loss(q, q + 0.01, [q + 5], [q - 5])
    assert loss == 0.0
    assert not np.any(g["dq"]) and not np.any(g["ds"])
    assert not any(np.any(x) for x in g["negs_i"] + g["negs_j"])


vec = st.lists(st.floats(-3, 3), min_size=4, max_size=4).map(np.array)


@given(vec, vec, st.lists(vec, min_size=1, max_size=3), st.lists(vec, min_size=1, max_size=3))
def test_quadruplet_nonnegative(q, s, ni, nj):
    assert quadruplet_loss(q, s, ni, nj)[0] >= 0.0


@given(vec, vec, st.lists(vec, min_size=2, max_size=4), st.randoms())
def test_quadruplet_invariant_to_negative_order(q, s, ni, r):
    nj = [np.ones(4)]
    perm = list(ni)
    r.shuffle(perm)
    a = quadruplet_loss(q, s, ni, nj)[0]
    b = quadruplet_loss(q, s, perm, nj)[0]
    assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


def test_quadruplet_shape_checks():
    with pytest.raises(LengthMismatch):
        quadruplet_loss(np.zeros(3), np.zeros(4), [np.zeros(3)], [np.zeros(3)])
    with pytest.raises(ConfigError):
        quadruplet_loss(np.zeros(3), np.zeros(3), [], [np.zeros(3)])


def test_split_negatives():
    a, b = split_negatives([1, 2, 3])
    assert a == [1, 2] and b == [3]


# rotation -----------------------------------------------------------------

@given(st.integers(2, 60), st.integers(0, 10_000), st.floats(0, 360, exclude_max=True))
def test_rotation_loss_nonnegative(n, seed, yaw):
    p = np.random.default_rng(seed).dirichlet(np.ones(n))
    assert rotation_loss(p, yaw)[0] >= 0.0


def test_rotation_loss_one_hot_is_zero():
    p = np.zeros(120)
    p[yaw_to_bin(33.0, 120)] = 1.0
    loss, g = rotation_loss(p, 33.0)
    assert loss == 0.0
    assert g[11] == -1.0


def test_rotation_loss_zero_probability():
    p = np.zeros(12)
    p[0] = 1.0
    with pytest.raises(ZeroProbabilityAtTarget):
        rotation_loss(p, 90.0)


def test_yaw_to_bin():
    assert yaw_to_bin(0.0, 120) == 0
    assert yaw_to_bin(4.4, 120) == 1
    assert yaw_to_bin(359.0, 120) == 0
    assert yaw_to_bin(-3.0, 120) == 119


# augmentation -------------------------------------------------------------

def test_n_way_augment(rng):
    bev = _bev(rng)
    one = n_way_augment(bev, 1)
    assert len(one) == 1 and one[0][0] == bev and one[0][1] == 0.0
    full = n_way_augment(bev, SHAPE[1])
    assert sorted(y for _, y in full) == [k * 15.0 for k in range(SHAPE[1])]
    for b, y in full:
        assert b == rotate_polar_bev(bev, int(round(y / 15.0)))
    a = n_way_augment(bev, 5, seed=3)
    c = n_way_augment(bev, 5, seed=3)
    assert [y for _, y in a] == [y for _, y in c]
    with pytest.raises(NTooLarge):
        n_way_augment(bev, SHAPE[1] + 1)


def test_tuple_needs_two_negatives(rng):
    b = _bev(rng)
    with pytest.raises(ConfigError):
        TrainingTuple(b, b, (b,))


# joint loss ---------------------------------------------------------------

def test_joint_loss_matches_parts(problem):
    tup, params, cfg, W, b = problem
    total, grads, parts = joint_loss(tup, params, cfg, W, b)
    sigs = [_encode(x, params, cfg)[3] for x in [tup.query, tup.positive, *tup.negatives]]
    ni, nj = split_negatives(sigs[2:])
    quad = quadruplet_loss(sigs[0], sigs[1], ni, nj, cfg)[0]
    assert parts["quad"] == pytest.approx(quad, rel=1e-12)
    assert total == pytest.approx(parts["quad"] + cfg.lam * parts["rot"], rel=1e-12)
    assert len(grads.params) == len(params.arrays())


def test_joint_loss_lambda_zero_drops_rotation(problem):
    tup, params, cfg, W, b = problem
    total, grads, parts = joint_loss(tup, params, replace(cfg, lam=0.0), W, b)
    assert total == parts["quad"]
    assert grads.W == 0.0 and grads.b == 0.0


# training -----------------------------------------------------------------

def test_zero_lr_keeps_parameters(problem):
    tup, params, cfg, W, b = problem
    r = train([tup], params, replace(cfg, learning_rate=0.0), epochs=2, W=W, b=b)
    assert r.params == params
    assert r.W == W and r.b == b


def test_training_is_deterministic(problem):
    tup, params, cfg, W, b = problem
    cfg = replace(cfg, learning_rate=1e-5, shuffle=True, seed=4)
    a = train([tup, tup], params, cfg, epochs=3, W=W, b=b)
    c = train([tup, tup], params, cfg, epochs=3, W=W, b=b)
    assert a.params == c.params and a.history == c.history


@pytest.mark.parametrize("optimizer,lr", [("sgd", 1e-5), ("adam", 1e-4)])
def test_single_tuple_loss_decreases(problem, optimizer, lr):
    tup, params, cfg, W, b = problem
    cfg = replace(cfg, learning_rate=lr, optimizer=optimizer)
    r = train([tup], params, cfg, epochs=50, W=W, b=b)
    totals = np.array([h.total for h in r.history])
    assert np.all(np.diff(totals) <= 1e-9 * totals[0])
    assert totals[-1] < 0.5 * totals[0]


def test_telemetry_csv(problem, tmp_path):
    tup, params, cfg, W, b = problem
    r = train([tup], params, replace(cfg, learning_rate=1e-6), epochs=3, W=W, b=b)
    path = tmp_path / "telemetry.csv"
    write_telemetry(r.history, path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["epoch", "quad_loss", "rot_loss", "total", "grad_norm"]
    assert len(rows) == 4
    assert float(rows[1][3]) == r.history[0].total


def test_nan_input_raises_with_diagnostics(problem):
    tup, params, cfg, W, b = problem
    cells = tup.query.cells.copy()
    cells[0, 0, 0] = np.nan
    bad = replace(tup, query=PolarBev(cells, tup.query.config))
    with pytest.raises(NonFiniteLoss) as exc:
        train([tup, bad], params, cfg, W=W, b=b)
    assert exc.value.epoch == 0 and exc.value.step == 1
    assert "quad" in exc.value.diagnostics


def test_frozen_softmax_head(problem):
    tup, params, cfg, W, b = problem
    r = train([tup], params, replace(cfg, train_softmax=False, learning_rate=1e-5), epochs=3,
              W=W, b=b)
    assert r.W == W and r.b == b
    assert r.params != params


def test_untrained_params_none_trains_head_only(rng):
    q = _bev(rng)
    tup = TrainingTuple(q, rotate_polar_bev(q, 2), (_bev(rng), _bev(rng)), 330.0)
    cfg = LossConfig(crop=CROP, learning_rate=1e-3)
    r = train([tup], None, cfg, epochs=2, W=0.01)
    assert r.params is None
    assert r.W != 0.01


def test_hard_negatives_exclude_own_place(rng):
    bevs = [_bev(rng) for _ in range(6)]
    pool = [(i % 3, b) for i, b in enumerate(bevs)]
    cfg = LossConfig(crop=CROP)
    params = init_params(SHAPE[2], (4, 2), seed=1)
    # query is a copy of place 0: without the exclusion it would pick itself
    tup = TrainingTuple(bevs[0], bevs[3], (bevs[1], bevs[2]), 0.0, place_id=0)
    (mined,) = mine_hard_negatives([tup], params, cfg, pool)
    own = {id(bevs[0]), id(bevs[3])}
    assert len(mined.negatives) == 2
    assert not own & {id(n) for n in mined.negatives}
    q = _encode(bevs[0], params, cfg)[3]
    d = {i: np.linalg.norm(_encode(b, params, cfg)[3] - q) for i, b in enumerate(bevs) if i % 3}
    expect = sorted(d, key=lambda i: (d[i], i))[:2]
    assert [id(n) for n in mined.negatives] == [id(bevs[i]) for i in expect]


def test_training_needs_tuples():
    with pytest.raises(ConfigError):
        train([], None)
