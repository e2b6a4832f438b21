import numpy as np
import pytest

from polarplace.gradcheck import CheckResult, check_joint, fd_check, rel_error, run_all


def test_rel_error_floor():
    assert rel_error(1.0, 1.0) == 0.0
    assert rel_error(0.0, 0.0) == 0.0
    assert rel_error(2.0, 1.0) == pytest.approx(0.5)
    assert rel_error(1e-12, 0.0, floor=1e-8) == pytest.approx(1e-4)


def test_fd_check_detects_a_wrong_gradient():
    x = np.array([0.3, -1.2, 2.0])
    f = lambda: float(np.sum(x ** 3))
    good = fd_check("cube", f, [x], [3 * x ** 2], 1e-6)
    bad = fd_check("cube", f, [x], [2 * x ** 2], 1e-6)
    assert good.passed and good.checked == 3
    assert not bad.passed
    assert np.array_equal(x, [0.3, -1.2, 2.0])


def test_fd_check_skips_kinks():
    x = np.array([1e-6, 1.0])
    f = lambda: float(np.sum(np.abs(x)))
    r = fd_check("abs", f, [x], [np.sign(x)], 1e-6, state=lambda: tuple(x > 0))
    assert r.skipped == 1 and r.checked == 1 and r.passed


def test_nothing_checked_is_not_a_pass():
    assert not CheckResult("x", 0.0, 1e-4, 0, 5).passed


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_all_checks_pass(seed):
    results = run_all(seed)
    names = {r.name for r in results}
    assert {"features/params", "features/input", "spectrum/signature", "softmax/expectation",
            "loss/quadruplet", "loss/rotation", "joint/params+softmax"} <= names
    for r in results:
        assert r.passed, r
        # component checks at 1e-4, the end-to-end check at 1e-3
        assert r.tolerance == (1e-3 if r.name.startswith("joint") else 1e-4)


def test_joint_check_catches_a_broken_head(monkeypatch):
    import polarplace.gradcheck as gc
    real = gc.joint_loss

    def broken(*a, **kw):
        total, grads, parts = real(*a, **kw)
        return total, type(grads)(grads.params, grads.W * 1.5, grads.b), parts

    monkeypatch.setattr(gc, "joint_loss", broken)
    (r,) = check_joint(0)
    assert not r.passed
