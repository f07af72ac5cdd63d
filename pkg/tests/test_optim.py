import numpy as np
import pytest

from delad.optim import LrSchedule, RMSprop, RmspropState, lr_at_epoch, rmsprop_step


def test_schedule_values():
    s = LrSchedule()
    assert lr_at_epoch(s, 0) == 0.05
    assert lr_at_epoch(s, 999) == 0.05
    assert lr_at_epoch(s, 1000) == pytest.approx(0.01, abs=1e-15)
    assert lr_at_epoch(s, 1499) == pytest.approx(0.01, abs=1e-15)
    assert lr_at_epoch(s, 1500) == pytest.approx(0.002, abs=1e-15)
    assert lr_at_epoch(s, 1999) == pytest.approx(0.002, abs=1e-15)


def test_schedule_without_milestones():
    s = LrSchedule(initial_lr=0.3, milestones=())
    assert all(lr_at_epoch(s, e) == 0.3 for e in (0, 10, 10_000))


def test_schedule_validation():
    with pytest.raises(ValueError):
        LrSchedule(milestones=(10, 5))
    with pytest.raises(ValueError):
        LrSchedule(decay=1.5)
    with pytest.raises(ValueError):
        lr_at_epoch(LrSchedule(), -1)


def test_rmsprop_first_step_hand_value():
    theta = np.zeros(1)
    st = RmspropState.zeros_like(theta)
    rmsprop_step(theta, np.ones(1), st, 0.05)
    assert st.v[0] == pytest.approx(0.01, abs=1e-17)
    assert theta[0] == pytest.approx(-0.05 / (0.1 + 1e-8), abs=1e-15)
    assert theta[0] == pytest.approx(-0.49999995, abs=1e-9)


def test_rmsprop_quadratic_reference():
    # f(t) = t^2 / 2 from t = 1, hand-unrolled recurrence
    rho, eps, lr = 0.99, 1e-8, 0.1
    t, v = 1.0, 0.0
    expected = []
    for _ in range(2):
        g = t
        v = rho * v + (1 - rho) * g * g
        t = t - lr * g / (np.sqrt(v) + eps)
        expected.append(t)
    theta = np.array([1.0])
    st = RmspropState.zeros_like(theta)
    got = []
    for _ in range(2):
        rmsprop_step(theta, theta.copy(), st, lr)
        got.append(theta[0])
    np.testing.assert_allclose(got, expected, atol=1e-12)


def test_rmsprop_invariants():
    rng = np.random.default_rng(0)
    theta = rng.normal(size=50)
    st = RmspropState.zeros_like(theta)
    for _ in range(20):
        g = rng.normal(size=50)
        before = theta.copy()
        rmsprop_step(theta, g, st, 0.01)
        assert np.all(st.v >= 0)
        moved = theta - before
        assert np.all(np.sign(moved[g != 0]) == -np.sign(g[g != 0]))


def test_rmsprop_errors():
    st = RmspropState.zeros_like(np.zeros(3))
    with pytest.raises(ValueError):
        rmsprop_step(np.zeros(3), np.zeros(4), st, 0.1)
    with pytest.raises(FloatingPointError):
        rmsprop_step(np.zeros(3), np.array([0, np.nan, 0]), st, 0.1)


def test_optimizer_deterministic():
    def run():
        rng = np.random.default_rng(3)
        params = {"a": rng.normal(size=(2, 3)), "b": rng.normal(size=4)}
        opt = RMSprop(params)
        for _ in range(10):
            opt.step({k: 2 * p for k, p in params.items()}, 0.01)
        return params

    p1, p2 = run(), run()
    for k in p1:
        assert np.array_equal(p1[k], p2[k])


def test_rmsprop_zero_gradient():
    theta = np.array([0.3, -1.2])
    st = RmspropState(np.array([0.5, 2.0]))
    rmsprop_step(theta, np.zeros(2), st, 0.05)
    np.testing.assert_array_equal(theta, [0.3, -1.2])
    np.testing.assert_allclose(st.v, [0.495, 1.98], atol=1e-15)
