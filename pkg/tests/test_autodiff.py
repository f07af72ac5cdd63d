import numpy as np
import pytest

from delad import autodiff as ad
from delad.fftconv import normalize_kernel
from delad.gradcheck import primitive_cases, run_checks
from delad.imaging import ssim


def test_eval_leaf_and_sigmoid():
    x = np.random.default_rng(0).random((2, 4, 5))
    assert np.array_equal(ad.eval(ad.leaf(x)), x)
    assert ad.eval(ad.sigmoid(ad.leaf(np.zeros((1, 1, 1)))))[0, 0, 0] == 0.5


def test_mean_square_gradient():
    x = ad.leaf(np.random.default_rng(1).normal(size=(1, 6, 7)), requires_grad=True)
    ad.backward(ad.mean(ad.mul(x, x)))
    np.testing.assert_allclose(x.grad, 2 * x.value / x.value.size, atol=1e-15)


def test_sigmoid_gradient_at_origin():
    w = ad.leaf(np.zeros((1, 1, 1)), requires_grad=True)
    ad.backward(ad.sigmoid(w))
    assert w.grad.item() == 0.25


def test_backward_twice_doubles_then_reset():
    x = ad.leaf(np.arange(4.0).reshape(1, 2, 2), requires_grad=True)
    root = ad.mean(ad.mul(x, x))
    ad.backward(root)
    once = x.grad.copy()
    ad.backward(root)
    np.testing.assert_allclose(x.grad, 2 * once)
    ad.reset_grad([x])
    assert not x.grad.any()


def test_fan_out_accumulates():
    x = ad.leaf(np.full((1, 2, 2), 3.0), requires_grad=True)
    ad.backward(ad.mean(ad.add(x, ad.scale(x, 2.0))))
    np.testing.assert_allclose(x.grad, 3.0 / 4)


def test_constant_leaf_has_no_gradient():
    x = ad.leaf(np.ones((1, 2, 2)), requires_grad=True)
    c = ad.leaf(np.ones((1, 2, 2)))
    ad.backward(ad.mean(ad.mul(x, c)))
    assert c.grad is None
    assert x.grad.shape == x.value.shape


def test_errors():
    x = ad.leaf(np.ones((1, 2, 2)), requires_grad=True)
    with pytest.raises(ad.GraphError, match="scalar"):
        ad.backward(ad.scale(x, 2.0))
    with pytest.raises(ValueError):
        ad.add(x, ad.leaf(np.ones((1, 3, 2))))
    with pytest.raises(FloatingPointError, match="node"):
        ad.scale(x, np.inf)
    a = ad.scale(x, 1.0)
    b = ad.scale(a, 1.0)
    a.parents = (b,)
    with pytest.raises(ad.GraphError, match="cycle"):
        ad.backward(ad.mean(b))


def test_grad_check_linear_exact():
    rng = np.random.default_rng(2)
    x = ad.leaf(rng.normal(size=(1, 8, 8)), requires_grad=True, name="x")
    w = ad.leaf(rng.normal(size=(1, 8, 8)))
    report = ad.grad_check(lambda: ad.mean(ad.mul(w, x)), [x], step=1.0)
    assert report["x"] <= 1e-10


def test_grad_check_relu_kink_excluded():
    v = np.random.default_rng(3).normal(size=(1, 4, 4))
    v[0, 1, 2] = 0.0
    x = ad.leaf(v, requires_grad=True, name="x")
    # at exactly 0 the subgradient (0) disagrees with the central difference (0.5)
    report = ad.grad_check(lambda: ad.mean(ad.relu(x)), [x], step=1e-4)
    assert report["x"] <= 1e-8
    ad.reset_grad([x])
    ad.backward(ad.mean(ad.relu(x)))
    assert x.grad[0, 1, 2] == 0


def test_grad_check_rejects_nondeterministic_builder():
    x = ad.leaf(np.ones((1, 2, 2)), requires_grad=True)
    rng = np.random.default_rng(0)
    with pytest.raises(ad.GraphError, match="deterministic"):
        ad.grad_check(lambda: ad.mean(ad.scale(x, rng.random())), [x])


def test_grad_check_hessian_graph():
    x = ad.leaf(np.random.default_rng(4).random((1, 8, 8)), requires_grad=True, name="x")

    def build():
        xx = ad.abs_(ad.diff(x, "x", 2))
        yy = ad.abs_(ad.diff(x, "y", 2))
        xy = ad.abs_(ad.diff(ad.diff(x, "x", 1), "y", 1))
        return ad.mean(ad.add(ad.add(xx, yy), ad.scale(xy, 2.0)))

    assert ad.grad_check(build, [x])["x"] <= 1e-4


@pytest.mark.parametrize("seed", [0, 1])
def test_every_primitive_passes(seed):
    results = run_checks(seed=seed)
    bad = {k: v for k, v in results.items() if v[0] > v[1]}
    assert not bad, bad
    names = set(results)
    for op in ("add", "sub", "scale", "mul", "conv_h", "corr_h", "conv3x3", "relu", "sigmoid",
               "concat", "mean", "abs", "one_minus", "ssim_score", "loss_hessian", "loss_sparse"):
        assert op in names


@pytest.mark.slow
def test_every_primitive_passes_16():
    results = run_checks(seed=5, size=16)
    bad = {k: v for k, v in results.items() if v[0] > v[1]}
    assert not bad, bad


def test_backward_is_linear():
    rng = np.random.default_rng(5)
    h = normalize_kernel(rng.random((3, 3)))
    x = ad.leaf(rng.random((1, 8, 8)), requires_grad=True)
    f = lambda: ad.mean(ad.mul(ad.conv_h(x, h), ad.sigmoid(x)))  # noqa: E731
    g = lambda: ad.mean(ad.abs_(ad.diff(x, "y", 2)))  # noqa: E731
    grads = []
    for build in (f, g):
        ad.reset_grad([x])
        ad.backward(build())
        grads.append(x.grad.copy())
    ad.reset_grad([x])
    ad.backward(ad.add(ad.scale(f(), 1.5), ad.scale(g(), -0.7)))
    np.testing.assert_allclose(x.grad, 1.5 * grads[0] - 0.7 * grads[1], atol=1e-10)


def test_ssim_score_matches_metric():
    rng = np.random.default_rng(6)
    for shape in ((8, 8), (16, 20)):
        a, b = rng.random(shape), rng.random(shape)
        node = ad.ssim_score(ad.leaf(a), ad.leaf(b))
        assert abs(node.value.item() - ssim(a, b)) <= 1e-10
        assert ad.ssim_score(ad.leaf(a), ad.leaf(a)).value.item() == pytest.approx(1.0, abs=1e-10)


def test_conv3x3_matches_loop_oracle():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(3, 5, 6))
    w = rng.normal(size=(2, 3, 3, 3))
    b = rng.normal(size=2)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    ref = np.zeros((2, 5, 6))
    for o in range(2):
        for i in range(5):
            for j in range(6):
                ref[o, i, j] = (w[o] * xp[:, i:i + 3, j:j + 3]).sum() + b[o]
    out = ad.conv3x3(ad.leaf(x), ad.leaf(w), ad.leaf(b)).value
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_no_input_mutation():
    for name, build, leaves, _ in primitive_cases(seed=3):
        before = [lf.value.copy() for lf in leaves]
        root = build()
        ad.backward(root)
        for lf, v in zip(leaves, before):
            assert np.array_equal(lf.value, v), name
