import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import conv2d_loops, numeric_grad, plane_means, rel_err, resize_1d_direct
from wtsr import tensor as T
from wtsr.tensor import GradPair, ShapeError

GRID = np.arange(1, 10, dtype=np.float32).reshape(1, 1, 3, 3)


def test_conv_scalar_kernel_doubles():
    out = T.conv2d(GRID, np.full((1, 1, 1, 1), 2, np.float32), np.zeros(1, np.float32), 0)
    np.testing.assert_array_equal(out, 2 * GRID)


def test_conv_all_ones_center_is_45():
    out = T.conv2d(GRID, np.ones((1, 1, 3, 3), np.float32), np.zeros(1, np.float32), 1)
    assert out.shape == (1, 1, 3, 3)
    assert out[0, 0, 1, 1] == 45
    assert out[0, 0, 0, 0] == 1 + 2 + 4 + 5


def test_conv_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(1, 2, 4, 4\).*\(3, 3, 3, 3\)"):
        T.conv2d(np.zeros((1, 2, 4, 4)), np.zeros((3, 3, 3, 3)), np.zeros(3), 1)


@pytest.mark.parametrize("seed", range(20))
def test_conv_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    n, c, o = rng.integers(1, 3), rng.integers(1, 5), rng.integers(1, 5)
    h, w = rng.integers(3, 9, size=2)
    k = int(rng.choice([1, 3]))
    pad = int(rng.integers(0, 2)) if k == 3 else 0
    x = rng.normal(size=(n, c, h, w))
    wt = rng.normal(size=(o, c, k, k))
    b = rng.normal(size=o)
    ref = conv2d_loops(x, wt, b, pad)
    np.testing.assert_allclose(T.conv2d(x, wt, b, pad), ref, rtol=0, atol=1e-12)
    out32 = T.conv2d(x.astype(np.float32), wt.astype(np.float32), b.astype(np.float32), pad)
    assert out32.dtype == np.float32
    assert np.max(np.abs(out32 - ref)) < 1e-5


def test_conv_backward_zero_upstream(rng):
    x, w = rng.normal(size=(2, 3, 5, 5)), rng.normal(size=(4, 3, 3, 3))
    gx, gw, gb = T.conv2d_backward(x, w, np.zeros((2, 4, 5, 5)), 1)
    assert not gx.any() and not gw.any() and not gb.any()


def test_conv_backward_scalar_kernel_closed_form(rng):
    x, g = rng.normal(size=(1, 1, 4, 4)), rng.normal(size=(1, 1, 4, 4))
    _, gw, gb = T.conv2d_backward(x, np.ones((1, 1, 1, 1)), g, 0)
    assert gw[0, 0, 0, 0] == pytest.approx(np.sum(x * g), rel=1e-12)
    assert gb[0] == pytest.approx(g.sum(), rel=1e-12)


@pytest.mark.parametrize("k,pad", [(3, 1), (3, 0), (1, 0)])
def test_conv_backward_finite_differences(rng, k, pad):
    x = rng.normal(size=(1, 2, 5, 5))
    w = rng.normal(size=(3, 2, k, k))
    b = rng.normal(size=3)
    r = rng.normal(size=T.conv2d(x, w, b, pad).shape)
    gx, gw, gb = T.conv2d_backward(x, w, r, pad)
    f = lambda: np.sum(r * T.conv2d(x, w, b, pad))  # noqa: E731
    for analytic, arr in ((gx, x), (gw, w), (gb, b)):
        assert rel_err(analytic, numeric_grad(f, arr)).max() < 1e-4


def test_conv_backward_shape_error():
    with pytest.raises(ShapeError):
        T.conv2d_backward(np.zeros((1, 2, 4, 4)), np.zeros((3, 2, 3, 3)), np.zeros((1, 3, 3, 3)), 1)


def test_avg_pool_values(rng):
    assert T.global_avg_pool(np.full((1, 2, 3, 4), 0.7))[0, 1, 0, 0] == pytest.approx(0.7)
    assert T.global_avg_pool(np.arange(4.0).reshape(1, 1, 2, 2))[0, 0, 0, 0] == 1.5
    x = rng.normal(size=(2, 3, 5, 7))
    np.testing.assert_allclose(T.global_avg_pool(x), plane_means(x), atol=1e-6)


def test_avg_pool_backward_uniform(rng):
    g = rng.normal(size=(2, 3, 1, 1))
    back = T.global_avg_pool_backward((2, 3, 4, 5), g)
    np.testing.assert_allclose(back, np.broadcast_to(g / 20, (2, 3, 4, 5)))
    x = rng.normal(size=(2, 3, 4, 5))
    r = rng.normal(size=(2, 3, 1, 1))
    num = numeric_grad(lambda: np.sum(r * T.global_avg_pool(x)), x)
    assert rel_err(T.global_avg_pool_backward(x.shape, r), num).max() < 1e-4


def test_pixel_shuffle_shape_and_blocks():
    assert T.pixel_shuffle(np.zeros((1, 9, 2, 2)), 3).shape == (1, 1, 6, 6)
    x = np.stack([np.full((3, 3), v) for v in range(4)])[None].astype(float)
    out = T.pixel_shuffle(x, 2)[0, 0]
    for y in range(0, 6, 2):
        for xx in range(0, 6, 2):
            np.testing.assert_array_equal(out[y:y + 2, xx:xx + 2], [[0, 1], [2, 3]])


def test_pixel_shuffle_index_formula(rng):
    r, c, h, w = 3, 2, 2, 3
    x = rng.normal(size=(1, c * r * r, h, w))
    out = T.pixel_shuffle(x, r)
    for j in range(c):
        for y in range(r * h):
            for xx in range(r * w):
                assert out[0, j, y, xx] == x[0, j * r * r + (y % r) * r + (xx % r), y // r, xx // r]


def test_pixel_shuffle_rejects_bad_channels():
    with pytest.raises(ShapeError):
        T.pixel_shuffle(np.zeros((1, 5, 2, 2)), 2)


@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31))
def test_pixel_shuffle_bijection(r, c, h, w, seed):
    x = np.random.default_rng(seed).normal(size=(2, c * r * r, h, w))
    out = T.pixel_shuffle(x, r)
    np.testing.assert_array_equal(np.sort(out, axis=None), np.sort(x, axis=None))
    np.testing.assert_array_equal(T.pixel_unshuffle(out, r), x)


def test_pixel_shuffle_backward_is_adjoint(rng):
    x = rng.normal(size=(1, 8, 3, 3))
    g = rng.normal(size=(1, 2, 6, 6))
    assert np.sum(T.pixel_shuffle(x, 2) * g) == pytest.approx(np.sum(x * T.pixel_shuffle_backward(g, 2)))


def test_concat_split(rng):
    a, b = rng.normal(size=(2, 3, 4, 5)), rng.normal(size=(2, 1, 4, 5))
    cat = T.concat_channels(a, b)
    assert cat.shape == (2, 4, 4, 5)
    ra, rb = T.split_channels(cat, 3)
    np.testing.assert_array_equal(ra, a)
    np.testing.assert_array_equal(rb, b)
    with pytest.raises(ShapeError):
        T.concat_channels(a, np.zeros((2, 1, 4, 6)))


def test_activations(rng):
    np.testing.assert_array_equal(T.activation(np.zeros((1, 2, 3, 3)), "sigmoid"), 0.5)
    neg = -rng.uniform(0.1, 1, size=(1, 2, 3, 3))
    assert not T.activation(neg, "relu").any()
    assert not T.activation_backward(neg, np.ones_like(neg), "relu").any()
    with pytest.raises(ValueError):
        T.activation(neg, "tanh")


@pytest.mark.parametrize("kind", ["relu", "sigmoid"])
def test_activation_finite_differences(rng, kind):
    x = rng.normal(size=(2, 3, 4, 4))
    if kind == "relu":
        x[np.abs(x) < 1e-3] = 0.5  # stay away from the kink
    r = rng.normal(size=x.shape)
    num = numeric_grad(lambda: np.sum(r * T.activation(x, kind)), x)
    assert rel_err(T.activation_backward(x, r, kind), num).max() < 1e-4


def test_gradpair_reset():
    p = GradPair(np.ones((2, 2)))
    p.grad += 3
    p.zero_grad()
    assert p.grad.shape == p.value.shape and not p.grad.any()
    with pytest.raises(ShapeError):
        GradPair(np.ones(3), np.ones(2))


@given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 30), st.integers(1, 30), st.floats(0, 1))
def test_resize_preserves_constants(h, w, oh, ow, v):
    x = np.full((1, 2, h, w), v)
    np.testing.assert_allclose(T.resize_bicubic(x, oh, ow), v, atol=1e-6)


def test_resize_identity_scale(rng):
    x = rng.normal(size=(1, 3, 7, 5))
    np.testing.assert_allclose(T.resize_bicubic(x, 7, 5), x, atol=1e-12)


def test_resize_ramp_matches_direct_kernel():
    ramp = np.arange(8, dtype=float).reshape(1, 1, 8, 1)
    out = T.resize_bicubic(ramp, 4, 1, antialias=True)[0, 0, :, 0]
    np.testing.assert_allclose(out, resize_1d_direct(ramp[0, 0, :, 0], 4), atol=1e-12)


@pytest.mark.parametrize("n,m", [(12, 4), (9, 27), (10, 7), (6, 18), (33, 11)])
def test_resize_random_matches_direct_kernel(rng, n, m):
    sig = rng.uniform(size=n)
    out = T.resize_bicubic(sig.reshape(1, 1, n, 1), m, 1)[0, 0, :, 0]
    np.testing.assert_allclose(out, resize_1d_direct(sig, m), atol=1e-12)


def test_resize_is_separable(rng):
    x = rng.uniform(size=(1, 1, 9, 12))
    both = T.resize_bicubic(x, 3, 4)
    rows = T.resize_bicubic(T.resize_bicubic(x, 3, 12), 3, 4)
    np.testing.assert_allclose(both, rows, atol=1e-12)


def test_kernels_are_deterministic(rng):
    x = rng.normal(size=(2, 4, 8, 8)).astype(np.float32)
    w = rng.normal(size=(4, 4, 3, 3)).astype(np.float32)
    b = np.zeros(4, np.float32)
    a1, a2 = T.conv2d(x, w, b, 1), T.conv2d(x, w, b, 1)
    assert a1.tobytes() == a2.tobytes()
    g1, g2 = T.conv2d_backward(x, w, a1, 1), T.conv2d_backward(x, w, a1, 1)
    assert all(p.tobytes() == q.tobytes() for p, q in zip(g1, g2))
    assert T.resize_bicubic(x, 3, 3).tobytes() == T.resize_bicubic(x, 3, 3).tobytes()
