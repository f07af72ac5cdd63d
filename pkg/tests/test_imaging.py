import cv2
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from delad.fftconv import convolve, normalize_kernel
from delad.imaging import (
    PSNR_CAP, ColorImage, ImageError, convert_color, load_image, psnr, save_image, ssim,
)


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("dtype,peak", [(np.uint8, 255), (np.uint16, 65535)])
def test_load_png_endpoints(tmp_path, dtype, peak):
    for value, expected in [(peak, 1.0), (0, 0.0)]:
        p = tmp_path / f"px{value}.png"
        cv2.imwrite(str(p), np.array([[value]], dtype=dtype))
        img = load_image(p)
        assert img.shape == (1, 1)
        assert img[0, 0] == expected


def test_load_pgm_hand_decoded(tmp_path):
    raw = bytes([0, 85, 170, 255])
    p = tmp_path / "g.pgm"
    p.write_bytes(b"P5\n2 2\n255\n" + raw)
    # byte-level decode: header is 3 whitespace-terminated tokens, then row-major samples
    header_end = p.read_bytes().index(b"255\n") + 4
    oracle = np.frombuffer(p.read_bytes()[header_end:], dtype=np.uint8).reshape(2, 2) / 255.0
    img = load_image(p)
    np.testing.assert_allclose(img, oracle, atol=1e-12)
    np.testing.assert_allclose(img, [[0, 1 / 3], [2 / 3, 1]], atol=1e-2)


def test_load_rgb_is_color(tmp_path):
    bgr = np.zeros((2, 3, 3), np.uint8)
    bgr[..., 2] = 255  # red in cv2's BGR order
    p = tmp_path / "red.png"
    cv2.imwrite(str(p), bgr)
    img = load_image(p)
    assert isinstance(img, ColorImage) and img.space == "RGB"
    np.testing.assert_array_equal(img.planes[0], 1.0)
    np.testing.assert_array_equal(img.planes[1:], 0.0)


def test_load_errors(tmp_path):
    with pytest.raises(ImageError):
        load_image(tmp_path / "missing.png")
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"not a png")
    with pytest.raises(ImageError):
        load_image(bad)
    pfm = tmp_path / "f.pfm"
    cv2.imwrite(str(pfm), np.ones((2, 2), np.float32))
    with pytest.raises(ImageError, match="bit depth"):
        load_image(pfm)


@pytest.mark.parametrize("suffix", [".png", ".pgm"])
def test_save_load_roundtrip(tmp_path, suffix):
    p = tmp_path / f"a{suffix}"
    save_image(np.array([[0.0, 1.0]]), p)
    np.testing.assert_array_equal(load_image(p), [[0.0, 1.0]])

    x = np.random.default_rng(0).random((8, 8))
    save_image(x, p)
    err = np.abs(load_image(p) - x).max()
    assert err <= 1 / (2 ** 16 - 1) + 1e-12


def test_save_clamps(tmp_path):
    p = tmp_path / "c.png"
    save_image(np.array([[1.5, -0.2]]), p)
    np.testing.assert_array_equal(load_image(p), [[1.0, 0.0]])


def test_save_color_roundtrip(tmp_path):
    planes = np.random.default_rng(1).random((3, 5, 4))
    for suffix in (".png", ".ppm"):
        p = tmp_path / f"c{suffix}"
        save_image(ColorImage(planes), p)
        back = load_image(p)
        assert np.abs(back.planes - planes).max() <= 1 / 65535 + 1e-12


def test_save_unwritable(tmp_path):
    with pytest.raises(ImageError):
        save_image(np.zeros((2, 2)), tmp_path / "nodir" / "x.png")


# ---------------------------------------------------------------------------
# colour
# ---------------------------------------------------------------------------

def test_gray_has_neutral_chroma():
    v = np.linspace(0, 1, 12).reshape(3, 4)
    ycc = convert_color(ColorImage(np.stack([v, v, v])), "YCbCr")
    np.testing.assert_allclose(ycc.planes[0], v, atol=1e-15)
    np.testing.assert_allclose(ycc.planes[1:], 0.5, atol=1e-15)


def test_color_roundtrip():
    planes = np.random.default_rng(2).random((3, 4, 4))
    rgb = ColorImage(planes)
    back = convert_color(convert_color(rgb, "YCbCr"), "RGB")
    assert np.abs(back.planes - planes).max() <= 1e-6


def test_pure_red_matches_matrix_oracle():
    kr, kb = 0.299, 0.114
    kg = 1 - kr - kb
    m = np.array([[kr, kg, kb],
                  [-kr / (2 * (1 - kb)), -kg / (2 * (1 - kb)), 0.5],
                  [0.5, -kg / (2 * (1 - kr)), -kb / (2 * (1 - kr))]])
    expected = m @ np.array([1.0, 0.0, 0.0]) + [0, 0.5, 0.5]
    ycc = convert_color(ColorImage(np.array([1.0, 0, 0]).reshape(3, 1, 1)), "YCbCr")
    np.testing.assert_allclose(ycc.planes[:, 0, 0], expected, atol=1e-12)
    assert ycc.planes[0, 0, 0] == pytest.approx(0.299)
    # Cr = 0.5 + (R - Y) / 1.402 saturates at 1 for pure red
    assert ycc.planes[2, 0, 0] == pytest.approx(0.5 + (1 - 0.299) / 1.402)


def test_convert_same_space_rejected():
    with pytest.raises(ImageError):
        convert_color(ColorImage(np.zeros((3, 2, 2))), "RGB")


# ---------------------------------------------------------------------------
# PSNR
# ---------------------------------------------------------------------------

def test_psnr_values():
    rng = np.random.default_rng(3)
    a = rng.random((16, 16))
    assert psnr(a, a) == PSNR_CAP
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)
    b = rng.random((16, 16))
    mse = sum((a[i, j] - b[i, j]) ** 2 for i in range(16) for j in range(16)) / 256
    assert psnr(a, b) == pytest.approx(10 * np.log10(1 / mse), abs=1e-10)


def test_psnr_monotone_in_noise():
    rng = np.random.default_rng(4)
    ref = rng.random((64, 64))
    noise = rng.standard_normal(ref.shape)
    vals = [psnr(ref, ref + amp * noise) for amp in (0.01, 0.02, 0.05)]
    assert vals[0] > vals[1] > vals[2]


def test_psnr_shape_mismatch():
    with pytest.raises(ImageError):
        psnr(np.zeros((2, 2)), np.zeros((2, 3)))


# ---------------------------------------------------------------------------
# SSIM
# ---------------------------------------------------------------------------

def ssim_oracle(a, b, size=11, sigma=1.5):
    """Per-pixel windowed statistics with symmetric edge extension."""
    t = np.arange(size) - size // 2
    g = np.exp(-t ** 2 / (2 * sigma ** 2))
    w = np.outer(g, g)
    w /= w.sum()
    r = size // 2
    pa = np.pad(a, r, mode="symmetric")
    pb = np.pad(b, r, mode="symmetric")
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            wa = pa[i:i + size, j:j + size]
            wb = pb[i:i + size, j:j + size]
            ma, mb = (w * wa).sum(), (w * wb).sum()
            va = (w * (wa - ma) ** 2).sum()
            vb = (w * (wb - mb) ** 2).sum()
            cov = (w * (wa - ma) * (wb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2)
                        / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return np.mean(vals)


def test_ssim_identical_is_one():
    x = np.random.default_rng(5).random((20, 17))
    assert ssim(x, x) == 1.0


def test_ssim_symmetric():
    rng = np.random.default_rng(6)
    a, b = rng.random((24, 24)), rng.random((24, 24))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-15)


def test_ssim_matches_windowed_oracle():
    yy, xx = np.mgrid[0:16, 0:16]
    grad = (xx + 2 * yy) / 45.0
    blurred = convolve(grad, normalize_kernel(np.ones((3, 3))))
    assert ssim(grad, blurred) == pytest.approx(ssim_oracle(grad, blurred), abs=1e-8)


def test_ssim_random_pair_oracle():
    rng = np.random.default_rng(7)
    a, b = rng.random((13, 18)), rng.random((13, 18))
    assert ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-8)


def test_ssim_small_image_global_window():
    rng = np.random.default_rng(8)
    a, b = rng.random((6, 9)), rng.random((6, 9))
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    ma, mb = a.mean(), b.mean()
    va, vb = a.var(), b.var()
    cov = ((a - ma) * (b - mb)).mean()
    expected = ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2))
    assert ssim(a, b) == pytest.approx(expected, abs=1e-12)


def test_ssim_range():
    rng = np.random.default_rng(9)
    a = rng.random((16, 16))
    assert -1 <= ssim(a, 1 - a) <= 1


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 14), st.integers(1, 14)),
              elements=st.floats(-10, 10, allow_nan=False)))
def test_ssim_self_similarity_property(x):
    assert ssim(x, x) == 1.0
