import numpy as np
import pytest

from dualdiff import _kernels

cython_kernels = pytest.importorskip("dualdiff._kernels._conv_cy")
from dualdiff._kernels import numpy_ref  # noqa: E402


@pytest.mark.parametrize("layout", ["nchw", "nhwc"])
@pytest.mark.parametrize("kh,kw,stride,pad", [
    (3, 3, 1, 1), (3, 3, 1, 0), (4, 4, 2, 1), (1, 1, 1, 0), (2, 3, 1, 2),
])
def test_backends_bit_identical(layout, kh, kw, stride, pad):
    rng = np.random.default_rng(kh * 100 + kw * 10 + stride + pad)
    shape = (2, 3, 9, 8) if layout == "nchw" else (2, 9, 8, 3)
    x = rng.standard_normal(shape).astype(np.float32)
    im_np = getattr(numpy_ref, f"im2col_{layout}" if layout == "nhwc" else "im2col")
    im_cy = getattr(cython_kernels, f"im2col_{layout}" if layout == "nhwc" else "im2col")
    col_np = getattr(numpy_ref, f"col2im_{layout}" if layout == "nhwc" else "col2im")
    col_cy = getattr(cython_kernels, f"col2im_{layout}" if layout == "nhwc" else "col2im")

    cols_a = np.asarray(im_np(x, kh, kw, stride, pad))
    cols_b = np.asarray(im_cy(x, kh, kw, stride, pad))
    np.testing.assert_array_equal(cols_a, cols_b)

    g = rng.standard_normal(cols_a.shape).astype(np.float32)
    back_a = col_np(g, x.shape, kh, kw, stride, pad)
    back_b = col_cy(g, x.shape, kh, kw, stride, pad)
    np.testing.assert_array_equal(back_a, back_b)


def test_backends_bit_identical_f64():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 4, 4, 2))
    a = numpy_ref.im2col_nhwc(x, 3, 3, 1, 1)
    b = cython_kernels.im2col_nhwc(x, 3, 3, 1, 1)
    np.testing.assert_array_equal(np.asarray(a), np.asarray(b))


def test_col2im_inverts_gradient_of_sum():
    # col2im(ones) counts how many patches cover each input pixel
    x = np.zeros((1, 1, 4, 4), dtype=np.float32)
    ones = np.ones((16, 9), dtype=np.float32)
    counts = _kernels.col2im(ones, x.shape, 3, 3, 1, 1)
    assert counts[0, 0, 0, 0] == 4.0   # corner covered by 4 padded windows
    assert counts[0, 0, 1, 1] == 9.0   # interior covered by all 9 offsets


def test_selected_backend_exposed():
    assert _kernels.BACKEND in ("cython", "numpy")
    assert callable(_kernels.im2col) and callable(_kernels.col2im_nhwc)
