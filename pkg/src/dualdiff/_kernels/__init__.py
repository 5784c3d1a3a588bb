"""conv2d patch kernels: compiled extension if built, numpy fallback otherwise."""

try:
    from . import _conv_cy as _impl
    BACKEND = "cython"
except ImportError:  # extension not built
    from . import numpy_ref as _impl
    BACKEND = "numpy"

im2col = _impl.im2col
col2im = _impl.col2im
im2col_nhwc = _impl.im2col_nhwc
col2im_nhwc = _impl.col2im_nhwc


def get_backend(name):
    """Return a specific backend module ('numpy' or 'cython'), for benchmarks/tests."""
    if name == "numpy":
        from . import numpy_ref
        return numpy_ref
    if name == "cython":
        from . import _conv_cy
        return _conv_cy
    raise ValueError(f"unknown kernel backend {name!r}")
