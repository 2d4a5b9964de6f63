"""Backend selection for the convolution hot loops.

The compiled extension is used when it was built; otherwise, or when the
``ANTGAN_PURE`` environment variable is set to a non-empty value other than
``0``, the numpy implementation is used. Both backends produce identical
results.
"""

import os

from . import _fallback

BACKEND = "numpy"
_impl = _fallback

if os.environ.get("ANTGAN_PURE", "") in ("", "0"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback


def im2col(xp, kh, kw, stride, ho, wo):
    """Unfold ``xp`` of shape (N, C, Hp, Wp) into (N, C*kh*kw, ho*wo) columns."""
    return _impl.im2col(xp, kh, kw, stride, ho, wo)


def col2im(cols, c, hp, wp, kh, kw, stride, ho, wo):
    """Scatter-add columns back into a zero (N, C, hp, wp) array."""
    return _impl.col2im(cols, c, hp, wp, kh, kw, stride, ho, wo)
