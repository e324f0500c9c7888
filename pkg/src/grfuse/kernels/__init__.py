"""Hot numeric kernels with numba/numpy backends.

All functions dispatch on :func:`grfuse.backend.active_backend` at call
time, so a runtime ``set_backend`` call takes effect immediately.
"""

from __future__ import annotations

import numpy as np

from .. import backend
from . import _numpy

_numba_mod = None


def _impl():
    if backend.active_backend() == "numpy":
        return _numpy
    global _numba_mod
    if _numba_mod is None:
        from . import _numba as _numba_mod_imported

        _numba_mod = _numba_mod_imported
    return _numba_mod


def _c(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a)


def conv2d_fwd(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """3x3 stride-1 zero-pad-1 cross-correlation, (cin,h,w)x(cout,cin,3,3)."""
    return _impl().conv2d_fwd(_c(x), _c(w))


def conv2d_bwd_x(gy: np.ndarray, w: np.ndarray) -> np.ndarray:
    return _impl().conv2d_bwd_x(_c(gy), _c(w))


def conv2d_bwd_w(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    return _impl().conv2d_bwd_w(_c(x), _c(gy))


def filter2_valid(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Valid-mode 2-D cross-correlation of a single-channel image."""
    return _impl().filter2_valid(_c(x), _c(k))


def filter2_valid_bwd(gy: np.ndarray, k: np.ndarray) -> np.ndarray:
    return _impl().filter2_valid_bwd(_c(gy), _c(k))


def sobel_xy(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Replicate-padded Sobel responses (G_x, G_y); constants cancel exactly."""
    return _impl().sobel_xy(_c(x))


def joint_hist256(ia: np.ndarray, ib: np.ndarray) -> np.ndarray:
    """256x256 joint count histogram of two equal-length uint8 index arrays."""
    return _impl().joint_hist256(_c(ia.ravel()), _c(ib.ravel()))
