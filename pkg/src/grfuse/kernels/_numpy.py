"""Pure-numpy kernel implementations (im2col + BLAS)."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _im2col3(x: np.ndarray) -> np.ndarray:
    """(cin,h,w) -> (h*w, cin*9) patch matrix for a 3x3/pad-1 window."""
    cin, h, w = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (cin,h,w,3,3)
    return win.transpose(1, 2, 0, 3, 4).reshape(h * w, cin * 9)


def conv2d_fwd(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    cin, h, wd = x.shape
    cout = w.shape[0]
    cols = _im2col3(x)
    y = cols @ w.reshape(cout, cin * 9).T
    return np.ascontiguousarray(y.T.reshape(cout, h, wd))


def conv2d_bwd_x(gy: np.ndarray, w: np.ndarray) -> np.ndarray:
    # transposed conv == correlation with the spatially flipped, axis-swapped kernel
    wflip = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return conv2d_fwd(gy, wflip)


def conv2d_bwd_w(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    cin, h, wd = x.shape
    cout = gy.shape[0]
    cols = _im2col3(x)
    gw = gy.reshape(cout, h * wd) @ cols
    return gw.reshape(cout, cin, 3, 3)


def filter2_valid(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    win = sliding_window_view(x, k.shape)
    return np.tensordot(win, k, axes=([2, 3], [0, 1]))


def filter2_valid_bwd(gy: np.ndarray, k: np.ndarray) -> np.ndarray:
    s = k.shape[0]
    gyp = np.pad(gy, ((s - 1, s - 1), (s - 1, s - 1)))
    return filter2_valid(gyp, k[::-1, ::-1])


def sobel_xy(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Replicate-padded Sobel responses (G_x, G_y).

    Positive and negative stencil halves are summed separately so constant
    regions cancel exactly.
    """
    p = np.pad(x, 1, mode="edge")
    right = p[:-2, 2:] + 2.0 * p[1:-1, 2:] + p[2:, 2:]
    left = p[:-2, :-2] + 2.0 * p[1:-1, :-2] + p[2:, :-2]
    botm = p[2:, :-2] + 2.0 * p[2:, 1:-1] + p[2:, 2:]
    top = p[:-2, :-2] + 2.0 * p[:-2, 1:-1] + p[:-2, 2:]
    return right - left, botm - top


def joint_hist256(ia: np.ndarray, ib: np.ndarray) -> np.ndarray:
    h = np.bincount(ia.astype(np.int64) * 256 + ib.astype(np.int64), minlength=65536)
    return h.reshape(256, 256).astype(np.float64)
