"""Jitted kernel implementations.

Each output element is accumulated by a single thread in a fixed order, so
results are bit-reproducible run to run (no fastmath, no parallel
reductions).
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(cache=True)
def _pad1(x):
    cin, h, wd = x.shape
    xp = np.zeros((cin, h + 2, wd + 2), x.dtype)
    for ci in range(cin):
        xp[ci, 1 : h + 1, 1 : wd + 1] = x[ci]
    return xp


@njit(cache=True, parallel=True)
def _conv3_padded(xp, w):
    # xp is the already zero-padded input; inner loop over j vectorizes
    cout, cin = w.shape[0], w.shape[1]
    h, wd = xp.shape[1] - 2, xp.shape[2] - 2
    y = np.zeros((cout, h, wd), xp.dtype)
    for co in prange(cout):
        for ci in range(cin):
            for u in range(3):
                for v in range(3):
                    wv = w[co, ci, u, v]
                    for i in range(h):
                        y[co, i, :] += wv * xp[ci, i + u, v : v + wd]
    return y


def conv2d_fwd(x, w):
    return _conv3_padded(_pad1(x), w)


def conv2d_bwd_x(gy, w):
    # transposed conv == correlation with flipped, axis-swapped kernels
    wflip = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return _conv3_padded(_pad1(gy), wflip)


@njit(cache=True, parallel=True)
def _conv3_wgrad(xp, gy):
    cin = xp.shape[0]
    cout, h, wd = gy.shape
    gw = np.zeros((cout, cin, 3, 3), xp.dtype)
    for co in prange(cout):
        for ci in range(cin):
            for u in range(3):
                for v in range(3):
                    acc = xp[0, 0, 0] * 0
                    for i in range(h):
                        acc += np.dot(gy[co, i, :], xp[ci, i + u, v : v + wd])
                    gw[co, ci, u, v] = acc
    return gw


def conv2d_bwd_w(x, gy):
    return _conv3_wgrad(_pad1(x), gy)


@njit(cache=True, parallel=True)
def filter2_valid(x, k):
    h, w = x.shape
    s = k.shape[0]
    oh, ow = h - s + 1, w - s + 1
    y = np.empty((oh, ow), x.dtype)
    for i in prange(oh):
        for j in range(ow):
            acc = x[0, 0] * 0
            for u in range(s):
                for v in range(s):
                    acc += x[i + u, j + v] * k[u, v]
            y[i, j] = acc
    return y


@njit(cache=True, parallel=True)
def filter2_valid_bwd(gy, k):
    oh, ow = gy.shape
    s = k.shape[0]
    h, w = oh + s - 1, ow + s - 1
    gx = np.zeros((h, w), gy.dtype)
    for i in prange(h):
        for j in range(w):
            acc = gy[0, 0] * 0
            for u in range(s):
                ii = i - u
                if ii < 0 or ii >= oh:
                    continue
                for v in range(s):
                    jj = j - v
                    if 0 <= jj < ow:
                        acc += gy[ii, jj] * k[u, v]
            gx[i, j] = acc
    return gx


@njit(cache=True, parallel=True)
def sobel_xy(x):
    h, w = x.shape
    gx = np.empty((h, w), x.dtype)
    gy = np.empty((h, w), x.dtype)
    for i in prange(h):
        im = max(i - 1, 0)
        ip = min(i + 1, h - 1)
        for j in range(w):
            jm = max(j - 1, 0)
            jp = min(j + 1, w - 1)
            right = x[im, jp] + 2.0 * x[i, jp] + x[ip, jp]
            left = x[im, jm] + 2.0 * x[i, jm] + x[ip, jm]
            botm = x[ip, jm] + 2.0 * x[ip, j] + x[ip, jp]
            top = x[im, jm] + 2.0 * x[im, j] + x[im, jp]
            gx[i, j] = right - left
            gy[i, j] = botm - top
    return gx, gy


@njit(cache=True)
def joint_hist256(ia, ib):
    hist = np.zeros((256, 256), np.float64)
    for n in range(ia.size):
        hist[ia[n], ib[n]] += 1.0
    return hist
