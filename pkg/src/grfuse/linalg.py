"""Dense matrix/tensor kernels: products, convolutions, symmetric
eigendecomposition, thin QR.

Everything here is a pure function of ndarrays.  Factorizations are
LAPACK-backed (``numpy.linalg``) and then sign-normalized so that repeated
calls on the same input give bit-identical results:

* ``sym_eig``: eigenvalues sorted descending, each eigenvector's first
  entry with magnitude > 1e-12 made positive.
* ``thin_qr``: diagonal of R made strictly positive.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import DecompositionError, DimensionError, NumericError, RankError

SIGN_EPS = 1e-12

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()


class EigResult(NamedTuple):
    """Eigenvectors as columns of ``u``, eigenvalues ``sigma`` descending."""

    u: np.ndarray
    sigma: np.ndarray


class QRResult(NamedTuple):
    """Thin QR with orthonormal ``q`` and upper-triangular ``r``, r_ii > 0."""

    q: np.ndarray
    r: np.ndarray


def _check_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite values in {what}")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Standard matrix product with explicit inner-dimension check."""
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def _fix_eigvec_signs(u: np.ndarray) -> np.ndarray:
    mask = np.abs(u) > SIGN_EPS
    first = np.argmax(mask, axis=0)  # row of each column's first usable entry
    lead = u[first, np.arange(u.shape[1])]
    sign = np.ones(u.shape[1], dtype=u.dtype)
    sign[mask.any(axis=0) & (lead < 0)] = -1.0
    return u * sign[np.newaxis, :]


def sym_eig(a: np.ndarray) -> EigResult:
    """Eigendecomposition of a real symmetric matrix.

    The input is symmetrized as (A + A^T)/2 first.  The asymmetry gate only
    catches usage errors (plainly unsymmetric matrices); it sits well above
    the h ~ 1e-4 asymmetric perturbations that finite-difference probing of
    the backward rule introduces.
    """
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"sym_eig expects a square matrix, got {a.shape}")
    _check_finite(a, "sym_eig input")
    asym = np.max(np.abs(a - a.T)) if a.size else 0.0
    if asym > 1e-3 * max(1.0, float(np.max(np.abs(a)))):
        raise DimensionError(f"input is not symmetric (max asymmetry {asym:.3e})")
    s = (a + a.T) / 2
    try:
        lam, u = np.linalg.eigh(s)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(f"eigendecomposition failed: {exc}") from exc
    order = np.argsort(-lam, kind="stable")
    return EigResult(_fix_eigvec_signs(u[:, order]), np.ascontiguousarray(lam[order]))


def thin_qr(a: np.ndarray) -> QRResult:
    """Thin QR of a d x q matrix (d >= q) with positive-diagonal R."""
    if a.ndim != 2 or a.shape[0] < a.shape[1]:
        raise DimensionError(f"thin_qr expects d >= q, got {a.shape}")
    _check_finite(a, "thin_qr input")
    q, r = np.linalg.qr(a, mode="reduced")
    norm = np.linalg.norm(a)
    diag = np.abs(np.diagonal(r))
    if np.any(diag <= 1e-10 * norm) or np.any(diag == 0.0):
        raise RankError(f"rank-deficient input, min |r_ii| = {diag.min():.3e}")
    sign = np.where(np.diagonal(r) < 0, -1.0, 1.0).astype(a.dtype)
    return QRResult(q * sign[np.newaxis, :], sign[:, np.newaxis] * r)


def conv2d(img: np.ndarray, kernels_: np.ndarray) -> np.ndarray:
    """3x3 cross-correlation, stride 1, zero padding 1 (extent-preserving)."""
    if img.ndim != 3:
        raise DimensionError(f"conv2d expects (c_in, h, w), got {img.shape}")
    if kernels_.ndim != 4 or kernels_.shape[2:] != (3, 3):
        raise DimensionError(f"conv2d expects (c_out, c_in, 3, 3) kernels, got {kernels_.shape}")
    if kernels_.shape[1] != img.shape[0]:
        raise DimensionError(
            f"channel mismatch: image has {img.shape[0]}, kernels expect {kernels_.shape[1]}"
        )
    return kernels.conv2d_fwd(img, kernels_)


def sobel_mag(img: np.ndarray) -> np.ndarray:
    """L1 gradient magnitude |G_x| + |G_y| with 3x3 Sobel kernels.

    The border is replicate-padded: a constant image has zero response
    everywhere and a step edge lights up exactly the two columns bounding
    it (zero padding would invent gradients along the image border).
    """
    if img.ndim != 2 or img.shape[0] < 3 or img.shape[1] < 3:
        raise DimensionError(f"sobel_mag needs an h x w image with h,w >= 3, got {img.shape}")
    gx, gy = kernels.sobel_xy(img)
    return np.abs(gx) + np.abs(gy)
