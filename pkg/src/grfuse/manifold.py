"""Grassmann layers: OrthMap, FRMap, ReOrth, Projection.

Each layer works on tape (:class:`grfuse.tape.Var` inputs, recorded
backward through the structured eig/QR rules) or directly on ndarrays, in
which case it runs on a throwaway non-recording tape.

A d x q matrix with orthonormal columns ("basis") is a representative of a
point on the Grassmann manifold of q-dimensional subspaces of R^d; the
projector y y^T is the representative-independent encoding of that point.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, RankError
from .tape import Tape, Var


def _unwrap(fn, x, *args):
    t = Tape(record=False)
    return fn(t.leaf(np.asarray(x)), *args, tape=t).value


def orth_map(a, q: int, tape: Tape | None = None):
    """Top-q eigenvector basis of a symmetric matrix.

    Records the eigengap sigma_q - sigma_{q+1} on the tape (when q < n);
    gaps below 1e-6 leave the backward ill-conditioned and are surfaced in
    training telemetry.
    """
    if not isinstance(a, Var):
        return _unwrap(orth_map, a, q)
    n = a.value.shape[0]
    if not 1 <= q <= n:
        raise DimensionError(f"subspace dimension q={q} out of range for n={n}")
    u, sigma = tape.sym_eig(a)
    if q < n:
        tape.eigengaps.append(float(sigma.value[q - 1] - sigma.value[q]))
    return tape.slice_cols(u, 0, q)


def fr_map(y, w, tape: Tape | None = None):
    """Full-rank linear map w @ y; generally breaks orthonormality."""
    if not isinstance(y, Var):
        t = Tape(record=False)
        return fr_map(t.leaf(np.asarray(y)), t.leaf(np.asarray(w)), tape=t).value
    wv = w.value if isinstance(w, Var) else w
    if wv.shape[1] != y.value.shape[0]:
        raise DimensionError(f"fr_map shapes disagree: w {wv.shape} vs y {y.value.shape}")
    return tape.matmul(w, y)


def reorth(a, tape: Tape | None = None):
    """Re-orthonormalization: the Q factor of the thin QR (== Y R^-1)."""
    if not isinstance(a, Var):
        return _unwrap(reorth, a)
    try:
        q_var, _ = tape.thin_qr(a)
    except RankError:
        raise
    return q_var


def proj_map(y, tape: Tape | None = None):
    """Projection mapping y -> y y^T."""
    if not isinstance(y, Var):
        return _unwrap(proj_map, y)
    return tape.gram(y)


def init_frmap_weight(d_out: int, d_in: int, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    """Uniform(-a, a) with a = sqrt(6/(d_in+d_out)); redrawn until the
    smallest singular value clears 1e-3 so ReOrth is well-posed at step 0."""
    a = np.sqrt(6.0 / (d_in + d_out))
    for _ in range(100):
        w = rng.uniform(-a, a, size=(d_out, d_in)).astype(dtype)
        if np.linalg.svd(w, compute_uv=False)[-1] >= 1e-3:
            return w
    raise RankError("could not draw a full-rank FRMap weight")  # pragma: no cover


def min_singular_value(w: np.ndarray) -> float:
    """Monitoring hook: smallest singular value of an FRMap weight."""
    return float(np.linalg.svd(w, compute_uv=False)[-1])
