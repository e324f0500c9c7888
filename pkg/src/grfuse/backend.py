"""Kernel backend selection.

The hot inner loops (convolutions, window filters, Sobel stencils, joint
histograms) exist twice: a numba @njit version and a pure-numpy
(im2col + BLAS) version.  The environment variable ``GRFUSE_BACKEND``
picks one:

    GRFUSE_BACKEND=numpy   the im2col/BLAS kernels (default)
    GRFUSE_BACKEND=numba   the jitted direct-loop kernels
    unset / "auto"         numpy

Both produce the same results up to summation order.  ``auto`` resolves to
numpy because BLAS-backed im2col beats the jitted direct convolution by
5-10x at this network's channel counts (see benchmarks/bench_kernels.py);
the numba kernels stay useful as an independent implementation for
cross-checking and for machines without a tuned BLAS.

``set_backend`` switches at runtime (used by tests and the benchmark).
"""

from __future__ import annotations

import os
import warnings

_VALID = ("auto", "numba", "numpy")

try:
    import numba  # noqa: F401

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False


def _resolve(choice: str) -> str:
    if choice not in _VALID:
        raise ValueError(f"unknown backend {choice!r}, expected one of {_VALID}")
    if choice == "numba" and not HAS_NUMBA:
        raise RuntimeError("GRFUSE_BACKEND=numba but numba is not importable")
    if choice == "auto":
        return "numpy"
    return choice


_active = _resolve(os.environ.get("GRFUSE_BACKEND", "auto").strip().lower() or "auto")


def active_backend() -> str:
    """Name of the backend currently serving the hot kernels."""
    return _active


def set_backend(choice: str) -> str:
    """Switch kernel backend at runtime; returns the resolved name."""
    global _active
    _active = _resolve(choice)
    return _active
