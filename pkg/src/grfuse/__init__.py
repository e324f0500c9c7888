"""Grassmann-manifold attention for infrared/visible image fusion.

Library map:

* :mod:`grfuse.linalg` - eig/QR/conv/Sobel numerical substrate
* :mod:`grfuse.tape` - reverse-mode tape with structured eig/QR backwards
* :mod:`grfuse.manifold` - OrthMap / FRMap / ReOrth / Projection layers
* :mod:`grfuse.attention` - GSSM/GSCM blocks, CMS mask, block shuffle
* :mod:`grfuse.network` - encoder + four branches + decoder, checkpoints
* :mod:`grfuse.loss` - intensity/gradient/covariance/SSIM objective
* :mod:`grfuse.metrics` - MI / SF / AG evaluation
* :mod:`grfuse.cli` - train / fuse / eval / gradcheck commands

Hot kernels run through numba or pure numpy; see :mod:`grfuse.backend`.
"""

from .backend import active_backend, set_backend
from .linalg import EigResult, QRResult, matmul, sym_eig, thin_qr
from .tape import Tape, Var, backward_eig, backward_qr, grad_check

__version__ = "0.1.0"

__all__ = [
    "EigResult",
    "QRResult",
    "Tape",
    "Var",
    "active_backend",
    "backward_eig",
    "backward_qr",
    "grad_check",
    "matmul",
    "set_backend",
    "sym_eig",
    "thin_qr",
    "__version__",
]
