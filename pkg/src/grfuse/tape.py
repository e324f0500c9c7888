"""Minimal reverse-mode differentiation over recorded tensor ops.

A :class:`Tape` owns an ordered record of operations; each op method
computes its forward value eagerly with numpy and appends a closure that
propagates cotangents when :meth:`Tape.backward` replays the records in
reverse.  Granularity is one record per module-level op (matmul, eig, qr,
conv, pointwise), because the structured backward rules operate on whole
matrices.

The two custom structured rules live here as standalone functions so they
can be tested in isolation:

* :func:`backward_eig` - symmetric eigendecomposition backward using the
  antisymmetric kernel matrix of reciprocal eigenvalue gaps,
* :func:`backward_qr` - thin-QR backward under the positive-diagonal
  uniqueness convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels, linalg
from .errors import DimensionError, NumericError

EIG_GAP_CLAMP = 1e-6


class Var:
    """A value in the recorded computation; ``grad`` is filled by backward."""

    __slots__ = ("value", "grad", "name")

    def __init__(self, value: np.ndarray, name: str | None = None):
        self.value = value
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Var{tag}(shape={self.value.shape})"


def _acc(v: Var, g: np.ndarray) -> None:
    # first contribution is stored by reference (closures hand over fresh
    # arrays, or read-only views which the merge below never mutates);
    # later contributions allocate a new sum
    if v.grad is None:
        v.grad = g
    else:
        v.grad = v.grad + g


def _val(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else x


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    s = 1.0 / (1.0 + e)
    return np.where(x >= 0, s, 1.0 - s)


class Tape:
    """Single-writer op recorder; distinct tapes may run in parallel."""

    def __init__(self, record: bool = True):
        self._records: list = []
        self._rec = record
        self.clamp_events = 0  # near-degenerate eigenvalue pairs seen in backward
        self.eigengaps: list[float] = []  # sigma_q - sigma_{q+1} per orth_map call

    def _push(self, fn) -> None:
        if self._rec:
            self._records.append(fn)

    def backward(self, out: Var, seed: np.ndarray | None = None) -> None:
        """Seed ``out`` (default: ones) and replay all records in reverse."""
        out.grad = np.ones_like(out.value) if seed is None else np.asarray(seed, out.value.dtype)
        for fn in reversed(self._records):
            fn()

    def clear(self) -> None:
        self._records.clear()

    # -- leaves -----------------------------------------------------------

    def leaf(self, value: np.ndarray, name: str | None = None) -> Var:
        arr = np.asarray(value)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        return Var(arr, name)

    # -- arithmetic -------------------------------------------------------

    def add(self, a: Var, b: Var) -> Var:
        out = Var(a.value + b.value)

        def bwd():
            if out.grad is None:
                return
            _acc(a, out.grad)
            _acc(b, out.grad)

        self._push(bwd)
        return out

    def sub(self, a: Var, b) -> Var:
        out = Var(a.value - _val(b))

        def bwd():
            if out.grad is None:
                return
            _acc(a, out.grad)
            if isinstance(b, Var):
                _acc(b, -out.grad)

        self._push(bwd)
        return out

    def mul(self, a: Var, b: Var) -> Var:
        out = Var(a.value * b.value)

        def bwd():
            if out.grad is None:
                return
            _acc(a, out.grad * b.value)
            _acc(b, out.grad * a.value)

        self._push(bwd)
        return out

    def div(self, a: Var, b: Var) -> Var:
        out = Var(a.value / b.value)

        def bwd():
            if out.grad is None:
                return
            _acc(a, out.grad / b.value)
            _acc(b, -out.grad * out.value / b.value)

        self._push(bwd)
        return out

    def scale(self, a: Var, c: float) -> Var:
        c = float(c)  # keep numpy scalar types from promoting f32 to f64
        out = Var(a.value * c)

        def bwd():
            if out.grad is not None:
                _acc(a, out.grad * c)

        self._push(bwd)
        return out

    def add_const(self, a: Var, c) -> Var:
        out = Var(a.value + c)

        def bwd():
            if out.grad is not None:
                _acc(a, out.grad)

        self._push(bwd)
        return out

    def mul_const(self, a: Var, m: np.ndarray) -> Var:
        """Elementwise product with a fixed array (e.g. a +-1 mask)."""
        out = Var(a.value * m)

        def bwd():
            if out.grad is not None:
                _acc(a, out.grad * m)

        self._push(bwd)
        return out

    def add_rowvec(self, a: Var, b: Var) -> Var:
        """(N, d) + (d,) broadcast add (bias over tokens)."""
        out = Var(a.value + b.value[np.newaxis, :])

        def bwd():
            if out.grad is None:
                return
            _acc(a, out.grad)
            _acc(b, out.grad.sum(axis=0))

        self._push(bwd)
        return out

    def abs(self, a: Var) -> Var:
        out = Var(np.abs(a.value))

        def bwd():
            if out.grad is not None:
                _acc(a, out.grad * np.sign(a.value))

        self._push(bwd)
        return out

    # -- linear algebra ---------------------------------------------------

    def matmul(self, a, b) -> Var:
        av, bv = _val(a), _val(b)
        out = Var(av @ bv)

        def bwd():
            if out.grad is None:
                return
            if isinstance(a, Var):
                _acc(a, out.grad @ bv.T)
            if isinstance(b, Var):
                _acc(b, av.T @ out.grad)

        self._push(bwd)
        return out

    def transpose(self, a: Var) -> Var:
        out = Var(a.value.T.copy())

        def bwd():
            if out.grad is not None:
                _acc(a, out.grad.T)

        self._push(bwd)
        return out

    def gram(self, y: Var) -> Var:
        """y y^T; the projection map when y has orthonormal columns."""
        out = Var(y.value @ y.value.T)

        def bwd():
            if out.grad is None:
                return
            g = out.grad
            _acc(y, (g + g.T) @ y.value)

        self._push(bwd)
        return out

    def sym_eig(self, a: Var) -> tuple[Var, Var]:
        """Recorded symmetric eigendecomposition; see :func:`backward_eig`."""
        ctx = linalg.sym_eig(a.value)
        u_var, s_var = Var(ctx.u), Var(ctx.sigma)

        def bwd():
            gu = u_var.grad
            gs = s_var.grad
            if gu is None and gs is None:
                return
            if gu is None:
                gu = np.zeros_like(ctx.u)
            if gs is None:
                gs = np.zeros_like(ctx.sigma)
            grad, clamped = backward_eig(ctx, gu, gs)
            self.clamp_events += clamped
            _acc(a, grad.astype(a.value.dtype, copy=False))

        self._push(bwd)
        return u_var, s_var

    def thin_qr(self, a: Var) -> tuple[Var, Var]:
        """Recorded thin QR; see :func:`backward_qr`."""
        ctx = linalg.thin_qr(a.value)
        q_var, r_var = Var(ctx.q), Var(ctx.r)

        def bwd():
            gq = q_var.grad
            gr = r_var.grad
            if gq is None and gr is None:
                return
            if gq is None:
                gq = np.zeros_like(ctx.q)
            if gr is None:
                gr = np.zeros_like(ctx.r)
            _acc(a, backward_qr(ctx, gq, gr).astype(a.value.dtype, copy=False))

        self._push(bwd)
        return q_var, r_var

    # -- shape plumbing ---------------------------------------------------

    def slice_cols(self, a: Var, j0: int, j1: int) -> Var:
        out = Var(a.value[:, j0:j1].copy())

        def bwd():
            if out.grad is None:
                return
            g = np.zeros_like(a.value)
            g[:, j0:j1] = out.grad
            _acc(a, g)

        self._push(bwd)
        return out

    def slice_rows(self, a: Var, i0: int, i1: int) -> Var:
        out = Var(a.value[i0:i1].copy())

        def bwd():
            if out.grad is None:
                return
            g = np.zeros_like(a.value)
            g[i0:i1] = out.grad
            _acc(a, g)

        self._push(bwd)
        return out

    def split_rows(self, a: Var, size: int) -> list[Var]:
        """Partition rows into consecutive groups of ``size`` (one record)."""
        n = a.value.shape[0]
        if n % size:
            raise DimensionError(f"cannot split {n} rows into groups of {size}")
        outs = [Var(a.value[i : i + size].copy()) for i in range(0, n, size)]

        def bwd():
            if all(o.grad is None for o in outs):
                return
            grads = [o.grad if o.grad is not None else np.zeros_like(o.value) for o in outs]
            _acc(a, np.concatenate(grads, axis=0))

        self._push(bwd)
        return outs

    def concat_rows(self, parts: list[Var]) -> Var:
        out = Var(np.concatenate([p.value for p in parts], axis=0))

        def bwd():
            if out.grad is None:
                return
            i = 0
            for p in parts:
                n = p.value.shape[0]
                _acc(p, out.grad[i : i + n])
                i += n

        self._push(bwd)
        return out

    def concat_channels(self, parts: list[Var]) -> Var:
        out = Var(np.concatenate([p.value for p in parts], axis=0))

        def bwd():
            if out.grad is None:
                return
            i = 0
            for p in parts:
                c = p.value.shape[0]
                _acc(p, out.grad[i : i + c])
                i += c

        self._push(bwd)
        return out

    def reshape(self, a: Var, shape) -> Var:
        out = Var(a.value.reshape(shape).copy())

        def bwd():
            if out.grad is not None:
                _acc(a, out.grad.reshape(a.value.shape))

        self._push(bwd)
        return out

    def permute_rows(self, a: Var, perm: np.ndarray) -> Var:
        out = Var(a.value[perm])

        def bwd():
            if out.grad is None:
                return
            g = np.empty_like(a.value)
            g[perm] = out.grad
            _acc(a, g)

        self._push(bwd)
        return out

    def tokens_to_image(self, a: Var, h: int, w: int) -> Var:
        """(h*w, c) row-major tokens -> (c, h, w) feature map."""
        c = a.value.shape[1]
        out = Var(np.ascontiguousarray(a.value.T.reshape(c, h, w)))

        def bwd():
            if out.grad is not None:
                _acc(a, out.grad.reshape(c, h * w).T)

        self._push(bwd)
        return out

    def image_to_tokens(self, a: Var) -> Var:
        c, h, w = a.value.shape
        out = Var(np.ascontiguousarray(a.value.reshape(c, h * w).T))

        def bwd():
            if out.grad is not None:
                _acc(a, out.grad.T.reshape(c, h, w))

        self._push(bwd)
        return out

    # -- reductions -------------------------------------------------------

    def sum(self, a: Var) -> Var:
        out = Var(np.asarray(a.value.sum()))

        def bwd():
            if out.grad is not None:
                _acc(a, np.broadcast_to(out.grad, a.value.shape))

        self._push(bwd)
        return out

    def mean(self, a: Var) -> Var:
        n = a.value.size
        out = Var(np.asarray(a.value.mean()))

        def bwd():
            if out.grad is not None:
                _acc(a, np.broadcast_to(out.grad / n, a.value.shape))

        self._push(bwd)
        return out

    # -- nonlinearities ---------------------------------------------------

    def leaky_relu(self, a: Var, slope: float = 0.2) -> Var:
        out = Var(np.where(a.value > 0, a.value, slope * a.value))

        def bwd():
            if out.grad is None:
                return
            _acc(a, out.grad * np.where(a.value > 0, 1.0, slope).astype(a.value.dtype))

        self._push(bwd)
        return out

    def sigmoid(self, a: Var) -> Var:
        s = _stable_sigmoid(a.value)
        out = Var(s)

        def bwd():
            if out.grad is not None:
                _acc(a, out.grad * s * (1.0 - s))

        self._push(bwd)
        return out

    def silu(self, a: Var) -> Var:
        """x * sigmoid(x): the smooth sigmoid-weighted linear unit."""
        x = a.value
        s = _stable_sigmoid(x)
        out = Var(x * s)

        def bwd():
            if out.grad is not None:
                _acc(a, out.grad * (s * (1.0 + x * (1.0 - s))))

        self._push(bwd)
        return out

    def softmax_rows(self, a: Var) -> Var:
        z = a.value - a.value.max(axis=1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)
        out = Var(p)

        def bwd():
            if out.grad is None:
                return
            g = out.grad
            _acc(a, p * (g - (g * p).sum(axis=1, keepdims=True)))

        self._push(bwd)
        return out

    def layer_norm(self, x: Var, gamma: Var, beta: Var, eps: float = 1e-5) -> Var:
        """Per-token normalization over the channel axis of (N, d) tokens."""
        d = x.value.shape[1]
        mu = x.value.mean(axis=1, keepdims=True)
        xc = x.value - mu
        var = (xc * xc).mean(axis=1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        out = Var(xhat * gamma.value + beta.value)

        def bwd():
            if out.grad is None:
                return
            g = out.grad
            _acc(beta, g.sum(axis=0))
            _acc(gamma, (g * xhat).sum(axis=0))
            gh = g * gamma.value
            gx = (inv / d) * (d * gh - gh.sum(axis=1, keepdims=True) - xhat * (gh * xhat).sum(axis=1, keepdims=True))
            _acc(x, gx)

        self._push(bwd)
        return out

    # -- convolution / filtering ------------------------------------------

    def conv2d(self, x: Var, w, b=None) -> Var:
        """3x3 stride-1 pad-1 conv; weight/bias may be fixed arrays."""
        wv = _val(w)
        if wv.shape[1] != x.value.shape[0]:
            raise DimensionError(
                f"channel mismatch: input has {x.value.shape[0]}, kernels expect {wv.shape[1]}"
            )
        y = kernels.conv2d_fwd(x.value, wv)
        if b is not None:
            y = y + _val(b)[:, np.newaxis, np.newaxis]
        out = Var(y)

        def bwd():
            if out.grad is None:
                return
            g = out.grad
            _acc(x, kernels.conv2d_bwd_x(g, wv))
            if isinstance(w, Var):
                _acc(w, kernels.conv2d_bwd_w(x.value, g))
            if b is not None and isinstance(b, Var):
                _acc(b, g.sum(axis=(1, 2)))

        self._push(bwd)
        return out

    def filter2_valid(self, x: Var, k: np.ndarray) -> Var:
        """Valid-mode correlation with a fixed window (e.g. SSIM Gaussian)."""
        out = Var(kernels.filter2_valid(x.value, k.astype(x.value.dtype)))

        def bwd():
            if out.grad is not None:
                _acc(x, kernels.filter2_valid_bwd(out.grad, k.astype(x.value.dtype)))

        self._push(bwd)
        return out

    def sobel_abs(self, x: Var) -> Var:
        """|G_x| + |G_y| Sobel magnitude (replicate padding), recorded."""
        gx, gy = kernels.sobel_xy(x.value)
        out = Var(np.abs(gx) + np.abs(gy))
        kx = linalg.SOBEL_X.astype(x.value.dtype)
        ky = linalg.SOBEL_Y.astype(x.value.dtype)

        def bwd():
            if out.grad is None:
                return
            gp = kernels.filter2_valid_bwd(out.grad * np.sign(gx), kx)
            gp += kernels.filter2_valid_bwd(out.grad * np.sign(gy), ky)
            g = gp[1:-1, 1:-1].copy()
            g[0, :] += gp[0, 1:-1]
            g[-1, :] += gp[-1, 1:-1]
            g[:, 0] += gp[1:-1, 0]
            g[:, -1] += gp[1:-1, -1]
            g[0, 0] += gp[0, 0]
            g[0, -1] += gp[0, -1]
            g[-1, 0] += gp[-1, 0]
            g[-1, -1] += gp[-1, -1]
            _acc(x, g)

        self._push(bwd)
        return out

    def avg_pool2(self, x: Var) -> Var:
        c, h, w = x.value.shape
        if h % 2 or w % 2:
            raise DimensionError(f"avg_pool2 needs even extents, got {x.value.shape}")
        out = Var(x.value.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4)))

        def bwd():
            if out.grad is None:
                return
            g = np.repeat(np.repeat(out.grad, 2, axis=1), 2, axis=2) / 4.0
            _acc(x, g.astype(x.value.dtype))

        self._push(bwd)
        return out

    def channel_covariance(self, f: Var) -> Var:
        """Channels as variables, spatial positions as samples; see loss.l_cov."""
        c, h, w = f.value.shape
        n = h * w
        if n < 2:
            from .errors import DegenerateSampleError

            raise DegenerateSampleError("covariance needs at least 2 spatial samples")
        x = f.value.reshape(c, n)
        xc = x - x.mean(axis=1, keepdims=True)
        out = Var(xc @ xc.T / (n - 1))

        def bwd():
            if out.grad is None:
                return
            g = out.grad
            gxc = (g + g.T) @ xc / (n - 1)
            gx = gxc - gxc.mean(axis=1, keepdims=True)
            _acc(f, gx.reshape(c, h, w))

        self._push(bwd)
        return out

    # -- compound helpers --------------------------------------------------

    def average(self, parts: list[Var]) -> Var:
        if not parts:
            raise ValueError("average of an empty list")
        acc = parts[0]
        for p in parts[1:]:
            acc = self.add(acc, p)
        return self.scale(acc, 1.0 / len(parts))


# -- structured backward rules ---------------------------------------------


def build_ktilde(sigma: np.ndarray, clamp: float = EIG_GAP_CLAMP) -> tuple[np.ndarray, int]:
    """Antisymmetric kernel matrix K[i,j] = 1/(sigma_i - sigma_j), 0 on the
    diagonal.  Denominators below ``clamp`` are clamped (keeping their
    sign); exact ties give a zero entry.  Returns (K, #clamped pairs)."""
    d = sigma[:, np.newaxis] - sigma[np.newaxis, :]
    n = sigma.shape[0]
    off = ~np.eye(n, dtype=bool)
    small = off & (np.abs(d) < clamp)
    clamped = int(np.count_nonzero(small)) // 2
    denom = np.sign(d) * np.maximum(np.abs(d), clamp)
    k = np.zeros_like(d)
    np.divide(1.0, denom, out=k, where=off & (denom != 0.0))
    return k, clamped


def backward_eig(ctx: linalg.EigResult, grad_u: np.ndarray, grad_sigma: np.ndarray) -> tuple[np.ndarray, int]:
    """Gradient through Y = U diag(sigma) U^T for symmetric Y.

    Returns (dL/dY, #clamped eigenvalue pairs).  The output is symmetrized,
    which is exactly the derivative of the composite map
    A -> eig((A + A^T)/2) and what finite differences over free entries
    measure.
    """
    u, sigma = ctx
    ktilde, clamped = build_ktilde(sigma)
    h = u.T @ grad_u
    m = ktilde.T * h  # K^T carries the 1/(sigma_j - sigma_i) orientation
    m[np.diag_indices_from(m)] += grad_sigma
    g = u @ m @ u.T
    return (g + g.T) / 2, clamped


def backward_qr(ctx: linalg.QRResult, grad_q: np.ndarray, grad_r: np.ndarray) -> np.ndarray:
    """Gradient through thin QR (positive-diagonal convention).

    Standard rule: with M = R grad_R^T - grad_Q^T Q, copy the strict lower
    triangle of M onto its upper triangle, add grad_Q after projecting
    through Q, and right-solve against R^T.
    """
    q, r = ctx
    diag = np.abs(np.diagonal(r))
    # cheap lower bound first; the SVD-exact condition number only when the
    # diagonal ratio looks suspicious
    if diag.min() == 0.0 or diag.max() / diag.min() > 1e7:
        cond = np.inf if diag.min() == 0.0 else np.linalg.cond(r)
        if cond > 1e8:
            raise NumericError(f"ill-conditioned R in QR backward (cond={cond:.3e})")
    m = r @ grad_r.T - grad_q.T @ q
    lo = np.tril(m, -1)
    s = lo + lo.T + np.diag(np.diagonal(m))
    b = grad_q + q @ s
    return np.linalg.solve(r, b.T).T


# -- finite-difference oracle ------------------------------------------------


@dataclass
class Probe:
    param: str
    index: int
    g_ad: float
    g_fd: float
    rel_err: float
    h: float


@dataclass
class GradCheckReport:
    h: float
    probes: list[Probe] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((p.rel_err for p in self.probes), default=0.0)

    def worst(self) -> Probe | None:
        return max(self.probes, key=lambda p: p.rel_err, default=None)


def grad_check(
    f,
    params: dict[str, np.ndarray],
    n_probes: int = 100,
    seed: int = 0,
    h: float = 1e-5,
    refine: tuple[float, ...] = (),
    refine_above: float = 1e-3,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f(params, tape) -> scalar Var``
    against central finite differences at ``n_probes`` randomly chosen
    scalar parameters.

    Relative error per probe: |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
    Requires 64-bit parameters; the finite-difference oracle needs the
    precision.

    ``refine`` lists smaller step sizes tried (best estimate kept) when a
    probe's relative error at the base step exceeds ``refine_above``.  With
    piecewise-smooth losses (L1 terms, leaky rectifiers) a coarse central
    difference occasionally straddles a kink and measures a chord across
    it rather than the local derivative; shrinking the step isolates the
    kink.  A genuinely wrong gradient disagrees at every step size, so
    refinement cannot mask implementation defects.
    """
    for name, v in params.items():
        if v.dtype != np.float64:
            raise NumericError(f"grad_check requires float64 parameters ({name} is {v.dtype})")

    tape = Tape()
    pvars = {k: tape.leaf(v.copy(), k) for k, v in params.items()}
    out = f(pvars, tape)
    if out.value.ndim != 0:
        raise DimensionError("grad_check needs a scalar-valued function")
    tape.backward(out)
    grads = {}
    for k, pv in pvars.items():
        g = pv.grad if pv.grad is not None else np.zeros_like(pv.value)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {k!r}")
        grads[k] = g

    names = sorted(params)
    sizes = np.array([params[k].size for k in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(n_probes, total), replace=False)

    def eval_at(shifted: dict[str, np.ndarray]) -> float:
        t = Tape(record=False)
        v = f({k: t.leaf(shifted[k], k) for k in shifted}, t)
        val = float(v.value)
        if not np.isfinite(val):
            raise NumericError("non-finite value during finite-difference evaluation")
        return val

    def fd_at(name: str, idx: int, step: float) -> float:
        plus = {k: v.copy() for k, v in params.items()}
        plus[name].flat[idx] += step
        minus = {k: v.copy() for k, v in params.items()}
        minus[name].flat[idx] -= step
        return (eval_at(plus) - eval_at(minus)) / (2 * step)

    def rel_of(g_ad: float, g_fd: float) -> float:
        return abs(g_ad - g_fd) / max(1e-8, abs(g_ad) + abs(g_fd))

    report = GradCheckReport(h=h)
    for flat in sorted(int(p) for p in picks):
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        name = names[which]
        idx = flat - int(offsets[which])
        g_ad = float(grads[name].flat[idx])
        g_fd = fd_at(name, idx, h)
        rel = rel_of(g_ad, g_fd)
        used_h = h
        for h2 in refine:
            if rel <= refine_above:
                break
            g2 = fd_at(name, idx, h2)
            r2 = rel_of(g_ad, g2)
            if r2 < rel:
                g_fd, rel, used_h = g2, r2, h2
        report.probes.append(Probe(name, idx, g_ad, g_fd, rel, used_h))
    return report
