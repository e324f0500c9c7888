"""Grassmann-embedded attention: intra-modal (GSSM) and cross-modal (GSCM)
blocks in channel and spatial variants.

Channel attention correlates feature channels (Q^T K, d x d); spatial
attention correlates token positions (Q K^T) and is computed independently
inside each b x b block after the shuffle permutation groups a block's
tokens contiguously - that locality is the whole point of the shuffle: a
global position attention would be permutation-equivariant and the shuffle
a no-op.

The raw attention matrix S is pushed through the Grassmann pipeline
Proj -> OrthMap -> FRMap -> ReOrth -> Proj, giving one rank-q projector per
subspace coefficient; those projectors (optionally masked by the
cross-modal strategy) are softmaxed and combined with V, then averaged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import manifold
from .errors import DimensionError
from .tape import Tape, Var

CHANNEL_SUBSPACES = (2, 3, 4, 5)
SPATIAL_SUBSPACE_LIMIT = 100


@dataclass
class TokenGrid:
    """(h*w) x d row-major token matrix plus its spatial bookkeeping."""

    tokens: Var
    h: int
    w: int


@dataclass
class BlockParams:
    """Learnable state of one attention block (all entries are Vars)."""

    wq: Var
    wk: Var
    wv: Var
    frmaps: dict[int, Var]  # subspace coefficient -> full-rank map weight
    mlp_w1: Var
    mlp_b1: Var
    mlp_w2: Var
    mlp_b2: Var
    ln1_g: Var
    ln1_b: Var
    ln2_g: Var
    ln2_b: Var


def cms_mask(n: int) -> np.ndarray:
    """+1 diagonal, -1 off-diagonal; multiplying by it is exact."""
    m = -np.ones((n, n))
    np.fill_diagonal(m, 1.0)
    return m


def apply_cms_mask(sigma, tape: Tape | None = None):
    """Negate off-diagonal attention entries, keep the diagonal.

    Low cross-modal correlation (complementary content) is amplified
    relative to redundant high-correlation entries.
    """
    val = sigma.value if isinstance(sigma, Var) else np.asarray(sigma)
    if val.ndim != 2 or val.shape[0] != val.shape[1]:
        raise DimensionError(f"CMS mask needs a square matrix, got {val.shape}")
    m = cms_mask(val.shape[0]).astype(val.dtype)
    if isinstance(sigma, Var):
        return tape.mul_const(sigma, m)
    return val * m


def block_perm(h: int, w: int, b: int) -> np.ndarray:
    """Permutation taking row-major tokens to contiguous b x b blocks."""
    if b < 1 or h % b or w % b:
        raise DimensionError(f"block side {b} must divide extents ({h}, {w})")
    idx = np.arange(h * w).reshape(h, w)
    tiles = idx.reshape(h // b, b, w // b, b).transpose(0, 2, 1, 3)
    return tiles.reshape(-1)


def block_shuffle(x: TokenGrid, b: int, tape: Tape) -> TokenGrid:
    return TokenGrid(tape.permute_rows(x.tokens, block_perm(x.h, x.w, b)), x.h, x.w)


def block_unshuffle(x: TokenGrid, b: int, tape: Tape) -> TokenGrid:
    inv = np.argsort(block_perm(x.h, x.w, b))
    return TokenGrid(tape.permute_rows(x.tokens, inv), x.h, x.w)


def qkv_project(x_norm: Var, p: BlockParams, tape: Tape) -> tuple[Var, Var, Var]:
    """Project already-normalized tokens to query/key/value matrices."""
    if x_norm.value.shape[1] != p.wq.value.shape[0]:
        raise DimensionError(
            f"token dim {x_norm.value.shape[1]} vs projection {p.wq.value.shape}"
        )
    return tape.matmul(x_norm, p.wq), tape.matmul(x_norm, p.wk), tape.matmul(x_norm, p.wv)


def grassmann_attention_matrix(q: Var, k: Var, mode: str, q_coeff: int, tape: Tape) -> Var:
    """OrthMap(Proj(S)): top-q_coeff eigenbasis of S S^T.

    S = Q^T K over channels, or S = Q K^T over positions; S S^T is
    symmetric PSD by construction, which is what puts the attention matrix
    on the manifold.
    """
    if mode == "channel":
        s = tape.matmul(tape.transpose(q), k)
    elif mode == "spatial":
        s = tape.matmul(q, tape.transpose(k))
    else:
        raise ValueError(f"unknown attention mode {mode!r}")
    base = tape.gram(s)
    return manifold.orth_map(base, q_coeff, tape=tape)


def subspace_transform(basis: Var, w: Var, tape: Tape) -> Var:
    """Proj(ReOrth(FRMap(basis))): a rank-q projector in the original
    attention dimensionality."""
    return manifold.proj_map(manifold.reorth(manifold.fr_map(basis, w, tape=tape), tape=tape), tape=tape)


def attention_apply(a_primes: list[Var], v: Var, d_inp: int, masked: bool, mode: str, tape: Tape) -> Var:
    """Scale, (optionally CMS-mask,) softmax and combine each projector
    with V, then average over subspace coefficients."""
    if not a_primes:
        raise ValueError("attention_apply needs at least one subspace output")
    outs = []
    inv_sqrt_d = 1.0 / float(np.sqrt(d_inp))
    for a in a_primes:
        if masked:
            a = apply_cms_mask(a, tape=tape)
        p = tape.softmax_rows(tape.scale(a, inv_sqrt_d))
        outs.append(tape.matmul(v, p) if mode == "channel" else tape.matmul(p, v))
    return tape.average(outs)


def _subspace_coefficients(mode: str, n_tokens: int) -> tuple[int, ...]:
    if mode == "channel":
        return CHANNEL_SUBSPACES
    return (min(SPATIAL_SUBSPACE_LIMIT, n_tokens),)


def _attention_value(kv_norm: Var, q_norm: Var, p: BlockParams, mode: str, masked: bool, tape: Tape) -> Var:
    """One attention unit over one token group (full grid or one block)."""
    d = kv_norm.value.shape[1]
    qm = tape.matmul(q_norm, p.wq)
    km = tape.matmul(kv_norm, p.wk)
    vm = tape.matmul(kv_norm, p.wv)
    a_primes = []
    for coeff in _subspace_coefficients(mode, kv_norm.value.shape[0]):
        basis = grassmann_attention_matrix(qm, km, mode, coeff, tape)
        a_primes.append(subspace_transform(basis, p.frmaps[coeff], tape))
    return attention_apply(a_primes, vm, d, masked, mode, tape)


def transformer_block(
    x: TokenGrid,
    p: BlockParams,
    kind: str,
    mode: str,
    x_other: TokenGrid | None = None,
    block_side: int = 8,
    tape: Tape | None = None,
) -> TokenGrid:
    """Pre-norm residual attention + MLP (GSSM self / GSCM cross).

    GSCM takes its queries from the other modality's tokens and applies the
    CMS mask; GSSM ignores ``x_other`` entirely.  Spatial mode shuffles into
    b x b blocks on entry and restores the order on exit.
    """
    if kind not in ("gssm", "gscm"):
        raise ValueError(f"unknown block kind {kind!r}")
    if mode not in ("channel", "spatial"):
        raise ValueError(f"unknown attention mode {mode!r}")
    cross = kind == "gscm"
    if cross and x_other is None:
        raise ValueError("GSCM needs the other modality's tokens")

    if mode == "spatial":
        x = block_shuffle(x, block_side, tape)
        if cross:
            x_other = block_shuffle(x_other, block_side, tape)

    tokens = x.tokens
    n = tokens.value.shape[0]
    xn = tape.layer_norm(tokens, p.ln1_g, p.ln1_b)
    qsrc = tape.layer_norm(x_other.tokens, p.ln1_g, p.ln1_b) if cross else xn

    if mode == "channel":
        att = _attention_value(xn, qsrc, p, mode, cross, tape)
    else:
        nb = block_side * block_side
        kv_blocks = tape.split_rows(xn, nb) if n > nb else [xn]
        q_blocks = (tape.split_rows(qsrc, nb) if n > nb else [qsrc]) if cross else kv_blocks
        parts = [
            _attention_value(kv_b, q_b, p, mode, cross, tape)
            for kv_b, q_b in zip(kv_blocks, q_blocks)
        ]
        att = tape.concat_rows(parts) if len(parts) > 1 else parts[0]

    tokens = tape.add(tokens, att)

    xn2 = tape.layer_norm(tokens, p.ln2_g, p.ln2_b)
    hidden = tape.silu(tape.add_rowvec(tape.matmul(xn2, p.mlp_w1), p.mlp_b1))
    mlp = tape.add_rowvec(tape.matmul(hidden, p.mlp_w2), p.mlp_b2)
    tokens = tape.add(tokens, mlp)

    out = TokenGrid(tokens, x.h, x.w)
    if mode == "spatial":
        out = block_unshuffle(out, block_side, tape)
    return out
