"""End-to-end fusion network: conv encoders, four parallel Grassmann
transformer branches, channel concatenation, conv decoder.

Branch layout: the two modality streams enter every branch; GSSM branches
process them independently, GSCM branches cross them (queries exchanged,
CMS mask active).  Each branch averages its two stream outputs into one
d_model-channel map so the four concatenated branch outputs feed the
decoder's fixed 4 * d_model = 256 input channels.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import attention, container
from .attention import BlockParams, TokenGrid
from .errors import DimensionError, FormatError
from .manifold import init_frmap_weight
from .tape import Tape, Var

BRANCHES = (
    ("gssm_c", "gssm", "channel"),
    ("gssm_s", "gssm", "spatial"),
    ("gscm_c", "gscm", "channel"),
    ("gscm_s", "gscm", "spatial"),
)


@dataclass
class NetworkConfig:
    d_model: int = 64
    heads: int = 8  # bookkeeping only: projections are full d x d matrices
    channel_subspaces: tuple[int, ...] = (2, 3, 4, 5)
    spatial_subspace: int = 100  # clamped to the per-block token count
    block_side: int = 8
    encoder_channels: tuple[int, ...] = (1, 32, 64)
    decoder_channels: tuple[int, ...] = (256, 192, 128, 64, 1)

    def __post_init__(self):
        if self.decoder_channels[0] != 4 * self.d_model:
            raise DimensionError(
                f"decoder expects {4 * self.d_model} input channels, "
                f"config says {self.decoder_channels[0]}"
            )
        if self.encoder_channels[-1] != self.d_model:
            raise DimensionError("encoder must emit d_model channels")

    @property
    def spatial_coeff(self) -> int:
        return min(self.spatial_subspace, self.block_side * self.block_side)

    def coeffs(self, mode: str) -> tuple[int, ...]:
        return self.channel_subspaces if mode == "channel" else (self.spatial_coeff,)

    def to_json_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        for key in ("channel_subspaces", "encoder_channels", "decoder_channels"):
            d[key] = tuple(d[key])
        return cls(**d)


def _xavier(rng, shape, fan_in, fan_out, dtype):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape).astype(dtype)


def init_params(cfg: NetworkConfig, rng: np.random.Generator, dtype=np.float64) -> dict[str, np.ndarray]:
    """Draw all learnable tensors in a fixed order (seed-reproducible)."""
    p: dict[str, np.ndarray] = {}
    d = cfg.d_model

    def conv(name, cout, cin):
        p[f"{name}.w"] = _xavier(rng, (cout, cin, 3, 3), cin * 9, cout * 9, dtype)
        p[f"{name}.b"] = np.zeros(cout, dtype)

    for stream in ("enc_ir", "enc_vi"):
        chans = cfg.encoder_channels
        for i in range(len(chans) - 1):
            conv(f"{stream}.c{i + 1}", chans[i + 1], chans[i])

    for name, _, mode in BRANCHES:
        for wname in ("wq", "wk", "wv"):
            p[f"{name}.{wname}"] = _xavier(rng, (d, d), d, d, dtype)
        frdim = d if mode == "channel" else cfg.block_side * cfg.block_side
        for c in cfg.coeffs(mode):
            p[f"{name}.fr{c}"] = init_frmap_weight(frdim, frdim, rng).astype(dtype)
        p[f"{name}.mlp.w1"] = _xavier(rng, (d, 4 * d), d, 4 * d, dtype)
        p[f"{name}.mlp.b1"] = np.zeros(4 * d, dtype)
        p[f"{name}.mlp.w2"] = _xavier(rng, (4 * d, d), 4 * d, d, dtype)
        p[f"{name}.mlp.b2"] = np.zeros(d, dtype)
        for ln in ("ln1", "ln2"):
            p[f"{name}.{ln}.g"] = np.ones(d, dtype)
            p[f"{name}.{ln}.b"] = np.zeros(d, dtype)

    chans = cfg.decoder_channels
    for i in range(len(chans) - 1):
        conv(f"dec.c{i + 1}", chans[i + 1], chans[i])
    return p


def params_to_vars(tape: Tape, params: dict[str, np.ndarray]) -> dict[str, Var]:
    return {k: tape.leaf(v, k) for k, v in params.items()}


def block_view(pvars: dict[str, Var], name: str, cfg: NetworkConfig, mode: str) -> BlockParams:
    return BlockParams(
        wq=pvars[f"{name}.wq"],
        wk=pvars[f"{name}.wk"],
        wv=pvars[f"{name}.wv"],
        frmaps={c: pvars[f"{name}.fr{c}"] for c in cfg.coeffs(mode)},
        mlp_w1=pvars[f"{name}.mlp.w1"],
        mlp_b1=pvars[f"{name}.mlp.b1"],
        mlp_w2=pvars[f"{name}.mlp.w2"],
        mlp_b2=pvars[f"{name}.mlp.b2"],
        ln1_g=pvars[f"{name}.ln1.g"],
        ln1_b=pvars[f"{name}.ln1.b"],
        ln2_g=pvars[f"{name}.ln2.g"],
        ln2_b=pvars[f"{name}.ln2.b"],
    )


def encode(tape: Tape, img: np.ndarray, pvars: dict[str, Var], stream: str) -> TokenGrid:
    """Two 3x3 convs with leaky rectifiers, then one token per pixel."""
    if img.ndim != 2:
        raise DimensionError(f"encoder expects a grayscale h x w image, got {img.shape}")
    h, w = img.shape
    x = tape.leaf(img[np.newaxis])
    n_convs = len([k for k in pvars if k.startswith(f"{stream}.c") and k.endswith(".w")])
    for i in range(1, n_convs + 1):
        x = tape.leaky_relu(tape.conv2d(x, pvars[f"{stream}.c{i}.w"], pvars[f"{stream}.c{i}.b"]), 0.2)
    return TokenGrid(tape.image_to_tokens(x), h, w)


def decode(tape: Tape, feats: Var, pvars: dict[str, Var], cfg: NetworkConfig) -> Var:
    """Progressive channel compression 256->192->128->64->1, sigmoid squash."""
    if feats.value.shape[0] != cfg.decoder_channels[0]:
        raise DimensionError(
            f"decoder got {feats.value.shape[0]} channels, needs {cfg.decoder_channels[0]}"
        )
    x = feats
    n = len(cfg.decoder_channels) - 1
    for i in range(1, n + 1):
        x = tape.conv2d(x, pvars[f"dec.c{i}.w"], pvars[f"dec.c{i}.b"])
        if i < n:
            x = tape.leaky_relu(x, 0.2)
    x = tape.sigmoid(x)
    _, h, w = x.value.shape
    return tape.reshape(x, (h, w))


def fuse_forward(tape: Tape, pvars: dict[str, Var], ir: np.ndarray, vi: np.ndarray, cfg: NetworkConfig) -> Var:
    """Full fusion pass: encode both streams, run the four branches,
    concatenate and decode to an [0,1] image of the input extent."""
    if ir.shape != vi.shape:
        raise DimensionError(f"modality shapes disagree: {ir.shape} vs {vi.shape}")
    h, w = ir.shape
    if h % cfg.block_side or w % cfg.block_side:
        raise DimensionError(f"extents {ir.shape} not divisible by block side {cfg.block_side}")

    t_ir = encode(tape, ir, pvars, "enc_ir")
    t_vi = encode(tape, vi, pvars, "enc_vi")

    branch_maps: list[Var] = []
    for name, kind, mode in BRANCHES:
        bp = block_view(pvars, name, cfg, mode)
        if kind == "gssm":
            o_ir = attention.transformer_block(t_ir, bp, kind, mode, block_side=cfg.block_side, tape=tape)
            o_vi = attention.transformer_block(t_vi, bp, kind, mode, block_side=cfg.block_side, tape=tape)
        else:
            o_ir = attention.transformer_block(t_ir, bp, kind, mode, x_other=t_vi, block_side=cfg.block_side, tape=tape)
            o_vi = attention.transformer_block(t_vi, bp, kind, mode, x_other=t_ir, block_side=cfg.block_side, tape=tape)
        merged = tape.scale(tape.add(o_ir.tokens, o_vi.tokens), 0.5)
        branch_maps.append(tape.tokens_to_image(merged, h, w))

    feats = tape.concat_channels(branch_maps)
    return decode(tape, feats, pvars, cfg)


def fuse_image(params: dict[str, np.ndarray], cfg: NetworkConfig, ir: np.ndarray, vi: np.ndarray) -> np.ndarray:
    """Forward-only fusion on a throwaway non-recording tape."""
    tape = Tape(record=False)
    return fuse_forward(tape, params_to_vars(tape, params), ir, vi, cfg).value


def structurally_dead_params(cfg: NetworkConfig) -> set[str]:
    """Parameters whose gradient is provably zero at this configuration.

    When the spatial subspace coefficient equals the per-block token count,
    the spatial Grassmann pipeline returns the full-space projector (the
    identity) for any input, so the spatial wq/wk/fr weights cannot affect
    the output.
    """
    if cfg.spatial_coeff < cfg.block_side * cfg.block_side:
        return set()
    dead = set()
    for name, _, mode in BRANCHES:
        if mode == "spatial":
            dead.update({f"{name}.wq", f"{name}.wk", f"{name}.fr{cfg.spatial_coeff}"})
    return dead


# -- checkpoint persistence ---------------------------------------------------


def save_checkpoint(path: str, params: dict[str, np.ndarray], cfg: NetworkConfig, extractor_seed: int) -> None:
    """Persist config, extractor seed and every named parameter (GRF1)."""
    container.save_tensors(
        path, {"kind": "checkpoint", "config": cfg.to_json_dict(), "extractor_seed": int(extractor_seed)}, params
    )


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], NetworkConfig, int]:
    meta, params = container.load_tensors(path)
    if meta.get("kind") != "checkpoint" or "config" not in meta:
        raise FormatError("container is not a network checkpoint")
    return params, NetworkConfig.from_json_dict(meta["config"]), int(meta["extractor_seed"])
