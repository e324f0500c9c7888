"""Detail-semantic complementary loss: intensity, gradient, deep-feature
covariance, and structural-similarity terms with weights (1, 2, 10, 1).

The covariance term compares channel covariances of deep features of the
fused image against the infrared input only (as the objective is stated).
Features come from a frozen, seed-reproducible convolutional stack - a
documented stand-in for a pretrained VGG-16, which would be external
heavyweight state; the covariance statistics only need a fixed deep
feature map.  The extractor seed travels inside checkpoints, and
externally supplied weights in the GRF1 container format are accepted for
anyone wanting parity with some other extractor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import container
from .errors import DegenerateSampleError, DimensionError
from .tape import Tape, Var

DEFAULT_EXTRACTOR_SEED = 1234

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class LossWeights:
    alpha: float = 1.0  # gradient term
    beta: float = 2.0  # covariance term
    gamma: float = 10.0  # ssim term
    delta: float = 1.0  # ir/vi balance inside the ssim term

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma, self.delta) < 0:
            raise ValueError("loss weights must be non-negative")


class SurrogateExtractor:
    """Four frozen conv blocks (conv-rectifier-conv-rectifier-avgpool),
    channels 1->16->32->64->64.

    ``l_cov`` consumes the pre-pool activations of blocks 3 and 4: at the
    minimum supported image size of 16x16 those are 4x4 and 2x2 maps, so a
    covariance over spatial samples is still defined.  Rectifiers are leaky
    (slope 0.2).  Same seed => identical weights, forever.
    """

    CHANNELS = (1, 16, 32, 64, 64)
    TAPS = (3, 4)

    def __init__(self, seed: int = DEFAULT_EXTRACTOR_SEED, weights: dict[str, np.ndarray] | None = None):
        self.seed = int(seed)
        if weights is not None:
            self.weights = {k: np.asarray(v, np.float64) for k, v in weights.items()}
            self._validate()
            return
        rng = np.random.default_rng(self.seed)
        w: dict[str, np.ndarray] = {}
        for b in range(1, 5):
            cin, cout = self.CHANNELS[b - 1], self.CHANNELS[b]
            for j, (ci, co) in enumerate(((cin, cout), (cout, cout)), start=1):
                a = np.sqrt(6.0 / ((ci + co) * 9))
                w[f"b{b}.c{j}.w"] = rng.uniform(-a, a, size=(co, ci, 3, 3))
                w[f"b{b}.c{j}.b"] = np.zeros(co)
        self.weights = w

    def _validate(self):
        for b in range(1, 5):
            for j in (1, 2):
                if f"b{b}.c{j}.w" not in self.weights:
                    raise DimensionError(f"extractor weights missing b{b}.c{j}.w")

    @classmethod
    def from_file(cls, path: str) -> "SurrogateExtractor":
        """Load externally supplied extractor weights (GRF1 container)."""
        meta, params = container.load_tensors(path)
        return cls(seed=int(meta.get("extractor_seed", -1)), weights=params)

    def features(self, tape: Tape, img: Var) -> dict[int, Var]:
        """Pre-pool activations of the tapped blocks for an (h, w) image."""
        h, w = img.value.shape
        if h < 16 or w < 16:
            raise DimensionError(f"extractor needs h,w >= 16 to reach block 4, got {img.value.shape}")
        dt = img.value.dtype
        x = tape.reshape(img, (1, h, w))
        taps: dict[int, Var] = {}
        for b in range(1, 5):
            for j in (1, 2):
                wk = self.weights[f"b{b}.c{j}.w"].astype(dt)
                bk = self.weights[f"b{b}.c{j}.b"].astype(dt)
                x = tape.leaky_relu(tape.conv2d(x, wk, bk), 0.2)
            if b in self.TAPS:
                taps[b] = x
            if b < 4:
                x = tape.avg_pool2(x)
        return taps


def _as_var(tape: Tape, x) -> Var:
    return x if isinstance(x, Var) else tape.leaf(np.asarray(x))


def _check_pair_shapes(f, *others):
    fshape = f.value.shape if isinstance(f, Var) else np.asarray(f).shape
    for o in others:
        oshape = o.value.shape if isinstance(o, Var) else np.asarray(o).shape
        if oshape != fshape:
            raise DimensionError(f"image shapes disagree: {fshape} vs {oshape}")


def l_int(f, ir, vi, tape: Tape | None = None):
    """Mean L1 distance between f and the pixelwise max of the inputs."""
    if not isinstance(f, Var):
        t = Tape(record=False)
        return float(l_int(t.leaf(np.asarray(f)), ir, vi, tape=t).value)
    _check_pair_shapes(f, ir, vi)
    target = np.maximum(np.asarray(ir), np.asarray(vi)).astype(f.value.dtype)
    return tape.mean(tape.abs(tape.sub(f, target)))


def l_grad(f, ir, vi, tape: Tape | None = None):
    """Mean L1 distance between |grad f| and max(|grad ir|, |grad vi|)."""
    if not isinstance(f, Var):
        t = Tape(record=False)
        return float(l_grad(t.leaf(np.asarray(f)), ir, vi, tape=t).value)
    _check_pair_shapes(f, ir, vi)
    from .linalg import sobel_mag

    target = np.maximum(sobel_mag(np.asarray(ir)), sobel_mag(np.asarray(vi))).astype(f.value.dtype)
    return tape.mean(tape.abs(tape.sub(tape.sobel_abs(f), target)))


def channel_covariance(feat, tape: Tape | None = None):
    """Covariance over channels with spatial positions as samples."""
    if not isinstance(feat, Var):
        t = Tape(record=False)
        return channel_covariance(t.leaf(np.asarray(feat)), tape=t).value
    if feat.value.ndim != 3:
        raise DimensionError(f"expected (c, h, w) features, got {feat.value.shape}")
    if feat.value.shape[1] * feat.value.shape[2] < 2:
        raise DegenerateSampleError("covariance needs at least 2 spatial samples")
    return tape.channel_covariance(feat)


def l_cov(f, ir, ext: SurrogateExtractor, tape: Tape | None = None):
    """Sum over tapped blocks of the entrywise L1 distance between channel
    covariances of deep features of f and of ir (ir only, as stated)."""
    if not isinstance(f, Var):
        t = Tape(record=False)
        return float(l_cov(t.leaf(np.asarray(f)), ir, ext, tape=t).value)
    _check_pair_shapes(f, ir)
    feats_f = ext.features(tape, f)

    ref_tape = Tape(record=False)
    feats_ir = ext.features(ref_tape, ref_tape.leaf(np.asarray(ir, f.value.dtype)))

    total = None
    for b in ext.TAPS:
        cov_f = tape.channel_covariance(feats_f[b])
        cov_ir = channel_covariance(feats_ir[b].value)
        term = tape.sum(tape.abs(tape.sub(cov_f, cov_ir.astype(f.value.dtype))))
        total = term if total is None else tape.add(total, term)
    return total


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(x, y, tape: Tape | None = None):
    """Mean local SSIM, 11x11 Gaussian window (sigma 1.5), K1/K2 = .01/.03,
    dynamic range 1; the window is applied in valid mode."""
    if not isinstance(x, Var) and not isinstance(y, Var):
        t = Tape(record=False)
        return float(ssim(t.leaf(np.asarray(x, np.float64)), np.asarray(y, np.float64), tape=t).value)
    _check_pair_shapes(x if isinstance(x, Var) else y, y if isinstance(x, Var) else x)
    xv = x if isinstance(x, Var) else tape.leaf(np.asarray(x))
    yv = y if isinstance(y, Var) else tape.leaf(np.asarray(y))
    h, w = xv.value.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise DimensionError(f"ssim needs h,w >= {SSIM_WINDOW}, got {xv.value.shape}")
    win = gaussian_window().astype(xv.value.dtype)
    c1 = np.asarray(SSIM_K1**2, xv.value.dtype)
    c2 = np.asarray(SSIM_K2**2, xv.value.dtype)

    mu1 = tape.filter2_valid(xv, win)
    mu2 = tape.filter2_valid(yv, win)
    s11 = tape.sub(tape.filter2_valid(tape.mul(xv, xv), win), tape.mul(mu1, mu1))
    s22 = tape.sub(tape.filter2_valid(tape.mul(yv, yv), win), tape.mul(mu2, mu2))
    s12 = tape.sub(tape.filter2_valid(tape.mul(xv, yv), win), tape.mul(mu1, mu2))

    num = tape.mul(tape.add_const(tape.scale(tape.mul(mu1, mu2), 2.0), c1), tape.add_const(tape.scale(s12, 2.0), c2))
    den = tape.mul(
        tape.add_const(tape.add(tape.mul(mu1, mu1), tape.mul(mu2, mu2)), c1),
        tape.add_const(tape.add(s11, s22), c2),
    )
    return tape.mean(tape.div(num, den))


def l_ssim(f, ir, vi, delta: float = 1.0, tape: Tape | None = None):
    """(1 - SSIM(f, vi)) + delta * (1 - SSIM(f, ir))."""
    if not isinstance(f, Var):
        t = Tape(record=False)
        return float(l_ssim(t.leaf(np.asarray(f)), ir, vi, delta, tape=t).value)
    one = np.asarray(1.0, f.value.dtype)
    term_vi = tape.add_const(tape.scale(ssim(f, np.asarray(vi, f.value.dtype), tape=tape), -1.0), one)
    term_ir = tape.add_const(tape.scale(ssim(f, np.asarray(ir, f.value.dtype), tape=tape), -1.0), one)
    return tape.add(term_vi, tape.scale(term_ir, delta))


def l_total(f, ir, vi, weights: LossWeights, ext: SurrogateExtractor, tape: Tape | None = None):
    """Weighted sum of the four terms.

    Returns (total Var, components dict of plain floats) when recording;
    a plain float total when called with arrays.
    """
    if not isinstance(f, Var):
        t = Tape(record=False)
        total, _ = l_total(t.leaf(np.asarray(f)), ir, vi, weights, ext, tape=t)
        return float(total.value)
    li = l_int(f, ir, vi, tape=tape)
    lg = l_grad(f, ir, vi, tape=tape)
    lc = l_cov(f, ir, ext, tape=tape)
    ls = l_ssim(f, ir, vi, weights.delta, tape=tape)
    total = tape.add(
        tape.add(li, tape.scale(lg, weights.alpha)),
        tape.add(tape.scale(lc, weights.beta), tape.scale(ls, weights.gamma)),
    )
    comps = {
        "loss_int": float(li.value),
        "loss_grad": float(lg.value),
        "loss_cov": float(lc.value),
        "loss_ssim": float(ls.value),
    }
    return total, comps
