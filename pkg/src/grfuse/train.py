"""Training loop: single-pair Adam steps over round-robin image pairs,
with a CSV telemetry sidecar (per-step losses and the smallest eigengap
seen by any OrthMap call that step)."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .errors import DataError, NumericError
from .loss import LossWeights, SurrogateExtractor, l_total
from .network import NetworkConfig, fuse_forward, init_params, params_to_vars, save_checkpoint
from .pgm import load_pgm
from .tape import Tape

log = logging.getLogger("grfuse")

CSV_COLUMNS = ("step", "loss_total", "loss_int", "loss_grad", "loss_cov", "loss_ssim", "min_eigengap")


@dataclass
class TrainState:
    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    loss_history: list[float] = field(default_factory=list)


def network_config(cfg: RunConfig) -> NetworkConfig:
    return NetworkConfig(block_side=cfg.block_side)


def init_state(cfg: RunConfig) -> tuple[TrainState, NetworkConfig]:
    netcfg = network_config(cfg)
    params = init_params(netcfg, np.random.default_rng(cfg.seed), cfg.dtype)
    zeros = {k: np.zeros_like(v) for k, v in params.items()}
    return TrainState(params, zeros, {k: z.copy() for k, z in zeros.items()}), netcfg


def adam_step(state: TrainState, grads: dict[str, np.ndarray], cfg: RunConfig) -> None:
    state.step += 1
    t = state.step
    b1, b2, eps, lr = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.learning_rate
    for k in sorted(state.params):
        g = grads[k]
        state.m[k] = b1 * state.m[k] + (1 - b1) * g
        state.v[k] = b2 * state.v[k] + (1 - b2) * g * g
        mhat = state.m[k] / (1 - b1**t)
        vhat = state.v[k] / (1 - b2**t)
        state.params[k] -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(state.params[k].dtype)


def load_pairs(data_dir: str) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """Co-registered pairs named <name>_ir.pgm / <name>_vi.pgm."""
    try:
        names = sorted(f[: -len("_ir.pgm")] for f in os.listdir(data_dir) if f.endswith("_ir.pgm"))
    except OSError as exc:
        raise DataError(f"cannot list data directory {data_dir!r}: {exc}") from exc
    if not names:
        raise DataError(f"no *_ir.pgm files in {data_dir!r}")
    pairs = []
    for name in names:
        vi_path = os.path.join(data_dir, f"{name}_vi.pgm")
        if not os.path.exists(vi_path):
            raise DataError(f"missing visible partner for {name!r}")
        ir = load_pgm(os.path.join(data_dir, f"{name}_ir.pgm"))
        vi = load_pgm(vi_path)
        if ir.shape != vi.shape:
            raise DataError(f"pair {name!r} has mismatched shapes {ir.shape} vs {vi.shape}")
        pairs.append((name, ir, vi))
    return pairs


def _crop(ir: np.ndarray, vi: np.ndarray, size: int, rng: np.random.Generator, name: str):
    h, w = ir.shape
    if h < size or w < size:
        raise DataError(f"pair {name!r} is {h}x{w}, smaller than image_size {size}")
    if (h, w) == (size, size):
        return ir, vi
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return ir[top : top + size, left : left + size], vi[top : top + size, left : left + size]


def train(cfg: RunConfig, data_dir: str, out_path: str) -> TrainState:
    """Run cfg.steps Adam iterations and write checkpoint + CSV sidecar."""
    pairs = load_pairs(data_dir)
    state, netcfg = init_state(cfg)
    ext = SurrogateExtractor(cfg.extractor_seed)
    weights = LossWeights(cfg.alpha, cfg.beta, cfg.gamma, cfg.delta)
    crop_rng = np.random.default_rng([cfg.seed, 0xC209])
    log.info("training: %s", cfg.summary())
    log.info("%d pair(s), %d parameters", len(pairs), sum(p.size for p in state.params.values()))

    csv_path = out_path + ".csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for step in range(1, cfg.steps + 1):
            name, ir, vi = pairs[(step - 1) % len(pairs)]
            ir, vi = _crop(ir, vi, cfg.image_size, crop_rng, name)
            ir = ir.astype(cfg.dtype)
            vi = vi.astype(cfg.dtype)

            tape = Tape()
            pvars = params_to_vars(tape, state.params)
            fused = fuse_forward(tape, pvars, ir, vi, netcfg)
            total, comps = l_total(fused, ir, vi, weights, ext, tape=tape)
            total_val = float(total.value)
            if not np.isfinite(total_val):
                raise NumericError(f"non-finite loss at step {step}")
            tape.backward(total)
            grads = {k: (pv.grad if pv.grad is not None else np.zeros_like(pv.value)) for k, pv in pvars.items()}
            adam_step(state, grads, cfg)

            gap = min(tape.eigengaps) if tape.eigengaps else float("nan")
            state.loss_history.append(total_val)
            writer.writerow(
                [step, f"{total_val:.9g}", f"{comps['loss_int']:.9g}", f"{comps['loss_grad']:.9g}",
                 f"{comps['loss_cov']:.9g}", f"{comps['loss_ssim']:.9g}", f"{gap:.6g}"]
            )
            if step % 20 == 0 or step == cfg.steps:
                log.info("step %d/%d loss %.5f (gap %.3g)", step, cfg.steps, total_val, gap)

    save_checkpoint(out_path, state.params, netcfg, cfg.extractor_seed)
    return state
