"""Command-line tool: train, fuse, eval, gradcheck.

Exit codes: 0 success, 1 check failure (gradcheck tolerance exceeded),
2 config/usage error, 3 data error, 4 numeric error, 5 file-format error.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .config import RunConfig, load_config
from .errors import ConfigError, DataError, DimensionError, FormatError, NumericError
from .loss import LossWeights, SurrogateExtractor, l_total
from .metrics import evaluate
from .network import NetworkConfig, fuse_image, init_params, load_checkpoint
from .pgm import load_pgm, save_pgm
from .synth import make_synthetic_pairs
from .tape import grad_check
from .train import train

log = logging.getLogger("grfuse")

LAYER_TOL = 1e-5
FULL_TOL = 1e-2


def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.steps is not None:
        cfg.steps = args.steps
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()
    train(cfg, args.data, args.out)
    log.info("checkpoint written to %s (telemetry: %s.csv)", args.out, args.out)
    return 0


def cmd_fuse(args) -> int:
    params, netcfg, _ = load_checkpoint(args.ckpt)
    ir = load_pgm(args.ir)
    vi = load_pgm(args.vi)
    if ir.shape != vi.shape:
        raise DataError(f"image sizes disagree: {ir.shape} vs {vi.shape}")
    dtype = next(iter(params.values())).dtype
    fused = fuse_image(params, netcfg, ir.astype(dtype), vi.astype(dtype))
    save_pgm(fused.astype(np.float64), args.out)
    log.info("fused image written to %s", args.out)
    return 0


def cmd_eval(args) -> int:
    fused = load_pgm(args.fused)
    ir = load_pgm(args.ir)
    vi = load_pgm(args.vi)
    if not (fused.shape == ir.shape == vi.shape):
        raise DataError(f"image sizes disagree: {fused.shape}, {ir.shape}, {vi.shape}")
    for line in evaluate(fused, ir, vi).lines():
        print(line)
    return 0


def _eig_layer_report(seed: int):
    rng = np.random.default_rng([seed, 1])
    q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
    lam = np.arange(8, 0, -1) * 0.35 + rng.uniform(0, 0.1, 8)  # gaps >= 0.1
    a = q @ np.diag(np.sort(lam)[::-1]) @ q.T
    cu = rng.standard_normal((8, 8))
    cs = rng.standard_normal(8)

    def f(p, t):
        u, s = t.sym_eig(p["a"])
        return t.add(t.sum(t.mul_const(u, cu)), t.sum(t.mul_const(s, cs)))

    return grad_check(f, {"a": (a + a.T) / 2}, n_probes=64, seed=seed, h=1e-5)


def _qr_layer_report(seed: int):
    rng = np.random.default_rng([seed, 2])
    a = rng.standard_normal((6, 3))
    cq = rng.standard_normal((6, 3))
    cr = rng.standard_normal((3, 3))

    def f(p, t):
        qv, rv = t.thin_qr(p["a"])
        return t.add(t.sum(t.mul_const(qv, cq)), t.sum(t.mul_const(rv, cr)))

    return grad_check(f, {"a": a}, n_probes=18, seed=seed, h=1e-5)


def _full_network_report(seed: int, n_probes: int):
    netcfg = NetworkConfig()
    params = init_params(netcfg, np.random.default_rng(seed), np.float64)
    pair = make_synthetic_pairs(1, 16, seed=seed)[0]
    ext = SurrogateExtractor()
    weights = LossWeights()

    def f(p, t):
        from .network import fuse_forward

        fused = fuse_forward(t, p, pair.ir, pair.vi, netcfg)
        return l_total(fused, pair.ir, pair.vi, weights, ext, tape=t)[0]

    # refinement guards against the L1/leaky-rectifier kinks in the loss:
    # a coarse step straddling one measures a chord, not the derivative
    return grad_check(f, params, n_probes=n_probes, seed=seed, h=1e-4, refine=(2.5e-5, 6.25e-6))


def cmd_gradcheck(args) -> int:
    """Isolated eig/QR layer checks at 1e-5, full-loss check at 1e-2."""
    ok = True
    for label, report, tol in (
        ("OrthMap/EIG layer (8x8)", _eig_layer_report(args.seed), LAYER_TOL),
        ("ReOrth/QR layer (6x3)", _qr_layer_report(args.seed), LAYER_TOL),
    ):
        passed = report.max_rel_err <= tol
        ok &= passed
        print(f"{label}: max rel err {report.max_rel_err:.3e} over {len(report.probes)} probes "
              f"(h={report.h:g}, tol {tol:g}): {'PASS' if passed else 'FAIL'}")
        if not passed:
            worst = report.worst()
            print(f"  worst: {worst.param}[{worst.index}] ad={worst.g_ad:.6e} fd={worst.g_fd:.6e}")

    full = _full_network_report(args.seed, args.probes)
    for p in full.probes:
        print(f"probe {p.param}[{p.index}] ad={p.g_ad:.6e} fd={p.g_fd:.6e} rel={p.rel_err:.3e} h={p.h:g}")
    passed = full.max_rel_err <= FULL_TOL
    ok &= passed
    print(f"full L_total (16x16 pair): max rel err {full.max_rel_err:.3e} over "
          f"{len(full.probes)} probes (h={full.h:g}, tol {FULL_TOL:g}): {'PASS' if passed else 'FAIL'}")
    if not passed:
        offenders = sorted({p.param for p in full.probes if p.rel_err > FULL_TOL})
        print("offending parameters: " + ", ".join(offenders))
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="grfuse", description="Grassmann-attention infrared/visible image fusion")
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train on paired <name>_ir.pgm / <name>_vi.pgm images")
    t.add_argument("--config", help="key = value config file")
    t.add_argument("--data", required=True, help="directory with paired PGM images")
    t.add_argument("--out", required=True, help="checkpoint output path")
    t.add_argument("--steps", type=int, help="override config steps")
    t.add_argument("--seed", type=int, help="override config seed")
    t.set_defaults(fn=cmd_train)

    f = sub.add_parser("fuse", help="fuse one infrared/visible pair")
    f.add_argument("--ckpt", required=True)
    f.add_argument("--ir", required=True)
    f.add_argument("--vi", required=True)
    f.add_argument("--out", required=True)
    f.set_defaults(fn=cmd_fuse)

    e = sub.add_parser("eval", help="fusion quality metrics as key=value lines")
    e.add_argument("--fused", required=True)
    e.add_argument("--ir", required=True)
    e.add_argument("--vi", required=True)
    e.set_defaults(fn=cmd_eval)

    g = sub.add_parser("gradcheck", help="structured backward vs finite differences")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--probes", type=int, default=100)
    g.set_defaults(fn=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 2
    except DataError as exc:
        log.error("data error: %s", exc)
        return 3
    except NumericError as exc:
        log.error("numeric error: %s", exc)
        return 4
    except FormatError as exc:
        log.error("format error: %s", exc)
        return 5
    except DimensionError as exc:
        log.error("dimension error: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
