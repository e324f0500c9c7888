"""Seeded synthetic image pairs for desk-scale training and tests.

The infrared channel is a bright soft-edged disc on a dark background (a
stand-in thermal target); the visible channel is an oriented sinusoidal
grating (texture).  A fusion that tracks max(ir, vi) must keep the disc
bright and reproduce the grating's gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class SyntheticPair:
    ir: np.ndarray
    vi: np.ndarray
    disc_mask: np.ndarray  # interior of the bright disc


def make_synthetic_pairs(n: int, size: int, seed: int = 0) -> list[SyntheticPair]:
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    pairs = []
    for _ in range(n):
        cx, cy = rng.uniform(0.35 * size, 0.65 * size, 2)
        r = rng.uniform(0.18 * size, 0.28 * size)
        peak = rng.uniform(0.82, 0.95)
        bg = rng.uniform(0.08, 0.14)
        dist = np.hypot(xx - cx, yy - cy)
        ir = bg + (peak - bg) / (1.0 + np.exp((dist - r) / (0.04 * size)))

        theta = rng.uniform(0, np.pi)
        cycles = rng.uniform(3.0, 7.0)
        phase = rng.uniform(0, 2 * np.pi)
        carrier = (np.cos(theta) * xx + np.sin(theta) * yy) * (2 * np.pi * cycles / size)
        vi = 0.5 + 0.35 * np.sin(carrier + phase)

        pairs.append(SyntheticPair(ir=ir, vi=vi, disc_mask=dist <= 0.9 * r))
    return pairs
