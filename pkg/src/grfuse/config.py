"""Run configuration: plain-text ``key = value`` files with ``#`` comments.

Unknown keys are rejected (typos should fail loudly, not train silently
with defaults).  Absent keys take the defaults below.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError


@dataclass
class RunConfig:
    image_size: int = 64
    steps: int = 200
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    alpha: float = 1.0
    beta: float = 2.0
    gamma: float = 10.0
    delta: float = 1.0
    seed: int = 0
    block_side: int = 8
    precision: str = "f32"  # training default; f64 is the bit-reproducibility mode
    extractor_seed: int = 1234
    data_dir: str = ""
    checkpoint: str = ""

    def validate(self) -> "RunConfig":
        if self.image_size % self.block_side:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by block_side {self.block_side}"
            )
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}")
        return self

    @property
    def dtype(self):
        return np.float64 if self.precision == "f64" else np.float32

    def summary(self) -> str:
        return ", ".join(f"{f.name}={getattr(self, f.name)}" for f in fields(RunConfig))


_PARSERS = {int: int, float: float, str: str}


def load_config(path: str) -> RunConfig:
    """Parse and validate a config file, applying defaults for absent keys."""
    known = {f.name: f.type for f in fields(RunConfig)}
    typemap = {f.name: type(getattr(RunConfig(), f.name)) for f in fields(RunConfig)}
    values: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, _, val = (part.strip() for part in line.partition("="))
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = _PARSERS[typemap[key]](val)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {val!r}") from exc
    return RunConfig(**values).validate()
