"""Binary PGM (P5, maxval 255) reader/writer.

Pixels map to [0,1] via v/255; the save side quantizes with round(v*255),
so save -> load is the identity on already-quantized data.  Header
comments (``#`` to end of line) are tolerated anywhere whitespace is.
"""

from __future__ import annotations

import numpy as np

from .errors import FormatError


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise FormatError(f"unexpected end of header at byte {pos}")
    start = pos
    while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
        pos += 1
    return data[start:pos], pos


def load_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    magic, pos = _read_token(data, 0)
    if magic != b"P5":
        raise FormatError(f"bad magic {magic!r} at byte 0 (binary PGM 'P5' required)")
    fields = []
    for what in ("width", "height", "maxval"):
        tok, pos = _read_token(data, pos)
        try:
            fields.append(int(tok))
        except ValueError as exc:
            raise FormatError(f"unparsable {what} {tok!r} at byte {pos - len(tok)}") from exc
    w, h, maxval = fields
    if w <= 0 or h <= 0:
        raise FormatError(f"non-positive image extent {w}x{h}")
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval} at byte {pos} (255 required)")
    pos += 1  # single whitespace byte separates header and payload
    if len(data) - pos < w * h:
        raise FormatError(
            f"truncated payload at byte {pos}: need {w * h} bytes, have {len(data) - pos}"
        )
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return pixels.reshape(h, w).astype(np.float64) / 255.0


def save_pgm(t: np.ndarray, path: str) -> None:
    if t.ndim != 2:
        raise FormatError(f"PGM needs an h x w array, got shape {t.shape}")
    h, w = t.shape
    q = np.floor(np.clip(t, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(q.tobytes())
