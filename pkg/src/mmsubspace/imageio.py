"""File formats: binary PGM images, CSV traces and matrices, config files."""

from __future__ import annotations

import csv
import io
import os
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, PGMError
from .operators import ImageGrid

__all__ = [
    "read_pgm",
    "write_pgm",
    "TRACE_HEADER",
    "write_trace_csv",
    "read_trace_csv",
    "write_matrix_csv",
    "read_matrix_csv",
    "read_config",
]

TRACE_HEADER = ("iter", "objective", "grad_norm_scaled", "time_s")
_WHITESPACE = b" \t\n\r\v\f"


def _header_tokens(data: bytes, count: int):
    """Read ``count`` whitespace separated header tokens after the magic number.

    Returns the tokens with their byte offsets and the offset just past the
    final token. ``#`` starts a comment running to the end of the line.
    """
    pos = 2
    tokens = []
    while len(tokens) < count:
        while pos < len(data) and (data[pos] in _WHITESPACE or data[pos] == ord("#")):
            if data[pos] == ord("#"):
                while pos < len(data) and data[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        if pos >= len(data):
            raise PGMError("truncated header", pos)
        start = pos
        while pos < len(data) and data[pos] not in _WHITESPACE and data[pos] != ord("#"):
            pos += 1
        tok = data[start:pos]
        if not tok.isdigit():
            raise PGMError(f"expected a decimal number, found {tok[:16]!r}", start)
        tokens.append((int(tok), start))
    return tokens, pos


def read_pgm(path) -> ImageGrid:
    """Read a binary (``P5``) PGM file with ``maxval`` 255."""
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise PGMError(f"not a binary PGM file (magic {data[:2]!r})", 0)
    tokens, end = _header_tokens(data, 3)
    (width, wpos), (height, hpos), (maxval, mpos) = tokens
    if width <= 0:
        raise PGMError("width must be positive", wpos)
    if height <= 0:
        raise PGMError("height must be positive", hpos)
    if maxval != 255:
        raise PGMError(f"unsupported maxval {maxval} (only 255 is handled)", mpos)
    if end >= len(data) or data[end] not in _WHITESPACE:
        raise PGMError("missing whitespace after maxval", end)
    start = end + 1
    n = width * height
    if len(data) - start < n:
        raise PGMError(f"truncated payload: expected {n} bytes, found {len(data) - start}",
                       len(data))
    pixels = np.frombuffer(data, dtype=np.uint8, count=n, offset=start).astype(float)
    return ImageGrid(width, height, pixels)


def write_pgm(path, image: ImageGrid) -> None:
    """Write ``image`` as 8-bit ``P5``; values are clamped to [0, 255] and rounded."""
    pix = np.clip(np.rint(image.pixels), 0, 255).astype(np.uint8)
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + pix.tobytes())


def write_trace_csv(path, trace, timing: bool = True) -> None:
    """Write a solver trace with the header ``iter,objective,grad_norm_scaled,time_s``.

    The objective uses 12 significant digits. With ``timing=False`` the
    time column is written as zeros, which makes repeated runs
    byte-identical.
    """
    if len(trace) == 0:
        raise ConfigurationError("cannot write an empty trace")
    lines = [",".join(TRACE_HEADER)]
    for k, f, g, t in zip(trace.iters, trace.objective, trace.grad_norm, trace.time):
        lines.append(f"{int(k)},{f:.12g},{g:.12g},{(t if timing else 0.0):.6f}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trace_csv(path) -> dict:
    """Columns of a trace CSV as numpy arrays keyed by header name."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != TRACE_HEADER:
        raise ConfigurationError(f"{path}: not a trace file")
    body = np.array(rows[1:], dtype=float).reshape(-1, len(TRACE_HEADER))
    return {name: body[:, i] for i, name in enumerate(TRACE_HEADER)}


def write_matrix_csv(path, values, width: int | None = None) -> None:
    """Write a real matrix (or an image reshaped to ``height x width``) at full precision."""
    if isinstance(values, ImageGrid):
        mat = values.array
    else:
        arr = np.asarray(values, dtype=float)
        mat = arr.reshape(-1, width) if width is not None else np.atleast_2d(arr)
    buf = io.StringIO()
    np.savetxt(buf, mat, delimiter=",", fmt="%.17g")
    with open(path, "w", newline="\n") as fh:
        fh.write(buf.getvalue())


def read_matrix_csv(path) -> np.ndarray:
    mat = np.loadtxt(path, delimiter=",", ndmin=2)
    if not np.all(np.isfinite(mat)):
        raise ConfigurationError(f"{path}: non-finite entries")
    return mat


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` comments and blank lines are skipped.

    Keys are normalized to lower case with ``-`` replaced by ``_``.
    """
    if not os.path.isfile(path):
        raise ConfigurationError(f"config file {path} does not exist")
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip().lower().replace("-", "_")
            if not sep or not key:
                raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
            out[key] = value.strip()
    return out
