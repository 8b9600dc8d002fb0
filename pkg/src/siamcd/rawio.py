"""SCDT1 raw tensor files and atomic file writes.

Layout: the 8-byte magic ``SCDT1\\0\\0\\0``, one ASCII line
``rank d0 d1 ... dn\\n``, then little-endian float32 values in row-major order.
"""

from __future__ import annotations

import os
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

MAGIC = b"SCDT1\x00\x00\x00"


class FormatError(ValueError):
    pass


@contextmanager
def atomic_write(path, mode: str = "wb"):
    """Write to a temp file beside ``path`` and rename it into place on success."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_scdt(array) -> bytes:
    arr = np.asarray(array)
    header = " ".join(str(n) for n in (arr.ndim, *arr.shape)) + "\n"
    return MAGIC + header.encode("ascii") + arr.astype("<f4").tobytes(order="C")


def decode_scdt(blob: bytes) -> np.ndarray:
    if not blob.startswith(MAGIC):
        raise FormatError("not an SCDT1 file (bad magic)")
    end = blob.find(b"\n", len(MAGIC))
    if end < 0:
        raise FormatError("SCDT1 header line is not terminated")
    try:
        fields = [int(v) for v in blob[len(MAGIC) : end].decode("ascii").split()]
    except (UnicodeDecodeError, ValueError) as exc:
        raise FormatError(f"malformed SCDT1 header: {exc}") from None
    if not fields or fields[0] != len(fields) - 1 or any(d <= 0 for d in fields[1:]):
        raise FormatError(f"inconsistent SCDT1 header {fields}")
    shape = tuple(fields[1:])
    payload = blob[end + 1 :]
    expected = 4 * int(np.prod(shape, dtype=np.int64))
    if len(payload) != expected:
        raise FormatError(f"SCDT1 payload has {len(payload)} bytes, header implies {expected}")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)


def save_scdt(path, array) -> None:
    with atomic_write(path) as fh:
        fh.write(encode_scdt(array))


def load_scdt(path) -> np.ndarray:
    return decode_scdt(Path(path).read_bytes())
