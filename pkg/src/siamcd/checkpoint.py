"""SCDCKPT1 checkpoints.

``SCDCKPT1`` magic, an ASCII header of ``key=value`` config lines and
``param <name> <d0> <d1> ...`` lines closed by ``end``, then each parameter as
little-endian float32 in header order.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .model import ModelConfig, ModelState, parameter_shapes
from .rawio import FormatError, atomic_write
from .tensor import Tensor

MAGIC = b"SCDCKPT1\n"
CONFIG_FIELDS = ("fusion", "gated", "encoder_filters", "decoder_filters", "kernel", "input_channels", "input_size")


class CheckpointError(FormatError):
    pass


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def config_header(config: ModelConfig) -> dict:
    return {f: _fmt(getattr(config, f)) for f in CONFIG_FIELDS}


def _parse_config(fields: dict) -> ModelConfig:
    missing = [f for f in CONFIG_FIELDS if f not in fields]
    if missing:
        raise CheckpointError(f"checkpoint header lacks {', '.join(missing)}")
    ints = lambda s: tuple(int(v) for v in s.split(","))  # noqa: E731
    try:
        return ModelConfig(
            fusion=fields["fusion"],
            gated=fields["gated"] == "true",
            encoder_filters=ints(fields["encoder_filters"]),
            decoder_filters=ints(fields["decoder_filters"]),
            kernel=int(fields["kernel"]),
            input_channels=int(fields["input_channels"]),
            input_size=ints(fields["input_size"]),
        )
    except ValueError as exc:
        raise CheckpointError(f"invalid config in checkpoint: {exc}") from None


def encode_checkpoint(state: ModelState) -> bytes:
    lines = [f"{k}={v}" for k, v in config_header(state.config).items()]
    for name, t in state.params.items():
        lines.append(" ".join(["param", name, *map(str, t.shape)]))
    lines.append("end")
    body = b"".join(t.data.astype("<f4").tobytes(order="C") for t in state.params.values())
    return MAGIC + ("\n".join(lines) + "\n").encode("ascii") + body


def decode_checkpoint(blob: bytes, expect: ModelConfig | None = None) -> ModelState:
    if not blob.startswith(MAGIC):
        raise CheckpointError("not an SCDCKPT1 checkpoint (bad magic)")
    pos = len(MAGIC)
    fields, params = {}, []
    while True:
        end = blob.find(b"\n", pos)
        if end < 0:
            raise CheckpointError("truncated checkpoint header")
        line = blob[pos:end].decode("ascii", errors="replace")
        pos = end + 1
        if line == "end":
            break
        if line.startswith("param "):
            parts = line.split()
            try:
                params.append((parts[1], tuple(int(v) for v in parts[2:])))
            except (IndexError, ValueError):
                raise CheckpointError(f"malformed parameter line {line!r}") from None
        elif "=" in line:
            key, value = line.split("=", 1)
            fields[key] = value
        else:
            raise CheckpointError(f"unexpected header line {line!r}")

    config = _parse_config(fields)
    if expect is not None:
        for f in CONFIG_FIELDS:
            if _fmt(getattr(expect, f)) != fields[f]:
                raise CheckpointError(
                    f"checkpoint field {f}={fields[f]} does not match configured {f}={_fmt(getattr(expect, f))}"
                )
    declared = dict(params)
    if declared != parameter_shapes(config) or [n for n, _ in params] != list(parameter_shapes(config)):
        raise CheckpointError("checkpoint parameter list does not match its config")

    total = sum(int(np.prod(s)) for _, s in params)
    payload = blob[pos:]
    if len(payload) != 4 * total:
        raise CheckpointError(f"checkpoint payload has {len(payload)} bytes, expected {4 * total}")
    flat = np.frombuffer(payload, dtype="<f4")
    out, offset = {}, 0
    for name, shape in params:
        n = int(np.prod(shape))
        out[name] = Tensor(flat[offset : offset + n].reshape(shape).astype(np.float32), requires_grad=True)
        offset += n
    return ModelState(config, out)


def save_checkpoint(state: ModelState, path) -> None:
    with atomic_write(path) as fh:
        fh.write(encode_checkpoint(state))


def load_checkpoint(path, expect: ModelConfig | None = None) -> ModelState:
    return decode_checkpoint(Path(path).read_bytes(), expect)
