"""Fully convolutional Siamese change-detection networks.

Four variants: skip fusion by channel concatenation (``conc``) or absolute
difference (``diff``), each with or without attention gates in the decoder.

Layout for ``L = len(encoder_filters)`` levels:

* encoder level ``l``: two 3x3 conv+ReLU at ``encoder_filters[l]`` channels,
  then 2x2 max-pool except after the last level.  Both images go through the
  same weights.  Pre-pool activations are the skips; the last level is the
  bottleneck.
* the two bottlenecks are fused by the variant's rule, then decoder level 0
  applies two conv+ReLU at ``decoder_filters[0]``.
* decoder level ``l >= 1``: 2x2 stride-2 transposed conv to
  ``decoder_filters[l]`` channels, gate the fused skip of matching resolution
  with that upsampled signal (when gated), concatenate ``[up, skip]``, two
  conv+ReLU at ``decoder_filters[l]``.
* 1x1 conv to one channel and a sigmoid.

Parameter count for kernel ``k``, ``m = 2`` (conc) or ``1`` (diff),
``e = encoder_filters``, ``f = decoder_filters``, ``c0 = input_channels``::

    encoder   sum_l  e_l (e_{l-1} + e_l) k^2 + 2 e_l          (e_{-1} = c0)
    decoder 0        f_0 (m e_{L-1} + f_0) k^2 + 2 f_0
    decoder l        4 f_{l-1} f_l                             (transposed conv)
                   + f_l (f_l + s_l + f_l) k^2 + 2 f_l         (s_l = m e_{L-1-l})
                   + gated: (s_l + f_l + 1) a_l + 2 a_l + 1    (a_l = max(1, s_l // 2))
    head             f_{L-1} + 1

For the default ``[16, 32, 64, 128]`` / ``[128, 64, 32, 16]`` ladder this is
777 089 (diff) and 972 929 (conc) without gates.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

FUSIONS = ("concatenate", "abs-difference")
_FUSION_ALIASES = {"conc": "concatenate", "concatenate": "concatenate", "diff": "abs-difference", "abs-difference": "abs-difference"}


@dataclass(frozen=True)
class ModelConfig:
    fusion: str = "concatenate"
    gated: bool = False
    encoder_filters: tuple = (16, 32, 64, 128)
    decoder_filters: tuple | None = None
    kernel: int = 3
    input_channels: int = 3
    input_size: tuple = (112, 112)

    def __post_init__(self):
        if self.fusion not in _FUSION_ALIASES:
            raise ValueError(f"unknown fusion {self.fusion!r}; expected one of {FUSIONS}")
        object.__setattr__(self, "fusion", _FUSION_ALIASES[self.fusion])
        enc = tuple(int(c) for c in self.encoder_filters)
        dec = tuple(reversed(enc)) if self.decoder_filters is None else tuple(int(c) for c in self.decoder_filters)
        object.__setattr__(self, "encoder_filters", enc)
        object.__setattr__(self, "decoder_filters", dec)
        object.__setattr__(self, "input_size", tuple(int(v) for v in self.input_size))
        object.__setattr__(self, "gated", bool(self.gated))
        if len(enc) < 2 or len(enc) != len(dec):
            raise ValueError("encoder_filters and decoder_filters need equal length >= 2")
        if min(enc + dec) < 1 or self.input_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel must be a positive odd integer, got {self.kernel}")
        factor = 2 ** (len(enc) - 1)
        if len(self.input_size) != 2 or any(v < factor or v % factor for v in self.input_size):
            raise ValueError(f"input size {self.input_size} must be divisible by {factor}")

    @property
    def levels(self) -> int:
        return len(self.encoder_filters)

    @property
    def variant(self) -> str:
        name = "FC-Siam-conc" if self.fusion == "concatenate" else "FC-Siam-diff"
        return name + ("-Att" if self.gated else "")

    def skip_channels(self, level: int) -> int:
        """Fused skip channels feeding decoder ``level`` (1-based decoder levels)."""
        c = self.encoder_filters[self.levels - 1 - level]
        return 2 * c if self.fusion == "concatenate" else c

    def gate_channels(self, level: int) -> int:
        return max(1, self.skip_channels(level) // 2)


@dataclass
class AttentionGateParams:
    wx: Tensor
    bx: Tensor
    wg: Tensor
    bg: Tensor
    psi: Tensor
    psi_b: Tensor


@dataclass
class ModelState:
    config: ModelConfig
    params: dict = field(default_factory=dict)

    def parameters(self) -> list:
        return list(self.params.values())

    def gate(self, level: int) -> AttentionGateParams:
        p = self.params
        k = f"dec{level}.gate"
        return AttentionGateParams(
            p[f"{k}.wx.weight"], p[f"{k}.wx.bias"], p[f"{k}.wg.weight"],
            p[f"{k}.wg.bias"], p[f"{k}.psi.weight"], p[f"{k}.psi.bias"],
        )

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype


def parameter_shapes(config: ModelConfig) -> dict:
    """Ordered ``name -> shape`` for every learnable tensor."""
    k = config.kernel
    enc, dec = config.encoder_filters, config.decoder_filters
    shapes = {}

    def conv(name, cout, cin, ksize=k):
        shapes[f"{name}.weight"] = (cout, cin, ksize, ksize)
        shapes[f"{name}.bias"] = (cout,)

    cin = config.input_channels
    for lvl, c in enumerate(enc):
        conv(f"enc{lvl}.conv1", c, cin)
        conv(f"enc{lvl}.conv2", c, c)
        cin = c
    bottleneck = enc[-1] * (2 if config.fusion == "concatenate" else 1)
    conv("dec0.conv1", dec[0], bottleneck)
    conv("dec0.conv2", dec[0], dec[0])
    for lvl in range(1, config.levels):
        f, s = dec[lvl], config.skip_channels(lvl)
        shapes[f"dec{lvl}.up.weight"] = (dec[lvl - 1], f, 2, 2)
        if config.gated:
            a = config.gate_channels(lvl)
            conv(f"dec{lvl}.gate.wx", a, s, 1)
            conv(f"dec{lvl}.gate.wg", a, f, 1)
            conv(f"dec{lvl}.gate.psi", 1, a, 1)
        conv(f"dec{lvl}.conv1", f, f + s)
        conv(f"dec{lvl}.conv2", f, f)
    conv("head", 1, dec[-1], 1)
    return shapes


def count_params(config: ModelConfig) -> int:
    return int(sum(int(np.prod(s)) for s in parameter_shapes(config).values()))


def _fan_in(name: str, shape: tuple) -> int:
    if name.endswith(".up.weight"):
        return shape[0]  # each output pixel sees one tap per input channel
    return int(np.prod(shape[1:]))


def build(config: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelState:
    """Fan-in scaled uniform weights, zero biases.  Each tensor draws from its
    own stream keyed by ``(seed, name)``, so shared layers initialize the same
    across variants."""
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".bias"):
            values = np.zeros(shape)
        else:
            rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
            bound = np.sqrt(6.0 / _fan_in(name, shape))
            values = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(values.astype(dtype), requires_grad=True)
    return ModelState(config, params)


def cast(state: ModelState, dtype) -> ModelState:
    return ModelState(state.config, {k: Tensor(v.data.astype(dtype), requires_grad=True) for k, v in state.params.items()})


def _conv_relu(state: ModelState, x: Tensor, name: str) -> Tensor:
    p = state.params
    return T.relu(T.conv2d(x, p[f"{name}.weight"], p[f"{name}.bias"], padding=state.config.kernel // 2))


def _conv1x1(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return T.conv2d(x, w, b)


def _check_image(state: ModelState, image: Tensor) -> None:
    cfg = state.config
    if image.ndim not in (3, 4) or image.shape[-3] != cfg.input_channels:
        raise ValueError(f"expected [{cfg.input_channels}, H, W] input, got {image.shape}")
    factor = 2 ** (cfg.levels - 1)
    h, w = image.shape[-2:]
    if h % factor or w % factor:
        raise ValueError(f"spatial size {h}x{w} is not divisible by {factor}")


def encode(state: ModelState, image) -> tuple:
    """Run one Siamese branch; returns ``(skips, bottleneck)``."""
    x = T.as_tensor(image, dtype=state.dtype)
    _check_image(state, x)
    skips = []
    last = state.config.levels - 1
    for lvl in range(state.config.levels):
        x = _conv_relu(state, x, f"enc{lvl}.conv1")
        x = _conv_relu(state, x, f"enc{lvl}.conv2")
        if lvl < last:
            skips.append(x)
            x = T.maxpool2d(x)
    return skips, x


def fuse(a: Tensor, b: Tensor, fusion: str) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"cannot fuse {a.shape} with {b.shape}")
    if _FUSION_ALIASES[fusion] == "concatenate":
        return T.concat([a, b])
    return T.absolute(T.sub(a, b))


def fuse_skips(skips_a: list, skips_b: list, fusion: str) -> list:
    if len(skips_a) != len(skips_b):
        raise ValueError("skip lists differ in length")
    return [fuse(a, b, fusion) for a, b in zip(skips_a, skips_b)]


def attention_gate(x: Tensor, g: Tensor, params: AttentionGateParams, alpha: float | None = None) -> Tensor:
    """``x * sigmoid(psi(relu(Wx x + Wg g)))`` with the one-channel
    coefficient map repeated over x's channels.  ``alpha`` pins the
    coefficients to a constant instead."""
    if x.shape[-2:] != g.shape[-2:] or x.ndim != g.ndim:
        raise ValueError(f"gate inputs misaligned: {x.shape} vs {g.shape}")
    channels = x.shape[-3]
    if alpha is not None:
        coeff = Tensor(np.full((*x.shape[:-3], 1, *x.shape[-2:]), alpha, dtype=x.dtype))
    else:
        q = T.relu(T.add(_conv1x1(x, params.wx, params.bx), _conv1x1(g, params.wg, params.bg)))
        coeff = T.sigmoid(_conv1x1(q, params.psi, params.psi_b))
    return T.mul(x, T.repeat_channels(coeff, channels))


def forward(state: ModelState, t1, t2, gate_alpha: float | None = None, zero_skips: bool = False) -> Tensor:
    """Change probability map ``[1, H, W]`` (or ``[N, 1, H, W]`` for batches).

    ``gate_alpha`` forces every gate coefficient to a constant and
    ``zero_skips`` replaces the fused skips by zeros; both are diagnostics.
    """
    cfg = state.config
    dtype = state.dtype
    t1 = T.as_tensor(t1, dtype=dtype)
    t2 = T.as_tensor(t2, dtype=dtype)
    if t1.shape != t2.shape:
        raise ValueError(f"t1 {t1.shape} and t2 {t2.shape} differ")
    skips1, bottom1 = encode(state, t1)
    skips2, bottom2 = encode(state, t2)
    skips = fuse_skips(skips1, skips2, cfg.fusion)
    if zero_skips:
        skips = [Tensor(np.zeros(s.shape, dtype=dtype)) for s in skips]

    x = fuse(bottom1, bottom2, cfg.fusion)
    x = _conv_relu(state, x, "dec0.conv1")
    x = _conv_relu(state, x, "dec0.conv2")
    for lvl in range(1, cfg.levels):
        up = T.conv_transpose2d(x, state.params[f"dec{lvl}.up.weight"])
        skip = skips[cfg.levels - 1 - lvl]
        if cfg.gated or gate_alpha is not None:
            params = state.gate(lvl) if cfg.gated else None
            skip = attention_gate(skip, up, params, alpha=gate_alpha)
        x = T.concat([up, skip])
        x = _conv_relu(state, x, f"dec{lvl}.conv1")
        x = _conv_relu(state, x, f"dec{lvl}.conv2")
    p = state.params
    return T.sigmoid(_conv1x1(x, p["head.weight"], p["head.bias"]))


