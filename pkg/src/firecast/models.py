"""Builders for the four segmentation architectures.

All four share the same residual encoder/decoder skeleton parameterized by
a per-level filter scheme. The autoencoder pools after one residual block
per level and mirrors the scheme on the way up; the U-Net additionally
concatenates each encoder level's (pre-pool) features onto the matching
decoder level, ordered [upsampled, skip] along channels. The LSTM variants
run the encoder on every frame of a sequence, roll a convolutional LSTM
over the bottleneck maps, and decode the final hidden state; the U-Net
LSTM takes its skip features from the last frame.

Parameter counts per architecture (conv k,cin,cout costs cout*(cin*k*k+1);
a residual block cin->f costs conv3(cin,f) + conv3(f,f) and, when cin != f,
conv1(cin,f); the LSTM adds four conv3((cin+hidden),hidden)):
see expected_param_count, which tests pin against the built models.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .nn import Tensor

ARCHS = ("autoencoder", "unet", "ae_lstm", "unet_lstm")
SEQUENCE_ARCHS = ("ae_lstm", "unet_lstm")


@dataclass(frozen=True)
class ModelConfig:
    arch: str
    filter_scheme: tuple[int, ...] = (64, 128, 256, 256)
    in_channels: int = 10
    tile: int = 128
    lstm_hidden: int | None = None  # defaults to the bottleneck channel count

    def __post_init__(self):
        object.__setattr__(self, "filter_scheme", tuple(self.filter_scheme))
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}")
        if not self.filter_scheme:
            raise ValueError("filter_scheme must be nonempty")
        if self.tile % (1 << len(self.filter_scheme)):
            raise ValueError(
                f"tile {self.tile} not divisible by 2^{len(self.filter_scheme)} levels")

    @property
    def is_sequence(self):
        return self.arch in SEQUENCE_ARCHS

    @property
    def hidden(self):
        return self.lstm_hidden or self.filter_scheme[-1]


class Conv:
    def __init__(self, in_ch, out_ch, k, rng):
        self.kernel = Tensor(nn.he_uniform(rng, (out_ch, in_ch, k, k), in_ch * k * k),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True)

    def __call__(self, x, stride=1):
        return nn.conv2d(x, self.kernel, self.bias, stride)

    def named_params(self, prefix):
        return {f"{prefix}.w": self.kernel, f"{prefix}.b": self.bias}


class ResidualBlock:
    """conv3x3 -> relu -> conv3x3, added to a shortcut, then relu.

    The shortcut is the identity when channel counts already match and a
    1x1 projection otherwise.
    """

    def __init__(self, in_ch, filters, rng):
        self.conv1 = Conv(in_ch, filters, 3, rng)
        self.conv2 = Conv(filters, filters, 3, rng)
        self.proj = Conv(in_ch, filters, 1, rng) if in_ch != filters else None

    def __call__(self, x):
        body = self.conv2(nn.relu(self.conv1(x)))
        skip = self.proj(x) if self.proj is not None else x
        return nn.relu(nn.add(body, skip))

    def named_params(self, prefix):
        out = {}
        out.update(self.conv1.named_params(f"{prefix}.conv1"))
        out.update(self.conv2.named_params(f"{prefix}.conv2"))
        if self.proj is not None:
            out.update(self.proj.named_params(f"{prefix}.proj"))
        return out


def residual_block(x: Tensor, block: ResidualBlock) -> Tensor:
    return block(x)


class Model:
    def __init__(self, config: ModelConfig, rng):
        self.config = config
        scheme = config.filter_scheme
        levels = len(scheme)

        self.enc = []
        ch = config.in_channels
        for f in scheme:
            self.enc.append(ResidualBlock(ch, f, rng))
            ch = f

        bottleneck = ch
        if config.is_sequence:
            self.lstm = nn.ConvLSTMWeights(bottleneck, config.hidden, rng)
            ch = config.hidden
        else:
            self.lstm = None

        unet = config.arch in ("unet", "unet_lstm")
        self.dec = []
        for j in range(levels):
            out_f = scheme[levels - 1 - j]
            skip_ch = scheme[levels - 1 - j] if unet else 0
            self.dec.append(ResidualBlock(ch + skip_ch, out_f, rng))
            ch = out_f
        self.head = Conv(ch, 1, 1, rng)

    @property
    def params(self) -> dict[str, Tensor]:
        out = {}
        for i, b in enumerate(self.enc):
            out.update(b.named_params(f"enc{i}"))
        if self.lstm is not None:
            out.update(self.lstm.named_params("lstm"))
        for i, b in enumerate(self.dec):
            out.update(b.named_params(f"dec{i}"))
        out.update(self.head.named_params("head"))
        return out

    def load_params(self, values: dict[str, np.ndarray]):
        params = self.params
        if set(values) != set(params):
            missing = set(params) ^ set(values)
            raise ValueError(f"parameter names do not match model: {sorted(missing)}")
        for name, arr in values.items():
            t = params[name]
            if t.data.shape != arr.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {t.data.shape}")
            t.data = np.asarray(arr, dtype=np.float64)

    def _encode(self, x):
        skips = []
        for block in self.enc:
            x = block(x)
            skips.append(x)
            x = nn.max_pool2(x)
        return x, skips

    def _decode(self, x, skips):
        unet = self.config.arch in ("unet", "unet_lstm")
        for j, block in enumerate(self.dec):
            x = nn.upsample2(x)
            if unet:
                x = nn.concat_channels([x, skips[len(skips) - 1 - j]])
            x = block(x)
        return self.head(x)

    def forward(self, x) -> Tensor:
        """Input [N,C,H,W] (image archs) or [N,T,C,H,W] (sequence archs);
        returns per-pixel fire logits [N,1,H,W]."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=np.float64))
        if self.config.is_sequence:
            if x.data.ndim != 5:
                raise nn.ShapeError(f"{self.config.arch} expects [N,T,C,H,W], got {x.shape}")
            n, t = x.shape[:2]
            hb = x.shape[3] >> len(self.enc)
            wb = x.shape[4] >> len(self.enc)
            h = Tensor(np.zeros((n, self.config.hidden, hb, wb)))
            c = Tensor(np.zeros((n, self.config.hidden, hb, wb)))
            skips = None
            for step in range(t):
                frame = nn.slice_time(x, step)
                z, skips = self._encode(frame)
                h, c = nn.conv_lstm_step(z, h, c, self.lstm)
            return self._decode(h, skips)
        if x.data.ndim != 4:
            raise nn.ShapeError(f"{self.config.arch} expects [N,C,H,W], got {x.shape}")
        z, skips = self._encode(x)
        return self._decode(z, skips)

    def __call__(self, x):
        return self.forward(x)


def build(config: ModelConfig, rng) -> Model:
    """Construct a model with He-uniform weights drawn from rng."""
    return Model(config, rng)


def forward(model: Model, x) -> Tensor:
    return model.forward(x)


def expected_param_count(config: ModelConfig) -> int:
    """Closed-form parameter count; the documented contract for each arch."""

    def conv(k, cin, cout):
        return cout * (cin * k * k + 1)

    def block(cin, f):
        n = conv(3, cin, f) + conv(3, f, f)
        if cin != f:
            n += conv(1, cin, f)
        return n

    scheme = config.filter_scheme
    levels = len(scheme)
    unet = config.arch in ("unet", "unet_lstm")
    total = 0
    ch = config.in_channels
    for f in scheme:
        total += block(ch, f)
        ch = f
    if config.is_sequence:
        total += 4 * conv(3, ch + config.hidden, config.hidden)
        ch = config.hidden
    for j in range(levels):
        out_f = scheme[levels - 1 - j]
        skip = scheme[levels - 1 - j] if unet else 0
        total += block(ch + skip, out_f)
        ch = out_f
    return total + conv(1, ch, 1)
