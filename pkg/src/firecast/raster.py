"""Multi-channel raster stacks with fire masks, and the WFRS on-disk container.

A stack bundles one calendar day of co-registered float channels plus an
int8 fire mask (1 fire, 0 no fire, -1 uncertain) on a single affine grid.
The WFRS byte layout (little-endian):

    bytes 0-3   magic b"WFRS"
    byte  4     version (1)
    bytes 5-8   height u32
    bytes 9-12  width u32
    bytes 13-14 channel count u16
    per channel: name length u8, UTF-8 name bytes
    per channel: row-major float32 plane
    row-major int8 fire mask plane
    date as days since 1970-01-01, i64
    geo transform: origin_x, origin_y, pixel_size as 3 x float64
"""

from __future__ import annotations

import datetime
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"WFRS"
VERSION = 1

# Labels (MOD14A1 fire masks) are delivered at 1 km; everything is resampled
# onto that grid.
LABEL_RESOLUTION_M = 1000.0

# Canonical channel order for the ten feature planes.
CHANNELS = (
    "elevation",
    "drought",
    "ndvi",
    "precipitation",
    "humidity",
    "wind_direction",
    "wind_velocity",
    "temp_min",
    "temp_max",
    "erc",
)

_EPOCH = datetime.date(1970, 1, 1)
_HEADER = struct.Struct("<4sBIIH")
_TRAILER = struct.Struct("<qddd")

# Reject absurd headers before allocating planes.
_MAX_ELEMENTS = 2**31


class RasterFormatError(Exception):
    """Base class for WFRS parsing failures."""


class MagicError(RasterFormatError):
    """File does not start with the WFRS magic."""


class VersionError(RasterFormatError):
    """Unsupported WFRS version byte."""


class TruncatedError(RasterFormatError):
    """File ends before the declared payload."""


class DimensionError(RasterFormatError):
    """Header declares empty or implausibly large planes."""


@dataclass(frozen=True)
class GeoTransform:
    """Affine mapping from pixel indices to world coordinates.

    The center of pixel (row, col) sits at
    ``(origin_x + col * pixel_size, origin_y + row * pixel_size)``;
    pixel_size is meters per pixel and uniform in both axes.
    """

    origin_x: float
    origin_y: float
    pixel_size: float

    def __post_init__(self):
        if self.pixel_size <= 0:
            raise ValueError(f"pixel_size must be > 0, got {self.pixel_size}")

    def pixel_to_world(self, row, col):
        return (self.origin_x + col * self.pixel_size,
                self.origin_y + row * self.pixel_size)

    def world_to_pixel(self, x, y):
        """Fractional (row, col) of the world point; inverse of pixel_to_world."""
        return ((y - self.origin_y) / self.pixel_size,
                (x - self.origin_x) / self.pixel_size)


@dataclass
class RasterStack:
    """One day's co-registered channels plus fire mask on a common grid."""

    date: datetime.date
    channel_names: tuple[str, ...]
    channels: np.ndarray  # float32 [n_channels, height, width]
    fire_mask: np.ndarray  # int8 [height, width], values in {-1, 0, 1}
    geo: GeoTransform

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float32)
        self.fire_mask = np.asarray(self.fire_mask, dtype=np.int8)
        self.channel_names = tuple(self.channel_names)
        if self.channels.ndim != 3:
            raise ValueError("channels must be [n_channels, height, width]")
        if self.fire_mask.ndim != 2:
            raise ValueError("fire_mask must be 2-D")
        if self.channels.shape[0] != len(self.channel_names):
            raise ValueError("channel plane count does not match names")
        if len(set(self.channel_names)) != len(self.channel_names):
            raise ValueError("channel names must be unique")
        if self.channels.shape[0] and self.channels.shape[1:] != self.fire_mask.shape:
            raise ValueError("channel planes and fire_mask must share (height, width)")
        bad = ~np.isin(self.fire_mask, (-1, 0, 1))
        if bad.any():
            raise ValueError("fire_mask values must be in {-1, 0, 1}")

    @property
    def height(self):
        return self.fire_mask.shape[0]

    @property
    def width(self):
        return self.fire_mask.shape[1]

    def channel(self, name: str) -> np.ndarray:
        return self.channels[self.channel_names.index(name)]

    def __eq__(self, other):
        if not isinstance(other, RasterStack):
            return NotImplemented
        return (self.date == other.date
                and self.channel_names == other.channel_names
                and self.channels.shape == other.channels.shape
                and np.array_equal(self.channels, other.channels)
                and np.array_equal(self.fire_mask, other.fire_mask)
                and self.geo == other.geo)


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel mean/std, computed over the training split only."""

    channel_names: tuple[str, ...]
    mean: np.ndarray  # float64 [n_channels]
    std: np.ndarray  # float64 [n_channels]

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64))
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        if self.mean.shape != (len(self.channel_names),) or self.std.shape != self.mean.shape:
            raise ValueError("stats arrays must be one value per channel")
        if (self.std < 0).any():
            raise ValueError("std must be >= 0")


def compute_stats(stacks) -> ChannelStats:
    """Pool every pixel of every stack (population std, ddof=0)."""
    stacks = list(stacks)
    if not stacks:
        raise ValueError("no stacks to compute stats from")
    names = stacks[0].channel_names
    for s in stacks:
        if s.channel_names != names:
            raise ValueError("stacks disagree on channel names")
    pooled = np.concatenate([s.channels.reshape(len(names), -1) for s in stacks], axis=1)
    pooled = pooled.astype(np.float64)
    return ChannelStats(names, pooled.mean(axis=1), pooled.std(axis=1))


def write_stack(stack: RasterStack, path) -> None:
    """Serialize a stack to the WFRS layout documented in the module docstring."""
    parts = [_HEADER.pack(MAGIC, VERSION, stack.height, stack.width,
                          len(stack.channel_names))]
    for name in stack.channel_names:
        raw = name.encode("utf-8")
        if len(raw) > 255:
            raise ValueError(f"channel name too long: {name!r}")
        parts.append(struct.pack("<B", len(raw)))
        parts.append(raw)
    for plane in stack.channels:
        parts.append(np.ascontiguousarray(plane, dtype="<f4").tobytes())
    parts.append(np.ascontiguousarray(stack.fire_mask, dtype=np.int8).tobytes())
    parts.append(_TRAILER.pack((stack.date - _EPOCH).days, stack.geo.origin_x,
                               stack.geo.origin_y, stack.geo.pixel_size))
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def read_stack(path) -> RasterStack:
    """Parse a WFRS file; inverse of write_stack, bit-exact on planes."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _HEADER.size:
        raise TruncatedError(f"{path}: file shorter than the fixed header")
    magic, version, height, width, n_channels = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MagicError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise VersionError(f"{path}: unsupported version {version}")
    if height == 0 or width == 0:
        raise DimensionError(f"{path}: empty plane {height}x{width}")
    if height * width * max(n_channels, 1) > _MAX_ELEMENTS:
        raise DimensionError(
            f"{path}: {n_channels} channels of {height}x{width} exceeds the element cap")

    pos = _HEADER.size
    names = []
    for _ in range(n_channels):
        if pos + 1 > len(data):
            raise TruncatedError(f"{path}: truncated in channel name table")
        (n,) = struct.unpack_from("<B", data, pos)
        pos += 1
        if pos + n > len(data):
            raise TruncatedError(f"{path}: truncated channel name")
        names.append(data[pos:pos + n].decode("utf-8"))
        pos += n

    plane = height * width
    need = n_channels * plane * 4 + plane + _TRAILER.size
    if pos + need > len(data):
        raise TruncatedError(f"{path}: payload shorter than header declares")
    channels = np.frombuffer(
        data, dtype="<f4", count=n_channels * plane, offset=pos,
    ).reshape(n_channels, height, width).copy()
    pos += n_channels * plane * 4
    fire_mask = np.frombuffer(
        data, dtype=np.int8, count=plane, offset=pos,
    ).reshape(height, width).copy()
    pos += plane
    days, ox, oy, ps = _TRAILER.unpack_from(data, pos)
    return RasterStack(
        date=_EPOCH + datetime.timedelta(days=days),
        channel_names=tuple(names),
        channels=channels,
        fire_mask=fire_mask,
        geo=GeoTransform(ox, oy, ps),
    )


def resample(plane, src_geo: GeoTransform, dst_geo: GeoTransform, dst_shape,
             method: str = "bilinear") -> np.ndarray:
    """Regrid a plane onto dst_geo at dst_shape.

    nearest picks the source pixel whose center is closest to the target
    pixel center; bilinear interpolates the 4 surrounding centers. Both
    clamp to the border, so output values never leave the source range.
    """
    plane = np.asarray(plane)
    if plane.size == 0:
        raise ValueError("source plane is empty")
    if method not in ("nearest", "bilinear"):
        raise ValueError(f"unknown resampling method {method!r}")
    h, w = plane.shape
    dh, dw = dst_shape
    rows = np.arange(dh, dtype=np.float64)
    cols = np.arange(dw, dtype=np.float64)
    x = dst_geo.origin_x + cols * dst_geo.pixel_size
    y = dst_geo.origin_y + rows * dst_geo.pixel_size
    fc = (x - src_geo.origin_x) / src_geo.pixel_size
    fr = (y - src_geo.origin_y) / src_geo.pixel_size

    if method == "nearest":
        ri = np.clip(np.floor(fr + 0.5).astype(np.int64), 0, h - 1)
        ci = np.clip(np.floor(fc + 0.5).astype(np.int64), 0, w - 1)
        return plane[np.ix_(ri, ci)]

    r0 = np.floor(fr)
    c0 = np.floor(fc)
    wr = (fr - r0)[:, None]
    wc = (fc - c0)[None, :]
    r0i = np.clip(r0.astype(np.int64), 0, h - 1)
    r1i = np.clip(r0.astype(np.int64) + 1, 0, h - 1)
    c0i = np.clip(c0.astype(np.int64), 0, w - 1)
    c1i = np.clip(c0.astype(np.int64) + 1, 0, w - 1)
    p = plane.astype(np.float64)
    top = p[np.ix_(r0i, c0i)] * (1 - wc) + p[np.ix_(r0i, c1i)] * wc
    bot = p[np.ix_(r1i, c0i)] * (1 - wc) + p[np.ix_(r1i, c1i)] * wc
    out = top * (1 - wr) + bot * wr
    if np.issubdtype(plane.dtype, np.floating):
        return out.astype(plane.dtype)
    return out


def normalize(stack: RasterStack, stats: ChannelStats) -> RasterStack:
    """Z-score each channel with train-split stats; the fire mask is untouched."""
    if stats.channel_names != stack.channel_names:
        raise ValueError("stats channels do not match stack channels")
    denom = np.maximum(stats.std, 1e-8)
    scaled = (stack.channels.astype(np.float64)
              - stats.mean[:, None, None]) / denom[:, None, None]
    return RasterStack(
        date=stack.date,
        channel_names=stack.channel_names,
        channels=scaled.astype(np.float32),
        fire_mask=stack.fire_mask,
        geo=stack.geo,
    )
