"""Raster stacks: the WFRS container, resampling, and normalization.

Builds a tiny two-channel stack by hand, round-trips it through a file,
then regrids a coarse plane onto a finer target grid.
"""

import datetime
import tempfile
from pathlib import Path

import numpy as np

from firecast.raster import (
    GeoTransform,
    RasterStack,
    compute_stats,
    normalize,
    read_stack,
    resample,
    write_stack,
)

# A 4x4 grid at 1 km resolution with a two-pixel fire.
geo = GeoTransform(origin_x=-2000.0, origin_y=0.0, pixel_size=1000.0)
elevation = np.linspace(100, 900, 16).reshape(4, 4).astype(np.float32)
drought = np.full((4, 4), 2.5, dtype=np.float32)
mask = np.zeros((4, 4), dtype=np.int8)
mask[1, 2] = 1
mask[3, 0] = -1  # cloud-covered pixel, unknown label

stack = RasterStack(
    date=datetime.date(2020, 8, 15),
    channel_names=("elevation", "drought"),
    channels=np.stack([elevation, drought]),
    fire_mask=mask,
    geo=geo,
)
print(f"stack {stack.date}: {stack.height}x{stack.width}, "
      f"channels {stack.channel_names}")
print("fire pixels:", np.argwhere(stack.fire_mask == 1).tolist())

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "demo.wfrs"
    write_stack(stack, path)
    print(f"wrote {path.stat().st_size} bytes")
    again = read_stack(path)
    print("round trip equal:", again == stack)

# Upsample the elevation plane 2x: the 4 km source grid below stands in
# for a coarse weather product being brought to the 1 km label grid.
coarse_geo = GeoTransform(0.0, 0.0, 4000.0)
fine_geo = GeoTransform(0.0, 0.0, 1000.0)
coarse = np.arange(16, dtype=np.float64).reshape(4, 4)
fine = resample(coarse, coarse_geo, fine_geo, (13, 13), method="bilinear")
print("\ncoarse 4 km plane:\n", coarse)
print("bilinear at 1 km, corner block:\n", np.round(fine[:5, :5], 2))
nearest = resample(coarse, coarse_geo, fine_geo, (13, 13), method="nearest")
print("nearest keeps source values:", sorted(set(nearest.ravel())) == list(range(16)))

# Channel normalization with training-split statistics.
stats = compute_stats([stack])
normed = normalize(stack, stats)
print("\nper-channel mean after z-scoring:",
      [f"{normed.channels[i].mean():.2e}" for i in range(2)])
