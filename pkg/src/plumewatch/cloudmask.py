"""Pluggable cloud/shadow masking.

The operational system delegates cloud detection to an upstream model; here
the contract is just ``compute(bands) -> (cloud, shadow)`` over the (6, H, W)
band stack, so any external masker can be dropped in. The default is a
two-threshold rule: bright blue pixels flag cloud, and dark-NIR pixels lying
in the cloud's projected shadow direction flag shadow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import BAND_INDEX, Band


@dataclass
class ThresholdCloudMask:
    blue_cloud_threshold: float = 0.25
    nir_shadow_threshold: float = 0.08
    # Pixel offset (rows down, cols right) from a cloud to its shadow,
    # set from a nominal cloud height and solar azimuth in configuration.
    shadow_offset_px: tuple[int, int] = (8, 8)

    def compute(self, bands: np.ndarray):
        blue = bands[BAND_INDEX[Band.BLUE]]
        nir = bands[BAND_INDEX[Band.NIR]]
        with np.errstate(invalid="ignore"):
            cloud = blue > self.blue_cloud_threshold
            dark = nir < self.nir_shadow_threshold
        shadow = _shift(cloud, *self.shadow_offset_px) & dark & ~cloud
        return cloud, shadow


@dataclass
class StaticCloudMask:
    """Wraps precomputed masks, e.g. from an external cloud model's output."""

    cloud: np.ndarray
    shadow: np.ndarray

    def compute(self, bands: np.ndarray):
        return self.cloud, self.shadow


def _shift(mask: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(mask)
    h, w = mask.shape
    ys = slice(max(dy, 0), h + min(dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    ys_src = slice(max(-dy, 0), h + min(-dy, 0))
    xs_src = slice(max(-dx, 0), w + min(-dx, 0))
    out[ys, xs] = mask[ys_src, xs_src]
    return out
