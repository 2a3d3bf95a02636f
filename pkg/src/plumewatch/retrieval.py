"""Reference-pass selection and the SWIR band-ratio methane retrievals.

MBSP (multi-band single-pass) measures the fractional darkening of SWIR2
relative to SWIR1 within one acquisition: a zero-intercept regression
brings SWIR2 onto the SWIR1 scale, and the residual ratio carries the
methane absorption signal. MBMP (multi-band multi-pass) subtracts the same
signal computed on a plume-free reference pass, cancelling the static
band-correlation structure of the surface; it is the primary retrieval for
onshore sites, while offshore sites (no stable background) use MBSP.

The fractional signal inverts to a column enhancement through the
SWIR2/SWIR1 ratio channel of the radiative-transfer LUT, so retrieval and
plume simulation share one forward model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .raster import Band, GridMismatch, Scene, write_band_tif
from .rtlut import RATIO_CHANNEL, RtLut, amf_from_angles, invert_tau_raster

SIMILARITY_BANDS = (Band.RED, Band.GREEN, Band.BLUE, Band.SWIR1)

DEFAULT_LOOKBACK_DAYS = 120  # see module notes: "past 3 months" vs "last 4 months"
MIN_VALID_FRACTION = 0.25
USABLE_VALID_FRACTION = 0.5


class RetrievalError(Exception):
    pass


class NoReferenceError(RetrievalError):
    pass


class RegressionError(RetrievalError):
    pass


class InsufficientValidPixels(RetrievalError):
    pass


@dataclass(frozen=True)
class ReferenceChoice:
    reference: Scene
    score: float  # mean absolute reflectance difference; lower = more similar
    age_days: float

    @property
    def reference_id(self) -> str:
        return self.reference.scene_id


@dataclass
class RetrievalProduct:
    kind: str  # "MBSP" | "MBMP"
    delta_r: np.ndarray  # (H, W) fractional signal, NaN where invalid
    dch4: np.ndarray  # (H, W) ppb m, >= 0 on valid pixels, NaN where invalid
    valid: np.ndarray  # (H, W) bool
    coefficients: dict[str, float]
    amf: float
    negative_pixels: int  # valid pixels whose signal inverted to a negative column
    saturated_pixels: int  # valid pixels clamped at the table maximum
    reference_id: str | None = None


def select_reference(
    history: list[Scene],
    current: Scene,
    lookback_days: float = DEFAULT_LOOKBACK_DAYS,
) -> ReferenceChoice:
    """Most similar usable prior pass of the same satellite family.

    Similarity is the mean absolute reflectance difference over the visible
    bands and SWIR1, computed on jointly valid pixels; ties break toward the
    most recent acquisition.
    """
    best: tuple[float, float, ReferenceChoice] | None = None
    for candidate in history:
        if candidate is current:
            continue
        if candidate.satellite.family != current.satellite.family:
            continue
        age = (current.timestamp - candidate.timestamp).total_seconds() / 86400.0
        if age <= 0 or age > lookback_days:
            continue
        if candidate.validity_mask.mean() < USABLE_VALID_FRACTION:
            continue
        joint = candidate.validity_mask & current.validity_mask
        if not joint.any():
            continue
        diffs = [
            np.abs(current.band(b)[joint] - candidate.band(b)[joint]).mean()
            for b in SIMILARITY_BANDS
        ]
        score = float(np.mean(diffs))
        key = (score, -candidate.timestamp.timestamp())
        if best is None or key < best[:2]:
            best = (*key, ReferenceChoice(reference=candidate, score=score, age_days=age))
    if best is None:
        raise NoReferenceError(
            f"no usable reference for {current.scene_id} within {lookback_days} days"
        )
    return best[2]


def _mbsp_signal(scene: Scene):
    """Zero-intercept regression and fractional signal for one pass."""
    s1 = scene.band(Band.SWIR1)
    s2 = scene.band(Band.SWIR2)
    valid = scene.validity_mask & np.isfinite(s1) & np.isfinite(s2) & (s1 > 0)
    if valid.mean() < MIN_VALID_FRACTION:
        raise InsufficientValidPixels(
            f"{scene.scene_id}: SWIR bands valid on {valid.mean():.0%} of pixels (< 25%)"
        )
    s1v = s1[valid].astype(np.float64)
    s2v = s2[valid].astype(np.float64)
    if s1v.std() < 1e-8 or not np.any(s2v != 0):
        raise RegressionError(f"{scene.scene_id}: degenerate SWIR regression")
    c = float(np.dot(s1v, s2v) / np.dot(s2v, s2v))
    delta_r = np.full(s1.shape, np.nan)
    delta_r[valid] = (c * s2v - s1v) / s1v
    return delta_r, valid, c


def _invert_signal(delta_r: np.ndarray, valid: np.ndarray, lut: RtLut, amf: float):
    tau_eff = 1.0 + delta_r
    negative = valid & (tau_eff > 1.0)
    tau_eff = np.where(valid, np.minimum(tau_eff, 1.0), np.nan)
    dch4, saturated = invert_tau_raster(lut, RATIO_CHANNEL, tau_eff, amf)
    dch4[negative] = 0.0
    return dch4, int(negative.sum()), saturated


def mbsp(scene: Scene, lut: RtLut) -> RetrievalProduct:
    """Single-pass retrieval; the choice for offshore sites."""
    delta_r, valid, c = _mbsp_signal(scene)
    amf = amf_from_angles(scene.solar_zenith_deg, scene.view_zenith_deg)
    dch4, negative, saturated = _invert_signal(delta_r, valid, lut, amf)
    return RetrievalProduct(
        kind="MBSP",
        delta_r=delta_r,
        dch4=dch4,
        valid=valid,
        coefficients={"c": c},
        amf=amf,
        negative_pixels=negative,
        saturated_pixels=saturated,
    )


def mbmp(scene: Scene, reference: Scene, lut: RtLut) -> RetrievalProduct:
    """Multi-pass retrieval: current-pass signal minus reference-pass signal."""
    if scene.bands.shape != reference.bands.shape:
        raise GridMismatch(
            f"scene {scene.bands.shape[1:]} and reference {reference.bands.shape[1:]} disagree"
        )
    dr_scene, valid_scene, c_scene = _mbsp_signal(scene)
    dr_ref, valid_ref, c_ref = _mbsp_signal(reference)
    valid = valid_scene & valid_ref
    delta_r = np.where(valid, dr_scene - dr_ref, np.nan)
    amf = amf_from_angles(scene.solar_zenith_deg, scene.view_zenith_deg)
    dch4, negative, saturated = _invert_signal(delta_r, valid, lut, amf)
    return RetrievalProduct(
        kind="MBMP",
        delta_r=delta_r,
        dch4=dch4,
        valid=valid,
        coefficients={"c_current": c_scene, "c_reference": c_ref},
        amf=amf,
        negative_pixels=negative,
        saturated_pixels=saturated,
        reference_id=reference.scene_id,
    )


def save_retrieval(product: RetrievalProduct, scene: Scene, bundle_dir) -> None:
    """Persist the retrieval next to its scene bundle."""
    bundle = Path(bundle_dir)
    write_band_tif(bundle / "mbmp.tif", product.delta_r, scene.crop_extent, 10.0)
    write_band_tif(bundle / "dch4.tif", product.dch4, scene.crop_extent, 10.0)
    (bundle / "retrieval.json").write_text(json.dumps({
        "kind": product.kind,
        "coefficients": product.coefficients,
        "reference_id": product.reference_id,
        "amf": product.amf,
        "negative_pixels": product.negative_pixels,
        "saturated_pixels": product.saturated_pixels,
    }, indent=2))
