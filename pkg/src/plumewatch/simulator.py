"""Wind-consistent plume injection and the stratified training sampler.

Synthetic positives reuse real retrieved concentration fields rather than
parametric plume shapes: a donor plume is drawn whose wind speed is within
tolerance of the target scene's, rotated about the source pixel to match
the target wind direction, converted to per-band transmittance through the
LUT, and multiplied into the target's SWIR bands. Scenes windier than the
cutoff never receive a synthetic plume (a weak plume would not survive that
wind, and the model sees wind as an input).

The training sampler balances sites and classes: a uniformly random site, a
coin flip for plume presence, and a site-tier probability of simulating
versus replaying a real positive, preferring real data where it exists.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .raster import Band, BAND_INDEX, Scene, SyntheticTruth, write_band_tif, read_band_tif
from .rtlut import RtLut, amf_from_angles, interp_tau


class SimulatorError(Exception):
    pass


class DirectionUndefined(SimulatorError):
    pass


class ExtentError(SimulatorError):
    pass


class SamplerStarvation(SimulatorError):
    pass


@dataclass
class PlumeRecord:
    """A labelled plume: concentration raster, mask and acquisition context."""

    plume_id: str
    site_id: str
    dch4: np.ndarray  # (H, W) ppb m, > 0 exactly on mask pixels
    mask: np.ndarray  # (H, W) bool, non-empty
    wind_at_acq: tuple[float, float]
    flux_kg_h: float
    satellite: str = "S2A"
    timestamp: str = ""
    source_px: tuple[int, int] | None = None  # defaults to the crop centre

    def __post_init__(self):
        self.dch4 = np.asarray(self.dch4, dtype=np.float32)
        self.mask = np.asarray(self.mask, dtype=bool)
        if not self.mask.any():
            raise ValueError(f"plume {self.plume_id}: empty mask")
        if not np.all((self.dch4 > 0) == self.mask):
            raise ValueError(f"plume {self.plume_id}: dch4 support must equal the mask")
        if not all(math.isfinite(w) for w in self.wind_at_acq):
            raise ValueError(f"plume {self.plume_id}: non-finite wind")

    @property
    def wind_speed(self) -> float:
        return math.hypot(*self.wind_at_acq)

    @property
    def pivot(self) -> tuple[float, float]:
        if self.source_px is not None:
            return (float(self.source_px[0]), float(self.source_px[1]))
        return ((self.dch4.shape[0] - 1) / 2.0, (self.dch4.shape[1] - 1) / 2.0)


@dataclass
class SimulationPolicy:
    wind_tolerance: float = 1.5  # m/s, donor speed must match target within this
    max_wind: float = 9.0  # m/s, above which no plume is simulated
    p_synthetic_when_0_real: float = 1.0
    p_synthetic_when_1to5_real: float = 0.9
    p_synthetic_when_gt5_real: float = 0.1
    p_positive: float = 0.5  # plume/no-plume indicator coin
    seed: int | None = None

    def __post_init__(self):
        for name in ("p_synthetic_when_0_real", "p_synthetic_when_1to5_real",
                     "p_synthetic_when_gt5_real", "p_positive"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability, got {getattr(self, name)}")
        if self.wind_tolerance <= 0 or self.max_wind <= 0:
            raise ValueError("wind tolerances must be positive")

    def tier_probability(self, n_real_positives: int) -> float:
        if n_real_positives == 0:
            return self.p_synthetic_when_0_real
        if n_real_positives <= 5:
            return self.p_synthetic_when_1to5_real
        return self.p_synthetic_when_gt5_real

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def sample_donor_plume(
    library: list[PlumeRecord],
    target_wind: tuple[float, float],
    policy: SimulationPolicy,
    rng: np.random.Generator,
) -> PlumeRecord | None:
    """Uniform donor among plumes whose wind speed matches the target's.

    Returns None when the target is too windy to simulate or when no donor
    qualifies; both are expected outcomes, not errors.
    """
    target_speed = math.hypot(*target_wind)
    if target_speed > policy.max_wind:
        return None
    candidates = [p for p in library if abs(p.wind_speed - target_speed) <= policy.wind_tolerance]
    if not candidates:
        return None
    return candidates[rng.integers(len(candidates))]


def rotate_to_wind(plume: PlumeRecord, target_wind: tuple[float, float]) -> PlumeRecord:
    """Rotate the plume about its source pixel onto the target wind direction.

    Bilinear resampling for the concentration field, nearest for the mask;
    the rotated mask is re-intersected with the positive support so the
    record invariant (dch4 > 0 exactly on mask) survives interpolation.
    """
    if math.hypot(*target_wind) == 0.0:
        raise DirectionUndefined("target wind has zero speed")
    if plume.wind_speed == 0.0:
        raise DirectionUndefined(f"plume {plume.plume_id} has zero wind speed")
    angle = math.atan2(target_wind[1], target_wind[0]) - math.atan2(
        plume.wind_at_acq[1], plume.wind_at_acq[0]
    )
    angle = math.remainder(angle, 2.0 * math.pi)
    if abs(angle) < 1e-12:
        return replace(plume, wind_at_acq=tuple(target_wind))

    cy, cx = plume.pivot
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    # Geographic rotation by `angle` (counterclockwise, y north = -row) as an
    # output->input affine map in (row, col) coordinates.
    matrix = np.array([[cos_a, sin_a], [-sin_a, cos_a]])
    offset = np.array([cy - sin_a * cx - cos_a * cy, cx + sin_a * cy - cos_a * cx])
    dch4 = ndimage.affine_transform(
        plume.dch4.astype(np.float64), matrix, offset=offset, order=1, cval=0.0
    )
    mask = ndimage.affine_transform(
        plume.mask.astype(np.uint8), matrix, offset=offset, order=0, cval=0
    ).astype(bool)
    mask &= dch4 > 0
    dch4 = np.where(mask, dch4, 0.0).astype(np.float32)
    return replace(plume, dch4=dch4, mask=mask, wind_at_acq=tuple(target_wind))


def inject_plume(scene: Scene, plume: PlumeRecord, lut: RtLut) -> Scene:
    """Multiply the plume's transmittance into the scene's SWIR bands.

    The scene must be plume-free and the plume already rotated to the scene
    wind. The returned scene carries synthetic provenance: ground-truth mask,
    injected columns and the donor wind.
    """
    if plume.dch4.shape != scene.bands.shape[1:]:
        raise ExtentError(
            f"plume {plume.dch4.shape} does not fit scene crop {scene.bands.shape[1:]}"
        )
    if scene.truth is not None:
        raise SimulatorError(f"scene {scene.scene_id} already carries an injected plume")
    amf = amf_from_angles(scene.solar_zenith_deg, scene.view_zenith_deg)
    bands = scene.bands.copy()
    for band in (Band.SWIR1, Band.SWIR2):
        # Zero columns pass through bitwise: tau(0, .) = 1 by table invariant.
        tau = np.where(plume.dch4 > 0, interp_tau(lut, band.value, plume.dch4, amf), 1.0)
        idx = BAND_INDEX[band]
        bands[idx] = (bands[idx].astype(np.float64) * tau).astype(np.float32)
    truth = SyntheticTruth(
        plume_id=plume.plume_id,
        mask=plume.mask.copy(),
        dch4=plume.dch4.copy(),
        donor_wind=tuple(plume.wind_at_acq),
    )
    return scene.with_bands(bands, truth=truth)


# ---------------------------------------------------------------------------
# Training sampler
# ---------------------------------------------------------------------------


@dataclass
class ScenePair:
    """A pass and its selected reference, the unit the detector consumes."""

    scene: Scene
    reference: Scene


@dataclass
class PositiveExample:
    pair: ScenePair
    mask: np.ndarray


@dataclass
class SiteEntry:
    site_id: str
    negatives: list[ScenePair] = field(default_factory=list)
    positives: list[PositiveExample] = field(default_factory=list)


@dataclass
class TrainingIndex:
    sites: list[SiteEntry]
    plume_library: list[PlumeRecord]


@dataclass
class TrainingSample:
    scene: Scene
    reference: Scene
    mask: np.ndarray
    is_synthetic: bool


def _try_synthetic(
    site: SiteEntry,
    library: list[PlumeRecord],
    policy: SimulationPolicy,
    rng: np.random.Generator,
    lut: RtLut,
) -> TrainingSample | None:
    if not site.negatives or not library:
        return None
    pair = site.negatives[rng.integers(len(site.negatives))]
    if pair.scene.wind_speed > policy.max_wind:
        return None
    donor = sample_donor_plume(library, pair.scene.wind, policy, rng)
    if donor is None:
        return None
    rotated = rotate_to_wind(donor, pair.scene.wind)
    if not rotated.mask.any():
        return None
    injected = inject_plume(pair.scene, rotated, lut)
    # Provenance keeps the donor's acquisition wind (pre-rotation), so the
    # wind-tolerance rule stays auditable on every synthetic sample.
    truth = replace(injected.truth, donor_wind=tuple(donor.wind_at_acq))
    injected = replace(injected, truth=truth)
    return TrainingSample(scene=injected, reference=pair.reference,
                          mask=rotated.mask, is_synthetic=True)


def draw_training_sample(
    index: TrainingIndex,
    policy: SimulationPolicy,
    rng: np.random.Generator,
    lut: RtLut,
    max_attempts: int = 100,
) -> TrainingSample:
    """One stratified draw: uniform site, plume coin, tiered simulation.

    Failed synthetic draws (windy scene, no qualifying donor) fall back to a
    real positive when the site has one, otherwise the location is
    resampled. Raises SamplerStarvation if no site can satisfy the request
    within the attempt budget.
    """
    for _ in range(max_attempts):
        site = index.sites[rng.integers(len(index.sites))]
        want_plume = rng.random() < policy.p_positive
        if not want_plume:
            if not site.negatives:
                continue
            pair = site.negatives[rng.integers(len(site.negatives))]
            zero = np.zeros(pair.scene.bands.shape[1:], dtype=bool)
            return TrainingSample(scene=pair.scene, reference=pair.reference,
                                  mask=zero, is_synthetic=False)
        p_syn = policy.tier_probability(len(site.positives))
        if rng.random() < p_syn:
            sample = _try_synthetic(site, index.plume_library, policy, rng, lut)
            if sample is not None:
                return sample
        if site.positives:
            chosen = site.positives[rng.integers(len(site.positives))]
            return TrainingSample(scene=chosen.pair.scene, reference=chosen.pair.reference,
                                  mask=chosen.mask.astype(bool), is_synthetic=False)
    raise SamplerStarvation(f"no viable sample after {max_attempts} attempts")


# ---------------------------------------------------------------------------
# Plume library persistence: plume_{id}/dch4.tif + mask.tif + plume.json
# ---------------------------------------------------------------------------


def save_plume(plume: PlumeRecord, root) -> Path:
    from .raster import CropExtent

    directory = Path(root) / f"plume_{plume.plume_id}"
    directory.mkdir(parents=True, exist_ok=True)
    extent = CropExtent(0.0, 0.0, plume.dch4.shape[1] * 10.0, plume.dch4.shape[0] * 10.0)
    write_band_tif(directory / "dch4.tif", plume.dch4, extent, 10.0)
    write_band_tif(directory / "mask.tif", plume.mask.astype(np.float32), extent, 10.0)
    (directory / "plume.json").write_text(json.dumps({
        "plume_id": plume.plume_id,
        "site_id": plume.site_id,
        "wind_at_acq": list(plume.wind_at_acq),
        "flux_kg_h": plume.flux_kg_h,
        "satellite": plume.satellite,
        "timestamp": plume.timestamp,
        "source_px": list(plume.source_px) if plume.source_px else None,
    }, indent=2))
    return directory


def load_plume(directory) -> PlumeRecord:
    directory = Path(directory)
    meta = json.loads((directory / "plume.json").read_text())
    dch4, _, _, _ = read_band_tif(directory / "dch4.tif")
    mask, _, _, _ = read_band_tif(directory / "mask.tif")
    return PlumeRecord(
        plume_id=meta["plume_id"],
        site_id=meta["site_id"],
        dch4=dch4,
        mask=mask > 0.5,
        wind_at_acq=tuple(meta["wind_at_acq"]),
        flux_kg_h=float(meta["flux_kg_h"]),
        satellite=meta.get("satellite", "S2A"),
        timestamp=meta.get("timestamp", ""),
        source_px=tuple(meta["source_px"]) if meta.get("source_px") else None,
    )


def load_plume_library(root) -> list[PlumeRecord]:
    root = Path(root)
    return [load_plume(d) for d in sorted(root.glob("plume_*")) if d.is_dir()]
