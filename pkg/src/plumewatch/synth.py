"""Deterministic synthetic corpus generation for tests and desk-scale runs.

Backgrounds are smooth per-site textures with correlated SWIR bands: SWIR2
tracks SWIR1 through a site-specific ratio plus a small per-pass
decorrelation noise, which is exactly the noise floor the band-ratio
retrieval sees. Plume concentration fields come from a meandering-puff walk
(widening and decaying downwind of the source pixel), thresholded so the
mask equals the positive support. Every generator is seeded; identical
seeds give identical corpora.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import quantify
from .cloudmask import ThresholdCloudMask
from .raster import Band, BAND_INDEX, CropExtent, Satellite, Scene, compute_validity_mask
from .rtlut import RtLut
from .simulator import (
    PlumeRecord,
    PositiveExample,
    ScenePair,
    SimulationPolicy,
    SiteEntry,
    TrainingIndex,
    inject_plume,
    rotate_to_wind,
    sample_donor_plume,
)
from .training import Corpus, ValExample

_EPOCH_START = datetime(2023, 1, 1, 8, 0, tzinfo=timezone.utc)


@dataclass
class SiteSpec:
    site_id: str
    seed: int
    country: str = "Synthland"
    swir1_mean: float = 0.30
    swir_ratio: float = 0.62  # background SWIR2/SWIR1
    texture_sigma: float = 5.0
    texture_amp: float = 0.35
    swir_decorrelation: float = 1e-4  # per-pass SWIR2-vs-SWIR1 pixel noise
    gain_jitter: float = 0.03  # per-pass per-band brightness jitter
    wind_speed_range: tuple[float, float] = (1.5, 8.0)
    hole_probability: float = 0.2  # chance a pass has a missing-data patch
    offshore: bool = False

    def texture(self, shape) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        raw = gaussian_filter(rng.standard_normal(shape), self.texture_sigma)
        raw -= raw.mean()
        peak = np.abs(raw).max()
        return raw / peak if peak > 0 else raw


_BAND_MEANS = {
    Band.BLUE: 0.10,
    Band.GREEN: 0.13,
    Band.RED: 0.18,
    Band.NIR: 0.25,
}


def render_scene(
    spec: SiteSpec,
    pass_index: int,
    shape: tuple[int, int] = (64, 64),
    wind: tuple[float, float] | None = None,
    cloudy: bool = False,
) -> Scene:
    """One synthetic pass over a site; pass_index seeds all per-pass variation."""
    rng = np.random.default_rng((spec.seed, pass_index, 7919))
    texture = spec.texture(shape)
    h, w = shape
    bands = np.zeros((6, h, w), dtype=np.float32)
    for band, mean in _BAND_MEANS.items():
        gain = 1.0 + spec.gain_jitter * rng.standard_normal()
        bands[BAND_INDEX[band]] = mean * (1.0 + spec.texture_amp * texture) * gain
    gain1 = 1.0 + spec.gain_jitter * rng.standard_normal()
    gain2 = 1.0 + spec.gain_jitter * rng.standard_normal()
    swir1 = spec.swir1_mean * (1.0 + spec.texture_amp * texture) * gain1
    decorr = 1.0 + spec.swir_decorrelation * rng.standard_normal(shape)
    swir2 = spec.swir_ratio * swir1 * gain2 * decorr
    bands[BAND_INDEX[Band.SWIR1]] = swir1
    bands[BAND_INDEX[Band.SWIR2]] = swir2
    bands = np.clip(bands, 0.01, None).astype(np.float32)

    if cloudy:
        # Bright blue pixels over most of the crop: the threshold mask will
        # flag them and fail the 50% usability rule.
        rows = int(h * 0.8)
        bands[BAND_INDEX[Band.BLUE], :rows, :] = 0.4
    elif rng.random() < spec.hole_probability:
        hh = int(rng.integers(4, max(5, h // 6)))
        ww = int(rng.integers(4, max(5, w // 6)))
        r0 = int(rng.integers(0, h - hh))
        c0 = int(rng.integers(0, w - ww))
        bands[:, r0:r0 + hh, c0:c0 + ww] = np.nan

    if wind is None:
        speed = rng.uniform(*spec.wind_speed_range)
        theta = rng.uniform(0.0, 2.0 * math.pi)
        wind = (speed * math.cos(theta), speed * math.sin(theta))

    validity = compute_validity_mask(bands, ThresholdCloudMask())
    x0 = 500000.0
    y0 = 4000000.0
    return Scene(
        site_id=spec.site_id,
        satellite=Satellite.S2A,
        timestamp=_EPOCH_START + timedelta(days=5 * pass_index, hours=hash(spec.site_id) % 3),
        bands=bands,
        validity_mask=validity,
        wind=wind,
        crop_extent=CropExtent(x0, y0, x0 + w * 10.0, y0 + h * 10.0, epsg=32640),
        wind_source="geos-fp" if spec.offshore else "era5-land",
    )


def make_plume(
    rng: np.random.Generator,
    plume_id: str,
    shape: tuple[int, int] = (64, 64),
    peak_ppbm: float | None = None,
    mask_floor_ppbm: float = 250.0,
    wind: tuple[float, float] | None = None,
) -> PlumeRecord:
    """Meandering-puff concentration field downwind of the crop centre."""
    h, w = shape
    if wind is None:
        speed = rng.uniform(2.0, 8.0)
        theta = rng.uniform(0.0, 2.0 * math.pi)
        wind = (speed * math.cos(theta), speed * math.sin(theta))
    if peak_ppbm is None:
        peak_ppbm = rng.uniform(4000.0, 15000.0)
    # Unit step in (row, col): northward wind points up the raster (-row).
    speed = math.hypot(*wind)
    direction = np.array([-wind[1] / speed, wind[0] / speed])
    n_steps = max(8, int(min(h, w) * 0.28))
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    fieldv = np.zeros(shape)
    cross = 0.0
    for k in range(n_steps):
        cross += rng.normal(0.0, 0.35)
        centre = (
            cy + direction[0] * k + -direction[1] * cross * 0.3,
            cx + direction[1] * k + direction[0] * cross * 0.3,
        )
        sigma = 1.3 + 0.09 * k
        amp = math.exp(-1.4 * k / n_steps)
        fieldv += amp * np.exp(
            -(((rows - centre[0]) ** 2 + (cols - centre[1]) ** 2) / (2.0 * sigma**2))
        )
    fieldv *= peak_ppbm / fieldv.max()
    mask = fieldv >= mask_floor_ppbm
    fieldv = np.where(mask, fieldv, 0.0).astype(np.float32)
    flux = quantify.flux(fieldv, mask, wind).flux_kg_h
    return PlumeRecord(
        plume_id=plume_id,
        site_id="library",
        dch4=fieldv,
        mask=mask,
        wind_at_acq=wind,
        flux_kg_h=flux,
        timestamp="2022-06-01T08:00:00Z",
    )


def make_plume_library(
    seed: int, n: int = 40, shape: tuple[int, int] = (64, 64)
) -> list[PlumeRecord]:
    rng = np.random.default_rng(seed)
    # Donor wind speeds cover the full simulatable range so any target wind
    # below the cutoff finds a match within tolerance.
    return [
        make_plume(
            rng,
            plume_id=f"lib{i:03d}",
            shape=shape,
            wind=_wind(rng, speed=rng.uniform(1.0, 8.5)),
        )
        for i in range(n)
    ]


def _wind(rng, speed):
    theta = rng.uniform(0.0, 2.0 * math.pi)
    return (speed * math.cos(theta), speed * math.sin(theta))


def default_site_specs(n_sites: int = 8, seed: int = 101) -> list[SiteSpec]:
    rng = np.random.default_rng(seed)
    specs = []
    for i in range(n_sites):
        specs.append(SiteSpec(
            site_id=f"site_{i}",
            seed=int(rng.integers(1, 2**31)),
            swir1_mean=float(rng.uniform(0.22, 0.38)),
            swir_ratio=float(rng.uniform(0.52, 0.72)),
            texture_sigma=float(rng.uniform(3.5, 8.0)),
            texture_amp=float(rng.uniform(0.25, 0.45)),
        ))
    return specs


def shifted_site_spec(seed: int = 555) -> SiteSpec:
    """A distribution-shifted site: dark, noisy, offshore-like background.

    The decorrelation noise sits close to the weak-plume signal level, so a
    detector trained on the standard sites scores this site poorly until its
    own conditioning bank is learned.
    """
    return SiteSpec(
        site_id="site_shifted",
        seed=seed,
        country="Offshoria",
        swir1_mean=0.09,
        swir_ratio=0.85,
        texture_sigma=2.0,
        texture_amp=0.6,
        swir_decorrelation=1.5e-3,
        gain_jitter=0.05,
        hole_probability=0.0,
        offshore=True,
    )


@dataclass
class SiteSeries:
    """The raw per-site pass series with injected 'real' positives."""

    spec: SiteSpec
    pairs: list[ScenePair] = field(default_factory=list)
    masks: list[np.ndarray | None] = field(default_factory=list)  # None = negative


def build_site_series(
    spec: SiteSpec,
    lut: RtLut,
    library: list[PlumeRecord],
    n_passes: int,
    positive_rate: float,
    seed: int,
    shape: tuple[int, int] = (64, 64),
    max_positives: int | None = None,
    peak_scale: float = 1.0,
) -> SiteSeries:
    """Sequential passes; each pairs with the previous clear pass as reference.

    Positives are created by wind-consistent injection at build time and act
    as the site's verified real plumes downstream.
    """
    rng = np.random.default_rng(seed)
    policy = SimulationPolicy()
    series = SiteSeries(spec=spec)
    previous_clear: Scene | None = None
    n_pos = 0
    for i in range(n_passes):
        scene = render_scene(spec, i, shape)
        if previous_clear is None:
            previous_clear = scene
            continue
        make_positive = rng.random() < positive_rate and (
            max_positives is None or n_pos < max_positives
        )
        injected_mask = None
        if make_positive:
            donor = sample_donor_plume(library, scene.wind, policy, rng)
            if donor is not None:
                rotated = rotate_to_wind(donor, scene.wind)
                if peak_scale != 1.0 and rotated.mask.any():
                    scaled = (rotated.dch4 * peak_scale).astype(np.float32)
                    rotated = PlumeRecord(
                        plume_id=rotated.plume_id,
                        site_id=rotated.site_id,
                        dch4=scaled,
                        mask=scaled > 0,
                        wind_at_acq=rotated.wind_at_acq,
                        flux_kg_h=rotated.flux_kg_h * peak_scale,
                        satellite=rotated.satellite,
                        timestamp=rotated.timestamp,
                        source_px=rotated.source_px,
                    )
                if rotated.mask.any():
                    scene = inject_plume(scene, rotated, lut)
                    injected_mask = rotated.mask
                    n_pos += 1
        series.pairs.append(ScenePair(scene=scene, reference=previous_clear))
        series.masks.append(injected_mask)
        if injected_mask is None:
            previous_clear = scene
    return series


def series_to_corpus(
    all_series: list[SiteSeries],
    library: list[PlumeRecord],
    val_fraction: float = 0.2,
) -> Corpus:
    """Time-split every site's series into a sampler index and raw val pairs."""
    sites = []
    val: list[ValExample] = []
    for series in all_series:
        n = len(series.pairs)
        n_train = int(round(n * (1.0 - val_fraction)))
        entry = SiteEntry(site_id=series.spec.site_id)
        for pair, mask in zip(series.pairs[:n_train], series.masks[:n_train]):
            if mask is None:
                entry.negatives.append(pair)
            else:
                entry.positives.append(PositiveExample(pair=pair, mask=mask))
        sites.append(entry)
        for pair, mask in zip(series.pairs[n_train:], series.masks[n_train:]):
            val.append(ValExample(
                scene=pair.scene,
                reference=pair.reference,
                mask=mask,
                label="plume" if mask is not None else "no_plume",
                site_id=series.spec.site_id,
            ))
    return Corpus(index=TrainingIndex(sites=sites, plume_library=library), val=val)


def make_training_corpus(
    lut: RtLut,
    seed: int = 202,
    n_sites: int = 8,
    passes_per_site: int = 250,
    shape: tuple[int, int] = (64, 64),
    positive_rate: float = 0.1,
) -> Corpus:
    """The desk-scale corpus: ~n_sites*passes_per_site scenes, 10% plumes.

    Site tiers are varied on purpose: most sites have plenty of real
    positives, one has exactly three and one has none, so every simulation
    probability tier is exercised by the sampler.
    """
    specs = default_site_specs(n_sites, seed)
    library = make_plume_library(seed + 1, n=40, shape=shape)
    rng = np.random.default_rng(seed + 2)
    all_series = []
    for i, spec in enumerate(specs):
        if i == n_sites - 2:
            cap, rate = 3, 0.05
        elif i == n_sites - 1:
            cap, rate = 0, 0.0
        else:
            cap, rate = None, positive_rate
        all_series.append(build_site_series(
            spec, lut, library, passes_per_site, rate,
            seed=int(rng.integers(1, 2**31)), shape=shape, max_positives=cap,
        ))
    return series_to_corpus(all_series, library)


def make_shifted_site_corpus(
    lut: RtLut,
    seed: int = 606,
    passes: int = 120,
    shape: tuple[int, int] = (64, 64),
) -> Corpus:
    """Series for the held-out shifted site: weak plumes, alien background."""
    spec = shifted_site_spec(seed)
    library = make_plume_library(seed + 1, n=24, shape=shape)
    series = build_site_series(
        spec, lut, library, passes, positive_rate=0.35,
        seed=seed + 2, shape=shape, peak_scale=0.12,
    )
    return series_to_corpus([series], library, val_fraction=0.5)


# ---------------------------------------------------------------------------
# Disk fixtures
# ---------------------------------------------------------------------------


def bundle_name(scene: Scene) -> str:
    return scene.timestamp.strftime("%Y%m%dT%H%M%S")


def write_corpus_to_disk(root, series_list, library, site_specs) -> None:
    """Materialize a corpus as registry.csv + scenes/ + plumes/ bundles."""
    from .raster import SiteRecord, save_scene, save_site_registry
    from .simulator import save_plume

    root = Path(root)
    records = []
    for spec in site_specs:
        records.append(SiteRecord(
            site_id=spec.site_id, lon=54.0 + len(records) * 0.05, lat=38.5,
            country=spec.country, sector="offshore" if spec.offshore else "oil_gas",
            offshore=spec.offshore,
        ))
    root.mkdir(parents=True, exist_ok=True)
    save_site_registry(records, root / "registry.csv")
    for plume in library:
        save_plume(plume, root / "plumes")
    for series in series_list:
        site_dir = root / "scenes" / series.spec.site_id
        seen = set()
        for pair in series.pairs:
            for scene in (pair.reference, pair.scene):
                if scene.scene_id in seen:
                    continue
                seen.add(scene.scene_id)
                save_scene(scene, site_dir / bundle_name(scene))


_FIXTURE_SPECS = (
    SiteSpec(site_id="fixture_a", seed=777, hole_probability=0.0),
    SiteSpec(site_id="fixture_b", seed=778, hole_probability=0.0,
             offshore=True, swir1_mean=0.12, swir_ratio=0.8, country="Offshoria"),
)


def write_fixture_history(root, shape: tuple[int, int] = (64, 64)):
    """Registry plus three clear archive passes per fixture site."""
    from .raster import SiteRecord, save_scene, save_site_registry

    root = Path(root)
    spec_a, spec_b = _FIXTURE_SPECS
    registry = [
        SiteRecord(site_id=spec_a.site_id, lon=54.1, lat=38.2, country=spec_a.country,
                   sector="oil_gas", offshore=False),
        SiteRecord(site_id=spec_b.site_id, lon=100.5, lat=8.8, country=spec_b.country,
                   sector="offshore", offshore=True),
    ]
    save_site_registry(registry, root / "registry.csv")
    history_ids = []
    for spec in (spec_a, spec_b):
        site_dir = root / "scenes" / spec.site_id
        for i in range(3):
            scene = render_scene(spec, i, shape)
            save_scene(scene, site_dir / bundle_name(scene))
            history_ids.append(scene.scene_id)
    return registry, history_ids


def write_fixture_scan_day(root, lut: RtLut, seed: int = 779,
                           shape: tuple[int, int] = (64, 64)):
    """One scan day: for site A a plume pass, a clear pass and a cloudy pass
    (validity-rejected); for offshore site B one clear single-pass scene."""
    from .raster import save_scene

    root = Path(root)
    rng = np.random.default_rng(seed)
    spec_a, spec_b = _FIXTURE_SPECS
    expected = {"alerts": [], "rejected": [], "plume_scene": None}

    site_dir = root / "scenes" / spec_a.site_id
    clear = render_scene(spec_a, 3, shape)
    save_scene(clear, site_dir / bundle_name(clear))
    expected["alerts"].append(clear.scene_id)

    plume_scene = render_scene(spec_a, 4, shape)
    donor = make_plume(rng, "fixture_day", shape=shape, peak_ppbm=9000.0,
                       wind=plume_scene.wind)
    injected = inject_plume(plume_scene, donor, lut)
    save_scene(injected, site_dir / bundle_name(injected))
    expected["alerts"].append(injected.scene_id)
    expected["plume_scene"] = injected.scene_id

    cloudy = render_scene(spec_a, 5, shape, cloudy=True)
    save_scene(cloudy, site_dir / bundle_name(cloudy))
    expected["rejected"].append(cloudy.scene_id)

    site_dir = root / "scenes" / spec_b.site_id
    offshore_pass = render_scene(spec_b, 3, shape)
    save_scene(offshore_pass, site_dir / bundle_name(offshore_pass))
    expected["alerts"].append(offshore_pass.scene_id)
    return expected
