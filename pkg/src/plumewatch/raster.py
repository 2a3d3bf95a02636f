"""Raster data model and I/O for site-centric satellite crops.

A scene is one satellite pass over a monitored emitter site: the six
multispectral bands shared by Sentinel-2 MSI and Landsat 8/9 OLI, resampled
to a common 10 m grid, plus a per-pixel validity mask, the 10 m wind vector
and acquisition metadata. Scenes are stored on disk as one single-band
float32 GeoTIFF per band next to a ``meta.json`` sidecar.

Missing data is represented as quiet NaN in the rasters and as ``False`` in
the validity mask; there is no magic nodata sentinel that could collide with
a real reflectance value.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

import numpy as np
import tifffile


class RasterError(Exception):
    """Base class for raster-core failures."""


class BandMissing(RasterError):
    pass


class GridMismatch(RasterError):
    pass


class FormatError(RasterError):
    pass


class StencilError(RasterError):
    pass


class RegistryConflict(RasterError):
    pass


class Band(Enum):
    BLUE = "BLUE"
    GREEN = "GREEN"
    RED = "RED"
    NIR = "NIR"
    SWIR1 = "SWIR1"
    SWIR2 = "SWIR2"


#: Fixed channel order of the (6, H, W) band stack.
BAND_ORDER = (Band.BLUE, Band.GREEN, Band.RED, Band.NIR, Band.SWIR1, Band.SWIR2)

BAND_INDEX = {band: i for i, band in enumerate(BAND_ORDER)}


class Satellite(Enum):
    S2A = "S2A"
    S2B = "S2B"
    L8 = "L8"
    L9 = "L9"

    @property
    def family(self) -> str:
        return "S2" if self in (Satellite.S2A, Satellite.S2B) else "LS"


# Band-id -> file stem, per sensor naming convention. Loading tries both
# conventions so Landsat bundles can reuse the same directory layout.
_S2_BAND_FILES = {
    Band.BLUE: "B02",
    Band.GREEN: "B03",
    Band.RED: "B04",
    Band.NIR: "B08",
    Band.SWIR1: "B11",
    Band.SWIR2: "B12",
}
_LANDSAT_BAND_FILES = {
    Band.BLUE: "B2",
    Band.GREEN: "B3",
    Band.RED: "B4",
    Band.NIR: "B5",
    Band.SWIR1: "B6",
    Band.SWIR2: "B7",
}

TARGET_RESOLUTION_M = 10.0


@dataclass(frozen=True)
class BandRaster:
    """A single band as read from disk, before resampling."""

    band_id: Band
    grid: np.ndarray  # 2-D float32, NaN where missing
    resolution_m: float


@dataclass(frozen=True)
class CropExtent:
    """Georeferenced bounding box of the site crop, in projected metres."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    epsg: int = 32632

    @property
    def width_m(self) -> float:
        return self.x_max - self.x_min

    @property
    def height_m(self) -> float:
        return self.y_max - self.y_min


@dataclass(frozen=True)
class SyntheticTruth:
    """Provenance attached to scenes with an injected plume."""

    plume_id: str
    mask: np.ndarray  # (H, W) bool, ground-truth plume mask
    dch4: np.ndarray  # (H, W) float32, injected column enhancement (ppb m)
    donor_wind: tuple[float, float]


@dataclass(frozen=True)
class Scene:
    """One satellite pass over a site, normalized to the 10 m grid."""

    site_id: str
    satellite: Satellite
    timestamp: datetime
    bands: np.ndarray  # (6, H, W) float32 in BAND_ORDER
    validity_mask: np.ndarray  # (H, W) bool, True = usable pixel
    wind: tuple[float, float]  # (u10, v10) m/s eastward/northward
    crop_extent: CropExtent
    solar_zenith_deg: float = 30.0
    view_zenith_deg: float = 5.0
    wind_source: str = "era5-land"
    truth: SyntheticTruth | None = None

    @property
    def height(self) -> int:
        return self.bands.shape[1]

    @property
    def width(self) -> int:
        return self.bands.shape[2]

    @property
    def wind_speed(self) -> float:
        return math.hypot(self.wind[0], self.wind[1])

    @property
    def scene_id(self) -> str:
        # ":" keeps the id URL-path-safe while staying readable.
        return f"{self.site_id}:{self.timestamp.strftime('%Y%m%dT%H%M%S')}"

    def band(self, band_id: Band) -> np.ndarray:
        return self.bands[BAND_INDEX[band_id]]

    def with_bands(self, bands: np.ndarray, truth: SyntheticTruth | None = None) -> "Scene":
        return replace(self, bands=bands, truth=truth if truth is not None else self.truth)


@dataclass
class SiteRecord:
    site_id: str
    lon: float
    lat: float
    country: str
    sector: str  # oil_gas | coal | landfill | offshore
    offshore: bool
    active: bool = True
    film_bank_id: str | None = None

    def __post_init__(self):
        if not -180.0 <= self.lon <= 180.0:
            raise FormatError(f"site {self.site_id}: lon {self.lon} out of [-180, 180]")
        if not -90.0 <= self.lat <= 90.0:
            raise FormatError(f"site {self.site_id}: lat {self.lat} out of [-90, 90]")


@dataclass(frozen=True)
class ValidityReport:
    fraction_cloud: float
    fraction_shadow: float
    fraction_missing: float

    @property
    def usable(self) -> bool:
        # Scenes are discarded when more than half the crop is cloud,
        # cloud shadow or missing; exactly 50% is still usable.
        return (self.fraction_cloud + self.fraction_shadow + self.fraction_missing) <= 0.5


# ---------------------------------------------------------------------------
# Bicubic resampling
# ---------------------------------------------------------------------------


def _lagrange_taps(n_in: int, factor: int):
    """Stencil indices and cubic Lagrange weights for one axis.

    Output pixel centres map onto input coordinates with the pixel-centre
    convention x = (i + 0.5) / factor - 0.5, so an upsampled grid re-samples
    the same underlying field at finer spacing. Near the borders the 4-tap
    stencil is shifted inside the grid; the one-sided Lagrange polynomial
    still reproduces cubics exactly.
    """
    x = (np.arange(n_in * factor, dtype=np.float64) + 0.5) / factor - 0.5
    base = np.clip(np.floor(x).astype(np.int64) - 1, 0, n_in - 4)
    nodes = base[:, None] + np.arange(4)[None, :]  # (n_out, 4)
    weights = np.ones((x.size, 4), dtype=np.float64)
    for j in range(4):
        for k in range(4):
            if k != j:
                weights[:, j] *= (x - nodes[:, k]) / (nodes[:, j] - nodes[:, k])
    return nodes, weights


def _interp_axis0(grid: np.ndarray, nodes: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # Delta form around stencil node 1: constants pass through bitwise, and a
    # NaN anywhere in the stencil still poisons the output pixel.
    anchor = grid[nodes[:, 1]]
    out = anchor.astype(np.float64, copy=True)
    for k in range(4):
        out += weights[:, k, None] * (grid[nodes[:, k]] - anchor)
    return out


def resample_bicubic(grid: np.ndarray, factor: int) -> np.ndarray:
    """Upsample a 2-D raster by an integer factor with bicubic interpolation.

    Separable 4-point cubic Lagrange interpolation: exact for polynomial
    surfaces up to degree 3 in each axis. NaN propagates to every output
    pixel whose 4x4 stencil touches a NaN input.
    """
    if factor not in (1, 2, 3):
        raise ValueError(f"resample factor must be 1, 2 or 3, got {factor}")
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ValueError("expected a 2-D raster")
    if grid.shape[0] < 4 or grid.shape[1] < 4:
        raise StencilError(f"grid {grid.shape} too small for a 4x4 bicubic stencil")
    if factor == 1:
        return grid.copy()
    work = grid.astype(np.float64)
    nodes_r, w_r = _lagrange_taps(grid.shape[0], factor)
    work = _interp_axis0(work, nodes_r, w_r)
    nodes_c, w_c = _lagrange_taps(grid.shape[1], factor)
    work = _interp_axis0(work.T, nodes_c, w_c).T
    return work.astype(grid.dtype) if grid.dtype == np.float64 else work.astype(np.float32)


# ---------------------------------------------------------------------------
# Validity accounting
# ---------------------------------------------------------------------------


def validity_report(scene: Scene, mask) -> ValidityReport:
    """Fractions of cloud, shadow and missing pixels over the full crop.

    ``mask`` is any cloud-mask implementation exposing
    ``compute(bands) -> (cloud, shadow)`` (see :mod:`plumewatch.cloudmask`),
    or a precomputed ``(cloud, shadow)`` pair of boolean rasters. The three
    classes are made disjoint with precedence missing > cloud > shadow.
    """
    if hasattr(mask, "compute"):
        cloud, shadow = mask.compute(scene.bands)
    else:
        cloud, shadow = mask
    cloud = np.asarray(cloud, dtype=bool)
    shadow = np.asarray(shadow, dtype=bool)
    if cloud.shape != scene.bands.shape[1:] or shadow.shape != scene.bands.shape[1:]:
        raise GridMismatch(
            f"cloud mask shape {cloud.shape} does not match scene {scene.bands.shape[1:]}"
        )
    missing = np.isnan(scene.bands).any(axis=0)
    cloud = cloud & ~missing
    shadow = shadow & ~missing & ~cloud
    n = missing.size
    return ValidityReport(
        fraction_cloud=float(cloud.sum()) / n,
        fraction_shadow=float(shadow.sum()) / n,
        fraction_missing=float(missing.sum()) / n,
    )


def compute_validity_mask(bands: np.ndarray, mask) -> np.ndarray:
    """Boolean per-pixel usability: not missing, not cloud, not shadow."""
    if hasattr(mask, "compute"):
        cloud, shadow = mask.compute(bands)
    else:
        cloud, shadow = mask
    missing = np.isnan(bands).any(axis=0)
    return ~(missing | np.asarray(cloud, bool) | np.asarray(shadow, bool))


# ---------------------------------------------------------------------------
# GeoTIFF band files
# ---------------------------------------------------------------------------

_TAG_PIXEL_SCALE = 33550
_TAG_TIEPOINT = 33922
_TAG_GEO_KEYS = 34735


def write_band_tif(path: Path, grid: np.ndarray, extent: CropExtent, resolution_m: float) -> None:
    """Write one single-band float32 GeoTIFF with minimal EPSG georeferencing."""
    grid = np.asarray(grid, dtype=np.float32)
    # GTModelType=projected, GTRasterType=pixel-is-area, ProjectedCSType=EPSG.
    geokeys = (
        1, 1, 0, 3,
        1024, 0, 1, 1,
        1025, 0, 1, 1,
        3072, 0, 1, int(extent.epsg),
    )
    extratags = [
        (_TAG_PIXEL_SCALE, "d", 3, (resolution_m, resolution_m, 0.0)),
        (_TAG_TIEPOINT, "d", 6, (0.0, 0.0, 0.0, extent.x_min, extent.y_max, 0.0)),
        (_TAG_GEO_KEYS, "H", len(geokeys), geokeys),
    ]
    tifffile.imwrite(path, grid, extratags=extratags)


def read_band_tif(path: Path):
    """Read one band GeoTIFF -> (grid, resolution_m, origin_xy, epsg)."""
    try:
        with tifffile.TiffFile(path) as tif:
            page = tif.pages[0]
            grid = page.asarray()
            tags = page.tags
            scale = tags[_TAG_PIXEL_SCALE].value if _TAG_PIXEL_SCALE in tags else (TARGET_RESOLUTION_M,) * 2
            tie = tags[_TAG_TIEPOINT].value if _TAG_TIEPOINT in tags else (0, 0, 0, 0.0, 0.0, 0)
            epsg = 0
            if _TAG_GEO_KEYS in tags:
                keys = tags[_TAG_GEO_KEYS].value
                for i in range(4, len(keys), 4):
                    if keys[i] == 3072:
                        epsg = int(keys[i + 3])
    except (tifffile.TiffFileError, OSError, KeyError, IndexError) as exc:
        raise FormatError(f"unreadable raster {path}: {exc}") from exc
    if grid.ndim != 2:
        raise FormatError(f"{path}: expected a single-band raster, got shape {grid.shape}")
    return grid, float(scale[0]), (float(tie[3]), float(tie[4])), epsg


# ---------------------------------------------------------------------------
# Scene bundles
# ---------------------------------------------------------------------------


def _parse_timestamp(raw: str) -> datetime:
    ts = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _band_path(bundle: Path, band: Band) -> Path:
    for names in (_S2_BAND_FILES, _LANDSAT_BAND_FILES):
        candidate = bundle / f"{names[band]}.tif"
        if candidate.exists():
            return candidate
    raise BandMissing(f"bundle {bundle} has no file for band {band.value}")


def load_scene(path, cloud_mask=None, expected_crop_m: float | None = 2000.0) -> Scene:
    """Load a scene bundle directory into a normalized :class:`Scene`.

    All bands are brought to the 10 m grid (bicubic for coarser bands), the
    validity mask is computed from missing pixels plus the cloud mask, and
    metadata is read from ``meta.json``. ``expected_crop_m`` checks the crop
    edge length (2 km operationally, +- one pixel); pass None for ad-hoc
    crops such as the desk-scale corpus.
    """
    bundle = Path(path)
    meta_path = bundle / "meta.json"
    if not meta_path.exists():
        raise FormatError(f"{bundle}: missing meta.json")
    try:
        meta = json.loads(meta_path.read_text())
        satellite = Satellite(meta["satellite"])
        timestamp = _parse_timestamp(meta["timestamp"])
        wind = (float(meta["wind"]["u10"]), float(meta["wind"]["v10"]))
        crop = CropExtent(**meta["crop"])
        site_id = str(meta["site_id"])
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"{bundle}: malformed meta.json ({exc})") from exc
    if not (math.isfinite(wind[0]) and math.isfinite(wind[1])):
        raise FormatError(f"{bundle}: non-finite wind components {wind}")

    grids = {}
    georef = None
    for band in BAND_ORDER:
        grid, res_m, origin, epsg = read_band_tif(_band_path(bundle, band))
        raw = BandRaster(band_id=band, grid=grid, resolution_m=res_m)
        if georef is None:
            georef = (origin, epsg)
        elif np.hypot(origin[0] - georef[0][0], origin[1] - georef[0][1]) > res_m / 2:
            raise GridMismatch(
                f"{bundle}: band {band.value} origin {origin} disagrees with {georef[0]}"
            )
        factor = raw.resolution_m / TARGET_RESOLUTION_M
        if abs(factor - round(factor)) > 1e-6 or round(factor) not in (1, 2, 3):
            raise GridMismatch(
                f"{bundle}: band {band.value} at {res_m} m cannot be resampled to 10 m"
            )
        grids[band] = resample_bicubic(raw.grid, int(round(factor))).astype(np.float32)

    shapes = {g.shape for g in grids.values()}
    if len(shapes) != 1:
        raise GridMismatch(f"{bundle}: resampled band shapes disagree: {sorted(shapes)}")
    stack = np.stack([grids[band] for band in BAND_ORDER])

    if expected_crop_m is not None:
        for edge in (crop.width_m, crop.height_m):
            if abs(edge - expected_crop_m) > TARGET_RESOLUTION_M:
                raise FormatError(
                    f"{bundle}: crop edge {edge} m outside {expected_crop_m} +- 10 m"
                )

    if cloud_mask is None:
        from .cloudmask import ThresholdCloudMask

        cloud_mask = ThresholdCloudMask()
    validity = compute_validity_mask(stack, cloud_mask)

    truth = None
    if meta.get("synthetic"):
        mask_grid, _, _, _ = read_band_tif(bundle / "truth_mask.tif")
        dch4_grid, _, _, _ = read_band_tif(bundle / "truth_dch4.tif")
        syn = meta["synthetic"]
        truth = SyntheticTruth(
            plume_id=syn["plume_id"],
            mask=mask_grid > 0.5,
            dch4=dch4_grid.astype(np.float32),
            donor_wind=tuple(syn["donor_wind"]),
        )

    return Scene(
        site_id=site_id,
        satellite=satellite,
        timestamp=timestamp,
        bands=stack,
        validity_mask=validity,
        wind=wind,
        crop_extent=crop,
        solar_zenith_deg=float(meta.get("solar_zenith_deg", 30.0)),
        view_zenith_deg=float(meta.get("view_zenith_deg", 5.0)),
        wind_source=str(meta.get("wind", {}).get("source", "era5-land")),
        truth=truth,
    )


def save_scene(scene: Scene, path) -> Path:
    """Write a scene back to a bundle directory (inverse of load_scene)."""
    bundle = Path(path)
    bundle.mkdir(parents=True, exist_ok=True)
    names = _S2_BAND_FILES if scene.satellite.family == "S2" else _LANDSAT_BAND_FILES
    for band in BAND_ORDER:
        write_band_tif(
            bundle / f"{names[band]}.tif", scene.band(band), scene.crop_extent, TARGET_RESOLUTION_M
        )
    meta = {
        "site_id": scene.site_id,
        "satellite": scene.satellite.value,
        "timestamp": scene.timestamp.strftime("%Y-%m-%dT%H:%M:%SZ"),
        "wind": {"u10": scene.wind[0], "v10": scene.wind[1], "source": scene.wind_source},
        "solar_zenith_deg": scene.solar_zenith_deg,
        "view_zenith_deg": scene.view_zenith_deg,
        "crop": {
            "x_min": scene.crop_extent.x_min,
            "y_min": scene.crop_extent.y_min,
            "x_max": scene.crop_extent.x_max,
            "y_max": scene.crop_extent.y_max,
            "epsg": scene.crop_extent.epsg,
        },
    }
    if scene.truth is not None:
        meta["synthetic"] = {
            "plume_id": scene.truth.plume_id,
            "donor_wind": list(scene.truth.donor_wind),
        }
        write_band_tif(
            bundle / "truth_mask.tif",
            scene.truth.mask.astype(np.float32),
            scene.crop_extent,
            TARGET_RESOLUTION_M,
        )
        write_band_tif(
            bundle / "truth_dch4.tif", scene.truth.dch4, scene.crop_extent, TARGET_RESOLUTION_M
        )
    (bundle / "meta.json").write_text(json.dumps(meta, indent=2))
    return bundle


# ---------------------------------------------------------------------------
# Site registry
# ---------------------------------------------------------------------------

_REGISTRY_FIELDS = ["site_id", "lon", "lat", "country", "sector", "offshore", "active"]


def load_site_registry(path) -> list[SiteRecord]:
    """Read the site registry CSV; duplicate site ids are rejected."""
    records: list[SiteRecord] = []
    seen: set[str] = set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        missing = [f for f in _REGISTRY_FIELDS if f not in reader.fieldnames]
        if missing:
            raise FormatError(f"registry {path}: missing columns {missing}")
        for line_no, row in enumerate(reader, start=2):
            try:
                record = SiteRecord(
                    site_id=row["site_id"],
                    lon=float(row["lon"]),
                    lat=float(row["lat"]),
                    country=row["country"],
                    sector=row["sector"],
                    offshore=_parse_bool(row["offshore"]),
                    active=_parse_bool(row["active"]),
                    film_bank_id=(row.get("film_bank_id") or None),
                )
            except (ValueError, TypeError) as exc:
                raise FormatError(f"registry {path} line {line_no}: {exc}") from exc
            if record.site_id in seen:
                raise RegistryConflict(f"duplicate site_id {record.site_id!r}")
            seen.add(record.site_id)
            records.append(record)
    return records


def save_site_registry(records: list[SiteRecord], path) -> None:
    seen: set[str] = set()
    for record in records:
        if record.site_id in seen:
            raise RegistryConflict(f"duplicate site_id {record.site_id!r}")
        seen.add(record.site_id)
    # The optional film_bank_id column is only written when some record
    # carries one, so default registries keep the plain 7-column schema.
    fields = list(_REGISTRY_FIELDS)
    if any(r.film_bank_id for r in records):
        fields.append("film_bank_id")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for r in records:
            row = [r.site_id, repr(r.lon), repr(r.lat), r.country, r.sector,
                   str(r.offshore).lower(), str(r.active).lower()]
            if "film_bank_id" in fields:
                row.append(r.film_bank_id or "")
            writer.writerow(row)


def _parse_bool(raw: str) -> bool:
    value = raw.strip().lower()
    if value in ("true", "1", "yes"):
        return True
    if value in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")
