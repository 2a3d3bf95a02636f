"""Radiative-transfer look-up tables for methane band transmittance.

The table maps a methane column enhancement and an air-mass factor to the
band-integrated transmittance

    tau_B(c, A) = int E_g(l) T_atm(l) exp(-A sigma(l) c) srf_B(l) dl
                  / int E_g(l) T_atm(l) srf_B(l) dl

evaluated by trapezoidal quadrature on the absorption model's spectral grid
(surface reflectance is taken as constant across a band, so it cancels).
The heavy line-by-line radiative transfer behind sigma(lambda) is replaced
by a configurable Beer-Lambert absorption table shipped with the package;
the LUT file format and interpolation behaviour are the stable contract.

Besides the two SWIR bands the builder emits a derived ``RATIO_SWIR2_SWIR1``
channel (tau_SWIR2 / tau_SWIR1), which is what the band-ratio retrieval
inverts: its forward model and the plume injection then share one table by
construction.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .units import PPBM_TO_MOL_M2


class LutError(Exception):
    pass


class GridError(LutError):
    pass


class SpectralSupportError(LutError):
    pass


class RangeError(LutError):
    pass


class MonotoneClampWarning(UserWarning):
    """Raised when a queried column enhancement exceeds the table range."""


RATIO_CHANNEL = "RATIO_SWIR2_SWIR1"

_DEFAULT_DATA = Path(__file__).parent / "data" / "ch4_absorption.json"


@dataclass(frozen=True)
class BandSpectrum:
    """Spectral curves for one band on a common wavelength grid."""

    band: str
    wavelength_nm: np.ndarray
    sigma_m2_mol: np.ndarray
    srf: np.ndarray
    solar_irradiance: np.ndarray
    atmos_transmittance: np.ndarray

    def __post_init__(self):
        n = self.wavelength_nm.size
        for name in ("sigma_m2_mol", "srf", "solar_irradiance", "atmos_transmittance"):
            if getattr(self, name).size != n:
                raise SpectralSupportError(f"{self.band}: {name} not on the common grid")
        if np.any(self.sigma_m2_mol < 0):
            raise SpectralSupportError(f"{self.band}: negative absorption coefficient")
        if np.diff(self.wavelength_nm).min() <= 0:
            raise GridError(f"{self.band}: wavelength grid not strictly ascending")


@dataclass(frozen=True)
class AbsorptionModel:
    bands: dict[str, BandSpectrum]
    background_ppb: float = 1800.0

    @classmethod
    def from_file(cls, path=None) -> "AbsorptionModel":
        """Load the shipped absorption table or a user-provided one.

        Solar irradiance and atmospheric transmittance entries may either be
        tabulated arrays or analytic stand-ins: ``{"kind": "planck",
        "temperature_k": ...}`` and ``{"kind": "constant", "value": ...}``.
        """
        raw = json.loads(Path(path or _DEFAULT_DATA).read_text())
        bands = {}
        for name, spec in raw["bands"].items():
            lam = np.asarray(spec["wavelength_nm"], dtype=np.float64)
            bands[name] = BandSpectrum(
                band=name,
                wavelength_nm=lam,
                sigma_m2_mol=np.asarray(spec["sigma_m2_mol"], dtype=np.float64),
                srf=np.asarray(spec["srf"], dtype=np.float64),
                solar_irradiance=_resolve_curve(spec.get("solar_irradiance",
                                                         raw.get("solar_irradiance")), lam),
                atmos_transmittance=_resolve_curve(spec.get("atmos_transmittance",
                                                            raw.get("atmos_transmittance")), lam),
            )
        return cls(bands=bands, background_ppb=float(raw.get("background_ppb", 1800.0)))


def _resolve_curve(spec, wavelength_nm: np.ndarray) -> np.ndarray:
    if spec is None:
        spec = {"kind": "constant", "value": 1.0}
    if isinstance(spec, dict):
        kind = spec.get("kind")
        if kind == "constant":
            return np.full_like(wavelength_nm, float(spec["value"]))
        if kind == "planck":
            return _planck_shape(wavelength_nm, float(spec.get("temperature_k", 5778.0)))
        raise SpectralSupportError(f"unknown analytic curve kind {kind!r}")
    return np.asarray(spec, dtype=np.float64)


def _planck_shape(wavelength_nm: np.ndarray, temperature_k: float) -> np.ndarray:
    # Spectral shape only; absolute scale cancels in the transmittance ratio.
    h, c, k = 6.62607015e-34, 2.99792458e8, 1.380649e-23
    lam = wavelength_nm * 1e-9
    return 1.0 / (lam**5 * np.expm1(h * c / (lam * k * temperature_k)))


@dataclass
class RtLut:
    """Gridded band transmittance over (column enhancement, air-mass factor)."""

    dch4_grid: np.ndarray  # ppb m, ascending, starts at 0
    amf_grid: np.ndarray  # ascending
    tables: dict[str, np.ndarray]  # channel -> (n_dch4, n_amf) float64
    background_ppb: float = 1800.0
    _splines: dict = field(default_factory=dict, repr=False)

    def channels(self) -> list[str]:
        return list(self.tables)

    def spline(self, channel: str) -> RectBivariateSpline:
        if channel not in self._splines:
            if channel not in self.tables:
                raise RangeError(f"LUT has no channel {channel!r}")
            self._splines[channel] = RectBivariateSpline(
                self.dch4_grid, self.amf_grid, self.tables[channel], kx=3, ky=3, s=0
            )
        return self._splines[channel]

    @property
    def dch4_max(self) -> float:
        return float(self.dch4_grid[-1])


def default_grids(dch4_max: float = 20000.0, n_dch4: int = 64,
                  amf_min: float = 2.0, amf_max: float = 6.0, n_amf: int = 16):
    """Log-spaced column grid from 0 and a linear air-mass-factor grid."""
    dch4 = np.concatenate([[0.0], np.geomspace(dch4_max / 400.0, dch4_max, n_dch4 - 1)])
    amf = np.linspace(amf_min, amf_max, n_amf)
    return dch4, amf


def build_lut(model: AbsorptionModel, dch4_grid, amf_grid) -> RtLut:
    """Integrate the absorption model into a transmittance table.

    Deterministic: identical inputs give bit-identical tables. The zero
    enhancement row is exactly 1 for every band and AMF, and tables are
    monotonically non-increasing along both axes.
    """
    dch4_grid = np.asarray(dch4_grid, dtype=np.float64)
    amf_grid = np.asarray(amf_grid, dtype=np.float64)
    for name, grid in (("dch4", dch4_grid), ("amf", amf_grid)):
        if grid.size < 4:
            raise GridError(f"{name} grid needs at least 4 knots for spline interpolation")
        if np.diff(grid).min() <= 0:
            raise GridError(f"{name} grid is not strictly ascending")
    if dch4_grid[0] != 0.0:
        raise GridError("dch4 grid must start at 0")

    tables: dict[str, np.ndarray] = {}
    for name, spec in model.bands.items():
        weight = spec.solar_irradiance * spec.atmos_transmittance * spec.srf
        denom = np.trapezoid(weight, spec.wavelength_nm)
        if not (math.isfinite(denom) and denom > 0):
            raise SpectralSupportError(f"{name}: SRF overlap integral is not positive")
        table = np.empty((dch4_grid.size, amf_grid.size))
        col_mol = dch4_grid * PPBM_TO_MOL_M2
        for j, amf in enumerate(amf_grid):
            # (n_dch4, n_lambda) optical depths; one trapezoid per column knot
            depth = np.outer(col_mol, spec.sigma_m2_mol) * amf
            table[:, j] = np.trapezoid(weight[None, :] * np.exp(-depth),
                                       spec.wavelength_nm, axis=1) / denom
        tables[name] = table

    if "SWIR1" in tables and "SWIR2" in tables:
        tables[RATIO_CHANNEL] = tables["SWIR2"] / tables["SWIR1"]
    return RtLut(dch4_grid=dch4_grid, amf_grid=amf_grid, tables=tables,
                 background_ppb=model.background_ppb)


def _channel_key(band) -> str:
    return band.value if hasattr(band, "value") else str(band)


def interp_tau(lut: RtLut, band, dch4, amf: float):
    """Bicubic-spline transmittance lookup, exact at the table knots.

    ``dch4`` may be a scalar or a raster; NaN entries pass through as NaN.
    Columns above the table maximum are clamped with a MonotoneClampWarning;
    negative columns and out-of-range AMF raise RangeError.
    """
    channel = _channel_key(band)
    spline = lut.spline(channel)
    if not (lut.amf_grid[0] <= amf <= lut.amf_grid[-1]):
        raise RangeError(f"amf {amf} outside table range "
                         f"[{lut.amf_grid[0]}, {lut.amf_grid[-1]}]")
    values = np.asarray(dch4, dtype=np.float64)
    scalar = values.ndim == 0
    flat = values.reshape(-1)
    finite = np.isfinite(flat)
    if np.any(flat[finite] < 0):
        raise RangeError("negative column enhancement")
    if np.any(flat[finite] > lut.dch4_max):
        warnings.warn(
            f"column enhancement clamped to table maximum {lut.dch4_max} ppb m",
            MonotoneClampWarning,
            stacklevel=2,
        )
    out = np.full(flat.shape, np.nan)
    clipped = np.minimum(flat[finite], lut.dch4_max)
    out[finite] = spline.ev(clipped, np.full(clipped.shape, amf))
    if scalar:
        return float(out[0])
    return out.reshape(values.shape)


def invert_tau(lut: RtLut, band, tau_obs: float, amf: float) -> float:
    """Column enhancement whose interpolated transmittance equals tau_obs.

    Bisection on :func:`interp_tau` to |tau - tau_obs| <= 1e-8 within 100
    iterations. tau_obs must lie in the invertible range (tau at the table
    maximum, 1].
    """
    channel = _channel_key(band)
    if tau_obs > 1.0:
        raise RangeError(f"tau {tau_obs} > 1 is not invertible")
    if tau_obs == 1.0:
        return 0.0
    tau_floor = interp_tau(lut, channel, lut.dch4_max, amf)
    if tau_obs < tau_floor:
        raise RangeError(f"tau {tau_obs} below table floor {tau_floor:.6f}")
    lo, hi = 0.0, lut.dch4_max
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        tau_mid = interp_tau(lut, channel, mid, amf)
        if abs(tau_mid - tau_obs) <= 1e-8:
            return mid
        if tau_mid > tau_obs:  # transmittance still too high: need more methane
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def invert_tau_raster(lut: RtLut, band, tau: np.ndarray, amf: float):
    """Vectorized inverse lookup for a whole transmittance raster.

    Callers must pre-clip tau to <= 1 (tau == 1 maps to column 0). Values
    below the table floor clamp to the table maximum; the count of such
    saturated pixels is returned alongside. NaN passes through.
    """
    channel = _channel_key(band)
    spline = lut.spline(channel)
    tau = np.asarray(tau, dtype=np.float64)
    out = np.full(tau.shape, np.nan)
    finite = np.isfinite(tau)
    vals = tau[finite]
    if vals.size and vals.max() > 1.0 + 1e-12:
        raise RangeError("invert_tau_raster requires tau <= 1")
    tau_floor = float(interp_tau(lut, channel, lut.dch4_max, amf))
    saturated = vals < tau_floor
    lo = np.zeros(vals.shape)
    hi = np.full(vals.shape, lut.dch4_max)
    amf_vec = np.full(vals.shape, amf)
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        tau_mid = spline.ev(mid, amf_vec)
        if np.all(np.abs(tau_mid - vals) <= 1e-8):
            break
        above = tau_mid > vals
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    solved = 0.5 * (lo + hi)
    solved[saturated] = lut.dch4_max
    solved[vals >= 1.0] = 0.0
    out[finite] = solved
    return out, int(saturated.sum())


def amf_from_angles(solar_zenith_deg: float, view_zenith_deg: float) -> float:
    """Two-path air-mass factor 1/cos(solar) + 1/cos(view).

    The plane-parallel approximation breaks down near the horizon, so both
    angles must be below 85 degrees.
    """
    for name, angle in (("solar", solar_zenith_deg), ("view", view_zenith_deg)):
        if not 0.0 <= angle < 85.0:
            raise RangeError(f"{name} zenith angle {angle} outside [0, 85)")
    return 1.0 / math.cos(math.radians(solar_zenith_deg)) + 1.0 / math.cos(
        math.radians(view_zenith_deg)
    )


# ---------------------------------------------------------------------------
# LUT persistence: JSON header + sibling little-endian float64 payload
# ---------------------------------------------------------------------------


def _bin_path(json_path: Path) -> Path:
    return json_path.with_suffix(".bin")


def save_lut(lut: RtLut, path) -> Path:
    json_path = Path(path)
    if json_path.suffix != ".json":
        json_path = json_path.with_suffix(".json")
    payload = b"".join(
        np.ascontiguousarray(lut.tables[ch], dtype="<f8").tobytes() for ch in lut.channels()
    )
    header = {
        "channels": lut.channels(),
        "dch4_grid": lut.dch4_grid.tolist(),
        "amf_grid": lut.amf_grid.tolist(),
        "background_ppb": lut.background_ppb,
        "dtype": "<f8",
        "layout": "channel-major, row-major (dch4, amf)",
        "payload": _bin_path(json_path).name,
        "provenance_sha256": hashlib.sha256(payload).hexdigest(),
    }
    _bin_path(json_path).write_bytes(payload)
    json_path.write_text(json.dumps(header, indent=2))
    return json_path


def load_lut(path) -> RtLut:
    json_path = Path(path)
    if json_path.suffix != ".json":
        json_path = json_path.with_suffix(".json")
    header = json.loads(json_path.read_text())
    dch4 = np.asarray(header["dch4_grid"], dtype=np.float64)
    amf = np.asarray(header["amf_grid"], dtype=np.float64)
    payload = (json_path.parent / header["payload"]).read_bytes()
    if hashlib.sha256(payload).hexdigest() != header["provenance_sha256"]:
        raise LutError(f"{json_path}: payload does not match provenance hash")
    n = dch4.size * amf.size
    tables = {}
    for i, channel in enumerate(header["channels"]):
        block = payload[i * n * 8 : (i + 1) * n * 8]
        tables[channel] = np.frombuffer(block, dtype="<f8").reshape(dch4.size, amf.size).copy()
    return RtLut(dch4_grid=dch4, amf_grid=amf, tables=tables,
                 background_ppb=float(header.get("background_ppb", 1800.0)))
