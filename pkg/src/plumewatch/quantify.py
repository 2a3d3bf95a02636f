"""Flux-rate estimation from a plume mask via integrated mass enhancement.

Total excess mass inside the mask (IME, kg) combines with an effective wind
speed and a plume length scale into an emission rate:

    flux = U_eff * IME / L          L = sqrt(mask area)

U_eff is an affine function of the 10 m wind speed, U_eff = alpha * U10 +
beta. The defaults (alpha=0.33, beta=0.45 m/s) follow the usual convention
of the mass-enhancement quantification literature and are configuration,
not physics: every estimate logs the values it used. The only propagated
uncertainty is a configurable fractional wind error; other error sources
(retrieval noise, mask delineation) are not modelled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .units import M_CH4_KG_MOL, PPBM_TO_MOL_M2


class QuantifyError(Exception):
    pass


class EmptyMask(QuantifyError):
    pass


class WindUndefined(QuantifyError):
    pass


#: Default effective-wind parameterization and wind uncertainty.
U_EFF_ALPHA = 0.33
U_EFF_BETA = 0.45
WIND_FRACTIONAL_ERROR = 0.5

PIXEL_AREA_M2 = 100.0  # 10 m grid


@dataclass(frozen=True)
class FluxEstimate:
    flux_kg_h: float
    uncertainty_kg_h: float
    ime_kg: float
    plume_length_m: float
    u_eff_m_s: float
    mask_pixels: int
    u_eff_alpha: float = U_EFF_ALPHA
    u_eff_beta: float = U_EFF_BETA

    def to_dict(self) -> dict:
        return {
            "flux_kg_h": self.flux_kg_h,
            "uncertainty_kg_h": self.uncertainty_kg_h,
            "ime_kg": self.ime_kg,
            "L_m": self.plume_length_m,
            "u_eff": self.u_eff_m_s,
            "mask_pixels": self.mask_pixels,
        }


def ime(dch4: np.ndarray, mask: np.ndarray, pixel_area_m2: float = PIXEL_AREA_M2) -> float:
    """Integrated mass enhancement (kg) of the masked column field.

    Columns arrive in ppb m and convert to mol/m^2 through the shared
    constant in :mod:`plumewatch.units` before scaling by pixel area and the
    molar mass of methane.
    """
    dch4 = np.asarray(dch4, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != dch4.shape:
        raise QuantifyError(f"mask shape {mask.shape} != raster shape {dch4.shape}")
    if not mask.any():
        raise EmptyMask("plume mask is empty")
    columns = dch4[mask]
    if np.any(columns < 0):
        raise QuantifyError("negative column enhancement inside mask")
    mol = np.nansum(columns) * PPBM_TO_MOL_M2
    return float(mol * pixel_area_m2 * M_CH4_KG_MOL)


def flux(
    dch4: np.ndarray,
    mask: np.ndarray,
    wind: tuple[float, float],
    pixel_area_m2: float = PIXEL_AREA_M2,
    u_eff_alpha: float = U_EFF_ALPHA,
    u_eff_beta: float = U_EFF_BETA,
    wind_fractional_error: float = WIND_FRACTIONAL_ERROR,
) -> FluxEstimate:
    """Emission rate (kg/h) from the masked columns and the 10 m wind."""
    u10 = math.hypot(wind[0], wind[1])
    if u10 <= 0 or not math.isfinite(u10):
        raise WindUndefined(f"wind speed {u10} m/s cannot drive a flux estimate")
    mask = np.asarray(mask, dtype=bool)
    mass_kg = ime(dch4, mask, pixel_area_m2)
    area_m2 = float(mask.sum()) * pixel_area_m2
    length_m = math.sqrt(area_m2)
    u_eff = u_eff_alpha * u10 + u_eff_beta
    flux_kg_h = u_eff * mass_kg / length_m * 3600.0
    # Only the wind term carries modelled uncertainty: dU_eff = alpha * f * U10.
    sigma_u_eff = u_eff_alpha * wind_fractional_error * u10
    uncertainty = flux_kg_h * sigma_u_eff / u_eff
    return FluxEstimate(
        flux_kg_h=flux_kg_h,
        uncertainty_kg_h=uncertainty,
        ime_kg=mass_kg,
        plume_length_m=length_m,
        u_eff_m_s=u_eff,
        mask_pixels=int(mask.sum()),
        u_eff_alpha=u_eff_alpha,
        u_eff_beta=u_eff_beta,
    )
