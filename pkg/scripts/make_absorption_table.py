"""Generate the shipped CH4 absorption table (src/plumewatch/data/).

Builds a stylized but physically plausible absorption cross-section comb for
the two SWIR bands: a broad band envelope plus pseudo-random line clusters,
rescaled so SWIR2 absorbs strictly more than SWIR1 at every wavelength
(sigma ranges are kept disjoint, which guarantees the SWIR2/SWIR1
transmittance ratio is strictly decreasing in the column enhancement).
Deterministic: fixed seed, committed output.
"""

import json
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "plumewatch" / "data" / "ch4_absorption.json"

N_POINTS = 200
SEED = 20240601


def line_comb(rng, lam, centers_every_nm, width_range, n_extra):
    comb = np.zeros_like(lam)
    lo, hi = lam[0], lam[-1]
    centers = np.arange(lo, hi, centers_every_nm) + rng.uniform(-2, 2, size=len(
        np.arange(lo, hi, centers_every_nm)))
    centers = np.concatenate([centers, rng.uniform(lo, hi, size=n_extra)])
    for c in centers:
        width = rng.uniform(*width_range)
        amp = rng.lognormal(mean=0.0, sigma=0.7)
        comb += amp * np.exp(-0.5 * ((lam - c) / width) ** 2)
    return comb


def rescale(values, lo, hi):
    v = values - values.min()
    return lo + (hi - lo) * v / v.max()


def srf_flat_top(lam, center, half_width):
    return np.exp(-(((lam - center) / half_width) ** 8))


def band_spec(rng, lam_lo, lam_hi, sigma_lo, sigma_hi, srf_center, srf_half_width,
              envelope_center, envelope_width):
    lam = np.linspace(lam_lo, lam_hi, N_POINTS)
    envelope = np.exp(-0.5 * ((lam - envelope_center) / envelope_width) ** 2)
    sigma = rescale(3.0 * envelope + line_comb(rng, lam, 7.0, (1.5, 3.5), 24),
                    sigma_lo, sigma_hi)
    return {
        "wavelength_nm": lam.tolist(),
        "sigma_m2_mol": sigma.tolist(),
        "srf": srf_flat_top(lam, srf_center, srf_half_width).tolist(),
    }


def main():
    rng = np.random.default_rng(SEED)
    table = {
        "background_ppb": 1800.0,
        "solar_irradiance": {"kind": "planck", "temperature_k": 5778.0},
        "atmos_transmittance": {"kind": "constant", "value": 0.9},
        "bands": {
            "SWIR1": band_spec(rng, 1540.0, 1700.0, 15.0, 35.0, 1610.0, 45.0, 1666.0, 40.0),
            "SWIR2": band_spec(rng, 2080.0, 2300.0, 45.0, 160.0, 2190.0, 90.0, 2250.0, 60.0),
        },
    }
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(table))
    print(f"wrote {OUT} ({OUT.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
