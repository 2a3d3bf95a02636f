import numpy as np
import pytest

from plumewatch.rtlut import (
    RATIO_CHANNEL,
    AbsorptionModel,
    BandSpectrum,
    GridError,
    LutError,
    MonotoneClampWarning,
    RangeError,
    SpectralSupportError,
    amf_from_angles,
    build_lut,
    default_grids,
    interp_tau,
    invert_tau,
    invert_tau_raster,
    load_lut,
    save_lut,
)
from plumewatch.units import PPBM_TO_MOL_M2


def constant_sigma_model(sigma=60.0, n=50):
    lam = np.linspace(2100.0, 2280.0, n)
    ones = np.ones(n)
    band = BandSpectrum(
        band="SWIR2",
        wavelength_nm=lam,
        sigma_m2_mol=np.full(n, sigma),
        srf=ones,
        solar_irradiance=ones,
        atmos_transmittance=0.9 * ones,
    )
    return AbsorptionModel(bands={"SWIR2": band})


# ---------------------------------------------------------------------------
# building
# ---------------------------------------------------------------------------


def test_zero_enhancement_row_exactly_one(lut):
    for channel in lut.channels():
        assert np.all(lut.tables[channel][0] == 1.0)


def test_zero_sigma_gives_unit_table():
    model = constant_sigma_model(sigma=0.0)
    table = build_lut(model, *default_grids()).tables["SWIR2"]
    assert np.all(table == 1.0)


def test_single_spike_matches_hand_quadrature():
    # one grid point of absorption inside an otherwise transparent band;
    # oracle: trapezoid weights written out by hand
    n = 21
    lam = np.linspace(2100.0, 2120.0, n)
    sigma = np.zeros(n)
    j = 10
    sigma[j] = 80.0
    ones = np.ones(n)
    band = BandSpectrum("SWIR2", lam, sigma, ones, ones, ones)
    model = AbsorptionModel(bands={"SWIR2": band})
    dch4 = np.array([0.0, 2000.0, 8000.0, 20000.0])
    amf_grid = np.array([2.0, 3.0, 4.0, 5.0])
    lut = build_lut(model, dch4, amf_grid)
    dlam = lam[1] - lam[0]
    total = dlam * (n - 1)  # trapezoid integral of the unit weight
    for i, c in enumerate(dch4):
        for k, amf in enumerate(amf_grid):
            absorbed = 1.0 - np.exp(-amf * 80.0 * c * PPBM_TO_MOL_M2)
            expected = 1.0 - (dlam * absorbed) / total  # spike carries weight dlam
            got = lut.tables["SWIR2"][i, k]
            assert got == pytest.approx(expected, rel=1e-6)


def test_tables_monotone_in_both_axes(lut):
    for channel in lut.channels():
        table = lut.tables[channel]
        assert np.all(np.diff(table, axis=0) <= 0), f"{channel} not monotone in dch4"
        assert np.all(np.diff(table[1:], axis=1) <= 0), f"{channel} not monotone in amf"


def test_swir2_decays_faster_than_swir1(lut):
    t1 = lut.tables["SWIR1"][1:]
    t2 = lut.tables["SWIR2"][1:]
    assert np.all(t2 < t1)


def test_ratio_channel_strictly_decreasing(lut):
    ratio = lut.tables[RATIO_CHANNEL]
    assert np.all(np.diff(ratio, axis=0) < 0)


def test_build_deterministic():
    model = AbsorptionModel.from_file()
    grids = default_grids()
    a = build_lut(model, *grids)
    b = build_lut(model, *grids)
    for channel in a.channels():
        assert np.array_equal(a.tables[channel], b.tables[channel])


def test_grid_validation():
    model = constant_sigma_model()
    dch4, amf = default_grids()
    with pytest.raises(GridError):
        build_lut(model, dch4[::-1], amf)
    with pytest.raises(GridError):
        build_lut(model, dch4 + 1.0, amf)  # does not start at 0
    with pytest.raises(GridError):
        build_lut(model, np.array([0.0, 1.0, 1.0, 2.0]), amf)


def test_empty_srf_overlap():
    n = 20
    lam = np.linspace(2100.0, 2120.0, n)
    band = BandSpectrum("SWIR2", lam, np.zeros(n), np.zeros(n), np.ones(n), np.ones(n))
    with pytest.raises(SpectralSupportError):
        build_lut(AbsorptionModel(bands={"SWIR2": band}), *default_grids())


# ---------------------------------------------------------------------------
# interpolation
# ---------------------------------------------------------------------------


def test_interp_exact_at_knots(lut):
    rng = np.random.default_rng(5)
    for _ in range(30):
        i = rng.integers(lut.dch4_grid.size)
        j = rng.integers(lut.amf_grid.size)
        got = interp_tau(lut, "SWIR2", float(lut.dch4_grid[i]), float(lut.amf_grid[j]))
        assert got == pytest.approx(lut.tables["SWIR2"][i, j], abs=1e-12)


def test_interp_matches_analytic_exponential():
    sigma = 60.0
    lut = build_lut(constant_sigma_model(sigma), *default_grids())
    rng = np.random.default_rng(7)
    for _ in range(200):
        c = rng.uniform(0.0, 20000.0)
        amf = rng.uniform(2.0, 6.0)
        expected = np.exp(-amf * sigma * c * PPBM_TO_MOL_M2)
        got = interp_tau(lut, "SWIR2", c, amf)
        assert got == pytest.approx(expected, rel=1e-4)


def test_interp_c1_continuity(lut):
    # finite-difference slope from both sides of interior knots
    for idx in (10, 25, 40):
        knot = lut.dch4_grid[idx]
        amf = 3.1
        h = 1e-3 * (lut.dch4_grid[idx + 1] - lut.dch4_grid[idx])
        left = (interp_tau(lut, "SWIR2", knot, amf)
                - interp_tau(lut, "SWIR2", knot - h, amf)) / h
        right = (interp_tau(lut, "SWIR2", knot + h, amf)
                 - interp_tau(lut, "SWIR2", knot, amf)) / h
        assert right == pytest.approx(left, rel=1e-3)


def test_interp_raster_and_nan(lut):
    field = np.array([[0.0, 100.0], [np.nan, 5000.0]])
    out = interp_tau(lut, "SWIR1", field, 3.0)
    assert out.shape == field.shape
    assert np.isnan(out[1, 0])
    assert out[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_interp_clamps_above_max_with_warning(lut):
    with pytest.warns(MonotoneClampWarning):
        got = interp_tau(lut, "SWIR2", lut.dch4_max * 2, 3.0)
    assert got == pytest.approx(interp_tau(lut, "SWIR2", lut.dch4_max, 3.0), abs=1e-12)


def test_interp_range_errors(lut):
    with pytest.raises(RangeError):
        interp_tau(lut, "SWIR2", 1000.0, 1.0)  # amf below grid
    with pytest.raises(RangeError):
        interp_tau(lut, "SWIR2", 1000.0, 7.0)  # amf above grid
    with pytest.raises(RangeError):
        interp_tau(lut, "SWIR2", -5.0, 3.0)  # negative column


# ---------------------------------------------------------------------------
# inversion
# ---------------------------------------------------------------------------


def test_invert_tau_unity_is_zero(lut):
    assert invert_tau(lut, "SWIR2", 1.0, 3.0) == 0.0


def test_invert_round_trip_twenty_points(lut):
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(20):
        c = float(rng.uniform(50.0, lut.dch4_max * 0.95))
        amf = float(rng.uniform(2.05, 5.95))
        tau = interp_tau(lut, RATIO_CHANNEL, c, amf)
        recovered = invert_tau(lut, RATIO_CHANNEL, tau, amf)
        worst = max(worst, abs(recovered - c))
    assert worst <= 1.0  # ppb m


def test_invert_out_of_range(lut):
    with pytest.raises(RangeError):
        invert_tau(lut, "SWIR2", 1.2, 3.0)
    floor = interp_tau(lut, "SWIR2", lut.dch4_max, 3.0)
    with pytest.raises(RangeError):
        invert_tau(lut, "SWIR2", floor * 0.9, 3.0)


def test_invert_raster_matches_scalar(lut):
    rng = np.random.default_rng(13)
    cols = rng.uniform(100, 15000, size=(5, 4))
    tau = interp_tau(lut, RATIO_CHANNEL, cols, 3.3)
    out, saturated = invert_tau_raster(lut, RATIO_CHANNEL, tau, 3.3)
    assert saturated == 0
    assert np.abs(out - cols).max() <= 1.0


# ---------------------------------------------------------------------------
# air-mass factor
# ---------------------------------------------------------------------------


def test_amf_nadir():
    assert amf_from_angles(0.0, 0.0) == pytest.approx(2.0)


def test_amf_sixty_degrees():
    assert amf_from_angles(60.0, 0.0) == pytest.approx(3.0)


@pytest.mark.parametrize("solar,view", [(90.0, 0.0), (85.0, 0.0), (0.0, 88.0), (-1.0, 0.0)])
def test_amf_range_errors(solar, view):
    with pytest.raises(RangeError):
        amf_from_angles(solar, view)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def test_lut_save_load_round_trip(lut, tmp_path):
    path = save_lut(lut, tmp_path / "lut.json")
    loaded = load_lut(path)
    assert loaded.channels() == lut.channels()
    assert np.array_equal(loaded.dch4_grid, lut.dch4_grid)
    assert np.array_equal(loaded.amf_grid, lut.amf_grid)
    for channel in lut.channels():
        assert np.array_equal(loaded.tables[channel], lut.tables[channel])


def test_lut_payload_hash_checked(lut, tmp_path):
    path = save_lut(lut, tmp_path / "lut.json")
    payload = (tmp_path / "lut.bin").read_bytes()
    (tmp_path / "lut.bin").write_bytes(payload[:-8] + b"\x00" * 8)
    with pytest.raises(LutError):
        load_lut(path)
