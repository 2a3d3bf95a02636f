"""Unit conversions shared by the LUT physics and flux quantification.

Column enhancements travel through the pipeline in ppb m (mixing-ratio ppb
integrated over path length). The single conversion to molar column density
lives here:

    1 ppb m = 4.462e-8 mol/m^2

which is the ideal-gas number density 44.62 mol/m^3 at standard conditions
(1013.25 hPa, 273.15 K) scaled by 1e-9. Every consumer of ppb m columns
must go through this constant so forward simulation, retrieval and mass
quantification stay mutually consistent.
"""

#: mol/m^2 per ppb m of methane column enhancement.
PPBM_TO_MOL_M2 = 4.462e-8

#: Molar mass of CH4, kg/mol.
M_CH4_KG_MOL = 0.01604
