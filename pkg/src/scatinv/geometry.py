"""Experiment geometry in dimensionless units (1 unit = 0.1 m).

The computational domain is a 5x5x5 box starting one quarter unit in
front of the nominal target front face; measured data live on a 51x51
lattice (0.2 step) spanning the 10x10 measurement square.
"""

import numpy as np

# Computational domain for the inversion.
OMEGA_LO = (-2.5, -2.5, -0.75)
OMEGA_HI = (2.5, 2.5, 4.25)

# Measurement rectangle S_m and the restriction rectangle S_p on the
# propagated plane (both open).
SM_HALF = 5.0
SP_HALF = 2.5

MEASUREMENT_PLANE_X3 = -8.0
PROPAGATED_PLANE_X3 = -0.75

MEASUREMENT_STEP = 0.2
MEASUREMENT_COUNT = 51

# Detector sample interval: 10 ps in dimensionless time.
RAW_DT_PS = 10.0
PS_TO_DIMLESS = 0.0003 / 0.1
METERS_TO_DIMLESS = 1.0 / 0.1

# Working wave-number interval shared by all inversions.
K_WORK_LOW = 6.0
K_WORK_HIGH = 6.5
K_STEP = 0.05
N_SUBINTERVALS = 10


def working_k_lattice():
    """The 11-node lattice 6.0, 6.05, ..., 6.5."""
    return K_WORK_LOW + K_STEP * np.arange(N_SUBINTERVALS + 1)
