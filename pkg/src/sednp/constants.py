"""Physical constants (CODATA 2018) and unit helpers.

Internal unit conventions used throughout the package:

* frequencies and coupling constants are angular, in rad s^-1
* relaxation rates are plain s^-1 (no 2*pi)
* lengths are in angstrom at the API surface; converted to metres only
  inside the dipolar coupling formulas
"""

import math

HBAR = 1.054571817e-34      # J s
K_BOLTZMANN = 1.380649e-23  # J / K
MU0_OVER_4PI = 1.00000000055e-7  # T m / A

# Gyromagnetic ratios, rad s^-1 T^-1 (signed).
GAMMA_E = -1.76085963023e11
GAMMA_1H = 2.6752218744e8
GAMMA_13C = 6.728284e7

GYROMAGNETIC = {
    "e": GAMMA_E,
    "1H": GAMMA_1H,
    "13C": GAMMA_13C,
}

ANGSTROM = 1e-10  # m

TWO_PI = 2.0 * math.pi


def hz_to_angular(f_hz: float) -> float:
    """Convert a linear frequency in Hz to rad s^-1."""
    return TWO_PI * f_hz


def angular_to_hz(omega: float) -> float:
    """Convert an angular frequency in rad s^-1 to Hz."""
    return omega / TWO_PI
