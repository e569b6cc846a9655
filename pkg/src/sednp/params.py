"""Physical parameter set for one electron coupled to a nuclear ensemble."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .constants import GAMMA_E, HBAR, K_BOLTZMANN


class ParameterError(ValueError):
    """Raised when a physical parameter set is inconsistent."""


def thermal_polarization(omega_s: float, temperature: float) -> float:
    """Thermal electron polarization tanh(hbar*omega_S / (2 kB T)).

    ``omega_s`` is the electron Larmor frequency in rad s^-1; the returned
    value lies in [0, 1).
    """
    if temperature <= 0.0:
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    return math.tanh(HBAR * abs(omega_s) / (2.0 * K_BOLTZMANN * temperature))


@dataclass(frozen=True)
class PhysicalParams:
    """Field, temperature, drive and relaxation rates of the spin system.

    Frequencies (``omega1``, ``lambda_offset`` and the derived Larmor
    frequencies) are angular (rad s^-1); relaxation rates are plain s^-1.
    Instances are immutable and safe to share between workers.
    """

    B0: float                 # tesla
    temperature: float        # kelvin
    gamma_e: float = GAMMA_E  # rad s^-1 T^-1, signed
    gamma_n: float = 0.0      # rad s^-1 T^-1, signed
    omega1: float = 0.0       # microwave amplitude, rad s^-1
    lambda_offset: float = 0.0  # resonance offset, rad s^-1
    R1S: float = 0.0          # s^-1
    R2S: float = 0.0
    R1I: float = 0.0
    R2I: float = 0.0

    omegaS: float = field(init=False)
    omegaI: float = field(init=False)
    P0: float = field(init=False)

    def __post_init__(self) -> None:
        if self.B0 <= 0.0:
            raise ParameterError(f"B0 must be > 0, got {self.B0}")
        if self.temperature <= 0.0:
            raise ParameterError(f"temperature must be > 0, got {self.temperature}")
        if self.gamma_n == 0.0:
            raise ParameterError("gamma_n must be nonzero")
        for name in ("R1S", "R2S", "R1I", "R2I"):
            if getattr(self, name) < 0.0:
                raise ParameterError(f"{name} must be >= 0")
        if self.omega1 < 0.0:
            raise ParameterError("omega1 must be >= 0")
        object.__setattr__(self, "omegaS", abs(self.gamma_e) * self.B0)
        object.__setattr__(self, "omegaI", abs(self.gamma_n) * self.B0)
        p0 = thermal_polarization(self.omegaS, self.temperature)
        if p0 >= 1.0:
            raise ParameterError(
                "temperature so low that the thermal polarization rounds to 1"
            )
        object.__setattr__(self, "P0", p0)

    @classmethod
    def from_omega_i(cls, omega_i: float, gamma_n: float, **kwargs) -> "PhysicalParams":
        """Build from a nuclear Larmor frequency instead of the field."""
        if omega_i <= 0.0:
            raise ParameterError("omega_I must be > 0")
        return cls(B0=omega_i / abs(gamma_n), gamma_n=gamma_n, **kwargs)
