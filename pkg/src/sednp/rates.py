"""Jump rates of the effective classical master equation.

The slow dynamics of driven solid-effect DNP reduces to a classical
master equation over spin configurations with four event channels:

* electron flips at constant rates ``gamma_S_plus`` / ``gamma_S_minus``
* nuclear flips at a constant per-nucleus rate (equal both directions)
* electron-nucleus flip-flops whose rate is quenched by the hyperfine
  field of all *other* nuclei (the kinetic constraint)
* nucleus-nucleus flip-flops quenched by the secular hyperfine mismatch
  of the pair

Sign and naming conventions: classical bits are +1/-1 with +1 the
thermal-equilibrium direction of the electron; ``gamma_S_minus`` is the
rate of flipping a -1 electron to +1 (toward equilibrium), and carries
the (1+P0)/2 weight.  The physical z-projection of a spin with bit b is
m = -b/2, so reported polarizations equal the mean bit.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .couplings import Couplings
from .params import ParameterError, PhysicalParams


class SingleSpinRates(NamedTuple):
    gamma_S_plus: float    # rate of leaving the bit=+1 electron state
    gamma_S_minus: float   # rate of leaving the bit=-1 electron state
    gamma_I: np.ndarray    # (n,), per-nucleus flip rate, both directions


def single_spin_rates(params: PhysicalParams, c: Couplings) -> SingleSpinRates:
    """Constant single-spin flip rates.

    gamma_S_+- = (1 -+ P0)/2 R1S + omega1^2/(2 omega_I^2) R2S and
    gamma_I_k  = R1I/2 + |B_k|^2/(8 omega_I^2) R2I; the two nuclear
    directions coincide because the thermal nuclear polarization is
    negligible.
    """
    if params.omegaI <= 0.0:
        raise ParameterError("omega_I must be > 0")
    drive = params.omega1**2 / (2.0 * params.omegaI**2) * params.R2S
    g_plus = (1.0 - params.P0) / 2.0 * params.R1S + drive
    g_minus = (1.0 + params.P0) / 2.0 * params.R1S + drive
    g_i = params.R1I / 2.0 + c.Bsq / (8.0 * params.omegaI**2) * params.R2I
    return SingleSpinRates(g_plus, g_minus, g_i)


def is_constraint_field(k: int, nuclear_bits: np.ndarray, c: Couplings) -> float:
    """Hyperfine field sum_{s != k} A_s m_s seen by nucleus k (rad/s).

    Computed directly from the bits (m = -b/2), excluding nucleus k, so
    the value is bitwise identical before and after a flip-flop of the
    electron with nucleus k.
    """
    m = -0.5 * np.asarray(nuclear_bits, dtype=float)
    m[k] = 0.0
    return float(np.dot(c.A, m))


def is_flipflop_rate(
    k: int,
    nuclear_bits: np.ndarray,
    params: PhysicalParams,
    c: Couplings,
    second_order: bool = False,
) -> float:
    """Electron-nucleus flip-flop rate for nucleus k at a configuration.

    The prefactor omega1^2 |B_k|^2 / (8 omega_I^2 (R2S + R2I)) is quenched
    by 1/(1 + D_k^2) with D_k = (lambda + sum_{s != k} A_s m_s)/(R2S + R2I).
    ``second_order`` adds the (4 omega1^2 - |B_k|^2)/(8 omega_I) shift to
    the numerator of D_k; this correction is usually negligible.
    """
    r2 = params.R2S + params.R2I
    if r2 <= 0.0:
        raise ParameterError("R2S + R2I must be > 0 for the flip-flop rate")
    pref = params.omega1**2 * float(c.Bsq[k]) / (8.0 * params.omegaI**2 * r2)
    numer = params.lambda_offset + is_constraint_field(k, nuclear_bits, c)
    if second_order:
        numer += (4.0 * params.omega1**2 - float(c.Bsq[k])) / (8.0 * params.omegaI)
    dk = numer / r2
    return pref / (1.0 + dk * dk)


def ii_flipflop_rate(
    k: int,
    j: int,
    params: PhysicalParams,
    c: Couplings,
    electron_bit: int = 1,
    second_order: bool = False,
) -> float:
    """Nucleus-nucleus flip-flop rate for the pair (k, j).

    Quenched by 1/(1 + C_kj^2) with C_kj = (A_k - A_j) m_S / (2 R2I); since
    m_S^2 = 1/4 for either electron state, the first-order rate is the
    configuration-independent constant
    (d_kj^2 / (4 R2I)) / (1 + ((A_k - A_j)/(4 R2I))^2).  With
    ``second_order`` the (|B_k|^2 - |B_j|^2)/(8 omega_I) shift makes the
    rate depend on the electron orientation through m_S = -b_e/2.
    """
    if k == j:
        raise ValueError("ii_flipflop_rate needs two distinct nuclei")
    if params.R2I <= 0.0:
        raise ParameterError("R2I must be > 0 for the nuclear flip-flop rate")
    d = c.d(k, j)
    pref = d * d / (4.0 * params.R2I)
    delta_a = float(c.A[k] - c.A[j])
    if second_order:
        m_s = -0.5 * electron_bit
        numer = delta_a * m_s + (float(c.Bsq[k]) - float(c.Bsq[j])) / (8.0 * params.omegaI)
        ckj = numer / (2.0 * params.R2I)
    else:
        ckj = delta_a / (4.0 * params.R2I)
    return pref / (1.0 + ckj * ckj)
