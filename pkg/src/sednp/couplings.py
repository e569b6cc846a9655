"""Hyperfine and dipolar coupling constants, and the adiabatic validity check.

Point-dipole forms, with theta the polar angle of the inter-spin vector
relative to the field axis (z) and r the inter-spin distance:

* secular hyperfine        A_k    = C_en (1 - 3 cos^2 theta) / r^3
* pseudosecular (squared)  |B_k|^2 = (C_en 3 sin theta cos theta / r^3)^2
* nuclear dipolar          d_kj   = C_nn (1 - 3 cos^2 theta) / r^3

with C_en = (mu0/4pi) gamma_e gamma_n hbar and C_nn = (mu0/4pi) gamma_n^2 hbar.
All couplings are angular frequencies (rad s^-1); only |B|^2 ever enters a
rate, so the pseudosecular phase is not stored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import ANGSTROM, HBAR, MU0_OVER_4PI
from .geometry import Geometry, GeometryError
from .params import PhysicalParams


@dataclass(frozen=True)
class Couplings:
    """Per-nucleus A_k, |B_k|^2 and a symmetric sparse d_kj map.

    Pairs are stored once with ``pair_k < pair_j`` (0-based nucleus
    indices); ``d(k, j)`` is symmetric by construction.
    """

    A: np.ndarray        # (n,), rad/s, signed
    Bsq: np.ndarray      # (n,), rad^2/s^2, >= 0
    pair_k: np.ndarray   # (n_pairs,), int
    pair_j: np.ndarray   # (n_pairs,), int
    pair_d: np.ndarray   # (n_pairs,), rad/s, signed
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        for name in ("A", "Bsq", "pair_d"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("pair_k", "pair_j"):
            arr = np.asarray(getattr(self, name), dtype=np.intp)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.Bsq < 0.0):
            raise ValueError("|B|^2 must be nonnegative")
        if np.any(self.pair_k >= self.pair_j):
            raise ValueError("pairs must be stored with k < j")
        index = {
            (int(k), int(j)): i
            for i, (k, j) in enumerate(zip(self.pair_k, self.pair_j))
        }
        if len(index) != len(self.pair_k):
            raise ValueError("duplicate dipolar pair")
        object.__setattr__(self, "_index", index)

    @property
    def n_nuclei(self) -> int:
        return self.A.shape[0]

    @property
    def n_pairs(self) -> int:
        return self.pair_d.shape[0]

    def d(self, k: int, j: int) -> float:
        """Dipolar constant d_kj = d_jk; 0.0 for unstored pairs."""
        if k == j:
            raise KeyError("d_kk is not defined")
        key = (k, j) if k < j else (j, k)
        i = self._index.get(key)
        return float(self.pair_d[i]) if i is not None else 0.0

    def B(self) -> np.ndarray:
        """Pseudosecular magnitudes |B_k| (rad/s)."""
        return np.sqrt(self.Bsq)


def hyperfine_constant(gamma_e: float, gamma_n: float) -> float:
    """C_en in rad s^-1 m^3 (signed)."""
    return MU0_OVER_4PI * gamma_e * gamma_n * HBAR


def dipolar_constant(gamma_n: float) -> float:
    """C_nn in rad s^-1 m^3."""
    return MU0_OVER_4PI * gamma_n * gamma_n * HBAR


def compute_couplings(
    geom: Geometry,
    params: PhysicalParams,
    d_cutoff: float | None = None,
) -> Couplings:
    """Point-dipole couplings for a geometry.

    ``d_cutoff`` drops internuclear pairs separated by more than the given
    distance (angstrom); ``None`` keeps every pair.  Dropping pairs beyond
    ~3 lattice spacings bounds the pair count while discarding < 1% of the
    nearest-neighbour flip-flop rates (d ~ r^-3, rate ~ d^2).
    """
    pos = geom.positions
    n = geom.n_nuclei
    c_en = hyperfine_constant(params.gamma_e, params.gamma_n)
    c_nn = dipolar_constant(params.gamma_n)

    rel = (pos[1:] - pos[0]) * ANGSTROM
    r = np.linalg.norm(rel, axis=1)
    if np.any(r <= 0.0):
        raise GeometryError("nucleus coincides with the electron")
    cos_t = rel[:, 2] / r
    sin_cos = np.sqrt(np.maximum(0.0, 1.0 - cos_t**2)) * cos_t
    A = c_en * (1.0 - 3.0 * cos_t**2) / r**3
    Bsq = (c_en * 3.0 * sin_cos / r**3) ** 2

    nuc = pos[1:]
    ii, jj = np.triu_indices(n, k=1)
    dvec = (nuc[jj] - nuc[ii]) * ANGSTROM
    rr = np.linalg.norm(dvec, axis=1)
    if np.any(rr <= 0.0):
        raise GeometryError("coincident nuclear sites")
    if d_cutoff is not None:
        keep = rr <= d_cutoff * ANGSTROM
        ii, jj, dvec, rr = ii[keep], jj[keep], dvec[keep], rr[keep]
    cos_p = dvec[:, 2] / rr
    d = c_nn * (1.0 - 3.0 * cos_p**2) / rr**3

    return Couplings(A=A, Bsq=Bsq, pair_k=ii, pair_j=jj, pair_d=d)


@dataclass(frozen=True)
class ValidityReport:
    """Outcome of the adiabatic-elimination validity check.

    ``lhs`` collects the slowest coherence decay scale squared,
    ``rhs`` the largest perturbation scale squared; the elimination is
    trustworthy when ``ratio = lhs/rhs`` is large.  ``epsilon`` is the
    high-field expansion parameter max(couplings, rates)/omega_I.
    """

    lhs: float
    rhs: float
    ratio: float
    passed: bool
    epsilon: float
    threshold: float

    def as_dict(self) -> dict:
        return {
            "lhs": self.lhs,
            "rhs": self.rhs,
            "ratio": self.ratio,
            "passed": self.passed,
            "epsilon": self.epsilon,
            "threshold": self.threshold,
        }


def validate_adiabatic(
    params: PhysicalParams,
    couplings: Couplings,
    threshold: float = 100.0,
) -> ValidityReport:
    """Check the scale separation required to eliminate fast coherences.

    Report-only: compares min{(2 R2I)^2, (R2S+R2I)^2} against the largest
    of |d_kj|^2/4, |omega1 B_k|^2 / (16 omega_I^2), R1S^2 and R1I^2, and
    reports the high-field parameter epsilon.
    """
    lhs = min((2.0 * params.R2I) ** 2, (params.R2S + params.R2I) ** 2)
    rhs_terms = [params.R1S**2, params.R1I**2]
    if couplings.n_pairs:
        rhs_terms.append(float(np.max(couplings.pair_d**2)) / 4.0)
    if couplings.n_nuclei:
        rhs_terms.append(
            params.omega1**2 * float(np.max(couplings.Bsq)) / (16.0 * params.omegaI**2)
        )
    rhs = max(rhs_terms)
    ratio = math.inf if rhs == 0.0 else lhs / rhs

    scales = [
        abs(params.lambda_offset),
        params.omega1,
        params.R1S,
        params.R2S,
        params.R1I,
        params.R2I,
    ]
    if couplings.n_nuclei:
        scales.append(float(np.max(np.abs(couplings.A))))
        scales.append(float(np.sqrt(np.max(couplings.Bsq))))
    if couplings.n_pairs:
        scales.append(float(np.max(np.abs(couplings.pair_d))))
    epsilon = max(scales) / params.omegaI

    return ValidityReport(
        lhs=lhs,
        rhs=rhs,
        ratio=ratio,
        passed=ratio >= threshold,
        epsilon=epsilon,
        threshold=threshold,
    )
