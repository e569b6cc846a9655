"""Assembled spin system: parameters, couplings and precomputed engine tables."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .couplings import Couplings
from .geometry import Geometry
from .params import ParameterError, PhysicalParams
from .rates import single_spin_rates


@dataclass(frozen=True)
class SpinSystem:
    """Read-only bundle shared by every trajectory.

    Precomputes everything the kinetic Monte Carlo engine needs per event:
    single-spin rates, flip-flop prefactors, the constraint normalisation,
    per-pair nuclear flip-flop rates (one array per electron orientation
    when second-order corrections are enabled) and a nucleus -> pair-index
    adjacency table.
    """

    params: PhysicalParams
    couplings: Couplings
    geometry: Geometry | None = None
    second_order: bool = False

    gamma_S_plus: float = field(init=False)
    gamma_S_minus: float = field(init=False)
    gamma_I: np.ndarray = field(init=False)
    nuc_cum: np.ndarray = field(init=False)
    nuc_total: float = field(init=False)
    is_pref: np.ndarray = field(init=False)
    is_offset: np.ndarray = field(init=False)   # constant part of the D_k numerator
    inv_r2sum: float = field(init=False)
    half_A: np.ndarray = field(init=False)
    pair_rate_up: np.ndarray = field(init=False)    # electron bit +1
    pair_rate_down: np.ndarray = field(init=False)  # electron bit -1
    adjacency: tuple = field(init=False)            # nucleus -> pair indices
    adj_rate_sum_up: np.ndarray = field(init=False)    # per-nucleus sum of adjacent pair rates
    adj_rate_sum_down: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        p, c = self.params, self.couplings
        if self.geometry is not None and self.geometry.n_nuclei != c.n_nuclei:
            raise ParameterError("geometry and couplings disagree on the nucleus count")
        g = single_spin_rates(p, c)
        object.__setattr__(self, "gamma_S_plus", g.gamma_S_plus)
        object.__setattr__(self, "gamma_S_minus", g.gamma_S_minus)
        object.__setattr__(self, "gamma_I", g.gamma_I)
        nuc_cum = np.cumsum(g.gamma_I)
        nuc_cum.setflags(write=False)
        object.__setattr__(self, "nuc_cum", nuc_cum)
        object.__setattr__(self, "nuc_total", float(nuc_cum[-1]) if len(nuc_cum) else 0.0)

        r2 = p.R2S + p.R2I
        has_is_channel = bool(c.n_nuclei) and p.omega1**2 * float(np.max(c.Bsq, initial=0.0)) > 0.0
        if r2 <= 0.0:
            if has_is_channel:
                raise ParameterError("R2S + R2I must be > 0 when flip-flop channels exist")
            r2 = 1.0  # inert: every flip-flop prefactor is zero
        if p.R2I <= 0.0 and c.n_pairs and float(np.max(np.abs(c.pair_d))) > 0.0:
            raise ParameterError("R2I must be > 0 when dipolar pairs are present")
        is_pref = p.omega1**2 * c.Bsq / (8.0 * p.omegaI**2 * r2)
        is_offset = np.full(c.n_nuclei, p.lambda_offset)
        if self.second_order:
            is_offset = is_offset + (4.0 * p.omega1**2 - c.Bsq) / (8.0 * p.omegaI)
        for name, arr in (("is_pref", is_pref), ("is_offset", is_offset)):
            arr = np.ascontiguousarray(arr, dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "inv_r2sum", 1.0 / r2)
        half_A = np.ascontiguousarray(0.5 * c.A)
        half_A.setflags(write=False)
        object.__setattr__(self, "half_A", half_A)

        delta_a = c.A[c.pair_k] - c.A[c.pair_j]
        r2i = p.R2I if p.R2I > 0.0 else 1.0  # inert unless real dipolar pairs exist
        pref = c.pair_d**2 / (4.0 * r2i) if c.n_pairs else np.zeros(0)
        if self.second_order:
            shift = (c.Bsq[c.pair_k] - c.Bsq[c.pair_j]) / (8.0 * p.omegaI)
            rates = {}
            for name, bit in (("pair_rate_up", 1.0), ("pair_rate_down", -1.0)):
                ckj = (delta_a * (-0.5 * bit) + shift) / (2.0 * r2i)
                rates[name] = pref / (1.0 + ckj**2)
        else:
            ckj = delta_a / (4.0 * r2i)
            const = pref / (1.0 + ckj**2)
            rates = {"pair_rate_up": const, "pair_rate_down": const}
        for name, arr in rates.items():
            arr = np.ascontiguousarray(arr, dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

        adjacency = [[] for _ in range(c.n_nuclei)]
        for idx, (k, j) in enumerate(zip(c.pair_k, c.pair_j)):
            adjacency[k].append(idx)
            adjacency[j].append(idx)
        adjacency = tuple(np.asarray(a, dtype=np.intp) for a in adjacency)
        object.__setattr__(self, "adjacency", adjacency)
        for name, rate_arr in (
            ("adj_rate_sum_up", rates["pair_rate_up"]),
            ("adj_rate_sum_down", rates["pair_rate_down"]),
        ):
            sums = np.array([rate_arr[idx].sum() for idx in adjacency])
            sums.setflags(write=False)
            object.__setattr__(self, name, sums)

    @property
    def n_nuclei(self) -> int:
        return self.couplings.n_nuclei

    @property
    def n_spins(self) -> int:
        return self.couplings.n_nuclei + 1

    def pair_rates(self, electron_bit: int) -> np.ndarray:
        return self.pair_rate_up if electron_bit > 0 else self.pair_rate_down
