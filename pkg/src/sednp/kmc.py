"""Gillespie kinetic Monte Carlo over classical spin configurations.

State is one bit per spin (+1/-1, electron at index 0); +1 is the
thermal-equilibrium direction of the electron, so the physical
z-projection of a spin with bit b is m = -b/2 and a spin's polarization
is its mean bit.  Events are electron flips, nuclear flips,
electron-nucleus flip-flops (applicable between antiparallel partners,
with configuration-dependent rates) and nucleus-nucleus flip-flops
(constant rates, applicable between antiparallel nuclei).

The event table keeps incremental aggregates: a cached hyperfine sum
drives all constraint factors, pair activity is toggled through an
adjacency list, and slowly drifting float accumulators are refreshed
from scratch every few thousand events.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .couplings import Couplings
from .system import SpinSystem

_REFRESH_EVERY = 4096


class StallError(RuntimeError):
    """No applicable event: the total rate is zero."""


class Event(NamedTuple):
    kind: str            # "S", "I", "IS" or "II"
    spins: tuple         # site indices flipped (0 = electron)
    rate: float


@dataclass
class Configuration:
    """Classical Zeeman state: bits (+1/-1) and the cached hyperfine sum.

    ``hyperfine_sum`` is sum_k A_k m_k over nuclei (rad/s) with m = -b/2;
    it is updated incrementally by the engine and refreshed periodically.
    """

    bits: np.ndarray       # int8, (n+1,), index 0 = electron
    hyperfine_sum: float

    @classmethod
    def from_bits(cls, bits, couplings: Couplings) -> "Configuration":
        bits = np.ascontiguousarray(bits, dtype=np.int8)
        if bits.ndim != 1 or not np.all(np.abs(bits) == 1):
            raise ValueError("bits must be a 1-d array of +1/-1")
        if bits.shape[0] != couplings.n_nuclei + 1:
            raise ValueError("bit count must be n_nuclei + 1")
        hf = -0.5 * float(np.dot(couplings.A, bits[1:]))
        return cls(bits=bits, hyperfine_sum=hf)

    def copy(self) -> "Configuration":
        return Configuration(bits=self.bits.copy(), hyperfine_sum=self.hyperfine_sum)

    def recompute_hyperfine_sum(self, couplings: Couplings) -> float:
        return -0.5 * float(np.dot(couplings.A, self.bits[1:]))


def configuration_index(bits) -> int:
    """Index of a bit pattern in the exact solver's product basis.

    Site 0 is the most significant digit; bit +1 maps to the second basis
    state of that spin (m = -1/2).
    """
    idx = 0
    for b in np.asarray(bits):
        idx = (idx << 1) | (1 if b > 0 else 0)
    return idx


def bits_from_index(index: int, n_spins: int) -> np.ndarray:
    bits = np.empty(n_spins, dtype=np.int8)
    for s in range(n_spins - 1, -1, -1):
        bits[s] = 1 if (index & 1) else -1
        index >>= 1
    return bits


class EventTable:
    """Incremental event rates for one configuration of one system.

    Mutable engine state confined to a single trajectory; the referenced
    ``SpinSystem`` is read-only and shared.
    """

    def __init__(self, system: SpinSystem, conf: Configuration):
        self.system = system
        n = system.n_nuclei
        n_pairs = system.couplings.n_pairs
        self._numer = np.empty(n)
        self._is_rates = np.empty(n)
        self._is_cum = np.empty(n)
        self._is_active = np.empty(n, dtype=bool)
        self._inv2 = system.inv_r2sum**2
        self._pair_active_rate = np.zeros(n_pairs)
        self._pair_cum = np.empty(n_pairs)
        self.is_total = 0.0
        self.ii_total = 0.0
        self._steps = 0
        self.reset(conf)

    def reset(self, conf: Configuration) -> None:
        """Rebuild every aggregate from the configuration."""
        sys = self.system
        bits = conf.bits
        conf.hyperfine_sum = conf.recompute_hyperfine_sum(sys.couplings)
        if sys.couplings.n_pairs:
            nb = bits[1:]
            active = nb[sys.couplings.pair_k] != nb[sys.couplings.pair_j]
            np.multiply(sys.pair_rates(int(bits[0])), active, out=self._pair_active_rate)
            self.ii_total = float(self._pair_active_rate.sum())
        else:
            self.ii_total = 0.0
        self._steps = 0
        self._refresh_is(conf)

    def electron_rate(self, conf: Configuration) -> float:
        return self.system.gamma_S_plus if conf.bits[0] > 0 else self.system.gamma_S_minus

    def _refresh_is(self, conf: Configuration) -> None:
        sys = self.system
        self._steps += 1
        if self._steps >= _REFRESH_EVERY:
            self._steps = 0
            conf.hyperfine_sum = conf.recompute_hyperfine_sum(sys.couplings)
            if sys.couplings.n_pairs:
                self.ii_total = float(self._pair_active_rate.sum())
        nb = conf.bits[1:]
        numer = self._numer
        np.multiply(sys.half_A, nb, out=numer)
        numer += sys.is_offset
        numer += conf.hyperfine_sum
        numer *= numer
        numer *= self._inv2
        numer += 1.0
        np.divide(sys.is_pref, numer, out=self._is_rates)
        np.not_equal(nb, conf.bits[0], out=self._is_active)
        self._is_rates *= self._is_active
        self.is_total = float(np.add.reduce(self._is_rates))

    def total_rate(self, conf: Configuration) -> float:
        """Sum of all currently applicable event rates (refreshes caches)."""
        self._refresh_is(conf)
        return self.electron_rate(conf) + self.system.nuc_total + self.is_total + self.ii_total

    def events(self, conf: Configuration) -> list[Event]:
        """Materialise the applicable events (for inspection and oracles)."""
        self._refresh_is(conf)
        sys = self.system
        out = [Event("S", (0,), self.electron_rate(conf))]
        for k in range(sys.n_nuclei):
            out.append(Event("I", (1 + k,), float(sys.gamma_I[k])))
        for k in np.flatnonzero(self._is_active):
            out.append(Event("IS", (0, 1 + int(k)), float(self._is_rates[k])))
        for p in np.flatnonzero(self._pair_active_rate):
            k = int(sys.couplings.pair_k[p])
            j = int(sys.couplings.pair_j[p])
            out.append(Event("II", (1 + k, 1 + j), float(self._pair_active_rate[p])))
        return out

    # --- event application -------------------------------------------------

    def _flip_electron(self, conf: Configuration) -> None:
        bits = conf.bits
        bits[0] = -bits[0]
        sys = self.system
        if sys.second_order and sys.couplings.n_pairs:
            nb = bits[1:]
            active = nb[sys.couplings.pair_k] != nb[sys.couplings.pair_j]
            np.multiply(sys.pair_rates(int(bits[0])), active, out=self._pair_active_rate)
            self.ii_total = float(self._pair_active_rate.sum())

    def _flip_nucleus(self, conf: Configuration, k: int) -> None:
        bits = conf.bits
        sys = self.system
        b_old = int(bits[1 + k])
        bits[1 + k] = -b_old
        # m = -b/2, so the flip changes m by b_old
        conf.hyperfine_sum += float(sys.couplings.A[k]) * b_old
        idx = sys.adjacency[k]
        if idx.size:
            up = bits[0] > 0
            rates = sys.pair_rate_up if up else sys.pair_rate_down
            adj_sum = sys.adj_rate_sum_up[k] if up else sys.adj_rate_sum_down[k]
            old = self._pair_active_rate[idx]
            # toggling every adjacent pair: new = rate - old
            self.ii_total += adj_sum - 2.0 * np.add.reduce(old)
            np.subtract(rates[idx], old, out=old)
            self._pair_active_rate[idx] = old

    def apply(self, conf: Configuration, event: Event) -> None:
        if event.kind == "S":
            self._flip_electron(conf)
        elif event.kind == "I":
            self._flip_nucleus(conf, event.spins[0] - 1)
        elif event.kind == "IS":
            self._flip_nucleus(conf, event.spins[1] - 1)
            self._flip_electron(conf)
        elif event.kind == "II":
            self._flip_nucleus(conf, event.spins[0] - 1)
            self._flip_nucleus(conf, event.spins[1] - 1)
        else:
            raise ValueError(f"unknown event kind {event.kind!r}")


def enumerate_events(conf: Configuration, system: SpinSystem) -> EventTable:
    """Build the event table for a configuration."""
    return EventTable(system, conf)


def kmc_step(conf: Configuration, table: EventTable, rng: np.random.Generator):
    """One Gillespie step: draw the waiting time, select and apply an event.

    Returns ``(event, waiting_time)``; the configuration and the table are
    updated in place.
    """
    sys = table.system
    table._refresh_is(conf)
    e_rate = table.electron_rate(conf)
    total = e_rate + sys.nuc_total + table.is_total + table.ii_total
    if total <= 0.0:
        raise StallError("total event rate is zero")
    dt = rng.standard_exponential() / total
    u = rng.random() * total

    if u < e_rate:
        event = Event("S", (0,), e_rate)
    else:
        u -= e_rate
        if u < sys.nuc_total:
            k = int(np.searchsorted(sys.nuc_cum, u, side="right"))
            k = min(k, sys.n_nuclei - 1)
            event = Event("I", (1 + k,), float(sys.gamma_I[k]))
        else:
            u -= sys.nuc_total
            if u < table.is_total:
                np.cumsum(table._is_rates, out=table._is_cum)
                k = int(np.searchsorted(table._is_cum, u, side="right"))
                k = min(k, sys.n_nuclei - 1)
                event = Event("IS", (0, 1 + k), float(table._is_rates[k]))
            else:
                u -= table.is_total
                np.cumsum(table._pair_active_rate, out=table._pair_cum)
                p = int(np.searchsorted(table._pair_cum, u, side="right"))
                p = min(p, sys.couplings.n_pairs - 1)
                k = int(sys.couplings.pair_k[p])
                j = int(sys.couplings.pair_j[p])
                event = Event("II", (1 + k, 1 + j), float(table._pair_active_rate[p]))

    table.apply(conf, event)
    return event, dt


def run_trajectory(
    system: SpinSystem,
    t_grid: np.ndarray,
    initial: Configuration,
    seed: int | None = None,
    rng: np.random.Generator | None = None,
    table: EventTable | None = None,
) -> np.ndarray:
    """Simulate one trajectory, sampling the state just before each grid time.

    ``t_grid`` must start at 0 and increase strictly.  Returns an int8
    array of shape (len(t_grid), n_spins); deterministic given the seed.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0:
        raise ValueError("t_grid must be a nonempty 1-d array")
    if t_grid[0] != 0.0:
        raise ValueError("t_grid must start at 0")
    if np.any(np.diff(t_grid) <= 0.0):
        raise ValueError("t_grid must increase strictly")
    if rng is None:
        rng = np.random.default_rng(seed)

    conf = initial.copy()
    if table is None:
        table = EventTable(system, conf)
    else:
        table.reset(conf)

    n_t = t_grid.size
    samples = np.empty((n_t, system.n_spins), dtype=np.int8)
    samples[0] = conf.bits
    gi = 1
    t = 0.0
    while gi < n_t:
        event, dt = kmc_step(conf, table, rng)
        t_next = t + dt
        if t_grid[gi] <= t_next:
            # grid times inside (t, t_next] see the pre-event state
            pre = conf.bits.copy()
            for s in event.spins:
                pre[s] = -pre[s]
            while gi < n_t and t_grid[gi] <= t_next:
                samples[gi] = pre
                gi += 1
        t = t_next
    return samples


def classical_generator(system: SpinSystem) -> np.ndarray:
    """Assemble the full configuration-space generator from the event table.

    Entry (i, j) is the rate from configuration j to i in the product-basis
    index order of :func:`configuration_index`; diagonal entries make
    columns sum to zero.  Exponential in the spin count; intended for
    small-system validation only.
    """
    n_spins = system.n_spins
    if n_spins > 16:
        raise ValueError("generator assembly is limited to 16 spins")
    dim = 2**n_spins
    gen = np.zeros((dim, dim))
    for j in range(dim):
        bits = bits_from_index(j, n_spins)
        conf = Configuration.from_bits(bits, system.couplings)
        table = EventTable(system, conf)
        for ev in table.events(conf):
            post = bits.copy()
            for s in ev.spins:
                post[s] = -post[s]
            i = configuration_index(post)
            gen[i, j] += ev.rate
            gen[j, j] -= ev.rate
    return gen
