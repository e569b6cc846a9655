"""Trajectory averaging with reproducible seeding and worker fan-out.

Per-trajectory seeds are a splitmix-style mix of (master_seed, index), so
any worker can compute any trajectory.  Sample values are +1/-1 integers
and are accumulated as integer sums, which makes the reduction exact and
therefore independent of worker count and completion order.
"""

from __future__ import annotations

import multiprocessing
from dataclasses import dataclass, field

import numpy as np

from .kmc import Configuration, EventTable, run_trajectory
from .system import SpinSystem

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_CHUNK = 64  # trajectories per task; fixed so results never depend on workers


def _splitmix64(x: int) -> int:
    z = (x + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def trajectory_seed(master_seed: int, index: int) -> int:
    """Deterministic per-trajectory seed from (master_seed, index)."""
    return _splitmix64((master_seed + (index + 1) * _GOLDEN) & _MASK64)


@dataclass(frozen=True)
class InitialCondition:
    """Initial configuration sampler.

    ``electron`` is the initial electron polarization (None = thermal, +P0);
    ``nuclear`` a scalar or per-nucleus polarization.  ``fixed_bits``
    bypasses sampling entirely.
    """

    electron: float | None = None
    nuclear: float | np.ndarray = 0.0
    fixed_bits: np.ndarray | None = None

    def sample(self, system: SpinSystem, rng: np.random.Generator) -> Configuration:
        if self.fixed_bits is not None:
            return Configuration.from_bits(self.fixed_bits, system.couplings)
        n = system.n_nuclei
        p = np.empty(n + 1)
        p[0] = system.params.P0 if self.electron is None else self.electron
        p[1:] = self.nuclear
        if np.any(np.abs(p) > 1.0):
            raise ValueError("initial polarizations must lie in [-1, 1]")
        bits = np.where(rng.random(n + 1) < (1.0 + p) / 2.0, 1, -1).astype(np.int8)
        return Configuration.from_bits(bits, system.couplings)


@dataclass
class PolarizationSeries:
    """Trajectory-averaged per-spin polarization with standard errors.

    Column 0 is the electron.  ``nuclear_mean`` / ``nuclear_stderr`` track
    the per-trajectory average polarization over all nuclei (its spread is
    measured across trajectories, so correlations between nuclei are
    handled correctly).
    """

    time: np.ndarray            # (T,)
    mean: np.ndarray            # (T, n_spins)
    stderr: np.ndarray          # (T, n_spins); zeros for a single trajectory
    n_traj: int
    nuclear_mean: np.ndarray | None = None    # (T,)
    nuclear_stderr: np.ndarray | None = None  # (T,)
    manifest: dict | None = None

    @property
    def n_spins(self) -> int:
        return self.mean.shape[1]

    def to_csv(self, path) -> None:
        """Header row, then time, p_spin0.., se_spin0.. with round-trip floats."""
        n = self.n_spins
        cols = (
            ["time"]
            + [f"p_spin{i}" for i in range(n)]
            + [f"se_spin{i}" for i in range(n)]
        )
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(cols) + "\n")
            for i, t in enumerate(self.time):
                row = [repr(float(t))]
                row += [repr(float(v)) for v in self.mean[i]]
                row += [repr(float(v)) for v in self.stderr[i]]
                fh.write(",".join(row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "PolarizationSeries":
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        names = [c for c in header if c.startswith("p_spin")]
        n = len(names)
        if header[0] != "time" or len(header) != 1 + 2 * n:
            raise ValueError(f"unrecognised series header in {path}")
        return cls(
            time=data[:, 0],
            mean=data[:, 1 : 1 + n],
            stderr=data[:, 1 + n : 1 + 2 * n],
            n_traj=0,
        )


def _simulate_range(system, t_grid, initial, master_seed, lo, hi):
    n_t = len(t_grid)
    n_spins = system.n_spins
    spin_sum = np.zeros((n_t, n_spins), dtype=np.int64)
    bulk_sum = np.zeros(n_t, dtype=np.int64)
    bulk_sq = np.zeros(n_t, dtype=np.int64)
    table = None
    for i in range(lo, hi):
        rng = np.random.Generator(np.random.PCG64(trajectory_seed(master_seed, i)))
        conf = initial.sample(system, rng)
        samples = run_trajectory(system, t_grid, conf, rng=rng, table=table)
        if table is None:
            table = EventTable(system, conf)
        spin_sum += samples
        bulk = samples[:, 1:].sum(axis=1, dtype=np.int64)
        bulk_sum += bulk
        bulk_sq += bulk * bulk
    return spin_sum, bulk_sum, bulk_sq


_WORKER_ARGS: dict = {}


def _init_worker(system, t_grid, initial, master_seed):
    _WORKER_ARGS["args"] = (system, t_grid, initial, master_seed)


def _run_chunk(bounds):
    lo, hi = bounds
    system, t_grid, initial, master_seed = _WORKER_ARGS["args"]
    return _simulate_range(system, t_grid, initial, master_seed, lo, hi)


def average_trajectories(
    system: SpinSystem,
    t_grid,
    n_traj: int,
    master_seed: int,
    workers: int = 1,
    initial: InitialCondition | None = None,
) -> PolarizationSeries:
    """Average ``n_traj`` independent trajectories on ``t_grid``.

    The result is bit-identical for any ``workers`` value because the
    reduction is over integer sums.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    t_grid = np.asarray(t_grid, dtype=float)
    if initial is None:
        initial = InitialCondition()

    n_t = len(t_grid)
    n_spins = system.n_spins
    spin_sum = np.zeros((n_t, n_spins), dtype=np.int64)
    bulk_sum = np.zeros(n_t, dtype=np.int64)
    bulk_sq = np.zeros(n_t, dtype=np.int64)

    bounds = [(lo, min(lo + _CHUNK, n_traj)) for lo in range(0, n_traj, _CHUNK)]
    if workers <= 1 or len(bounds) == 1:
        for lo, hi in bounds:
            s, b, q = _simulate_range(system, t_grid, initial, master_seed, lo, hi)
            spin_sum += s
            bulk_sum += b
            bulk_sq += q
    else:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(
            processes=workers,
            initializer=_init_worker,
            initargs=(system, t_grid, initial, master_seed),
        ) as pool:
            for s, b, q in pool.imap_unordered(_run_chunk, bounds):
                spin_sum += s
                bulk_sum += b
                bulk_sq += q

    mean = spin_sum / n_traj
    if n_traj == 1:
        stderr = np.zeros_like(mean)
    else:
        # samples are +1/-1, so sum(x^2) = n and the sample variance
        # reduces to n (1 - mean^2) / (n - 1)
        stderr = np.sqrt(np.maximum(0.0, 1.0 - mean**2) / (n_traj - 1))

    n_nuc = system.n_nuclei
    if n_nuc:
        nuc_mean = bulk_sum / (n_traj * n_nuc)
        if n_traj == 1:
            nuc_se = np.zeros(n_t)
        else:
            var = (bulk_sq / n_nuc**2 - n_traj * nuc_mean**2) / (n_traj - 1)
            nuc_se = np.sqrt(np.maximum(0.0, var) / n_traj)
    else:
        nuc_mean = np.zeros(n_t)
        nuc_se = np.zeros(n_t)

    return PolarizationSeries(
        time=t_grid,
        mean=mean,
        stderr=stderr,
        n_traj=n_traj,
        nuclear_mean=nuc_mean,
        nuclear_stderr=nuc_se,
    )
