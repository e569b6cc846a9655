"""Spin geometries: lattice generators and plain-text import/export.

Positions are in angstrom, the static field is along z, and site 0 is the
electron by convention.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

MIN_SITE_DISTANCE = 0.1  # angstrom


class GeometryError(ValueError):
    """Raised for invalid site layouts or lattice specifications."""


@dataclass(frozen=True)
class Geometry:
    """Site coordinates (angstrom) with the electron at index 0."""

    positions: np.ndarray  # (n+1, 3)
    electron_index: int = 0

    def __post_init__(self) -> None:
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 2:
            raise GeometryError(f"positions must be (n_sites, 3) with n_sites >= 2, got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise GeometryError("positions must be finite")
        if self.electron_index != 0:
            raise GeometryError("the electron is site 0 by convention")
        pairs = cKDTree(pos).query_pairs(MIN_SITE_DISTANCE)
        if pairs:
            i, j = sorted(next(iter(pairs)))
            raise GeometryError(f"sites {i} and {j} closer than {MIN_SITE_DISTANCE} angstrom")
        pos = pos.copy()
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def n_nuclei(self) -> int:
        return self.positions.shape[0] - 1

    def nuclear_positions(self) -> np.ndarray:
        return self.positions[1:]


@dataclass(frozen=True)
class CubicLattice:
    """m x m x m grid with the electron on the central site.

    ``jitter`` is a fraction of the spacing; each coordinate of every site
    is displaced uniformly in [-jitter*spacing, +jitter*spacing].
    """

    m: int
    spacing: float          # angstrom
    jitter: float = 0.0     # fraction of spacing, in [0, 0.5)
    seed: int = 0


@dataclass(frozen=True)
class LinearChain:
    """Linear chain of n_sites at ``angle`` to the field, electron at one end."""

    n_sites: int
    spacing: float          # angstrom
    angle: float = 0.0      # radians, chain axis to B0 (z)
    jitter: float = 0.0
    seed: int = 0


LatticeSpec = CubicLattice | LinearChain


def _check_jitter(jitter: float) -> None:
    if not 0.0 <= jitter < 0.5:
        raise GeometryError(f"jitter fraction must be in [0, 0.5), got {jitter}")


def generate_lattice(spec: LatticeSpec) -> Geometry:
    """Generate a seeded, reproducible geometry from a lattice spec."""
    if isinstance(spec, CubicLattice):
        return _generate_cubic(spec)
    if isinstance(spec, LinearChain):
        return _generate_chain(spec)
    raise GeometryError(f"unknown lattice spec {spec!r}")


def _generate_cubic(spec: CubicLattice) -> Geometry:
    if spec.m < 1 or spec.m % 2 == 0:
        raise GeometryError(f"cubic lattice needs odd m for a unique centre, got m={spec.m}")
    if spec.spacing <= 0.0:
        raise GeometryError("spacing must be > 0")
    _check_jitter(spec.jitter)
    half = spec.m // 2
    axis = np.arange(-half, half + 1, dtype=float)
    grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    grid *= spec.spacing
    rng = np.random.default_rng(spec.seed)
    grid += rng.uniform(-1.0, 1.0, size=grid.shape) * (spec.jitter * spec.spacing)
    centre = (spec.m**3 - 1) // 2
    order = np.concatenate(([centre], np.delete(np.arange(spec.m**3), centre)))
    return Geometry(positions=grid[order])


def _generate_chain(spec: LinearChain) -> Geometry:
    if spec.n_sites < 2:
        raise GeometryError("chain needs at least 2 sites")
    if spec.spacing <= 0.0:
        raise GeometryError("spacing must be > 0")
    _check_jitter(spec.jitter)
    axis = np.array([np.sin(spec.angle), 0.0, np.cos(spec.angle)])
    sites = np.arange(spec.n_sites, dtype=float)[:, None] * spec.spacing * axis[None, :]
    rng = np.random.default_rng(spec.seed)
    sites += rng.uniform(-1.0, 1.0, size=sites.shape) * (spec.jitter * spec.spacing)
    return Geometry(positions=sites)


def save_geometry(geom: Geometry, path: str | Path) -> None:
    """Write one line per site, columns x y z in angstrom, electron first."""
    header = "x_angstrom y_angstrom z_angstrom (site 0 = electron)"
    np.savetxt(path, geom.positions, fmt="%.10f", header=header)


def load_geometry(path: str | Path) -> Geometry:
    pos = np.loadtxt(path, ndmin=2)
    return Geometry(positions=pos)
