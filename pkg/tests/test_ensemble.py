import numpy as np
import pytest

from sednp.constants import GAMMA_13C
from sednp.couplings import Couplings
from sednp.ensemble import (
    InitialCondition,
    PolarizationSeries,
    average_trajectories,
    trajectory_seed,
)
from sednp.params import PhysicalParams
from sednp.system import SpinSystem


def make_system(n=3, r1i=0.5, omega1=0.0, r1s=1.0, temperature=1.0):
    c = Couplings(A=np.zeros(n), Bsq=np.zeros(n),
                  pair_k=np.zeros(0, int), pair_j=np.zeros(0, int), pair_d=np.zeros(0))
    p = PhysicalParams(B0=3.4, temperature=temperature, gamma_n=GAMMA_13C,
                       omega1=omega1, R1S=r1s, R2S=1e5, R1I=r1i, R2I=1e4)
    return SpinSystem(params=p, couplings=c)


def test_trajectory_seeds_are_distinct():
    seeds = {trajectory_seed(42, i) for i in range(2000)}
    assert len(seeds) == 2000
    assert trajectory_seed(42, 0) != trajectory_seed(43, 0)


def test_single_trajectory_reports_zero_stderr():
    system = make_system()
    grid = np.array([0.0, 1.0])
    series = average_trajectories(system, grid, 1, master_seed=0)
    assert np.all(series.stderr == 0.0)
    assert np.all(series.nuclear_stderr == 0.0)


def test_uncoupled_nuclei_relax_exponentially():
    # flip rates R1I/2 each way give polarization decay at rate R1I
    r1i = 0.8
    system = make_system(n=4, r1i=r1i)
    grid = np.array([0.0, 0.5, 1.0, 2.0, 4.0])
    init = InitialCondition(fixed_bits=np.array([1, 1, 1, 1, 1], np.int8))
    series = average_trajectories(system, grid, 4000, master_seed=7, initial=init)
    expected = np.exp(-r1i * grid)
    for k in range(1, 5):
        err = np.abs(series.mean[:, k] - expected)
        bound = 3.0 * np.maximum(series.stderr[:, k], 1e-9)
        assert np.all(err[1:] <= bound[1:]), (k, err, bound)
    assert np.all(series.mean[0] == series.mean[0])  # finite


def test_mean_within_bounds_and_schema():
    system = make_system(n=2)
    grid = np.array([0.0, 1.0, 2.0])
    series = average_trajectories(system, grid, 100, master_seed=1)
    assert series.mean.shape == (3, 3)
    assert np.all(np.abs(series.mean) <= 1.0)
    assert np.all(series.stderr >= 0.0)


def test_stderr_scales_inverse_sqrt():
    system = make_system(n=1, r1i=2.0)
    grid = np.array([0.0, 1.0])
    small = average_trajectories(system, grid, 100, master_seed=2)
    large = average_trajectories(system, grid, 1600, master_seed=2)
    ratio = small.stderr[1, 1] / large.stderr[1, 1]
    assert ratio == pytest.approx(4.0, rel=0.35)


def test_worker_count_does_not_change_results():
    system = make_system(n=2, r1i=1.0)
    grid = np.array([0.0, 0.7, 1.9])
    a = average_trajectories(system, grid, 130, master_seed=9, workers=1)
    b = average_trajectories(system, grid, 130, master_seed=9, workers=2)
    assert np.array_equal(a.mean, b.mean)
    assert np.array_equal(a.stderr, b.stderr)
    assert np.array_equal(a.nuclear_mean, b.nuclear_mean)


def test_master_seed_determinism():
    system = make_system(n=2)
    grid = np.array([0.0, 1.0])
    a = average_trajectories(system, grid, 50, master_seed=4)
    b = average_trajectories(system, grid, 50, master_seed=4)
    c = average_trajectories(system, grid, 50, master_seed=5)
    assert np.array_equal(a.mean, b.mean)
    assert not np.array_equal(a.mean, c.mean)


def test_initial_condition_defaults_to_thermal_electron():
    system = make_system(n=1, r1s=0.0, r1i=0.0)
    grid = np.array([0.0])  # no events needed, just the sampled start
    series = average_trajectories(system, grid, 4000, master_seed=11)
    p0 = system.params.P0
    se = np.sqrt((1 - p0**2) / 4000)
    assert abs(series.mean[0, 0] - p0) <= 4 * max(se, 1e-6)
    assert abs(series.mean[0, 1]) <= 4 / np.sqrt(4000)


def test_initial_condition_validation():
    system = make_system(n=1)
    with pytest.raises(ValueError):
        InitialCondition(electron=1.5).sample(system, np.random.default_rng(0))
    with pytest.raises(ValueError):
        average_trajectories(system, [0.0, 1.0], 0, master_seed=0)


def test_series_csv_roundtrip(tmp_path):
    system = make_system(n=2, r1i=1.0)
    grid = np.array([0.0, 0.5, 1.5])
    series = average_trajectories(system, grid, 64, master_seed=3)
    path = tmp_path / "series.csv"
    series.to_csv(path)
    back = PolarizationSeries.from_csv(path)
    assert np.array_equal(back.time, series.time)
    assert np.array_equal(back.mean, series.mean)
    assert np.array_equal(back.stderr, series.stderr)


def test_series_csv_byte_stable(tmp_path):
    system = make_system(n=2, r1i=1.0)
    grid = np.array([0.0, 0.5, 1.5])
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    average_trajectories(system, grid, 64, master_seed=3).to_csv(p1)
    average_trajectories(system, grid, 64, master_seed=3, workers=2).to_csv(p2)
    assert p1.read_bytes() == p2.read_bytes()
