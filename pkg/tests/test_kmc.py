import numpy as np
import pytest
from scipy.linalg import expm

from sednp.constants import GAMMA_13C, TWO_PI
from sednp.couplings import Couplings
from sednp.kmc import (
    Configuration,
    EventTable,
    StallError,
    bits_from_index,
    classical_generator,
    configuration_index,
    enumerate_events,
    kmc_step,
    run_trajectory,
)
from sednp.params import PhysicalParams
from sednp.system import SpinSystem


def make_couplings(A, Bsq, pairs=()):
    if pairs:
        pk, pj, pd = zip(*pairs)
    else:
        pk, pj, pd = (), (), ()
    return Couplings(A=np.asarray(A, float), Bsq=np.asarray(Bsq, float),
                     pair_k=np.array(pk, int), pair_j=np.array(pj, int),
                     pair_d=np.array(pd, float))


def params_13c(**kw):
    defaults = dict(B0=3.4, temperature=1.0, gamma_n=GAMMA_13C,
                    R1S=1.0, R2S=1e5, R1I=1e-4, R2I=1e4)
    defaults.update(kw)
    return PhysicalParams(**defaults)


def binary_exact_system(n_nuclei=2, lam=0.0, second_order=False):
    """System whose rate arithmetic is exact in float64.

    A values and R2S + R2I are powers of two, so differently ordered sums
    and divisions in independent implementations give bitwise equal rates.
    """
    A = [8192.0, -4096.0, 2048.0][:n_nuclei]
    Bsq = [(2.0**18) ** 2, (2.0**17) ** 2, (2.0**16) ** 2][:n_nuclei]
    pairs = [(k, j, 256.0 * (k + 1)) for k in range(n_nuclei) for j in range(k + 1, n_nuclei)]
    c = make_couplings(A, Bsq, pairs)
    p = params_13c(omega1=TWO_PI * 1e5, lambda_offset=lam, R2S=61440.0, R2I=4096.0,
                   R1S=0.5, R1I=0.0625)
    return SpinSystem(params=p, couplings=c, second_order=second_order)


def brute_force_generator(system):
    """Direct per-configuration evaluation of the effective master equation.

    Independent of the event-table machinery: plain Python loops over
    configurations and the rate formulas written out term by term.
    """
    p = system.params
    c = system.couplings
    n = c.n_nuclei
    n_spins = n + 1
    dim = 2**n_spins
    r2 = p.R2S + p.R2I
    drive = p.omega1**2 / (2.0 * p.omegaI**2) * p.R2S
    g_up = (1.0 - p.P0) / 2.0 * p.R1S + drive     # leaves bit +1
    g_down = (1.0 + p.P0) / 2.0 * p.R1S + drive   # leaves bit -1
    gen = np.zeros((dim, dim))

    def add(src_idx, bits, flips, rate):
        post = bits.copy()
        for s in flips:
            post[s] = -post[s]
        dst = configuration_index(post)
        gen[dst, src_idx] += rate
        gen[src_idx, src_idx] -= rate

    pair_list = list(zip(c.pair_k, c.pair_j, c.pair_d))
    for idx in range(dim):
        bits = bits_from_index(idx, n_spins)
        add(idx, bits, (0,), g_up if bits[0] > 0 else g_down)
        for k in range(n):
            gi = p.R1I / 2.0 + c.Bsq[k] / (8.0 * p.omegaI**2) * p.R2I
            add(idx, bits, (1 + k,), gi)
        for k in range(n):
            if bits[1 + k] != bits[0]:
                field = p.lambda_offset
                for s in range(n):
                    if s != k:
                        field += c.A[s] * (-bits[1 + s] / 2.0)
                if system.second_order:
                    field += (4.0 * p.omega1**2 - c.Bsq[k]) / (8.0 * p.omegaI)
                dk = field / r2
                rate = p.omega1**2 * c.Bsq[k] / (8.0 * p.omegaI**2 * r2) / (1.0 + dk * dk)
                add(idx, bits, (0, 1 + k), rate)
        for k, j, d in pair_list:
            if bits[1 + k] != bits[1 + j]:
                if system.second_order:
                    numer = (c.A[k] - c.A[j]) * (-bits[0] / 2.0)
                    numer += (c.Bsq[k] - c.Bsq[j]) / (8.0 * p.omegaI)
                    ckj = numer / (2.0 * p.R2I)
                else:
                    ckj = (c.A[k] - c.A[j]) / (4.0 * p.R2I)
                rate = d * d / (4.0 * p.R2I) / (1.0 + ckj * ckj)
                add(idx, bits, (1 + k, 1 + j), rate)
    return gen


# --- configuration and index helpers ----------------------------------------


def test_configuration_index_roundtrip():
    for idx in range(16):
        bits = bits_from_index(idx, 4)
        assert configuration_index(bits) == idx


def test_configuration_caches_hyperfine_sum():
    c = make_couplings([1e5, -3e4], [0.0, 0.0])
    conf = Configuration.from_bits(np.array([1, 1, -1], np.int8), c)
    assert conf.hyperfine_sum == -0.5 * (1e5 * 1 + (-3e4) * (-1))


def test_configuration_rejects_bad_bits():
    c = make_couplings([0.0], [0.0])
    with pytest.raises(ValueError):
        Configuration.from_bits(np.array([1, 0], np.int8), c)
    with pytest.raises(ValueError):
        Configuration.from_bits(np.array([1, 1, 1], np.int8), c)


# --- event enumeration -------------------------------------------------------


def test_enumerate_parallel_pair_has_no_flipflop():
    system = binary_exact_system(1)
    conf = Configuration.from_bits(np.array([1, 1], np.int8), system.couplings)
    table = enumerate_events(conf, system)
    events = table.events(conf)
    kinds = sorted(ev.kind for ev in events)
    assert kinds == ["I", "S"]
    srate = [ev.rate for ev in events if ev.kind == "S"][0]
    assert srate == system.gamma_S_plus  # leaving the +1 state


def test_enumerate_antiparallel_pair_adds_is_event():
    system = binary_exact_system(1)
    conf = Configuration.from_bits(np.array([1, -1], np.int8), system.couplings)
    events = enumerate_events(conf, system).events(conf)
    kinds = sorted(ev.kind for ev in events)
    assert kinds == ["I", "IS", "S"]


def test_total_rate_matches_event_sum():
    system = binary_exact_system(3)
    rng = np.random.default_rng(0)
    for _ in range(20):
        bits = rng.choice(np.array([-1, 1], np.int8), size=4)
        conf = Configuration.from_bits(bits, system.couplings)
        table = enumerate_events(conf, system)
        total = table.total_rate(conf)
        s = sum(ev.rate for ev in table.events(conf))
        assert total == pytest.approx(s, rel=1e-9)


def test_generator_equivalence_exact_2n():
    system = binary_exact_system(2)
    assert np.array_equal(classical_generator(system), brute_force_generator(system))


def test_generator_equivalence_exact_1n():
    system = binary_exact_system(1, lam=1024.0)
    assert np.array_equal(classical_generator(system), brute_force_generator(system))


def test_generator_equivalence_exact_second_order():
    # second-order corrections shift the constraint numerators; the
    # equivalence must still hold configuration by configuration
    system = binary_exact_system(2, second_order=True)
    gen = classical_generator(system)
    ref = brute_force_generator(system)
    np.testing.assert_allclose(gen, ref, rtol=1e-12, atol=1e-18)


def test_generator_columns_sum_to_zero():
    system = binary_exact_system(3)
    gen = classical_generator(system)
    np.testing.assert_allclose(gen.sum(axis=0), 0.0, atol=1e-10)
    off = gen - np.diag(np.diag(gen))
    assert np.all(off >= 0.0)


# --- stepping ----------------------------------------------------------------


def test_kmc_step_deterministic_event_sequence():
    system = binary_exact_system(1)

    def sequence(seed):
        rng = np.random.default_rng(seed)
        conf = Configuration.from_bits(np.array([1, -1], np.int8), system.couplings)
        table = EventTable(system, conf)
        return [kmc_step(conf, table, rng) for _ in range(200)]

    a = sequence(123)
    b = sequence(123)
    assert [(e.kind, e.spins) for e, _ in a] == [(e.kind, e.spins) for e, _ in b]
    assert [dt for _, dt in a] == [dt for _, dt in b]


def test_kmc_step_equal_rates_select_half():
    # electron and nucleus flip at identical rates: selection should be fair
    c = make_couplings([0.0], [0.0])
    p = params_13c(omega1=0.0, temperature=1e14, R1S=2.0, R1I=2.0, R2I=1e4)
    system = SpinSystem(params=p, couplings=c)
    rng = np.random.default_rng(77)
    conf = Configuration.from_bits(np.array([1, 1], np.int8), c)
    table = EventTable(system, conf)
    n_draws = 10**5
    hits = 0
    for _ in range(n_draws):
        ev, _ = kmc_step(conf, table, rng)
        if ev.kind == "S":
            hits += 1
    freq = hits / n_draws
    sigma = 0.5 / np.sqrt(n_draws)
    assert abs(freq - 0.5) <= 3 * sigma


def test_kmc_step_waiting_time_mean():
    # single applicable event with rate r: mean waiting time 1/r
    c = make_couplings([], [])
    p = params_13c(omega1=0.0, R1S=4.0, R1I=0.0)
    system = SpinSystem(params=p, couplings=c)
    rng = np.random.default_rng(5)
    base = Configuration.from_bits(np.array([-1], np.int8), c)
    table = EventTable(system, base)
    r = system.gamma_S_minus
    n_draws = 10**5
    total = 0.0
    for _ in range(n_draws):
        conf = base.copy()
        table.reset(conf)
        _, dt = kmc_step(conf, table, rng)
        total += dt
    mean = total / n_draws
    sigma = (1.0 / r) / np.sqrt(n_draws)
    assert abs(mean - 1.0 / r) <= 3 * sigma


def test_stall_error():
    c = make_couplings([], [])
    p = params_13c(omega1=0.0, R1S=0.0, R1I=0.0)
    system = SpinSystem(params=p, couplings=c)
    conf = Configuration.from_bits(np.array([1], np.int8), c)
    table = EventTable(system, conf)
    with pytest.raises(StallError):
        kmc_step(conf, table, np.random.default_rng(0))


def test_magnetization_bookkeeping_and_hyperfine_cache():
    system = binary_exact_system(3)
    rng = np.random.default_rng(11)
    conf = Configuration.from_bits(rng.choice(np.array([-1, 1], np.int8), 4), system.couplings)
    table = EventTable(system, conf)
    for _ in range(5000):
        before = int(conf.bits.sum())
        ev, _ = kmc_step(conf, table, rng)
        delta = int(conf.bits.sum()) - before
        if ev.kind in ("S", "I"):
            assert abs(delta) == 2
        else:
            assert delta == 0
    exact = conf.recompute_hyperfine_sum(system.couplings)
    assert conf.hyperfine_sum == pytest.approx(exact, rel=1e-9, abs=1e-9)


# --- trajectories ------------------------------------------------------------


def test_trajectory_grid_validation():
    system = binary_exact_system(1)
    conf = Configuration.from_bits(np.array([1, 1], np.int8), system.couplings)
    with pytest.raises(ValueError):
        run_trajectory(system, [], conf, seed=0)
    with pytest.raises(ValueError):
        run_trajectory(system, [0.5, 1.0], conf, seed=0)
    with pytest.raises(ValueError):
        run_trajectory(system, [0.0, 1.0, 1.0], conf, seed=0)


def test_trajectory_zero_span_returns_initial():
    system = binary_exact_system(2)
    bits = np.array([-1, 1, -1], np.int8)
    conf = Configuration.from_bits(bits, system.couplings)
    out = run_trajectory(system, [0.0], conf, seed=3)
    assert np.array_equal(out[0], bits)


def test_trajectory_absorbing_state_at_full_polarization():
    # P0 -> 1: the +1 electron state becomes absorbing (departure rate ~ 1e-16)
    c = make_couplings([], [])
    p = PhysicalParams(B0=3.4, temperature=0.13, gamma_n=GAMMA_13C, omega1=0.0,
                       R1S=50.0, R2S=0.0, R1I=0.0, R2I=0.0)
    assert p.P0 > 1 - 1e-14
    system = SpinSystem(params=p, couplings=c)
    conf = Configuration.from_bits(np.array([-1], np.int8), c)
    out = run_trajectory(system, np.linspace(0.0, 5.0, 51), conf, seed=9)
    p_e = out[:, 0].astype(float)
    assert p_e[0] == -1.0
    flipped = np.flatnonzero(p_e > 0)
    assert flipped.size > 0          # reaches the +1 state quickly
    assert np.all(p_e[flipped[0]:] == 1.0)  # and never leaves it


def test_trajectory_reproducible_given_seed():
    system = binary_exact_system(2)
    conf = Configuration.from_bits(np.array([1, -1, 1], np.int8), system.couplings)
    grid = np.linspace(0.0, 20.0, 40)
    a = run_trajectory(system, grid, conf, seed=21)
    b = run_trajectory(system, grid, conf, seed=21)
    cdiff = run_trajectory(system, grid, conf, seed=22)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, cdiff)


def test_trajectory_telegraph_matches_analytic():
    # electron-only two-state process: occupancy relaxes at gamma+ + gamma-
    c = make_couplings([], [])
    p = params_13c(omega1=0.0, R1S=2.0, R1I=0.0)
    system = SpinSystem(params=p, couplings=c)
    g_up, g_down = system.gamma_S_minus, system.gamma_S_plus  # into/out of +1
    grid = np.array([0.0, 0.2, 0.5, 1.0, 2.0])
    n_traj = 10**4
    acc = np.zeros(grid.size)
    conf0 = Configuration.from_bits(np.array([-1], np.int8), c)
    table = EventTable(system, conf0)
    for i in range(n_traj):
        out = run_trajectory(system, grid, conf0, seed=1000 + i, table=table)
        acc += (out[:, 0] > 0)
    occ = acc / n_traj
    rate = g_up + g_down
    p_inf = g_up / rate
    expected = p_inf + (0.0 - p_inf) * np.exp(-rate * grid)
    sigma = np.sqrt(np.maximum(expected * (1 - expected), 1e-12) / n_traj)
    assert np.all(np.abs(occ - expected) <= 3.5 * sigma)


def test_ensemble_occupancy_matches_exact_ode():
    # distribution over configurations versus expm of the small generator
    system = binary_exact_system(2)
    gen = classical_generator(system)
    dim = gen.shape[0]
    bits0 = np.array([1, -1, 1], np.int8)
    p0 = np.zeros(dim)
    p0[configuration_index(bits0)] = 1.0
    times = np.array([0.0, 0.3, 1.0, 3.0])
    exact = np.stack([expm(gen * t) @ p0 for t in times])

    n_traj = 2 * 10**4
    counts = np.zeros((times.size, dim))
    conf0 = Configuration.from_bits(bits0, system.couplings)
    table = EventTable(system, conf0)
    for i in range(n_traj):
        out = run_trajectory(system, times, conf0, seed=i, table=table)
        for ti in range(times.size):
            counts[ti, configuration_index(out[ti])] += 1
    freq = counts / n_traj
    sigma = np.sqrt(np.maximum(exact * (1 - exact), 1e-12) / n_traj)
    assert np.all(np.abs(freq - exact) <= 4.0 * sigma)
