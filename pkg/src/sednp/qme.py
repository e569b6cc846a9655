"""Exact quantum master equation for small systems, and its reduction.

Dense operators over the 2^N product basis (electron first, spin-up =
first basis state, so basis index digits are 0 for m = +1/2).  The
Liouvillian acts on row-major vectorised density matrices.  Reported
polarizations use the package-wide sign convention p = -2<I_z> (the
electron's thermal direction is positive), matching the classical bits.

``adiabatic_project`` eliminates the fast non-diagonal coherences from
the weak-coupling expansion of the generator in 1/omega_I and returns
the effective classical generator over spin configurations, which can be
compared entry by entry against the analytic jump rates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.integrate
import scipy.linalg

from .couplings import Couplings
from .params import PhysicalParams

MAX_SPINS_EXACT = 6    # 4^7 superoperators stop being "small"
MAX_SPINS_PROJECT = 4


class CapacityError(ValueError):
    """System too large for the dense exact treatment."""


class PropagationError(RuntimeError):
    """The density-matrix integration failed."""


class EliminationError(RuntimeError):
    """The fast subspace is not invertible; scale separation is violated."""


class SpinOperators(NamedTuple):
    z: list      # S_z / I_kz, site 0 = electron
    plus: list
    minus: list


_SZ = np.diag([0.5, -0.5]).astype(complex)
_SP = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)


def _site_operator(op: np.ndarray, site: int, n_spins: int) -> np.ndarray:
    left = np.eye(2**site, dtype=complex)
    right = np.eye(2 ** (n_spins - site - 1), dtype=complex)
    return np.kron(np.kron(left, op), right)


def spin_operators(n_spins: int) -> SpinOperators:
    """Single-spin operators embedded in the full product space."""
    z = [_site_operator(_SZ, s, n_spins) for s in range(n_spins)]
    plus = [_site_operator(_SP, s, n_spins) for s in range(n_spins)]
    minus = [op.conj().T for op in plus]
    return SpinOperators(z=z, plus=plus, minus=minus)


def _check_capacity(n_spins: int, limit: int) -> None:
    if n_spins > limit:
        raise CapacityError(f"{n_spins} spins exceed the dense limit of {limit}")


def build_hamiltonian(params: PhysicalParams, c: Couplings):
    """Zeeman, secular and raising/lowering Hamiltonian parts.

    Returns ``(h_z, h_0, h_plus, h_minus)`` with h_0 carrying the offset,
    secular hyperfine and nuclear dipolar terms, and h_+- the microwave
    drive and pseudosecular hyperfine (real amplitudes B_k = sqrt(|B_k|^2)).
    """
    n_spins = c.n_nuclei + 1
    _check_capacity(n_spins, MAX_SPINS_EXACT)
    ops = spin_operators(n_spins)
    sz, sp, sm = ops.z[0], ops.plus[0], ops.minus[0]

    h_z = sz.copy()
    for k in range(c.n_nuclei):
        h_z += ops.z[1 + k]
    h_z *= params.omegaI

    h_0 = params.lambda_offset * sz
    for k in range(c.n_nuclei):
        h_0 += c.A[k] * ops.z[1 + k] @ sz
    for k, j, d in zip(c.pair_k, c.pair_j, c.pair_d):
        ik, jk = 1 + int(k), 1 + int(j)
        zz = ops.z[ik] @ ops.z[jk]
        flip = ops.plus[ik] @ ops.minus[jk] + ops.minus[ik] @ ops.plus[jk]
        h_0 += d * (2.0 * zz - 0.5 * flip)

    b = np.sqrt(c.Bsq)
    h_p = 0.5 * params.omega1 * sp
    for k in range(c.n_nuclei):
        h_p = h_p + 0.5 * b[k] * ops.plus[1 + k] @ sz
    h_m = h_p.conj().T
    return h_z, h_0, h_p, h_m


# --- superoperator algebra (row-major vectorisation) -------------------------


def _left(a: np.ndarray) -> np.ndarray:
    return np.kron(a, np.eye(a.shape[0], dtype=complex))


def _right(b: np.ndarray) -> np.ndarray:
    return np.kron(np.eye(b.shape[0], dtype=complex), b.T)


def commutator_super(h: np.ndarray) -> np.ndarray:
    return _left(h) - _right(h)


def dissipator_super(x: np.ndarray) -> np.ndarray:
    """D(X) rho = X rho X^dag - {rho, X^dag X}/2 as a matrix on vec(rho)."""
    xdx = x.conj().T @ x
    return np.kron(x, x.conj()) - 0.5 * (_left(xdx) + _right(xdx))


def build_relaxation(params: PhysicalParams, n_nuclei: int) -> np.ndarray:
    """Longitudinal, transverse and thermal-correction superoperators."""
    n_spins = n_nuclei + 1
    _check_capacity(n_spins, MAX_SPINS_EXACT)
    ops = spin_operators(n_spins)
    sp, sm, sz = ops.plus[0], ops.minus[0], ops.z[0]
    dim2 = (2**n_spins) ** 2
    gamma = np.zeros((dim2, dim2), dtype=complex)

    gamma += params.R1S / 2.0 * (dissipator_super(sp) + dissipator_super(sm))
    # thermal correction: biases the electron toward its equilibrium state
    gamma += params.P0 * params.R1S / 2.0 * (dissipator_super(sm) - dissipator_super(sp))
    for k in range(n_nuclei):
        ip, im = ops.plus[1 + k], ops.minus[1 + k]
        gamma += params.R1I / 2.0 * (dissipator_super(ip) + dissipator_super(im))
    gamma += 2.0 * params.R2S * dissipator_super(sz)
    for k in range(n_nuclei):
        gamma += 2.0 * params.R2I * dissipator_super(ops.z[1 + k])
    return gamma


def liouvillian(params: PhysicalParams, c: Couplings) -> np.ndarray:
    """Full generator: -i [H, .] plus relaxation."""
    h_z, h_0, h_p, h_m = build_hamiltonian(params, c)
    gamma = build_relaxation(params, c.n_nuclei)
    return -1j * commutator_super(h_z + h_0 + h_p + h_m) + gamma


def product_state(polarizations) -> np.ndarray:
    """Diagonal product density matrix from per-spin polarizations.

    A spin with polarization p occupies the m = -1/2 state with
    probability (1 + p)/2.
    """
    rho = np.array([[1.0]], dtype=complex)
    for p in polarizations:
        if abs(p) > 1.0:
            raise ValueError("polarizations must lie in [-1, 1]")
        rho = np.kron(rho, np.diag([(1.0 - p) / 2.0, (1.0 + p) / 2.0]).astype(complex))
    return rho


@dataclass
class QMEResult:
    time: np.ndarray
    polarization: np.ndarray   # (T, n_spins), p = -2 <I_z>
    trace_error: float         # of the returned (renormalised) solution
    hermiticity_error: float
    trace_drift: float = 0.0   # raw integration drift before renormalisation


def propagate(
    L: np.ndarray,
    rho0: np.ndarray,
    t_grid,
    method: str = "eig",
    rtol: float = 1e-8,
) -> QMEResult:
    """Integrate d rho/dt = L rho on the grid and report polarizations.

    ``eig`` solves the constant-coefficient system exactly through the
    spectral decomposition (robust to the huge stiffness spread between
    Larmor coherences and relaxation); ``bdf`` runs an adaptive implicit
    integrator at the requested tolerance.  Trace conservation is exact in
    the model, so the solution is renormalised by its trace; the raw
    drift is reported as ``trace_drift`` and must stay below 1e-6.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    dim = rho0.shape[0]
    if rho0.shape != (dim, dim) or L.shape != (dim * dim, dim * dim):
        raise ValueError("dimension mismatch between rho0 and L")
    tr = complex(np.trace(rho0))
    if abs(tr - 1.0) > 1e-9:
        raise ValueError(f"trace(rho0) must be 1, got {tr}")
    vec0 = rho0.reshape(-1)

    if method == "eig":
        try:
            w, v = scipy.linalg.eig(L)
            lu = scipy.linalg.lu_factor(v)
            coef = scipy.linalg.lu_solve(lu, vec0)
            # one refinement step against the ill-conditioned eigenbasis
            coef += scipy.linalg.lu_solve(lu, vec0 - v @ coef)
        except scipy.linalg.LinAlgError as exc:  # pragma: no cover
            raise PropagationError(f"spectral decomposition failed: {exc}") from exc
        phases = np.exp(np.outer(t_grid, w))
        traj = (phases * coef) @ v.T
    elif method == "bdf":
        sol = scipy.integrate.solve_ivp(
            lambda _t, y: L @ y,
            (0.0, float(t_grid[-1]) if t_grid[-1] > 0 else 1e-30),
            vec0,
            t_eval=t_grid,
            method="BDF",
            jac=lambda _t, _y: L,
            rtol=rtol,
            atol=rtol * 1e-4,
        )
        if not sol.success:
            raise PropagationError(f"BDF integration failed: {sol.message}")
        traj = sol.y.T.astype(complex)
    else:
        raise ValueError(f"unknown propagation method {method!r}")

    if not np.all(np.isfinite(traj.real)) or not np.all(np.isfinite(traj.imag)):
        raise PropagationError("non-finite density matrix during propagation")

    rhos = traj.reshape(len(t_grid), dim, dim)
    traces = np.trace(rhos, axis1=1, axis2=2)
    trace_drift = float(np.max(np.abs(traces - 1.0)))
    if trace_drift > 1e-6:
        raise PropagationError(f"trace drifted by {trace_drift:.3e}; integration inaccurate")
    rhos = rhos / traces[:, None, None]
    traces = np.trace(rhos, axis1=1, axis2=2)
    trace_error = float(np.max(np.abs(traces - 1.0)))
    herm_error = float(np.max(np.abs(rhos - rhos.conj().transpose(0, 2, 1))))

    n_spins = int(np.log2(dim))
    ops = spin_operators(n_spins)
    pol = np.empty((len(t_grid), n_spins))
    diag = np.einsum("tii->ti", rhos).real
    for s in range(n_spins):
        weights = np.diag(ops.z[s]).real
        pol[:, s] = -2.0 * diag @ weights
    return QMEResult(time=t_grid, polarization=pol, trace_error=trace_error,
                     hermiticity_error=herm_error, trace_drift=trace_drift)


# --- numerical elimination of the fast coherences -----------------------------


def _total_magnetization_digits(n_spins: int) -> np.ndarray:
    """Twice the total z-projection of each basis state (integer)."""
    dim = 2**n_spins
    m2 = np.empty(dim, dtype=int)
    for idx in range(dim):
        bits = [(idx >> s) & 1 for s in range(n_spins)]
        m2[idx] = sum(1 if b == 0 else -1 for b in bits)
    return m2


def adiabatic_project(params: PhysicalParams, c: Couplings) -> np.ndarray:
    """Effective classical generator from numerical elimination.

    Builds the slow-subspace generator as the weak-coupling expansion
    M_0 + M_1/omega_I + M_2/omega_I^2 (commutator of the raising/lowering
    parts at first order, their products around the zero-quantum generator
    at second order), restricts it to the zero-quantum sector, and removes
    the non-diagonal coherences by a Schur complement.  The result is the
    transition-rate matrix over classical configurations, indexed like
    :func:`sednp.kmc.configuration_index`.
    """
    n_spins = c.n_nuclei + 1
    _check_capacity(n_spins, MAX_SPINS_PROJECT)
    _, h_0, h_p, h_m = build_hamiltonian(params, c)
    gamma = build_relaxation(params, c.n_nuclei)
    c0 = commutator_super(h_0)
    cp = commutator_super(h_p)
    cm = commutator_super(h_m)

    m0 = -1j * c0 + gamma
    m1 = -1j * (cp @ cm - cm @ cp)
    m2 = cp @ m0 @ cm + cm @ m0 @ cp
    l0 = m0 + m1 / params.omegaI + m2 / params.omegaI**2

    dim = 2**n_spins
    m2tot = _total_magnetization_digits(n_spins)
    rows, cols = np.divmod(np.arange(dim * dim), dim)
    zero_q = np.flatnonzero(m2tot[rows] == m2tot[cols])
    is_diag = rows[zero_q] == cols[zero_q]
    slow = zero_q[is_diag]
    fast = zero_q[~is_diag]

    l_ss = l0[np.ix_(slow, slow)]
    if fast.size:
        l_sf = l0[np.ix_(slow, fast)]
        l_fs = l0[np.ix_(fast, slow)]
        l_ff = l0[np.ix_(fast, fast)]
        try:
            correction = l_sf @ np.linalg.solve(l_ff, l_fs)
        except np.linalg.LinAlgError as exc:
            raise EliminationError(
                "fast coherence block is singular; the adiabatic conditions fail"
            ) from exc
        l_ss = l_ss - correction

    if np.max(np.abs(l_ss.imag)) > 1e-9 * max(np.max(np.abs(l_ss.real)), 1e-300):
        raise EliminationError("projected generator has a non-negligible imaginary part")
    gen = np.ascontiguousarray(l_ss.real)

    # The truncated expansion can leave off-diagonal residue of either sign
    # on channels outside the Lindblad form, at relative order epsilon^2.
    # Negative residue is clipped (with the mass returned to the diagonal,
    # keeping columns summing to zero) so the result is a valid generator;
    # anything beyond residue scale indicates a genuine failure.
    diag = np.diag(gen).copy()
    np.fill_diagonal(gen, 0.0)
    scale = max(float(np.max(np.abs(gen))), float(np.max(np.abs(diag))), 1e-300)
    worst = -float(np.min(gen, initial=0.0))
    if worst > 1e-3 * scale:
        raise EliminationError(
            f"projected generator has a negative rate of {worst:.3e} (scale {scale:.3e})"
        )
    clipped = np.minimum(gen, 0.0)
    diag += clipped.sum(axis=0)
    np.clip(gen, 0.0, None, out=gen)
    np.fill_diagonal(gen, diag)
    # slow indices run over diagonal entries i*(dim+1), i.e. basis order,
    # which coincides with the classical configuration index
    return gen


def compare_generators(numeric: np.ndarray, analytic: np.ndarray, floor: float | None = None) -> float:
    """Largest relative entry deviation max |a - b| / max(|b|, floor)."""
    numeric = np.asarray(numeric, dtype=float)
    analytic = np.asarray(analytic, dtype=float)
    if numeric.shape != analytic.shape:
        raise ValueError(f"shape mismatch {numeric.shape} vs {analytic.shape}")
    if floor is None:
        scale = float(np.max(np.abs(analytic)))
        floor = 1e-12 * scale if scale > 0 else 1e-300
    if floor <= 0:
        raise ValueError("floor must be positive")
    denom = np.maximum(np.abs(analytic), floor)
    return float(np.max(np.abs(numeric - analytic) / denom))
