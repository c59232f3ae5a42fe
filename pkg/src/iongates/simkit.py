"""Exact small-register verification simulator (sequential per-mode evolution).

The interaction Hamiltonian is a sum of commuting per-mode terms, so the
register is evolved one mode at a time: spin state (tensor) single-mode Fock
space, trace out the mode, feed the spin state forward.  In the Pauli-x
product basis every per-mode term is block-diagonal over spin configurations,
and without error terms all blocks share one Hermitian matrix scaled by a
per-configuration coupling, which makes the time stepping cheap.

Error terms: an off-resonant carrier coupling (sigma_y, heuristically split
1/N per mode stage, which breaks mode-order invariance) and the O(eta^2)
Debye-Waller correction to the sideband operators.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .analysis import realized_phases
from .coupling import displacement_trajectory
from .crystal import IonCrystal
from .spectrum import ToneGrid
from .targets import TargetMatrix


@dataclass(frozen=True)
class SimConfig:
    phonon_cutoff: int = 14
    time_steps: int | None = None      # per mode stage; None -> steps_per_cycle * cycles
    steps_per_cycle: int = 24
    carrier: bool = False
    debye_waller: bool = False
    initial_spin_state: np.ndarray | None = None   # z-basis amplitudes, default |0...0>
    n_samples: int = 160
    max_ions: int = 6
    leakage_limit: float = 1e-5
    trace_tol: float = 1e-9
    mode_order: tuple | None = None

    def __post_init__(self):
        if self.phonon_cutoff < 2:
            raise ValueError("phonon_cutoff must be >= 2")


@dataclass(frozen=True)
class SimulationResult:
    final_spin_state: np.ndarray       # density matrix, z basis
    fidelity: float
    times: np.ndarray
    mode_occupations: np.ndarray       # (n_samples, n_modes)
    populations: np.ndarray            # (n_samples, 2^N) z-basis populations
    fock_populations: np.ndarray       # (n_samples, n_modes, cutoff)
    leakage: float                     # max population at the cutoff level
    valid: bool

    def occupation_tail(self, level: int) -> float:
        """Max over time/modes of total population strictly above Fock level."""
        return float(np.max(np.sum(self.fock_populations[:, :, level + 1 :], axis=2)))


def _hadamard(n: int) -> np.ndarray:
    h1 = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2.0)
    h = np.array([[1.0]])
    for _ in range(n):
        h = np.kron(h, h1)
    return h


def _spin_configs(n: int) -> np.ndarray:
    """Rows of +-1 per x-basis index; qubit 0 is the most significant bit."""
    idx = np.arange(2**n)
    bits = (idx[:, None] >> np.arange(n - 1, -1, -1)[None, :]) & 1
    return 1.0 - 2.0 * bits


def _pair_phase_per_config(phases: np.ndarray, configs: np.ndarray) -> np.ndarray:
    """theta_s = sum_{n<m} phi_nm s_n s_m for each configuration row."""
    n = phases.shape[0]
    theta = np.zeros(len(configs))
    for a in range(n):
        for b in range(a + 1, n):
            theta += phases[a, b] * configs[:, a] * configs[:, b]
    return theta


def _ideal_state_x(target, psi0_x: np.ndarray, configs: np.ndarray) -> np.ndarray:
    if target is None:
        return psi0_x
    if isinstance(target, TargetMatrix):
        theta = _pair_phase_per_config(target.phases, configs)
        return np.exp(1j * theta) * psi0_x
    state = np.asarray(target, dtype=complex)
    return _hadamard(int(np.log2(len(state)))) @ state


def _amplitude_matrix(solution_or_amplitudes) -> np.ndarray:
    return np.asarray(
        getattr(solution_or_amplitudes, "amplitudes", solution_or_amplitudes),
        dtype=float,
    )


def _auto_steps(crystal: IonCrystal, grid: ToneGrid, config: SimConfig) -> int:
    if config.time_steps is not None:
        return config.time_steps
    top = max(crystal.mode_freqs[-1], grid.tone_freqs[-1])
    cycles = top * grid.gate_time / (2 * np.pi)
    return max(2000, int(np.ceil(config.steps_per_cycle * cycles)))


def simulate(
    solution,
    crystal: IonCrystal,
    grid: ToneGrid,
    target=None,
    config: SimConfig = SimConfig(),
) -> SimulationResult:
    """Sequentially evolve the register mode by mode and score the final state."""
    n = crystal.n_ions
    if n > config.max_ions:
        raise ValueError(f"simulator accepts at most {config.max_ions} ions")
    if config.carrier:
        return _simulate_density_chain(solution, crystal, grid, target, config)
    return _simulate_pure_chain(solution, crystal, grid, target, config)


def simulate_with_carrier(solution, crystal, grid, target=None, config=SimConfig()):
    return simulate(solution, crystal, grid, target, replace(config, carrier=True))


def simulate_with_debye_waller(solution, crystal, grid, target=None, config=SimConfig()):
    return simulate(solution, crystal, grid, target, replace(config, debye_waller=True))


def analytic_unitary(solution, crystal: IonCrystal, grid: ToneGrid, omega=None):
    """Magnus-exact description: realized phases and residual displacements."""
    amps = _amplitude_matrix(solution)
    phases = realized_phases(amps, crystal, grid, omega=omega)
    residual = displacement_trajectory(amps, crystal, grid, grid.gate_time, omega=omega)
    return {"phases": phases, "residual_displacements": residual}


# ---------------------------------------------------------------------------
# pure-state per-configuration chain (ideal and Debye-Waller runs)
# ---------------------------------------------------------------------------


def _sideband_ops(cutoff: int):
    lower = np.diag(np.sqrt(np.arange(1, cutoff, dtype=float)), 1)
    raise_ = lower.T.copy()
    return raise_, lower


def _dw_raising(cutoff: int, eta2: float) -> np.ndarray:
    """Raising operator with the O(eta^2) Debye-Waller element correction."""
    k = np.arange(1, cutoff, dtype=float)
    elems = np.sqrt(k) * (1.0 - eta2 * k / 2.0)
    return np.diag(elems, -1)


def _simulate_pure_chain(solution, crystal, grid, target, config) -> SimulationResult:
    n = crystal.n_ions
    amps = _amplitude_matrix(solution)
    omega = crystal.config.base_rabi
    cutoff = config.phonon_cutoff
    steps = _auto_steps(crystal, grid, config)
    t_total = grid.gate_time

    configs = _spin_configs(n)
    n_cfg = len(configs)
    had = _hadamard(n)
    psi0_z = config.initial_spin_state
    if psi0_z is None:
        psi0_z = np.zeros(n_cfg, dtype=complex)
        psi0_z[0] = 1.0
    psi0_x = had @ np.asarray(psi0_z, dtype=complex)
    rho0_x = np.outer(psi0_x, psi0_x.conj())
    p0 = np.real(np.diag(rho0_x))

    sample_stride = max(1, steps // config.n_samples)
    sample_idx = np.arange(0, steps + 1, sample_stride)
    if sample_idx[-1] != steps:
        sample_idx = np.append(sample_idx, steps)
    times = sample_idx * (t_total / steps)
    n_samp = len(sample_idx)

    mode_order = config.mode_order or tuple(range(n))
    gram = np.ones((n_samp, n_cfg, n_cfg), dtype=complex)
    occupations = np.zeros((n_samp, n))
    fock = np.zeros((n_samp, n, cutoff))

    dt = t_total / steps
    t_mid = (np.arange(steps) + 0.5) * dt
    sines = np.sin(np.outer(t_mid, grid.tone_freqs))       # (steps, M)
    g_all = sines @ amps.T                                  # (steps, n_ions)

    raise_, lower = _sideband_ops(cutoff)
    levels = np.arange(cutoff)
    # e^{i nu t} a^dag + h.c. equals R(t) (a^dag + a) R(t)^dag with
    # R(t) = diag(e^{i nu t k}); only the fixed real eigenbasis is needed.
    evals_x, vecs_x = np.linalg.eigh(raise_ + lower)

    for j in mode_order:
        nu = crystal.mode_freqs[j]
        eta = crystal.lamb_dicke[j]
        part = crystal.participation[:, j]
        chi = (g_all * part[None, :]) @ configs.T * (eta * omega)   # (steps, n_cfg)

        psis = np.zeros((n_cfg, cutoff), dtype=complex)
        psis[:, 0] = 1.0
        sample_ptr = 0
        dw_x = None
        if config.debye_waller:
            dw_x = np.stack(
                [
                    _dw_raising(cutoff, (eta * part[ion]) ** 2)
                    + _dw_raising(cutoff, (eta * part[ion]) ** 2).T
                    for ion in range(n)
                ]
            )

        for k in range(steps):
            if sample_idx[sample_ptr] == k:
                _record(psis, p0, gram, occupations, fock, sample_ptr, j)
                sample_ptr += 1
            frame = np.exp(1j * nu * t_mid[k] * levels)
            if not config.debye_waller:
                z = vecs_x.T @ (psis * frame.conj()[None, :]).T   # (cutoff, n_cfg)
                z *= np.exp(-1j * dt * np.outer(evals_x, chi[k]))
                psis = (vecs_x @ z).T * frame[None, :]
            else:
                coeff = (eta * omega) * part * g_all[k]          # per ion
                hmats = np.einsum(
                    "cn,nij->cij", configs * coeff[None, :], dw_x, optimize=True
                )
                evals, vecs = np.linalg.eigh(hmats)
                rotated = psis * frame.conj()[None, :]
                z = np.einsum("cij,ci->cj", vecs, rotated)
                z *= np.exp(-1j * dt * evals)
                psis = np.einsum("cij,cj->ci", vecs, z) * frame[None, :]

        norms = np.linalg.norm(psis, axis=1)
        if np.max(np.abs(norms**2 - 1.0)) > config.trace_tol:
            raise RuntimeError("non-unitary drift beyond trace tolerance")
        _record(psis, p0, gram, occupations, fock, sample_ptr, j)

    rho_x_final = rho0_x * gram[-1].T
    _check_density(rho_x_final, config.trace_tol)

    psi_ideal = _ideal_state_x(target, psi0_x, configs)
    fidelity = float(np.real(psi_ideal.conj() @ rho_x_final @ psi_ideal))

    populations = np.empty((n_samp, n_cfg))
    for i in range(n_samp):
        rho_x = rho0_x * gram[i].T
        populations[i] = np.real(np.diag(had @ rho_x @ had))

    leakage = float(np.max(fock[:, :, -1]))
    return SimulationResult(
        final_spin_state=had @ rho_x_final @ had,
        fidelity=fidelity,
        times=times,
        mode_occupations=occupations,
        populations=populations,
        fock_populations=fock,
        leakage=leakage,
        valid=leakage <= config.leakage_limit,
    )


def _record(psis, p0, gram, occupations, fock, ptr, mode):
    gram[ptr] *= psis.conj() @ psis.T
    probs = np.abs(psis) ** 2                     # (n_cfg, cutoff)
    weighted = p0 @ probs
    fock[ptr, mode] = weighted
    occupations[ptr, mode] = float(weighted @ np.arange(probs.shape[1]))


def _check_density(rho, trace_tol):
    tr = float(np.real(np.trace(rho)))
    if abs(tr - 1.0) > trace_tol:
        raise RuntimeError(f"density matrix trace drifted to {tr}")
    evals = np.linalg.eigvalsh(rho)
    if evals.min() < -1e-10:
        raise RuntimeError(f"density matrix not PSD: min eigenvalue {evals.min():.2e}")


# ---------------------------------------------------------------------------
# density-matrix chain with the 1/N carrier share (Strang split per step)
# ---------------------------------------------------------------------------


def _carrier_rotations(thetas: np.ndarray) -> np.ndarray:
    """Spin rotation exp(-i sum_n theta_n sigma_y^(n)) in the x basis."""
    out = np.array([[1.0 + 0.0j]])
    for th in thetas:
        # x-basis sigma_y is -sigma_y of the z basis
        rot = np.array(
            [[np.cos(th), np.sin(th)], [-np.sin(th), np.cos(th)]], dtype=complex
        )
        out = np.kron(out, rot)
    return out


def _ensemble_from_density(rho_spin: np.ndarray, cut: float = 1e-14):
    """Eigen-decompose a spin density matrix into weighted pure states."""
    evals, evecs = np.linalg.eigh(rho_spin)
    keep = evals > cut
    return evals[keep], evecs[:, keep].T.copy()   # weights, states (rank, dim)


def _simulate_density_chain(solution, crystal, grid, target, config) -> SimulationResult:
    n = crystal.n_ions
    amps = _amplitude_matrix(solution)
    omega = crystal.config.base_rabi
    cutoff = config.phonon_cutoff
    steps = _auto_steps(crystal, grid, config)
    t_total = grid.gate_time
    dt = t_total / steps

    configs = _spin_configs(n)
    n_cfg = len(configs)
    had = _hadamard(n)
    psi0_z = config.initial_spin_state
    if psi0_z is None:
        psi0_z = np.zeros(n_cfg, dtype=complex)
        psi0_z[0] = 1.0
    psi0_x = had @ np.asarray(psi0_z, dtype=complex)
    rho_spin = np.outer(psi0_x, psi0_x.conj())

    sample_stride = max(1, steps // max(1, config.n_samples // n))
    t_mid = (np.arange(steps) + 0.5) * dt
    sines = np.sin(np.outer(t_mid, grid.tone_freqs))
    cosines = np.cos(np.outer(t_mid, grid.tone_freqs))
    g_all = sines @ amps.T                                   # sideband drive
    c_all = cosines @ amps.T                                 # carrier drive

    raise_, lower = _sideband_ops(cutoff)
    levels = np.arange(cutoff)
    evals_x, vecs_x = np.linalg.eigh(raise_ + lower)

    times, occ_rows, pop_rows, fock_rows = [], [], [], []
    mode_order = config.mode_order or tuple(range(n))
    for stage, j in enumerate(mode_order):
        nu = crystal.mode_freqs[j]
        eta = crystal.lamb_dicke[j]
        part = crystal.participation[:, j]
        chi = (g_all * part[None, :]) @ configs.T * (eta * omega)

        # mixed spin state as a weighted pure-state ensemble (rank <= 2^N)
        weights, states = _ensemble_from_density(rho_spin)
        psi = np.zeros((len(weights), n_cfg, cutoff), dtype=complex)
        psi[:, :, 0] = states

        for k in range(steps):
            theta_half = (omega / n) * c_all[k] * dt         # 2*(1/N)*c * dt/2
            rot = _carrier_rotations(theta_half)
            psi = np.einsum("ab,wbf->waf", rot, psi, optimize=True)

            # sideband propagator through the fixed eigenbasis of a + a^dag
            frame = np.exp(1j * nu * t_mid[k] * levels)
            psi = psi * frame.conj()[None, None, :]
            psi = psi @ vecs_x                               # into eigenbasis
            psi = psi * np.exp(-1j * dt * np.outer(chi[k], evals_x))[None, :, :]
            psi = psi @ vecs_x.T
            psi = psi * frame[None, None, :]

            psi = np.einsum("ab,wbf->waf", rot, psi, optimize=True)

            if k % sample_stride == 0 or k == steps - 1:
                times.append(stage * t_total + t_mid[k])
                mode_pop = np.einsum(
                    "w,waf->f", weights, np.abs(psi) ** 2, optimize=True
                )
                occ = np.zeros(n)
                occ[j] = float(mode_pop @ levels)
                occ_rows.append(occ)
                frow = np.zeros((n, cutoff))
                frow[j] = mode_pop
                fock_rows.append(frow)
                spin_now = np.einsum(
                    "w,waf,wbf->ab", weights, psi, psi.conj(), optimize=True
                )
                pop_rows.append(np.real(np.diag(had @ spin_now @ had)))

        rho_spin = np.einsum("w,waf,wbf->ab", weights, psi, psi.conj(), optimize=True)
        tr = float(np.real(np.trace(rho_spin)))
        if abs(tr - 1.0) > config.trace_tol * 10:
            raise RuntimeError(f"trace drift {tr - 1.0:.2e} in carrier chain")
        rho_spin /= tr

    _check_density(rho_spin, config.trace_tol * 10)
    psi_ideal = _ideal_state_x(target, psi0_x, configs)
    fidelity = float(np.real(psi_ideal.conj() @ rho_spin @ psi_ideal))
    fock_arr = np.stack(fock_rows)
    leakage = float(np.max(fock_arr[:, :, -1]))
    return SimulationResult(
        final_spin_state=had @ rho_spin @ had,
        fidelity=fidelity,
        times=np.array(times),
        mode_occupations=np.stack(occ_rows),
        populations=np.stack(pop_rows),
        fock_populations=fock_arr,
        leakage=leakage,
        valid=leakage <= config.leakage_limit,
    )
