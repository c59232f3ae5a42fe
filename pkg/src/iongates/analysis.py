"""Quality metrics and physical predictions for drive solutions.

Includes the realized-phase extraction, the squared-phase-error infidelity
(ordered-pair convention by default: each unordered pair counted twice), the
nuclear-norm drive-power estimate, the single-mode MS reference Rabi
frequency, and the mode/ion motion variances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coupling import CouplingSet, displacement_trajectory
from .crystal import IonCrystal
from .integrals import mode_phase_form
from .spectrum import ToneGrid
from .targets import TargetMatrix


@dataclass(frozen=True)
class EstimatorConfig:
    k_nuc: float = 4.0        # fitted proportionality constant
    exponent: float = 0.5     # nuclear-norm exponent; refit mode may use ~0.55

    def __post_init__(self):
        if self.k_nuc <= 0:
            raise ValueError("k_nuc must be positive")
        if not 0 < self.exponent < 1:
            raise ValueError("exponent must be in (0, 1)")


def realized_phases(
    solution_or_amplitudes,
    crystal: IonCrystal,
    grid: ToneGrid,
    omega: float | None = None,
) -> TargetMatrix:
    """Entanglement phases phi_nm = r_n^T A_nm r_m accumulated by a drive.

    Works from physical per-ion amplitudes over the given grid, so it applies
    to kernel-restricted and adiabatic solutions alike.
    """
    amps = getattr(solution_or_amplitudes, "amplitudes", solution_or_amplitudes)
    amps = np.asarray(amps, dtype=float)
    if omega is None:
        omega = crystal.config.base_rabi
    n = crystal.n_ions
    phases = np.zeros((n, n))
    eta2 = crystal.lamb_dicke**2
    for j in range(n):
        form = mode_phase_form(crystal.mode_freqs[j], grid.tone_freqs, grid.gate_time)
        gram = amps @ form @ amps.T
        weights = -(omega**2) * eta2[j] * np.outer(
            crystal.participation[:, j], crystal.participation[:, j]
        )
        phases += weights * gram
    phases = 0.5 * (phases + phases.T)
    np.fill_diagonal(phases, 0.0)
    return TargetMatrix(phases=phases, label="realized")


def realized_phases_from_coords(per_ion: np.ndarray, couplings: CouplingSet) -> TargetMatrix:
    """Fast path when the solution lives in a coupling set's kernel coordinates."""
    return TargetMatrix(phases=couplings.pair_phases(per_ion), label="realized")


def infidelity(actual, ideal, ordered: bool = True) -> float:
    """Sum of squared pair-phase errors (x2 under the ordered-pair convention)."""
    a = actual.phases if isinstance(actual, TargetMatrix) else np.asarray(actual)
    b = ideal.phases if isinstance(ideal, TargetMatrix) else np.asarray(ideal)
    if a.shape != b.shape:
        raise ValueError("phase matrices must share a shape")
    diff = a - b
    upper = diff[np.triu_indices_from(diff, k=1)]
    total = float(np.sum(upper**2))
    return 2.0 * total if ordered else total


def nuclear_norm(matrix: np.ndarray) -> float:
    return float(np.sum(np.linalg.svd(np.abs(matrix), compute_uv=False)))


def nuclear_norm_estimate(
    target: TargetMatrix,
    crystal: IonCrystal,
    gate_time: float,
    config: EstimatorConfig = EstimatorConfig(),
) -> float:
    """Predicted total Rabi frequency k (N nuc|phi|)^p / (sqrt(2 pi) <eta> T)."""
    if gate_time <= 0:
        raise ValueError("gate_time must be positive")
    nuc = nuclear_norm(target.phases)
    eta_mean = float(np.mean(crystal.lamb_dicke))
    return (
        config.k_nuc
        * (crystal.n_ions * nuc) ** config.exponent
        / (np.sqrt(2 * np.pi) * eta_mean * gate_time)
    )


def ms_reference_rabi(phi_ms: float, eta: float, gate_time: float) -> float:
    """Rabi frequency of the adiabatic single-mode MS gate with phase phi_ms."""
    return np.sqrt(abs(phi_ms)) / (np.sqrt(2 * np.pi) * eta * gate_time)


def mode_variance(
    solution_or_amplitudes,
    crystal: IonCrystal,
    grid: ToneGrid,
    t: float,
    omega: float | None = None,
) -> np.ndarray:
    """Per-mode displacement variance 4 sum_n (Re alpha_j^n)^2 at time t."""
    amps = getattr(solution_or_amplitudes, "amplitudes", solution_or_amplitudes)
    alpha = displacement_trajectory(amps, crystal, grid, t, omega=omega)
    return 4.0 * np.sum(np.real(alpha) ** 2, axis=1)


def ion_variance(
    solution_or_amplitudes,
    crystal: IonCrystal,
    grid: ToneGrid,
    n: int,
    t: float,
    omega: float | None = None,
) -> float:
    """Spin-displacement variance of ion n: sum_j (O_j^n)^2 <x_j^2>(t)."""
    xvar = mode_variance(solution_or_amplitudes, crystal, grid, t, omega=omega)
    return float(np.sum(crystal.participation[n, :] ** 2 * xvar))


def overlap(a: np.ndarray, b: np.ndarray) -> float:
    """|a . b| / (|a| |b|), in [0, 1]."""
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("overlap of a zero vector is undefined")
    return float(abs(a @ b) / (na * nb))


def fit_log_slope(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Least-squares slope and R^2 of log(y) against log(x)."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - np.mean(ly)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), r2
