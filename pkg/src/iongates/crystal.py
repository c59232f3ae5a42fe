"""Ion-crystal model: transverse normal modes, Lamb-Dicke parameters, time scales.

The crystal is equally spaced by construction.  The mode spectrum comes from
a dimensionless Hessian H = I + c * Lap, where Lap is the 1/|n-m|^3 weighted
graph Laplacian of the chain and c is a dimensionless Coulomb coupling.  The
eigenfrequencies sqrt(eig(H)) are affinely rescaled so the band exactly spans
[mode_freq_low, mode_freq_high].  The default c = 1.0 is calibrated so that a
49-ion, 3-3.5 MHz crystal reproduces the published ~12.9 ms two-T_min gate
duration; physical_coulomb_coupling() derives c from the trap parameters
instead when a physically scaled spectrum shape is wanted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import constants as _const


class UnstableCrystalError(ValueError):
    """Trap confinement too weak relative to the Coulomb terms."""


@dataclass(frozen=True)
class CrystalConfig:
    n_ions: int
    spacing: float                 # inter-ion distance, micrometres
    mode_freq_low: float           # band edges, MHz (ordinary frequency)
    mode_freq_high: float
    ion_mass: float = 40.0         # atomic mass units
    drive_wavenumber: float = 2 * np.pi / 400e-9   # 1/m
    base_rabi: float = 1.0         # characteristic Rabi frequency, rad/s
    coulomb_coupling: float | None = None   # dimensionless; None -> calibrated default

    def __post_init__(self):
        if self.n_ions < 2:
            raise ValueError("n_ions must be >= 2")
        if not (0 < self.mode_freq_low < self.mode_freq_high):
            raise ValueError("need 0 < mode_freq_low < mode_freq_high")
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")


# Calibrated against the published 49-ion, 3-3.5 MHz example; see README.
DEFAULT_COULOMB_COUPLING = 1.0


def physical_coulomb_coupling(config: CrystalConfig) -> float:
    """Dimensionless Coulomb/trap ratio e^2/(4 pi eps0 m d^3 nu_low^2)."""
    d = config.spacing * 1e-6
    m = config.ion_mass * _const.atomic_mass
    nu_low = 2 * np.pi * config.mode_freq_low * 1e6
    kappa = _const.e**2 / (4 * np.pi * _const.epsilon_0 * m * d**3)
    return kappa / nu_low**2


@dataclass(frozen=True)
class IonCrystal:
    mode_freqs: np.ndarray        # nu_j, rad/s, ascending
    participation: np.ndarray     # O[n, j], orthogonal, column j = mode j
    lamb_dicke: np.ndarray        # eta_j, dimensionless
    config: CrystalConfig

    @property
    def n_ions(self) -> int:
        return self.config.n_ions

    def to_json(self) -> str:
        payload = {
            "config": {
                "n_ions": self.config.n_ions,
                "spacing": self.config.spacing,
                "mode_freq_low": self.config.mode_freq_low,
                "mode_freq_high": self.config.mode_freq_high,
                "ion_mass": self.config.ion_mass,
                "drive_wavenumber": self.config.drive_wavenumber,
                "base_rabi": self.config.base_rabi,
                "coulomb_coupling": self.config.coulomb_coupling,
            },
            "mode_freqs": self.mode_freqs.tolist(),
            "participation": self.participation.reshape(-1).tolist(),
            "lamb_dicke": self.lamb_dicke.tolist(),
        }
        return json.dumps(payload, sort_keys=True)


def _chain_laplacian(n: int) -> np.ndarray:
    idx = np.arange(n)
    dist = np.abs(idx[:, None] - idx[None, :]).astype(float)
    w = np.zeros((n, n))
    off = dist > 0
    w[off] = 1.0 / dist[off] ** 3
    return np.diag(w.sum(axis=1)) - w


def build_crystal(config: CrystalConfig) -> IonCrystal:
    n = config.n_ions
    c = config.coulomb_coupling
    if c is None:
        c = DEFAULT_COULOMB_COUPLING

    lap = _chain_laplacian(n)
    # Hessian H = I + c*Lap in units of the trap curvature; eigenvectors are
    # the participation vectors, eigenvalues the squared dimensionless freqs.
    evals, evecs = np.linalg.eigh(np.eye(n) + c * lap)
    if evals.min() <= 0.0:
        raise UnstableCrystalError(
            "unstable crystal: trap frequency too low relative to Coulomb terms "
            f"(smallest squared eigenfrequency {evals.min():.3e})"
        )
    freqs = np.sqrt(evals)

    order = _mode_order(freqs, evecs)
    freqs = freqs[order]
    evecs = evecs[:, order]
    for j in range(n):
        col = evecs[:, j]
        lead = np.flatnonzero(np.abs(col) > 1e-12)[0]
        if col[lead] < 0:
            evecs[:, j] = -col

    lo = 2 * np.pi * config.mode_freq_low * 1e6
    hi = 2 * np.pi * config.mode_freq_high * 1e6
    scale = (hi - lo) / (freqs[-1] - freqs[0])
    mode_freqs = lo + scale * (freqs - freqs[0])

    x_zpf = np.sqrt(
        _const.hbar / (2.0 * config.ion_mass * _const.atomic_mass * mode_freqs)
    )
    lamb_dicke = config.drive_wavenumber * x_zpf

    return IonCrystal(
        mode_freqs=mode_freqs,
        participation=evecs,
        lamb_dicke=lamb_dicke,
        config=config,
    )


def _mode_order(freqs: np.ndarray, evecs: np.ndarray) -> np.ndarray:
    """Ascending frequency; exact ties broken by participation lexicographic order."""
    keys = []
    for j in range(len(freqs)):
        col = evecs[:, j]
        lead = np.flatnonzero(np.abs(col) > 1e-12)[0]
        keys.append((freqs[j], tuple(np.sign(col[lead]) * col)))
    return np.array(sorted(range(len(freqs)), key=lambda j: keys[j]))


def min_mode_gap(crystal: IonCrystal, used_modes=None) -> float:
    """Smallest adjacent-mode angular frequency difference over the used modes."""
    if used_modes is None:
        freqs = crystal.mode_freqs
    else:
        idx = sorted(set(int(i) for i in used_modes))
        if any(i < 0 or i >= crystal.n_ions for i in idx):
            raise ValueError("used_modes indices out of range")
        freqs = crystal.mode_freqs[idx]
    if len(freqs) < 2:
        raise ValueError("need at least two used modes to define a gap")
    return float(np.min(np.diff(np.sort(freqs))))


def min_gate_time(crystal: IonCrystal, used_modes=None) -> float:
    """T_min = 2 pi / Delta nu_< with the gap taken as an angular frequency."""
    return 2 * np.pi / min_mode_gap(crystal, used_modes)
