"""Harmonic drive-tone grids and the kernel basis closing all mode displacements.

Tones sit on the harmonic comb omega = 2 pi h / T.  The drive uses the sine
quadrature only, which pins the pulse edges to zero (carrier-safe) and, on the
harmonic comb, makes the N sine-sine rows of L sufficient for both quadratures
of the displacement-closure conditions.  Any amplitude vector expanded from
ker(L) therefore returns every mode to its initial state at t = T.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .crystal import IonCrystal
from .integrals import sine_overlap
from .persist import array_hash, pack_array, unpack_array


@dataclass(frozen=True)
class ToneGrid:
    gate_time: float              # T, seconds
    harmonics: np.ndarray         # integer tone numbers h_m, strictly increasing
    tone_freqs: np.ndarray        # omega_m = 2 pi h_m / T, rad/s
    margin: float                 # band padding used at construction, rad/s

    @property
    def n_tones(self) -> int:
        return len(self.harmonics)

    def content_hash(self) -> str:
        return array_hash(self.harmonics.astype(float), np.array([self.gate_time]))


def build_tone_grid(crystal: IonCrystal, gate_time: float, margin: float | None = None) -> ToneGrid:
    """All harmonics 2 pi h / T inside [nu_1 - margin, nu_N + margin]."""
    if gate_time <= 0:
        raise ValueError("gate_time must be positive")
    if margin is None:
        margin = 3 * (2 * np.pi / gate_time)
    if margin < 0:
        raise ValueError("margin must be non-negative")

    lo = crystal.mode_freqs[0] - margin
    hi = crystal.mode_freqs[-1] + margin
    h_lo = max(1, int(np.ceil(lo * gate_time / (2 * np.pi) - 1e-9)))
    h_hi = int(np.floor(hi * gate_time / (2 * np.pi) + 1e-9))
    if h_hi < h_lo:
        t_needed = 2 * np.pi / (hi - lo) if hi > lo else np.inf
        raise ValueError(
            "no harmonic falls inside the mode band; "
            f"shortest gate_time admitting one tone is ~{t_needed:.3e} s"
        )
    harmonics = np.arange(h_lo, h_hi + 1)
    return ToneGrid(
        gate_time=float(gate_time),
        harmonics=harmonics,
        tone_freqs=2 * np.pi * harmonics / gate_time,
        margin=float(margin),
    )


def restrict_tones_near_modes(grid: ToneGrid, crystal: IonCrystal, window: float | None = None) -> ToneGrid:
    """Keep only tones within `window` (rad/s) of at least one mode frequency."""
    if window is None:
        window = 4 * (2 * np.pi / grid.gate_time)
    if window <= 0:
        raise ValueError("window must be positive")
    keep = np.zeros(grid.n_tones, dtype=bool)
    for nu in crystal.mode_freqs:
        keep |= np.abs(grid.tone_freqs - nu) <= window + 1e-12 * nu
    if not keep.any():
        raise ValueError("tone restriction removed every tone; widen the window")
    return ToneGrid(
        gate_time=grid.gate_time,
        harmonics=grid.harmonics[keep],
        tone_freqs=grid.tone_freqs[keep],
        margin=grid.margin,
    )


def build_l_matrix(crystal: IonCrystal, grid: ToneGrid) -> np.ndarray:
    """Sine-quadrature closure matrix: L[j, m] = int_0^T sin(nu_j t) sin(w_m t) dt."""
    return np.vstack(
        [sine_overlap(nu, grid.tone_freqs, grid.gate_time) for nu in crystal.mode_freqs]
    )


@dataclass(frozen=True)
class KernelBasis:
    l_matrix: np.ndarray          # N x M
    basis: np.ndarray             # M x K, orthonormal columns spanning ker(L)
    tolerance: float              # relative SVD cutoff

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def n_tones(self) -> int:
        return self.basis.shape[0]

    def expand(self, coords: np.ndarray) -> np.ndarray:
        """Kernel coordinates -> physical per-tone amplitudes (last axis K -> M)."""
        return coords @ self.basis.T

    def content_hash(self) -> str:
        return array_hash(self.l_matrix, self.basis)


def kernel_basis(l_matrix: np.ndarray, tolerance: float = 1e-9) -> KernelBasis:
    """SVD null-space basis; singular values below tolerance * sigma_max are zero."""
    if not 0 < tolerance < 1:
        raise ValueError("tolerance must be in (0, 1)")
    n_rows, n_cols = l_matrix.shape
    u, s, vt = np.linalg.svd(l_matrix, full_matrices=True)
    if s.size and s[0] > 0:
        rank = int(np.sum(s > tolerance * s[0]))
    else:
        rank = 0
    k = n_cols - rank
    if k == 0:
        raise ValueError(
            "closure constraints leave no drive freedom (trivial kernel); "
            "add tones or lengthen the gate time"
        )
    basis = vt[rank:].T.copy()
    return KernelBasis(l_matrix=l_matrix, basis=basis, tolerance=float(tolerance))


def cached_kernel_basis(
    crystal: IonCrystal,
    grid: ToneGrid,
    tolerance: float = 1e-9,
    cache_dir: str | None = None,
) -> KernelBasis:
    """kernel_basis with an on-disk cache keyed by crystal, grid and tolerance."""
    if cache_dir is None:
        return kernel_basis(build_l_matrix(crystal, grid), tolerance)
    key = array_hash(
        crystal.mode_freqs,
        grid.harmonics.astype(float),
        np.array([grid.gate_time, tolerance]),
    )
    path = os.path.join(cache_dir, f"kernel-{key[:24]}.json")
    if os.path.exists(path):
        with open(path) as fh:
            payload = json.load(fh)
        return KernelBasis(
            l_matrix=unpack_array(payload["l_matrix"]),
            basis=unpack_array(payload["basis"]),
            tolerance=payload["tolerance"],
        )
    kb = kernel_basis(build_l_matrix(crystal, grid), tolerance)
    os.makedirs(cache_dir, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(
            {
                "l_matrix": pack_array(kb.l_matrix),
                "basis": pack_array(kb.basis),
                "tolerance": kb.tolerance,
            },
            fh,
        )
    return kb
