"""Quadratic phase forms of the drive and spin-dependent displacement trajectories.

Per-mode matrices A_j (sine-sine quadrature) are evaluated in closed form,
reduced into the closure kernel, and normalised by a common spectral scale so
that solver-facing quadratic forms are O(1).  Physical per-tone amplitudes are
the kernel expansion of the solver coordinates times `amplitude_unit`.

Sign convention: A_j carries the leading minus of its defining double
integral and the pair coupling carries -Omega^2, exactly as the phase
accumulation works out in the Magnus picture (the two minus signs compound
to a net plus; verified against a brute-force two-ion simulation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .crystal import IonCrystal
from .integrals import mode_phase_form, sine_drive_response
from .persist import array_hash
from .spectrum import KernelBasis, ToneGrid


def mode_form(nu: float, grid: ToneGrid, kernel: KernelBasis | None = None) -> np.ndarray:
    """Phase-accumulation matrix of one mode over the grid tones.

    Raw (M x M) when no kernel is given, else reduced to B^T A B (K x K).
    """
    raw = mode_phase_form(nu, grid.tone_freqs, grid.gate_time)
    if kernel is None:
        return raw
    return kernel.basis.T @ raw @ kernel.basis


@dataclass(frozen=True)
class CouplingSet:
    mode_forms: np.ndarray        # (n_modes, K, K), kernel-reduced, normalised
    form_scale: float             # raw reduced form = mode_forms * form_scale
    pair_weights: np.ndarray      # (n_modes, N, N): -Omega^2 eta_j^2 O_j^n O_j^m
    kernel: KernelBasis
    grid: ToneGrid
    crystal: IonCrystal
    omega: float                  # characteristic Rabi frequency used in weights

    @property
    def n_ions(self) -> int:
        return self.crystal.n_ions

    @property
    def dim(self) -> int:
        """Kernel dimension K per ion."""
        return self.mode_forms.shape[1]

    @property
    def raw_dim(self) -> int:
        return self.kernel.n_tones

    @property
    def amplitude_unit(self) -> float:
        """Physical amplitude (rad/s) per unit solver coordinate."""
        return 1.0 / np.sqrt(self.form_scale)

    def content_hash(self) -> str:
        return array_hash(
            self.crystal.mode_freqs,
            self.grid.harmonics.astype(float),
            np.array([self.grid.gate_time, self.omega]),
        )

    # ---- quadratic-form evaluation -------------------------------------

    def per_mode_phases(self, z: np.ndarray) -> np.ndarray:
        """z^T A_j z for each mode; z in kernel coordinates (global ansatz)."""
        return np.einsum("k,jkl,l->j", z, self.mode_forms, z, optimize=True)

    def pair_coupling(self, n: int, m: int) -> np.ndarray:
        """K x K form giving phi_nm = r_n^T A_nm r_m (solver units)."""
        return np.einsum(
            "j,jkl->kl", self.pair_weights[:, n, m], self.mode_forms, optimize=True
        )

    def pair_list(self) -> list[tuple[int, int]]:
        n = self.n_ions
        return [(i, j) for i in range(n) for j in range(i + 1, n)]

    def pair_phases(self, per_ion: np.ndarray) -> np.ndarray:
        """Symmetric N x N matrix of realized phases for per-ion coords (N x K)."""
        half = np.einsum("jkl,ml->jmk", self.mode_forms, per_ion, optimize=True)
        gram = np.einsum("nk,jmk->jnm", per_ion, half, optimize=True)
        phases = np.einsum("jnm,jnm->nm", self.pair_weights, gram, optimize=True)
        phases = 0.5 * (phases + phases.T)
        np.fill_diagonal(phases, 0.0)
        return phases

    def pair_phase_vector(self, per_ion: np.ndarray) -> np.ndarray:
        ph = self.pair_phases(per_ion)
        return np.array([ph[n, m] for n, m in self.pair_list()])

    def pair_jacobian(self, per_ion: np.ndarray) -> np.ndarray:
        """d phi_nm / d r, rows ordered like pair_list, over stacked (N*K) coords."""
        n_ions, k = per_ion.shape
        half = np.einsum("jkl,ml->jmk", self.mode_forms, per_ion, optimize=True)
        pairs = self.pair_list()
        jac = np.zeros((len(pairs), n_ions * k))
        for row, (a, b) in enumerate(pairs):
            w = self.pair_weights[:, a, b]
            jac[row, a * k : (a + 1) * k] = np.einsum("j,jk->k", w, half[:, b, :])
            jac[row, b * k : (b + 1) * k] = np.einsum("j,jk->k", w, half[:, a, :])
        return jac

    def assemble_constraint_form(self, n: int, m: int) -> np.ndarray:
        """Stacked (N*K) x (N*K) symmetric form with r^T F r = r_n^T A_nm r_m."""
        if n == m:
            raise ValueError("diagonal phases are global phases; n must differ from m")
        if n > m:
            n, m = m, n
        k = self.dim
        total = self.n_ions * k
        form = np.zeros((total, total))
        block = self.pair_coupling(n, m)
        form[n * k : (n + 1) * k, m * k : (m + 1) * k] = 0.5 * block
        form[m * k : (m + 1) * k, n * k : (n + 1) * k] = 0.5 * block.T
        return form

    # ---- physical conversion -------------------------------------------

    def physical_amplitudes(self, per_ion: np.ndarray) -> np.ndarray:
        """Per-ion tone amplitudes (N x M, rad/s) from solver coords (N x K)."""
        return self.kernel.expand(per_ion) * self.amplitude_unit


def build_coupling_set(
    crystal: IonCrystal,
    grid: ToneGrid,
    kernel: KernelBasis,
    omega: float | None = None,
) -> CouplingSet:
    if omega is None:
        omega = crystal.config.base_rabi
    n_modes = crystal.n_ions
    forms = np.empty((n_modes, kernel.dim, kernel.dim))
    for j in range(n_modes):
        forms[j] = mode_form(crystal.mode_freqs[j], grid, kernel)
        forms[j] = 0.5 * (forms[j] + forms[j].T)
    norms = [np.linalg.norm(forms[j], 2) for j in range(n_modes)]
    scale = float(np.median(norms))
    if scale <= 0:
        raise ValueError("degenerate coupling: all mode forms vanish")
    forms /= scale

    eta2 = crystal.lamb_dicke**2
    part = crystal.participation          # O[n, j]
    weights = -(omega**2) * np.einsum("j,nj,mj->jnm", eta2, part, part)
    return CouplingSet(
        mode_forms=forms,
        form_scale=scale,
        pair_weights=weights,
        kernel=kernel,
        grid=grid,
        crystal=crystal,
        omega=float(omega),
    )


def displacement_trajectory(
    amplitudes: np.ndarray,
    crystal: IonCrystal,
    grid: ToneGrid,
    t: float,
    omega: float | None = None,
) -> np.ndarray:
    """Spin-dependent displacement alpha_j^(n)(t) for physical amplitudes (N x M).

    Returns a complex (n_modes, n_ions) array.  Entries at t = T vanish up to
    the kernel residual for closure-restricted drives.
    """
    if hasattr(amplitudes, "amplitudes"):
        amplitudes = amplitudes.amplitudes
    amplitudes = np.asarray(amplitudes, dtype=float)
    if omega is None:
        omega = crystal.config.base_rabi
    if not 0 <= t <= grid.gate_time * (1 + 1e-12):
        raise ValueError("t must lie within [0, gate_time]")
    n_modes = crystal.n_ions
    out = np.empty((n_modes, crystal.n_ions), dtype=complex)
    for j in range(n_modes):
        resp = sine_drive_response(crystal.mode_freqs[j], grid.tone_freqs, t)
        drive = amplitudes @ resp            # per ion
        out[j] = (
            1j
            * crystal.lamb_dicke[j]
            * crystal.participation[:, j]
            * omega
            * drive
        )
    return out
