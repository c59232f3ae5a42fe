"""Shared fixtures: small crystals, grids, couplings and pools."""

from __future__ import annotations

import numpy as np
import pytest

from iongates.coupling import build_coupling_set
from iongates.crystal import CrystalConfig, build_crystal, min_gate_time
from iongates.spectrum import (
    build_l_matrix,
    build_tone_grid,
    kernel_basis,
    restrict_tones_near_modes,
)
from iongates.zeropool import aggregate_pool


def make_system(
    n_ions,
    t_multiple=2.0,
    mode_freq_low=3.0,
    mode_freq_high=3.5,
    drive_wavenumber=2.4e6,
    tone_window=None,
    margin=None,
):
    """Crystal + restricted harmonic grid + closure kernel + couplings."""
    cfg = CrystalConfig(
        n_ions=n_ions,
        spacing=5.0,
        mode_freq_low=mode_freq_low,
        mode_freq_high=mode_freq_high,
        drive_wavenumber=drive_wavenumber,
    )
    crystal = build_crystal(cfg)
    gate_time = t_multiple * min_gate_time(crystal)
    grid = build_tone_grid(crystal, gate_time, margin)
    grid = restrict_tones_near_modes(grid, crystal, tone_window)
    kernel = kernel_basis(build_l_matrix(crystal, grid))
    couplings = build_coupling_set(crystal, grid, kernel)
    return crystal, grid, couplings, gate_time


@pytest.fixture(scope="session")
def system9():
    return make_system(9)


@pytest.fixture(scope="session")
def pool9(system9):
    _, _, couplings, _ = system9
    return aggregate_pool(couplings, count=12, ansatz="global", base_seed=3)


@pytest.fixture(scope="session")
def sim_system4():
    """4-ion fixture tuned for the exact simulator: ~725 drive cycles, eta ~ 0.05."""
    return make_system(4, mode_freq_low=3.0, mode_freq_high=3.03, drive_wavenumber=7.6e6)


@pytest.fixture(scope="session")
def cluster_solution4(sim_system4):
    from iongates.lsf import solve
    from iongates.targets import target_cluster_grid

    crystal, grid, couplings, _ = sim_system4
    pool = aggregate_pool(couplings, count=6, ansatz="global", base_seed=11)
    target = target_cluster_grid(4, 2, 2)
    best = solve(pool, couplings, target, n_workers=1)[0]
    return target, best
