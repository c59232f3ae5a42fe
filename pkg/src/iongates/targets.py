"""Generators for entanglement-phase target matrices.

All generators return symmetric zero-diagonal matrices; phi[n, m] is the total
XX phase accumulated by the unordered pair {n, m}.  The default pi/4 is the
maximally entangling choice.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_ENTANGLING_PHASE = np.pi / 4


@dataclass(frozen=True)
class TargetMatrix:
    phases: np.ndarray
    label: str

    def __post_init__(self):
        p = self.phases
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError("phases must be a square matrix")
        if not np.allclose(p, p.T, atol=1e-12):
            raise ValueError("phases must be symmetric")
        if np.any(np.abs(np.diag(p)) > 0):
            raise ValueError("diagonal phases must be zero")
        if not np.all(np.isfinite(p)):
            raise ValueError("phases must be finite")

    @property
    def n_ions(self) -> int:
        return self.phases.shape[0]

    @property
    def coupled_set(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(np.any(self.phases != 0.0, axis=1))]

    def pair_values(self, pairs) -> np.ndarray:
        return np.array([self.phases[n, m] for n, m in pairs])

    def to_triplets(self) -> list[dict]:
        out = []
        n = self.n_ions
        for i in range(n):
            for j in range(i + 1, n):
                if self.phases[i, j] != 0.0:
                    out.append({"n": i, "m": j, "phi": float(self.phases[i, j])})
        return out


def from_triplets(n_ions: int, triplets, label: str = "triplets") -> TargetMatrix:
    phases = np.zeros((n_ions, n_ions))
    for item in triplets:
        n, m, phi = int(item["n"]), int(item["m"]), float(item["phi"])
        phases[n, m] = phi
        phases[m, n] = phi
    return TargetMatrix(phases=phases, label=label)


def _symmetric(n_ions: int, entries) -> np.ndarray:
    phases = np.zeros((n_ions, n_ions))
    for n, m, phi in entries:
        if not (0 <= n < n_ions and 0 <= m < n_ions):
            raise ValueError(f"ion index out of range: ({n}, {m})")
        if n == m:
            raise ValueError("diagonal targets are global phases and not allowed")
        phases[n, m] = phi
        phases[m, n] = phi
    return phases


def target_pairwise(n_ions: int, pairs) -> TargetMatrix:
    """Explicit list of (n, m, phi) pairs; overlapping pairs are allowed."""
    return TargetMatrix(_symmetric(n_ions, pairs), label="pairwise")


def target_all_to_all(n_ions: int, subset=None, phi: float = MAX_ENTANGLING_PHASE) -> TargetMatrix:
    if subset is None:
        subset = range(n_ions)
    subset = sorted(set(int(i) for i in subset))
    entries = [
        (subset[a], subset[b], phi)
        for a in range(len(subset))
        for b in range(a + 1, len(subset))
    ]
    return TargetMatrix(_symmetric(n_ions, entries), label=f"all-to-all:{len(subset)}")


def target_random(
    n_ions: int, density: float, amplitude: float = MAX_ENTANGLING_PHASE, seed: int = 0
) -> TargetMatrix:
    """Each pair coupled with probability `density` at a uniform random phase."""
    if not 0 < density <= 1:
        raise ValueError("density must be in (0, 1]")
    rng = np.random.default_rng(seed)
    entries = []
    for n in range(n_ions):
        for m in range(n + 1, n_ions):
            if rng.random() < density:
                entries.append((n, m, amplitude * rng.uniform(0.1, 1.0)))
    return TargetMatrix(_symmetric(n_ions, entries), label=f"random:{density}:{seed}")


def _grid_index(row: int, col: int, cols: int, permutation=None) -> int:
    idx = row * cols + col
    return idx if permutation is None else int(permutation[idx])


def target_cluster_grid(
    n_ions: int,
    rows: int,
    cols: int,
    phi: float = MAX_ENTANGLING_PHASE,
    permutation=None,
) -> TargetMatrix:
    """Nearest-neighbour links of a rows x cols grid, row-major ion mapping."""
    if rows * cols > n_ions:
        raise ValueError("grid does not fit in the crystal")
    entries = []
    for r in range(rows):
        for c in range(cols):
            a = _grid_index(r, c, cols, permutation)
            if c + 1 < cols:
                entries.append((a, _grid_index(r, c + 1, cols, permutation), phi))
            if r + 1 < rows:
                entries.append((a, _grid_index(r + 1, c, cols, permutation), phi))
    return TargetMatrix(_symmetric(n_ions, entries), label=f"cluster:{rows}x{cols}")


def target_surface_code_cross(
    n_ions: int,
    grid_side: int,
    phi: float = MAX_ENTANGLING_PHASE,
    permutation=None,
) -> TargetMatrix:
    """Plaquette-centre ancillas each linked to their four adjacent data sites.

    Ancillas sit on the odd-odd interior sites of the grid_side x grid_side
    layout; for grid_side = 7 this gives 9 ancillas, 36 links, 33 coupled ions.
    """
    if grid_side % 2 == 0:
        raise ValueError("grid_side must be odd")
    if grid_side**2 > n_ions:
        raise ValueError("grid does not fit in the crystal")
    entries = []
    for r in range(1, grid_side, 2):
        for c in range(1, grid_side, 2):
            centre = _grid_index(r, c, grid_side, permutation)
            for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                entries.append(
                    (centre, _grid_index(r + dr, c + dc, grid_side, permutation), phi)
                )
    return TargetMatrix(_symmetric(n_ions, entries), label=f"cross:{grid_side}")


def parse_target_spec(spec: str, n_ions: int) -> TargetMatrix:
    """CLI target strings: cross:7, cluster:2x2, all:0-32, random:0.1:seed, pairs:n-m:phi,..."""
    parts = spec.split(":")
    kind = parts[0]
    if kind == "cross":
        return target_surface_code_cross(n_ions, int(parts[1]))
    if kind == "cluster":
        rows, cols = parts[1].lower().split("x")
        return target_cluster_grid(n_ions, int(rows), int(cols))
    if kind == "all":
        if len(parts) > 1 and parts[1]:
            lo, hi = parts[1].split("-")
            subset = range(int(lo), int(hi) + 1)
        else:
            subset = None
        return target_all_to_all(n_ions, subset)
    if kind == "random":
        density = float(parts[1])
        seed = int(parts[2]) if len(parts) > 2 else 0
        return target_random(n_ions, density, seed=seed)
    if kind == "pairs":
        entries = []
        for chunk in parts[1].split(","):
            n, m, phi = chunk.split("-")
            entries.append((int(n), int(m), float(phi)))
        return target_pairwise(n_ions, entries)
    raise ValueError(f"unknown target spec: {spec!r}")
