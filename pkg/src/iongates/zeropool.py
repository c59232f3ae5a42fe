"""Aggregation of zero-phase drive solutions.

A zero-phase solution is a unit vector whose accumulated entanglement phases
all vanish.  Under the global ansatz (one spectrum shared by every ion) there
are N per-mode constraints; under the multi-address ansatz (independent
spectra) there are N(N-1)/2 pair constraints.  Residuals are always measured
against unit-spectral-norm constraint forms so the tolerance is meaningful
across crystal sizes and gate times.

Searches are seeded Gauss-Newton iterations with a tangent-space step
(orthogonality row replaces the norm-reduction row) and renormalisation after
each update.  Non-convergence is data, not an exception: scaling studies need
failure statistics near the minimal gate time.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .coupling import CouplingSet
from .persist import pack_array, unpack_array


@dataclass(frozen=True)
class ConstraintSet:
    """Normalised quadratic constraint family over a coordinate space."""

    dim: int
    ansatz: str                    # "global" | "multi"
    _couplings: CouplingSet = field(repr=False)
    _norms: np.ndarray = field(repr=False)

    @property
    def n_constraints(self) -> int:
        return len(self._norms)

    def residuals(self, z: np.ndarray) -> np.ndarray:
        if self.ansatz == "global":
            vals = self._couplings.per_mode_phases(z)
        else:
            per_ion = z.reshape(self._couplings.n_ions, self._couplings.dim)
            vals = self._couplings.pair_phase_vector(per_ion)
        return vals / self._norms

    def jacobian(self, z: np.ndarray) -> np.ndarray:
        c = self._couplings
        if self.ansatz == "global":
            jac = 2.0 * np.einsum("jkl,l->jk", c.mode_forms, z, optimize=True)
        else:
            jac = c.pair_jacobian(z.reshape(c.n_ions, c.dim))
        return jac / self._norms[:, None]


def global_constraints(couplings: CouplingSet) -> ConstraintSet:
    norms = np.array([np.linalg.norm(a, 2) for a in couplings.mode_forms])
    return ConstraintSet(
        dim=couplings.dim, ansatz="global", _couplings=couplings, _norms=norms
    )


def multi_constraints(couplings: CouplingSet) -> ConstraintSet:
    norms = np.array(
        [np.linalg.norm(couplings.pair_coupling(n, m), 2) for n, m in couplings.pair_list()]
    )
    return ConstraintSet(
        dim=couplings.dim * couplings.n_ions,
        ansatz="multi",
        _couplings=couplings,
        _norms=norms,
    )


def constraints_for(couplings: CouplingSet, ansatz: str) -> ConstraintSet:
    if ansatz == "global":
        return global_constraints(couplings)
    if ansatz == "multi":
        return multi_constraints(couplings)
    raise ValueError(f"unknown ansatz {ansatz!r}")


@dataclass(frozen=True)
class ZeroPhaseSolution:
    coords: np.ndarray            # unit norm; K (global) or N*K (multi)
    residual: float               # max normalised |phase|
    seed: int
    ansatz: str
    iterations: int
    converged: bool


def zero_phase_search(
    constraints: ConstraintSet,
    seed: int,
    tolerance: float = 1e-8,
    max_iter: int = 200,
    step: float = 1.0,
    initial: np.ndarray | None = None,
) -> ZeroPhaseSolution:
    """Seeded search for one zero-phase solution; failure is reported, not raised."""
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    rng = np.random.default_rng(seed)
    if initial is not None:
        z = np.asarray(initial, dtype=float).copy()
    else:
        z = rng.standard_normal(constraints.dim)
    z /= np.linalg.norm(z)

    res = constraints.residuals(z)
    worst = float(np.max(np.abs(res)))
    for it in range(max_iter):
        if worst <= tolerance:
            return ZeroPhaseSolution(z, worst, seed, constraints.ansatz, it, True)
        jac = constraints.jacobian(z)
        system = np.vstack([jac, z[None, :]])
        rhs = np.concatenate([-res, [0.0]])
        try:
            d, *_ = np.linalg.lstsq(system, rhs, rcond=None)
        except np.linalg.LinAlgError:
            z = z + 1e-9 * rng.standard_normal(constraints.dim)
            z /= np.linalg.norm(z)
            res = constraints.residuals(z)
            worst = float(np.max(np.abs(res)))
            continue
        scale = step
        improved = False
        for _ in range(30):
            cand = z + scale * d
            cand /= np.linalg.norm(cand)
            cres = constraints.residuals(cand)
            cworst = float(np.max(np.abs(cres)))
            if cworst < worst:
                z, res, worst = cand, cres, cworst
                improved = True
                break
            scale *= 0.5
        if not improved:
            return ZeroPhaseSolution(z, worst, seed, constraints.ansatz, it + 1, False)
    return ZeroPhaseSolution(z, worst, seed, constraints.ansatz, max_iter, worst <= tolerance)


@dataclass
class SolutionPool:
    entries: list[ZeroPhaseSolution]
    crystal_hash: str
    grid_hash: str
    tolerance: float
    overlap_threshold: float
    ansatz: str
    attempted_seeds: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def success_rate(self) -> float:
        if self.attempted_seeds == 0:
            return 0.0
        return len(self.entries) / self.attempted_seeds

    def coords_matrix(self) -> np.ndarray:
        return np.stack([e.coords for e in self.entries])


class EmptyPoolError(RuntimeError):
    pass


def aggregate_pool(
    couplings: CouplingSet,
    count: int,
    ansatz: str = "global",
    tolerance: float = 1e-8,
    overlap_threshold: float = 0.9,
    max_iter: int = 200,
    step: float = 1.0,
    base_seed: int = 0,
    seed_budget: int | None = None,
    n_workers: int = 1,
) -> SolutionPool:
    """Run independent seeded searches and admit low-overlap converged solutions.

    Admission order is deterministic (ascending seed) regardless of worker
    scheduling.  Raises EmptyPoolError when the seed budget produces nothing,
    which near or below the minimal gate time is the expected outcome.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if seed_budget is None:
        seed_budget = 20 * count
    constraints = constraints_for(couplings, ansatz)
    seeds = [base_seed + i for i in range(seed_budget)]

    def run(seed):
        return zero_phase_search(
            constraints, seed, tolerance=tolerance, max_iter=max_iter, step=step
        )

    admitted: list[ZeroPhaseSolution] = []
    attempted = 0
    chunk = max(n_workers * 4, 16)
    for start in range(0, len(seeds), chunk):
        batch = seeds[start : start + chunk]
        if n_workers > 1:
            with ThreadPoolExecutor(max_workers=n_workers) as pool:
                results = list(pool.map(run, batch))
        else:
            results = [run(s) for s in batch]
        for sol in results:
            attempted += 1
            if not sol.converged:
                continue
            if any(
                abs(float(sol.coords @ other.coords)) >= overlap_threshold
                for other in admitted
            ):
                continue
            admitted.append(sol)
            if len(admitted) >= count:
                break
        if len(admitted) >= count:
            break

    if not admitted:
        raise EmptyPoolError(
            "no zero-phase solutions found; the gate time is likely below the "
            "minimal gate time for this crystal - try a longer gate"
        )
    return SolutionPool(
        entries=admitted,
        crystal_hash=couplings.crystal.config and _crystal_hash(couplings),
        grid_hash=couplings.grid.content_hash(),
        tolerance=tolerance,
        overlap_threshold=overlap_threshold,
        ansatz=ansatz,
        attempted_seeds=attempted,
    )


def _crystal_hash(couplings: CouplingSet) -> str:
    from .persist import sha256_hex

    return sha256_hex(couplings.crystal.to_json())


def verify_pool(pool: SolutionPool, couplings: CouplingSet) -> np.ndarray:
    """Re-evaluate every entry's residual directly; returns the residual vector."""
    constraints = constraints_for(couplings, pool.ansatz)
    return np.array(
        [np.max(np.abs(constraints.residuals(e.coords))) for e in pool.entries]
    )


class PoolMismatchError(RuntimeError):
    pass


def save_pool(pool: SolutionPool, path: str) -> None:
    payload = {
        "format": "iongates-pool-v1",
        "crystal_hash": pool.crystal_hash,
        "grid_hash": pool.grid_hash,
        "tolerance": pool.tolerance,
        "overlap_threshold": pool.overlap_threshold,
        "ansatz": pool.ansatz,
        "attempted_seeds": pool.attempted_seeds,
        "entries": [
            {
                "coords": pack_array(e.coords),
                "residual": e.residual,
                "seed": e.seed,
                "iterations": e.iterations,
            }
            for e in pool.entries
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_pool(path: str, couplings: CouplingSet | None = None) -> SolutionPool:
    """Load a pool file; when couplings are given, refuse provenance mismatches."""
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != "iongates-pool-v1":
        raise ValueError(f"not a pool file: {path}")
    pool = SolutionPool(
        entries=[
            ZeroPhaseSolution(
                coords=unpack_array(e["coords"]),
                residual=e["residual"],
                seed=e["seed"],
                ansatz=payload["ansatz"],
                iterations=e["iterations"],
                converged=True,
            )
            for e in payload["entries"]
        ],
        crystal_hash=payload["crystal_hash"],
        grid_hash=payload["grid_hash"],
        tolerance=payload["tolerance"],
        overlap_threshold=payload["overlap_threshold"],
        ansatz=payload["ansatz"],
        attempted_seeds=payload["attempted_seeds"],
    )
    if couplings is not None:
        if (
            pool.crystal_hash != _crystal_hash(couplings)
            or pool.grid_hash != couplings.grid.content_hash()
        ):
            raise PoolMismatchError(
                "pool provenance hashes do not match the run configuration"
            )
    return pool
