"""Conversion of zero-phase solutions to arbitrary targets plus refinement.

The pipeline: a unit zero-phase solution z is scaled by lambda and perturbed
by a small deviation d = u / lambda obtained from one linear solve; lambda is
fixed by requiring the neglected quadratic remainder |d^T A d| to sit at the
per-constraint budget epsilon.  Gradient refinement then walks the feasible
set toward lower drive norm using the linearised constraints plus a
norm-reduction row r.d = -delta |r|.

Also provides the closed-form adiabatic constructor (one designated tone per
coupled pair) and the global -> multi-address expansion.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .coupling import CouplingSet, displacement_trajectory
from .crystal import IonCrystal, min_mode_gap
from .integrals import mode_phase_form
from .persist import pack_array, unpack_array
from .spectrum import ToneGrid
from .targets import TargetMatrix
from .zeropool import SolutionPool, ZeroPhaseSolution


class UnusableEntryError(RuntimeError):
    """The linearisation matrix is rank-deficient for this pool entry."""


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float = 1e-3          # per-constraint linearisation budget
    delta: float = 5e-2            # relative norm-reduction step
    max_iters: int = 1000
    stall_patience: int = 10
    rank_threshold: float = 1e-4   # infidelity cut used when ranking solutions
    feas_infidelity: float = 1e-10 # feasibility maintained during descent

    def __post_init__(self):
        if self.epsilon <= 0 or self.delta < 0:
            raise ValueError("epsilon must be positive and delta non-negative")


@dataclass(frozen=True)
class DriveSolution:
    coords: np.ndarray | None      # per-ion solver coordinates (N x K); None when
                                   # the solution was built outside the kernel
    amplitudes: np.ndarray         # per-ion physical tone amplitudes (N x M), rad/s
    total_rabi: float              # Euclidean norm of amplitudes, rad/s
    lam: float                     # conversion scale (solver units)
    origin: int                    # pool entry seed (or -1)
    infidelity: float
    grid: ToneGrid
    warning: str | None = None
    norm_trace: tuple = ()

    @property
    def per_ion_power(self) -> np.ndarray:
        return np.linalg.norm(self.amplitudes, axis=1)


def expand_global(z_global: np.ndarray, n_ions: int) -> np.ndarray:
    """Stack a global-ansatz solution for every ion, renormalised to unit length."""
    stacked = np.tile(np.asarray(z_global, dtype=float), n_ions)
    return stacked / np.linalg.norm(stacked)


def _stacked_coords(entry: ZeroPhaseSolution, couplings: CouplingSet) -> np.ndarray:
    if entry.ansatz == "global":
        return expand_global(entry.coords, couplings.n_ions)
    return entry.coords


def _linear_map(z: np.ndarray, couplings: CouplingSet) -> np.ndarray:
    """M with M_ik = d phi_i / d r_k evaluated at z (rows follow pair_list)."""
    return couplings.pair_jacobian(z.reshape(couplings.n_ions, couplings.dim))


def choose_lambda(
    z: np.ndarray,
    couplings: CouplingSet,
    target: TargetMatrix,
    epsilon: float,
) -> tuple[float, np.ndarray]:
    """Consistency scale and raw deviation u (d = u / lambda) for a stacked z."""
    phi = target.pair_values(couplings.pair_list())
    if not np.any(phi):
        return 1.0, np.zeros_like(z)
    lin = _linear_map(z, couplings)
    u, *_ = np.linalg.lstsq(lin, phi, rcond=None)
    misfit = np.linalg.norm(lin @ u - phi)
    if misfit > 1e-6 * max(np.linalg.norm(phi), 1.0):
        raise UnusableEntryError(
            f"unusable pool entry: linear map leaves residual {misfit:.3e}"
        )
    quad = np.abs(
        couplings.pair_phase_vector(u.reshape(couplings.n_ions, couplings.dim))
    )
    lam = float(np.sqrt(np.max(quad) / epsilon))
    if lam == 0.0:
        lam = 1.0
    return lam, u


def convert(
    entry: ZeroPhaseSolution | np.ndarray,
    couplings: CouplingSet,
    target: TargetMatrix,
    config: SolverConfig = SolverConfig(),
) -> DriveSolution:
    """One linear solve turning a zero-phase solution into a target solution."""
    if isinstance(entry, ZeroPhaseSolution):
        z = _stacked_coords(entry, couplings)
        origin = entry.seed
    else:
        z = np.asarray(entry, dtype=float)
        origin = -1
    lam, u = choose_lambda(z, couplings, target, config.epsilon)
    r = lam * z + u / lam
    return _as_solution(r, couplings, target, lam=lam, origin=origin)


def _as_solution(r, couplings, target, lam, origin, warning=None, trace=()):
    per_ion = r.reshape(couplings.n_ions, couplings.dim)
    realized = couplings.pair_phases(per_ion)
    resid = target.phases - realized
    inf = 2.0 * float(np.sum(resid[np.triu_indices_from(resid, k=1)] ** 2))
    amps = couplings.physical_amplitudes(per_ion)
    return DriveSolution(
        coords=per_ion,
        amplitudes=amps,
        total_rabi=float(np.linalg.norm(amps)),
        lam=lam,
        origin=origin,
        infidelity=inf,
        grid=couplings.grid,
        warning=warning,
        norm_trace=tuple(trace),
    )


def _feasibility_polish(r, couplings, phi, tol, rounds=6):
    n, k = couplings.n_ions, couplings.dim
    for _ in range(rounds):
        per_ion = r.reshape(n, k)
        res = phi - couplings.pair_phase_vector(per_ion)
        if 2.0 * float(res @ res) <= tol:
            return r, True
        jac = couplings.pair_jacobian(per_ion)
        try:
            d, *_ = np.linalg.lstsq(jac, res, rcond=None)
        except np.linalg.LinAlgError:
            return r, False
        r = r + d
    per_ion = r.reshape(n, k)
    res = phi - couplings.pair_phase_vector(per_ion)
    return r, 2.0 * float(res @ res) <= tol


def refine(
    solution: DriveSolution,
    couplings: CouplingSet,
    target: TargetMatrix,
    config: SolverConfig = SolverConfig(),
) -> DriveSolution:
    """Norm descent along the feasible set; never returns a worse infidelity.

    Each accepted outer iteration shrinks |r| (norm-reduction row) and then
    repairs feasibility; the step is halved when the repaired point fails to
    improve.  Stops on |r| stall, step exhaustion, or max_iters.
    """
    if solution.coords is None:
        raise ValueError("refinement needs a kernel-coordinate solution")
    phi = target.pair_values(couplings.pair_list())
    r = solution.coords.reshape(-1).copy()
    feas_tol = max(config.feas_infidelity, min(solution.infidelity, 1.0))

    warning = None
    delta = config.delta
    trace = [float(np.linalg.norm(r))]
    r, ok = _feasibility_polish(r, couplings, phi, feas_tol)
    best = r.copy()
    if config.delta > 0:
        for _ in range(config.max_iters):
            nr = float(np.linalg.norm(r))
            per_ion = r.reshape(couplings.n_ions, couplings.dim)
            res = phi - couplings.pair_phase_vector(per_ion)
            jac = couplings.pair_jacobian(per_ion)
            system = np.vstack([jac, (r / nr)[None, :]])
            rhs = np.concatenate([res, [-delta * nr]])
            try:
                d, *_ = np.linalg.lstsq(system, rhs, rcond=None)
            except np.linalg.LinAlgError:
                warning = "linear solve failed mid-descent; returning best iterate"
                break
            cand, feasible = _feasibility_polish(r + d, couplings, phi, feas_tol)
            if feasible and np.linalg.norm(cand) < nr:
                r = cand
                best = r.copy()
                trace.append(float(np.linalg.norm(r)))
                delta = min(delta * 1.3, config.delta)
            else:
                delta *= 0.5
                if delta < 1e-6 * config.delta:
                    break
            p = config.stall_patience
            if len(trace) > p and trace[-1] > (1 - 1e-4) * trace[-1 - p]:
                break

    best, _ = _feasibility_polish(best, couplings, phi, config.feas_infidelity)
    out = _as_solution(
        best, couplings, target,
        lam=solution.lam, origin=solution.origin, warning=warning, trace=trace,
    )
    if out.infidelity > solution.infidelity and out.total_rabi >= solution.total_rabi:
        return replace(solution, warning=warning or "refinement made no progress")
    return out


def solve(
    pool: SolutionPool,
    couplings: CouplingSet,
    target: TargetMatrix,
    config: SolverConfig = SolverConfig(),
    do_refine: bool = True,
    n_workers: int = 1,
) -> list[DriveSolution]:
    """Convert (and refine) every pool entry; rank feasible-first by drive norm."""

    def run(entry):
        try:
            sol = convert(entry, couplings, target, config)
        except UnusableEntryError as exc:
            return None, str(exc)
        if do_refine:
            sol = refine(sol, couplings, target, config)
        return sol, None

    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as tp:
            outcomes = list(tp.map(run, pool.entries))
    else:
        outcomes = [run(e) for e in pool.entries]

    solutions = [s for s, _ in outcomes if s is not None]
    if not solutions:
        raise UnusableEntryError("every pool entry was unusable for this target")
    solutions.sort(
        key=lambda s: (s.infidelity > config.rank_threshold, s.total_rabi)
    )
    return solutions


def adiabatic_solution(
    crystal: IonCrystal,
    target: TargetMatrix,
    gate_time: float,
    omega: float | None = None,
    min_adiabaticity: float = 50.0,
) -> DriveSolution:
    """Closed-form solution for the slow-gate limit: one tone per coupled pair.

    Pair (n, m) is driven at the harmonic closest to nu_ref + 2 pi (N n + m)/T
    on ions n and m only.  Amplitudes are calibrated against the exact
    diagonal of the phase form (summed over every mode), so single-pair
    targets are met to the cross-tone interference level.
    """
    if omega is None:
        omega = crystal.config.base_rabi
    adiab = min_mode_gap(crystal) * gate_time
    if adiab < min_adiabaticity:
        raise ValueError(
            f"gate too fast for the adiabatic constructor: gap*T = {adiab:.1f} < "
            f"{min_adiabaticity}"
        )
    n_ions = crystal.n_ions
    pairs = [
        (n, m)
        for n in range(n_ions)
        for m in range(n + 1, n_ions)
        if target.phases[n, m] != 0.0
    ]

    # shared reference mode: centre of mass unless it misses an ion
    ref = None
    for j in range(n_ions):
        part = crystal.participation[:, j]
        if np.all(np.abs(part) > 1e-6):
            ref = j
            break
    if ref is None:
        raise ValueError("no mode couples to every ion")
    nu_ref = crystal.mode_freqs[ref]

    harmonics = []
    for n, m in pairs:
        s = n_ions * n + m
        h = int(round((nu_ref + 2 * np.pi * s / gate_time) * gate_time / (2 * np.pi)))
        harmonics.append(h)
    if len(set(harmonics)) != len(harmonics):
        raise ValueError("designated tones collide; increase gate_time")

    order = np.argsort(harmonics)
    harmonics = np.array(harmonics)[order]
    pairs = [pairs[i] for i in order]
    tones = 2 * np.pi * harmonics / gate_time
    grid = ToneGrid(
        gate_time=float(gate_time),
        harmonics=harmonics,
        tone_freqs=tones,
        margin=0.0,
    )

    amps = np.zeros((n_ions, len(tones)))
    if pairs:
        forms = np.stack(
            [mode_phase_form(nu, tones, gate_time) for nu in crystal.mode_freqs]
        )
        eta2 = crystal.lamb_dicke**2
        for i, (n, m) in enumerate(pairs):
            weights = -(omega**2) * eta2 * crystal.participation[n] * crystal.participation[m]
            diag = float(np.einsum("j,j->", weights, forms[:, i, i]))
            phi = target.phases[n, m]
            a0 = np.sqrt(abs(phi / diag))
            amps[n, i] += a0
            amps[m, i] += np.sign(phi / diag) * a0

    return DriveSolution(
        coords=None,
        amplitudes=amps,
        total_rabi=float(np.linalg.norm(amps)),
        lam=1.0,
        origin=-1,
        infidelity=float("nan"),
        grid=grid,
    )


def save_solutions(solutions: list[DriveSolution], path: str, meta: dict | None = None) -> None:
    payload = {
        "format": "iongates-solutions-v1",
        "meta": meta or {},
        "solutions": [
            {
                "coords": None if s.coords is None else pack_array(s.coords),
                "amplitudes": pack_array(s.amplitudes),
                "total_rabi": s.total_rabi,
                "lam": s.lam,
                "origin": s.origin,
                "infidelity": s.infidelity,
                "warning": s.warning,
                "gate_time": s.grid.gate_time,
                "harmonics": s.grid.harmonics.tolist(),
            }
            for s in solutions
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_solutions(path: str) -> list[DriveSolution]:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != "iongates-solutions-v1":
        raise ValueError(f"not a solutions file: {path}")
    out = []
    for item in payload["solutions"]:
        harmonics = np.array(item["harmonics"], dtype=int)
        grid = ToneGrid(
            gate_time=item["gate_time"],
            harmonics=harmonics,
            tone_freqs=2 * np.pi * harmonics / item["gate_time"],
            margin=0.0,
        )
        out.append(
            DriveSolution(
                coords=None if item["coords"] is None else unpack_array(item["coords"]),
                amplitudes=unpack_array(item["amplitudes"]),
                total_rabi=item["total_rabi"],
                lam=item["lam"],
                origin=item["origin"],
                infidelity=item["infidelity"],
                grid=grid,
                warning=item["warning"],
            )
        )
    return out
