"""Command-line orchestration: configuration, persistence, experiment harness.

All outputs are CSV or JSON with provenance headers (config hash, seed list,
formula strings); reruns with the same config are byte-identical.  Exit codes:
0 success, 2 configuration error, 3 infeasible (empty pool / unusable
entries), 4 numerical failure.
"""

from __future__ import annotations

import json
import os
import sys

import click
import numpy as np
from jsonschema import Draft202012Validator

from . import analysis
from .coupling import CouplingSet, build_coupling_set
from .crystal import CrystalConfig, IonCrystal, build_crystal, min_gate_time
from .lsf import (
    DriveSolution,
    SolverConfig,
    load_solutions,
    refine,
    save_solutions,
    solve,
)
from .persist import csv_header_lines, sha256_hex
from .simkit import SimConfig, simulate
from .spectrum import (
    build_l_matrix,
    build_tone_grid,
    cached_kernel_basis,
    restrict_tones_near_modes,
)
from .targets import TargetMatrix, parse_target_spec
from .zeropool import (
    EmptyPoolError,
    PoolMismatchError,
    aggregate_pool,
    load_pool,
    save_pool,
    verify_pool,
)

EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERICAL = 4

RUN_CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["crystal", "gate_time"],
    "properties": {
        "crystal": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n_ions", "spacing", "mode_freq_low", "mode_freq_high"],
            "properties": {
                "n_ions": {"type": "integer", "minimum": 2},
                "spacing": {"type": "number", "exclusiveMinimum": 0},
                "mode_freq_low": {"type": "number", "exclusiveMinimum": 0},
                "mode_freq_high": {"type": "number", "exclusiveMinimum": 0},
                "ion_mass": {"type": "number", "exclusiveMinimum": 0},
                "drive_wavenumber": {"type": "number", "exclusiveMinimum": 0},
                "base_rabi": {"type": "number", "exclusiveMinimum": 0},
                "coulomb_coupling": {"type": ["number", "null"]},
            },
        },
        "gate_time": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "seconds": {"type": "number", "exclusiveMinimum": 0},
                "t_min_multiple": {"type": "number", "exclusiveMinimum": 0},
            },
            "minProperties": 1,
            "maxProperties": 1,
        },
        "tone_window": {"type": ["number", "null"], "description": "rad/s"},
        "tone_margin": {"type": ["number", "null"], "description": "rad/s"},
        "kernel_tolerance": {"type": "number"},
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epsilon": {"type": "number"},
                "delta": {"type": "number"},
                "max_iters": {"type": "integer"},
                "stall_patience": {"type": "integer"},
                "rank_threshold": {"type": "number"},
            },
        },
        "pool": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "count": {"type": "integer", "minimum": 1},
                "ansatz": {"enum": ["global", "multi"]},
                "tolerance": {"type": "number"},
                "overlap_threshold": {"type": "number"},
                "max_iter": {"type": "integer"},
                "seed_budget": {"type": "integer"},
            },
        },
        "target": {"type": "string"},
        "seed": {"type": "integer"},
        "simulate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "phonon_cutoff": {"type": "integer", "minimum": 2},
                "steps_per_cycle": {"type": "integer", "minimum": 1},
                "time_steps": {"type": ["integer", "null"]},
                "carrier": {"type": "boolean"},
                "debye_waller": {"type": "boolean"},
            },
        },
        "max_ions_full_pipeline": {"type": "integer"},
    },
}


class ConfigError(ValueError):
    pass


def load_run_config(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    errors = sorted(
        Draft202012Validator(RUN_CONFIG_SCHEMA).iter_errors(raw),
        key=lambda e: list(e.absolute_path),
    )
    if errors:
        msgs = "; ".join(
            f"{'/'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}"
            for e in errors
        )
        raise ConfigError(f"invalid config: {msgs}")
    return raw


def config_hash(raw: dict) -> str:
    return sha256_hex(json.dumps(raw, sort_keys=True))[:16]


def build_context(raw: dict, seed_override=None, cache_dir=None):
    """Crystal, grid, kernel and couplings shared by most verbs."""
    ccfg = CrystalConfig(**raw["crystal"])
    crystal = build_crystal(ccfg)
    gt = raw["gate_time"]
    if "seconds" in gt:
        gate_time = float(gt["seconds"])
    else:
        gate_time = float(gt["t_min_multiple"]) * min_gate_time(crystal)
    grid = build_tone_grid(crystal, gate_time, raw.get("tone_margin"))
    grid = restrict_tones_near_modes(grid, crystal, raw.get("tone_window"))
    kernel = cached_kernel_basis(
        crystal, grid, raw.get("kernel_tolerance", 1e-9), cache_dir=cache_dir
    )
    couplings = build_coupling_set(crystal, grid, kernel)
    seed = seed_override if seed_override is not None else raw.get("seed", 0)
    return crystal, grid, couplings, gate_time, seed


def solver_config(raw: dict) -> SolverConfig:
    return SolverConfig(**raw.get("solver", {}))


def _write_csv(path, header_meta, columns, rows):
    lines = csv_header_lines(header_meta)
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
def main():
    """Design and verify programmable multi-qubit XX gates on ion crystals."""


common_options = [
    click.option("--config", "config_path", required=True, type=click.Path(exists=True)),
    click.option("--seed", type=int, default=None, help="override the config seed"),
    click.option("--out", "out_dir", default=".", type=click.Path(), show_default=True),
    click.option("--threads", default=1, show_default=True),
]


def with_common(fn):
    for opt in reversed(common_options):
        fn = opt(fn)
    return fn


@main.command()
@with_common
def crystal(config_path, seed, out_dir, threads):
    """Build the crystal and emit its mode table."""
    try:
        raw = load_run_config(config_path)
        cry, grid, couplings, gate_time, _ = build_context(raw)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "crystal.csv")
    meta = {
        "config_hash": config_hash(raw),
        "gate_time_s": gate_time,
        "t_min_s": min_gate_time(cry),
        "n_tones": grid.n_tones,
        "kernel_dim": couplings.dim,
    }
    rows = [
        (j, cry.mode_freqs[j], cry.lamb_dicke[j])
        + tuple(cry.participation[:, j])
        for j in range(cry.n_ions)
    ]
    cols = ["mode", "freq_rad_s", "lamb_dicke"] + [
        f"participation_ion{n}" for n in range(cry.n_ions)
    ]
    _write_csv(path, meta, cols, rows)
    click.echo(path)


@main.command()
@with_common
def pool(config_path, seed, out_dir, threads):
    """Aggregate a zero-phase solution pool and write it to disk."""
    try:
        raw = load_run_config(config_path)
        cry, grid, couplings, gate_time, base_seed = build_context(
            raw, seed_override=seed, cache_dir=os.path.join(out_dir, "cache")
        )
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    popts = raw.get("pool", {})
    try:
        the_pool = aggregate_pool(
            couplings,
            count=popts.get("count", 150),
            ansatz=popts.get("ansatz", "global"),
            tolerance=popts.get("tolerance", 1e-8),
            overlap_threshold=popts.get("overlap_threshold", 0.9),
            max_iter=popts.get("max_iter", 200),
            base_seed=base_seed,
            seed_budget=popts.get("seed_budget"),
            n_workers=threads,
        )
    except EmptyPoolError as exc:
        _fail(EXIT_INFEASIBLE, str(exc))
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "pool.json")
    save_pool(the_pool, path)
    click.echo(
        f"{path} entries={len(the_pool)} attempted={the_pool.attempted_seeds} "
        f"success_rate={the_pool.success_rate:.3f}"
    )


def _emit_spectrum_csvs(out_dir, tag, best: DriveSolution, cry: IonCrystal, meta):
    per_ion = best.per_ion_power
    _write_csv(
        os.path.join(out_dir, f"{tag}-ion-power.csv"),
        meta,
        ["ion", "power_rad_s"],
        [(n, per_ion[n]) for n in range(len(per_ion))],
    )
    mean_amp = np.mean(np.abs(best.amplitudes), axis=0)
    std_amp = np.std(np.abs(best.amplitudes), axis=0)
    _write_csv(
        os.path.join(out_dir, f"{tag}-tone-spectrum.csv"),
        meta,
        ["tone_rad_s", "mean_abs_amplitude", "std_abs_amplitude"],
        [
            (best.grid.tone_freqs[m], mean_amp[m], std_amp[m])
            for m in range(best.grid.n_tones)
        ],
    )


@main.command()
@with_common
@click.option("--pool-file", required=True, type=click.Path(exists=True))
@click.option("--target", "target_spec", default=None, help="overrides config target")
@click.option("--emit-spectrum", is_flag=True)
def solve_cmd(config_path, seed, out_dir, threads, pool_file, target_spec, emit_spectrum):
    """Convert + refine every pool entry against a target."""
    try:
        raw = load_run_config(config_path)
        cry, grid, couplings, gate_time, _ = build_context(
            raw, cache_dir=os.path.join(out_dir, "cache")
        )
        spec_str = target_spec or raw.get("target")
        if not spec_str:
            raise ConfigError("no target given (config key 'target' or --target)")
        target = parse_target_spec(spec_str, cry.n_ions)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    try:
        the_pool = load_pool(pool_file, couplings)
    except PoolMismatchError as exc:
        _fail(EXIT_CONFIG, str(exc))
    try:
        solutions = solve(
            the_pool, couplings, target, solver_config(raw), n_workers=threads
        )
    except Exception as exc:  # unusable entries or linalg failure
        _fail(EXIT_NUMERICAL, str(exc))
    os.makedirs(out_dir, exist_ok=True)
    meta = {
        "config_hash": config_hash(raw),
        "target": target.label,
        "pool_entries": len(the_pool),
        "gate_time_s": gate_time,
    }
    out_path = os.path.join(out_dir, "solutions.json")
    save_solutions(solutions, out_path, meta=meta)
    _write_csv(
        os.path.join(out_dir, "solutions-summary.csv"),
        meta,
        ["rank", "origin_seed", "infidelity", "total_rabi_rad_s"],
        [(i, s.origin, s.infidelity, s.total_rabi) for i, s in enumerate(solutions)],
    )
    if emit_spectrum:
        _emit_spectrum_csvs(out_dir, "best", solutions[0], cry, meta)
    click.echo(
        f"{out_path} best_infidelity={solutions[0].infidelity:.3e} "
        f"best_total_rabi={solutions[0].total_rabi:.6g}"
    )


@main.command("refine")
@with_common
@click.option("--solutions-file", required=True, type=click.Path(exists=True))
@click.option("--target", "target_spec", required=True)
@click.option("--index", default=0, show_default=True)
def refine_cmd(config_path, seed, out_dir, threads, solutions_file, target_spec, index):
    """Re-run gradient refinement on a stored solution."""
    try:
        raw = load_run_config(config_path)
        cry, grid, couplings, gate_time, _ = build_context(raw)
        target = parse_target_spec(target_spec, cry.n_ions)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    sols = load_solutions(solutions_file)
    if not 0 <= index < len(sols):
        _fail(EXIT_CONFIG, f"index {index} outside 0..{len(sols) - 1}")
    sol = sols[index]
    if sol.coords is None:
        _fail(EXIT_CONFIG, "stored solution has no kernel coordinates")
    try:
        better = refine(sol, couplings, target, solver_config(raw))
    except Exception as exc:
        _fail(EXIT_NUMERICAL, str(exc))
    os.makedirs(out_dir, exist_ok=True)
    out_path = os.path.join(out_dir, "refined.json")
    save_solutions([better], out_path, meta={"config_hash": config_hash(raw)})
    click.echo(
        f"{out_path} infidelity={better.infidelity:.3e} total_rabi={better.total_rabi:.6g}"
    )


@main.command("estimate")
@with_common
@click.option("--target", "target_spec", default=None)
def estimate_cmd(config_path, seed, out_dir, threads, target_spec):
    """Print T_min, the nuclear-norm power estimate, and the MS reference."""
    try:
        raw = load_run_config(config_path)
        cry, grid, couplings, gate_time, _ = build_context(raw)
        spec_str = target_spec or raw.get("target")
        if not spec_str:
            raise ConfigError("no target given")
        target = parse_target_spec(spec_str, cry.n_ions)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    t_min = min_gate_time(cry)
    om_nuc = analysis.nuclear_norm_estimate(target, cry, gate_time)
    om_ms = analysis.ms_reference_rabi(
        np.pi / 4, float(np.mean(cry.lamb_dicke)), gate_time
    )
    click.echo(f"t_min_s: {t_min:.9g}")
    click.echo(f"gate_time_s: {gate_time:.9g}")
    click.echo(f"omega_nuc_rad_s: {om_nuc:.9g}")
    click.echo(f"ms_reference_rad_s: {om_ms:.9g}")
    click.echo(f"nuclear_norm: {analysis.nuclear_norm(target.phases):.9g}")


@main.command("simulate")
@with_common
@click.option("--solutions-file", required=True, type=click.Path(exists=True))
@click.option("--target", "target_spec", required=True)
@click.option("--index", default=0, show_default=True)
def simulate_cmd(config_path, seed, out_dir, threads, solutions_file, target_spec, index):
    """Exact small-register verification of a stored solution."""
    try:
        raw = load_run_config(config_path)
        cry, grid, couplings, gate_time, _ = build_context(raw)
        target = parse_target_spec(target_spec, cry.n_ions)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    sopts = raw.get("simulate", {})
    sim_cfg = SimConfig(
        phonon_cutoff=sopts.get("phonon_cutoff", 14),
        steps_per_cycle=sopts.get("steps_per_cycle", 24),
        time_steps=sopts.get("time_steps"),
        carrier=sopts.get("carrier", False),
        debye_waller=sopts.get("debye_waller", False),
    )
    if cry.n_ions > sim_cfg.max_ions:
        _fail(EXIT_CONFIG, f"simulation limited to {sim_cfg.max_ions} ions")
    sols = load_solutions(solutions_file)
    sol = sols[index]
    try:
        res = simulate(sol, cry, grid, target, sim_cfg)
    except RuntimeError as exc:
        _fail(EXIT_NUMERICAL, str(exc))
    os.makedirs(out_dir, exist_ok=True)
    meta = {
        "config_hash": config_hash(raw),
        "target": target.label,
        "fidelity": res.fidelity,
        "leakage": res.leakage,
        "valid": res.valid,
        "carrier": sim_cfg.carrier,
        "debye_waller": sim_cfg.debye_waller,
    }
    n_states = res.populations.shape[1]
    _write_csv(
        os.path.join(out_dir, "sim-populations.csv"),
        meta,
        ["time_s"] + [f"pop_{i:0{cry.n_ions}b}" for i in range(n_states)],
        [
            (res.times[i],) + tuple(res.populations[i])
            for i in range(len(res.times))
        ],
    )
    _write_csv(
        os.path.join(out_dir, "sim-occupations.csv"),
        meta,
        ["time_s"] + [f"mode_{j}" for j in range(cry.n_ions)],
        [
            (res.times[i],) + tuple(res.mode_occupations[i])
            for i in range(len(res.times))
        ],
    )
    click.echo(f"fidelity={res.fidelity:.9f} leakage={res.leakage:.3e} valid={res.valid}")


@main.command("scaling")
@with_common
@click.option("--ions", default="6,10,14", show_default=True)
@click.option("--t-multiples", default="1.5,2,3", show_default=True)
@click.option("--pool-count", default=12, show_default=True)
@click.option("--targets", "targets_spec", default="all,cluster:2x2,random:0.5:1", show_default=True)
def scaling_cmd(config_path, seed, out_dir, threads, ions, t_multiples, pool_count, targets_spec):
    """Power-vs-time collapse data across crystal sizes (CSV)."""
    try:
        raw = load_run_config(config_path)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    n_list = [int(x) for x in ions.split(",") if x]
    t_list = [float(x) for x in t_multiples.split(",") if x]
    if not n_list or not t_list:
        _fail(EXIT_CONFIG, "empty scaling ranges")
    base_seed = seed if seed is not None else raw.get("seed", 0)
    rows = []
    for n in n_list:
        ccfg = dict(raw["crystal"])
        ccfg["n_ions"] = n
        cry = build_crystal(CrystalConfig(**ccfg))
        t_min = min_gate_time(cry)
        for mult in t_list:
            gate_time = mult * t_min
            grid = restrict_tones_near_modes(
                build_tone_grid(cry, gate_time, raw.get("tone_margin")),
                cry,
                raw.get("tone_window"),
            )
            kernel = cached_kernel_basis(
                cry, grid, raw.get("kernel_tolerance", 1e-9),
                cache_dir=os.path.join(out_dir, "cache"),
            )
            couplings = build_coupling_set(cry, grid, kernel)
            try:
                the_pool = aggregate_pool(
                    couplings, count=pool_count, base_seed=base_seed,
                    n_workers=threads,
                )
            except EmptyPoolError:
                continue
            for tspec in targets_spec.split(";"):
                for sub in tspec.split(","):
                    try:
                        target = parse_target_spec(sub, n)
                    except (ValueError, IndexError):
                        continue
                    try:
                        best = solve(
                            the_pool, couplings, target, solver_config(raw),
                            n_workers=threads,
                        )[0]
                    except Exception:
                        continue
                    om_nuc = analysis.nuclear_norm_estimate(target, cry, gate_time)
                    rows.append(
                        (n, mult, gate_time, best.total_rabi, om_nuc,
                         best.infidelity, target.label)
                    )
    if not rows:
        _fail(EXIT_INFEASIBLE, "no scaling points produced")
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "collapse.csv")
    meta = {
        "config_hash": config_hash(raw),
        "seed": base_seed,
        "normalization": "y = total_rabi / omega_nuc(T); slope of log y vs log(T/Tmin) ~ 0 when |r| ~ omega_nuc; log(total_rabi) vs log(T) slope ~ -1",
    }
    _write_csv(
        path,
        meta,
        ["n_ions", "t_over_tmin", "gate_time_s", "total_rabi_rad_s",
         "omega_nuc_rad_s", "infidelity", "target_label"],
        rows,
    )
    click.echo(path)


@main.command("compare-ansatz")
@with_common
@click.option("--pool-count", default=50, show_default=True)
@click.option("--n-targets", default=6, show_default=True)
def compare_ansatz_cmd(config_path, seed, out_dir, threads, pool_count, n_targets):
    """Global vs multi-address zero-phase ansatz comparison (CSV)."""
    try:
        raw = load_run_config(config_path)
        cry, grid, couplings, gate_time, base_seed = build_context(
            raw, seed_override=seed, cache_dir=os.path.join(out_dir, "cache")
        )
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    try:
        pool_g = aggregate_pool(
            couplings, count=pool_count, ansatz="global",
            base_seed=base_seed, n_workers=threads,
        )
        pool_m = aggregate_pool(
            couplings, count=pool_count, ansatz="multi",
            base_seed=base_seed + 10_000, n_workers=threads,
        )
    except EmptyPoolError as exc:
        _fail(EXIT_INFEASIBLE, str(exc))
    cfg = solver_config(raw)
    rows = []
    overlap_rows = []
    from .lsf import expand_global

    for t_idx in range(n_targets):
        target = parse_target_spec(f"random:0.5:{base_seed + t_idx}", cry.n_ions)
        sols_g = solve(pool_g, couplings, target, cfg, n_workers=threads)
        sols_m = solve(pool_m, couplings, target, cfg, n_workers=threads)
        med_g = float(np.median([s.total_rabi for s in sols_g]))
        med_m = float(np.median([s.total_rabi for s in sols_m]))
        nuc = analysis.nuclear_norm(target.phases)
        rows.append((target.label, nuc, med_g, med_m, med_g / med_m))
        if t_idx == 0:
            by_seed_g = {s.origin: s for s in sols_g}
            by_seed_m = {s.origin: s for s in sols_m}
            for em in pool_m.entries:
                if em.seed not in by_seed_m:
                    continue
                zg_best, oz_best = None, -1.0
                for eg in pool_g.entries:
                    oz = analysis.overlap(
                        expand_global(eg.coords, cry.n_ions), em.coords
                    )
                    if oz > oz_best:
                        oz_best, zg_best = oz, eg
                if zg_best is None or zg_best.seed not in by_seed_g:
                    continue
                o_r = analysis.overlap(
                    by_seed_g[zg_best.seed].coords.reshape(-1),
                    by_seed_m[em.seed].coords.reshape(-1),
                )
                overlap_rows.append((em.seed, zg_best.seed, oz_best, o_r))
    os.makedirs(out_dir, exist_ok=True)
    meta = {"config_hash": config_hash(raw), "seed": base_seed}
    path = os.path.join(out_dir, "ansatz-comparison.csv")
    _write_csv(
        path, meta,
        ["target", "nuclear_norm", "median_rabi_global", "median_rabi_multi", "ratio"],
        rows,
    )
    _write_csv(
        os.path.join(out_dir, "ansatz-overlaps.csv"),
        meta,
        ["multi_seed", "global_seed", "zero_phase_overlap", "solution_overlap"],
        overlap_rows,
    )
    click.echo(path)


main.add_command(solve_cmd, "solve")


if __name__ == "__main__":
    main()
