"""Command-line entry point: solve, oracle, validate, sweep.

Exit codes: 0 success, 1 runtime failure, 2 configuration error,
3 validated bound violated.  Ensemble members run data-parallel up to
EIGENSAMPLER_THREADS workers; every member's stream is derived from
(seed, member), so results are independent of scheduling.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis, circuits
from .analysis import BoundViolation
from .config import (
    ConfigError,
    ExperimentConfig,
    load_config,
    parse_initial_state,
    worker_count,
)
from .engine import Forced, MonteCarlo, QuantumState, plus_state
from .excited import (
    DenseProjector,
    Deterministic,
    SpectrumConfig,
    Stochastic,
    blend_projectors,
    sbs_step,
    solve_spectrum,
)
from .model import build_distribution, hamiltonian_matrix
from .report import ResultBundle, write_bundle

VALIDATE_SUITES = ("circuits", "protocol", "appendix-a", "appendix-b")


def _run_ensemble(config: ExperimentConfig, members: int, representation=None):
    """Solve the spectrum once per ensemble member, keyed by member index."""
    terms = config.hamiltonian_terms()

    def solve_member(k):
        return solve_spectrum(
            config.spectrum_config(ensemble_member=k, representation=representation),
            terms,
        )

    workers = min(worker_count(), members)
    if workers <= 1:
        return [solve_member(k) for k in range(members)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(solve_member, range(members)))


def _aggregate_levels(results):
    """Per-level summaries with medians across ensemble members."""
    levels = []
    n_levels = len(results[0].levels)
    for level in range(n_levels):
        members = [
            {
                "member": k,
                "energy": res.levels[level].energy,
                "fidelity": res.levels[level].fidelity,
                "log2_success": res.levels[level].state.log2_success,
            }
            for k, res in enumerate(results)
        ]
        levels.append(
            {
                "level": level,
                "median_energy": float(np.median([m["energy"] for m in members])),
                "median_fidelity": float(np.median([m["fidelity"] for m in members])),
                "oracle_energy": float(results[0].oracle_energies[level]),
                "median_wall_time_s": float(
                    np.median([res.levels[level].wall_time_s for res in results])
                ),
                "members": members,
            }
        )
    return levels


def cmd_solve(args) -> int:
    config = _load_with_overrides(args)
    members = args.ensemble or config.run.ensemble_size
    started = time.perf_counter()
    results = _run_ensemble(config, members)
    total_s = time.perf_counter() - started
    levels = _aggregate_levels(results)
    gap = None
    if len(levels) >= 3:
        gaps = [res.gap(1, 2) for res in results]
        gap = {
            "computed_median": float(np.median(gaps)),
            "oracle": float(results[0].oracle_energies[2] - results[0].oracle_energies[1]),
        }
    bundle = ResultBundle(
        resolved_config=config.resolved,
        seed=config.seed,
        levels=levels,
        gap=gap,
        timing={
            "total_s": total_s,
            "per_level_median_s": [lv["median_wall_time_s"] for lv in levels],
        },
    )
    title = (
        f"TFIM L={config.model.sites} "
        f"(J={config.model.coupling:g}, B={config.model.field:g})"
    )
    write_bundle(
        config.output.directory,
        bundle,
        config.output.formats,
        [lv.record for lv in results[0].levels],
        results[0].oracle_energies,
        title,
    )
    print(f"{title}, {members} ensemble member(s), seed {config.seed}")
    for lv in levels:
        print(
            f"level {lv['level']}: energy {lv['median_energy']:+.6f} "
            f"(oracle {lv['oracle_energy']:+.6f}), "
            f"fidelity {lv['median_fidelity']:.4f}"
        )
    if gap is not None:
        print(
            f"gap e2-e1: {gap['computed_median']:.4f} (oracle {gap['oracle']:.4f})"
        )
    print(f"outputs in {config.output.directory}/")
    return 0


def cmd_oracle(args) -> int:
    config = _load_with_overrides(args)
    h = hamiltonian_matrix(config.hamiltonian_terms())
    decomp = analysis.exact_diagonalize(h)
    k = min(config.oracle_levels, len(decomp.eigenvalues))
    print(f"lowest {k} eigenvalues of TFIM L={config.model.sites}:")
    listing = []
    for i in range(k):
        cluster = analysis.degenerate_cluster(decomp, i)
        degeneracy = len(cluster)
        listing.append(
            {"level": i, "energy": float(decomp.eigenvalues[i]), "degeneracy": degeneracy}
        )
        print(f"  e{i} = {decomp.eigenvalues[i]:+.9f}  (degeneracy {degeneracy})")
    out_dir = Path(config.output.directory)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "oracle.json", "w") as fh:
        json.dump(
            {
                "schema_version": 1,
                "model": config.resolved["model"],
                "levels": listing,
            },
            fh,
            indent=2,
        )
        fh.write("\n")
    return 0


def _random_density(rng, dim: int, rank: int) -> np.ndarray:
    a = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def _random_distribution(rng, n: int):
    from .model import HamiltonianTerm

    terms = []
    n_terms = int(rng.integers(1, 4))
    for i in range(n_terms):
        basis = "Z" if rng.random() < 0.5 else "X"
        energies = rng.normal(size=2**n)
        terms.append(HamiltonianTerm(f"t{i}", basis, energies, n))
    return build_distribution(terms)


def _check_circuits(rng, instances: int = 100) -> dict:
    """Controlled-rotation construction checks on random product projectors."""
    from .model import ProductProjector, projector_vector

    worst_unitarity = 0.0
    worst_block = 0.0
    worst_discard = 0.0
    for _ in range(instances):
        n = int(rng.integers(1, 7))
        eta = float(rng.uniform(0.005, 0.5))
        dim = 2**n
        basis = "Z" if rng.random() < 0.5 else "X"
        proj = ProductProjector(basis, int(rng.integers(0, dim)), n)
        v = projector_vector(proj)
        pm = np.outer(v, v.conj())
        built = circuits.build_controlled_ry(proj, eta, n)
        gram = built.matrix.conj().T @ built.matrix
        worst_unitarity = max(worst_unitarity, float(np.max(np.abs(gram - np.eye(2 * dim)))))
        block = circuits.postselect_block(built)
        expected = np.eye(dim) - eta * pm
        worst_block = max(worst_block, float(np.max(np.abs(block - expected))))
        discard = circuits.discard_block(built)
        expected_discard = np.sqrt(2 * eta - eta * eta) * pm
        worst_discard = max(
            worst_discard, float(np.max(np.abs(np.abs(discard) - np.abs(expected_discard))))
        )
    if worst_unitarity > 1e-10:
        raise BoundViolation(f"unitarity defect {worst_unitarity:.3e} above 1e-10")
    if worst_block > 1e-12:
        raise BoundViolation(f"post-selected block defect {worst_block:.3e} above 1e-12")
    return {
        "instances": instances,
        "max_unitarity_defect": worst_unitarity,
        "max_block_defect": worst_block,
        "max_discard_defect": worst_discard,
    }


def _check_protocol(rng, instances: int = 200) -> dict:
    """Tripartite controlled-swap protocol vs the closed-form filter step."""
    from .qlinalg import trace_norm

    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(1, 4))
        dim = 2**n
        eta = float(rng.uniform(0.01, 0.3))
        rho0 = _random_density(rng, dim, int(rng.integers(1, dim + 1)))
        target = _random_density(rng, dim, int(rng.integers(1, dim + 1)))
        setup = circuits.TripartiteSetup(system=rho0, ancilla=target, eta=eta)
        out_state, _ = circuits.simulate_sbs_protocol(setup)
        stepped, _ = sbs_step(
            QuantumState(matrix=rho0), DenseProjector(target), eta
        )
        worst = max(worst, trace_norm(out_state - stepped.matrix))
    if worst > 1e-10:
        raise BoundViolation(
            f"protocol/formula trace-norm difference {worst:.3e} above 1e-10"
        )
    return {"instances": instances, "max_trace_norm_diff": worst}


def _check_appendix_a(rng, instances: int = 100) -> dict:
    """Propagator and ensemble-state error budgets on random distributions."""
    min_op_margin = np.inf
    min_state_margin = np.inf
    for _ in range(instances):
        n = int(rng.integers(1, 5))
        dist = _random_distribution(rng, n)
        eta = float(rng.uniform(0.005, 0.1))
        n_steps = int(rng.integers(1, 101))
        op_err = analysis.operator_error(dist.density_matrix(), eta, n_steps)
        min_op_margin = min(min_op_margin, n_steps * eta**2 - op_err)
        v = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
        init = QuantumState(vector=v / np.linalg.norm(v))
        st_err = analysis.state_error(dist, init, eta, n_steps)
        min_state_margin = min(min_state_margin, 4 * n_steps * eta**2 - st_err)
    # stress point: large step size, long run — bound loosens but must hold
    stress_dist = _random_distribution(rng, 2)
    stress_err = analysis.operator_error(stress_dist.density_matrix(), 0.5, 10_000)
    rho = stress_dist.density_matrix()
    stress_bound = 10_000 * 0.25 * float(np.trace(rho @ rho).real)
    if stress_err > stress_bound:
        raise BoundViolation(
            f"stress-point operator error {stress_err:.3e} above {stress_bound:.3e}"
        )
    if min_op_margin < 0 or min_state_margin < 0:
        raise BoundViolation(
            f"error budget exceeded: operator margin {min_op_margin:.3e}, "
            f"state margin {min_state_margin:.3e}"
        )
    return {
        "instances": instances,
        "min_operator_margin": float(min_op_margin),
        "min_state_margin": float(min_state_margin),
        "stress_point_margin": float(stress_bound - stress_err),
    }


def _check_appendix_b(points: int = 200) -> dict:
    """Two-level error-propagation inequalities on a log grid."""
    ratios = np.linspace(2.0, 10.0, 8)
    deltas = np.logspace(-4, np.log10(0.1), max(1, points // len(ratios)))
    worst_ratio = 0.0
    count = 0
    for ratio in ratios:
        for delta in deltas:
            model = analysis.TwoLevelModel(a=float(ratio), b=1.0, delta=float(delta))
            _, exact_err = analysis.two_level_excited_error(model)
            if exact_err > 2.5 * delta:
                raise BoundViolation(
                    f"exact overlap error {exact_err:.3e} above 2.5*delta "
                    f"at a={ratio}, delta={delta}"
                )
            worst_ratio = max(worst_ratio, exact_err / delta)
            count += 1
    return {"points": count, "max_exact_error_over_delta": worst_ratio}


def cmd_validate(args) -> int:
    selected = VALIDATE_SUITES
    if args.only:
        selected = tuple(s.strip() for s in args.only.split(","))
        unknown = set(selected) - set(VALIDATE_SUITES)
        if unknown:
            raise ConfigError(
                f"--only: unknown suite(s) {', '.join(sorted(unknown))} "
                f"(available: {', '.join(VALIDATE_SUITES)})"
            )
    seed = args.seed if args.seed is not None else 0
    out_dir = Path(args.out or "results")
    report = {"schema_version": 1, "seed": seed, "suites": {}}
    suites = {
        "circuits": lambda: _check_circuits(np.random.default_rng([seed, 1])),
        "protocol": lambda: _check_protocol(np.random.default_rng([seed, 2])),
        "appendix-a": lambda: _check_appendix_a(np.random.default_rng([seed, 3])),
        "appendix-b": lambda: _check_appendix_b(),
    }
    for name in selected:
        started = time.perf_counter()
        result = suites[name]()
        result["wall_time_s"] = time.perf_counter() - started
        report["suites"][name] = result
        print(f"{name}: ok ({result['wall_time_s']:.1f}s)")
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "validate.json", "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    return 0


def _predicted_acceptance(config: ExperimentConfig, result) -> float:
    """Leading-order acceptance for the last level's run (n <= 10 only)."""
    terms = config.hamiltonian_terms()
    dist = build_distribution(terms, shifts=config.model.shifts)
    if dist.n > 10:
        return float("nan")
    last = config.excited.levels - 1
    spec = config.spectrum_config().level_spec(last)
    eta = spec.eta if spec.eta is not None else config.run.eta
    steps = spec.steps if spec.steps is not None else config.run.steps
    schedule = config.excited.schedule
    if spec.period is not None:
        schedule = Deterministic(period=spec.period)
    init = (
        parse_initial_state(spec.init, dist.n)
        if isinstance(spec.init, str)
        else plus_state(dist.n)
    )
    if last == 0:
        sigma = analysis.exact_ite_state(dist, init.density(), eta * steps)
        return float(np.trace(sigma).real)
    found = [DenseProjector.from_state(result.levels[k].state) for k in range(last)]
    target = blend_projectors(found)
    if isinstance(schedule, Deterministic):
        n_filters = steps // schedule.period
    else:
        n_filters = int(round(schedule.filter_fraction() * steps))
    generator = (steps - n_filters) * eta * dist.density_matrix() + (
        eta * n_filters
    ) * target.matrix
    vals, vecs = np.linalg.eigh(generator)
    filt = (vecs * np.exp(-vals)) @ vecs.conj().T
    sigma = filt @ init.density() @ filt
    return float(np.trace(sigma).real) / 2.0**n_filters


def _empirical_acceptance(config: ExperimentConfig, results) -> float:
    last = config.excited.levels - 1
    if isinstance(config.run.policy, MonteCarlo):
        attempts = sum(1 + res.levels[last].record.restarts for res in results)
        return len(results) / attempts
    log2s = [res.levels[last].state.log2_success for res in results]
    return float(np.median([2.0**v for v in log2s]))


def cmd_sweep(args) -> int:
    config = _load_with_overrides(args)
    if config.sweep is None:
        raise ConfigError("config has no sweep section")
    members = args.ensemble or config.run.ensemble_size
    axes = config.sweep.axes
    names = [a for a in ("eta", "steps", "p_lift", "L") if a in axes]
    rows = []
    header = names + [
        "fidelity", "energy_error", "empirical_acceptance", "predicted_acceptance"
    ]
    base_time = config.run.eta * config.run.steps
    for values in itertools.product(*(axes[name] for name in names)):
        point = dict(zip(names, values))
        model = config.model
        if "L" in point:
            model = replace(model, sites=int(point["L"]))
        run = config.run
        if "eta" in point:
            run = replace(run, eta=float(point["eta"]))
            if config.sweep.fixed_time:
                run = replace(run, steps=max(1, round(base_time / float(point["eta"]))))
        if "steps" in point:
            run = replace(run, steps=int(point["steps"]))
        excited = config.excited
        if "p_lift" in point:
            excited = replace(excited, schedule=Stochastic(p_lift=float(point["p_lift"])))
        point_config = replace(config, model=model, run=run, excited=excited)
        results = _run_ensemble(point_config, members)
        last = excited.levels - 1
        fidelity = float(np.median([res.levels[last].fidelity for res in results]))
        oracle_energy = float(results[0].oracle_energies[last])
        energy = float(np.median([res.levels[last].energy for res in results]))
        row = [point[name] for name in names] + [
            fidelity,
            abs(energy - oracle_energy),
            _empirical_acceptance(point_config, results),
            _predicted_acceptance(point_config, results[0]),
        ]
        rows.append(row)
        print("  ".join(f"{name}={val!r}" for name, val in zip(header, row)))
    out_dir = Path(config.output.directory)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "sweep.csv", "w") as fh:
        fh.write(f"# schema_version=1 seed={config.seed}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")
    print(f"sweep table in {out_dir / 'sweep.csv'}")
    return 0


def _load_with_overrides(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config is required for this command")
    config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
        config.resolved["seed"] = args.seed
    if args.out:
        config.output = replace(config.output, directory=args.out)
        config.resolved["output"]["directory"] = args.out
    return config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eigensampler",
        description=(
            "Stochastic projector-sampling imaginary-time evolution for "
            "ground and excited eigenstates of decomposable Hamiltonians."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func, needs_only in (
        ("solve", cmd_solve, False),
        ("oracle", cmd_oracle, False),
        ("validate", cmd_validate, True),
        ("sweep", cmd_sweep, False),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", help="experiment config (JSON)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--ensemble", type=int, help="override the ensemble size")
        if needs_only:
            p.add_argument(
                "--only",
                help=f"comma-separated suite subset of: {', '.join(VALIDATE_SUITES)}",
            )
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except BoundViolation as exc:
        print(f"bound violation: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # runtime failures map to exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
