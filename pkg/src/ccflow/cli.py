"""Command-line front end: JSON job configs in, result files out.

Exit codes: 0 converged success, 2 finished without convergence,
1 usage or parse errors.  Result files embed the resolved config and
print floats with 12 significant digits, so identical configs give
bit-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .algebra import parse_subalgebra
from .cc import (
    SolverConfig,
    cc_energy,
    iteration_history_csv,
    solve_cc,
    solve_fci,
    union_manifold,
)
from .cluster import ClusterOperator
from .ducc import TrotterFlowConfig, qubit_estimate, run_ducc_flow
from .cluster import OperatorMatrix
from .errors import CCFlowError, FCIDumpError, InstabilityError
from .fock import enumerate_manifold
from .flow import FlowConfig, cost_estimate, flow_report, run_flow
from .integrals import (
    ModelSpec,
    assemble_matrix,
    build_model,
    canonicalize,
    parse_fcidump,
)
from .cc import reference_sector_space
from .td import PropagatorConfig, TDState, energy_trace, propagate, trajectory_csv

USAGE_ERROR, NOT_CONVERGED = 1, 2


def _round_floats(obj):
    if isinstance(obj, float):
        return float(f"{obj:.12g}")
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def _write_result(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_round_floats(payload), sort_keys=True, indent=2) + "\n")


def _load_hamiltonian(config):
    source = config.get("hamiltonian")
    if not isinstance(source, dict) or len(source) != 1:
        raise ValueError("config needs exactly one hamiltonian source")
    if "fcidump" in source:
        ham = parse_fcidump(Path(source["fcidump"]).read_text())
        do_canonicalize = config.get("canonicalize", False)
    elif "model" in source:
        model = dict(source["model"])
        kind = model.pop("kind")
        ham = build_model(ModelSpec(kind, model))
        do_canonicalize = config.get("canonicalize", True)
    else:
        raise ValueError("hamiltonian source must be 'fcidump' or 'model'")
    if do_canonicalize:
        ham, _, _ = canonicalize(ham)
    return ham


def _resolve_manifold(section, ham):
    basis = ham.basis
    kind = section.get("type", "full")
    if kind == "full":
        return enumerate_manifold(basis, basis.n_electrons)
    if kind == "ranks":
        return enumerate_manifold(basis, int(section["max_rank"]))
    if kind == "union":
        blocks = [parse_subalgebra(text, basis) for text in section["subalgebras"]]
        return union_manifold(blocks)
    raise ValueError(f"unknown manifold type {kind!r}")


def _subalgebras(section, ham):
    return [parse_subalgebra(text, ham.basis) for text in section["subalgebras"]]


def _solver_config(section):
    keys = ("max_iterations", "residual_tolerance", "diis_depth", "level_shift")
    return SolverConfig(**{k: section[k] for k in keys if k in section})


def _run_task(config, out_dir: Path):
    task = config.get("task")
    section = config.get(task, {}) if task else {}
    ham = _load_hamiltonian(config)
    results: dict = {}
    converged = True
    extra_files: dict[str, str] = {}

    if task == "fci":
        ms2 = int(config.get("sector", {}).get("ms2", 0))
        fci = solve_fci(ham, ms2=ms2)
        results = {"energy": fci.energy, "dimension": len(fci.determinants)}
    elif task == "cc":
        manifold = _resolve_manifold(section.get("manifold", {}), ham)
        solution = solve_cc(ham, manifold, _solver_config(section))
        converged = solution.converged
        results = {
            "energy": solution.energy,
            "residual_norm": solution.residual_norm,
            "iterations": solution.iterations,
            "manifold_size": len(manifold),
        }
        extra_files["cc_history.csv"] = iteration_history_csv(solution.history)
    elif task == "flow":
        blocks = _subalgebras(section, ham)
        cfg = FlowConfig(
            subalgebras=blocks,
            mode=section.get("mode", "serial"),
            ordering=section.get("ordering", "given"),
            energy_tolerance=section.get("energy_tolerance", 1e-8),
            amplitude_tolerance=section.get("amplitude_tolerance", 1e-7),
            max_cycles=section.get("max_cycles", 100),
            block_solver=section.get("block_solver", "exact_diagonalization"),
            max_internal_rank=section.get("max_internal_rank"),
        )
        state, energy = run_flow(ham, cfg)
        converged = state.converged
        results = {
            "energy": energy,
            "energy_eigenvalue": state.energy_eigenvalue,
            "block_energies": list(state.block_energies),
            "cycles": state.cycle,
        }
        extra_files["flow_report.txt"] = flow_report(state)
    elif task == "ducc":
        blocks = _subalgebras(section, ham)
        space = tuple(reference_sector_space(ham))
        am = OperatorMatrix(assemble_matrix(space, ham), space)
        cfg = TrotterFlowConfig(
            subalgebras=blocks,
            trotter_n=section.get("trotter_n", 1),
            optimizer=section.get("optimizer", "exact_diag_fallback"),
            descent_step=section.get("descent_step", 0.1),
            descent_max_iters=section.get("descent_max_iters", 500),
            tolerance=section.get("tolerance", 1e-8),
            max_cycles=section.get("max_cycles", 50),
        )
        flow = run_ducc_flow(am, cfg)
        converged = flow.converged
        results = {
            "energy": flow.energy,
            "block_energies": list(flow.block_energies),
            "cycles": flow.cycles,
        }
    elif task == "td":
        cfg = PropagatorConfig(
            dt=float(section["dt"]),
            t_final=float(section["t_final"]),
            mode=section.get("mode", "global"),
            amplitude_norm_bound=section.get("amplitude_norm_bound", 100.0),
        )
        blocks = _subalgebras(section, ham) if "subalgebras" in section else None
        manifold = (
            _resolve_manifold(section["manifold"], ham)
            if "manifold" in section else None
        )
        initial = TDState(0.0, ClusterOperator.zero(), 0.0)
        try:
            trajectory = propagate(initial, ham, cfg, manifold=manifold, blocks=blocks)
        except InstabilityError as exc:
            results = {"error": str(exc), "last_good_time": exc.last_good.t}
            return results, False, extra_files, ham, task
        manifold = manifold or union_manifold(blocks)
        energies = energy_trace(trajectory, ham, manifold)
        drift = max(abs(e - energies[0]) for e in energies)
        results = {
            "final_time": trajectory[-1].t,
            "energy_re": energies[-1].real,
            "energy_im": energies[-1].imag,
            "energy_drift": float(drift),
            "steps": len(trajectory) - 1,
        }
        extra_files["td_trajectory.csv"] = trajectory_csv(trajectory, ham, manifold)
    elif task == "estimate":
        blocks = _subalgebras(section, ham)
        cfg = FlowConfig(subalgebras=blocks)
        cost = cost_estimate(cfg, section.get("solver", "ccsdt"),
                             int(section["n_v"]),
                             alpha=section.get("alpha", 1.0),
                             beta=section.get("beta", 1.0))
        qubits = qubit_estimate(blocks)
        results = {
            "cost": cost,
            "qubits": {
                "per_block": list(qubits.per_block),
                "max": qubits.max_block,
                "full": qubits.full,
            },
        }
    else:
        raise ValueError(f"unknown task {task!r}")
    return results, converged, extra_files, ham, task


def _apply_overrides(config, overrides):
    for raw in overrides or ():
        key, _, raw_value = raw.partition("=")
        if not _:
            raise ValueError(f"override {raw!r} is not of the form key.path=value")
        try:
            value = json.loads(raw_value)
        except json.JSONDecodeError:
            value = raw_value
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return config


def run_command(args) -> int:
    try:
        config = json.loads(Path(args.config).read_text())
        config = _apply_overrides(config, args.set)
        out_dir = Path(config.get("output", "."))
        out_dir.mkdir(parents=True, exist_ok=True)
        results, converged, extra_files, ham, task = _run_task(config, out_dir)
    except (ValueError, KeyError, OSError, json.JSONDecodeError, FCIDumpError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    payload = {
        "version": __version__,
        "task": task,
        "config": config,
        "hamiltonian_summary": {
            "n_spatial": ham.n_spatial,
            "n_electrons": ham.n_electrons,
            "core_energy": ham.core_energy,
        },
        "results": results,
        "converged": bool(converged),
    }
    _write_result(out_dir / "result.json", payload)
    for name, content in extra_files.items():
        (out_dir / name).write_text(content)
    summary = results.get("energy")
    if summary is not None:
        print(f"{task}: energy = {summary:.12g}  converged = {converged}")
    else:
        print(f"{task}: converged = {converged}")
    return 0 if converged else NOT_CONVERGED


_COMPARABLE_TASKS = {"fci", "cc", "flow", "ducc"}


def compare_command(args) -> int:
    try:
        payloads = [json.loads(Path(p).read_text()) for p in args.results]
        if len(payloads) < 2:
            raise ValueError("need at least two result files")
        for payload in payloads:
            if payload.get("task") not in _COMPARABLE_TASKS:
                raise ValueError(
                    f"task {payload.get('task')!r} is not energy-comparable"
                )
        reference_ham = payloads[0]["config"].get("hamiltonian")
        for payload in payloads[1:]:
            if payload["config"].get("hamiltonian") != reference_ham:
                raise ValueError("result files describe different Hamiltonians")
        energies = [p["results"]["energy"] for p in payloads]
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    print(f"{'file':40s} {'task':8s} {'energy':>18s} {'|dE|':>12s} verdict")
    all_pass = True
    for path, payload, energy in zip(args.results, payloads, energies):
        delta = abs(energy - energies[0])
        ok = delta <= args.tolerance
        all_pass = all_pass and ok
        print(f"{Path(path).name:40s} {payload['task']:8s} {energy:18.12g} "
              f"{delta:12.3e} {'PASS' if ok else 'FAIL'}")
    return 0 if all_pass else NOT_CONVERGED


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ccflow",
        description="Sub-system coupled-cluster flows and unitary downfolding",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="execute a job config")
    run_p.add_argument("config", help="path to a JSON job configuration")
    run_p.add_argument("--set", action="append", metavar="KEY.PATH=VALUE",
                       help="override a config entry (JSON-parsed value)")
    run_p.set_defaults(func=run_command)
    cmp_p = sub.add_parser("compare", help="diff energies across result files")
    cmp_p.add_argument("results", nargs="+", help="result.json files")
    cmp_p.add_argument("--tolerance", type=float, default=1e-8)
    cmp_p.set_defaults(func=compare_command)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CCFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
