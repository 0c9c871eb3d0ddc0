"""Stationary sub-system flow driver.

A flow couples per-sub-algebra eigenproblems: each computational block
diagonalizes the externally-dressed Hamiltonian in its own complete
active space, cluster-analyzes the selected eigenvector, and feeds the
resulting amplitudes back into a shared pool.  Serial sweeps pass the
pool block to block within a cycle; parallel sweeps solve every block
against the cycle-start amplitudes and synchronize shared values
afterwards.  At a fixed point the blocks reproduce the connected CC
solution on the union of their internal manifolds.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .algebra import CASSpace, SubAlgebra, generate_cas, internal_manifold
from .cc import SolverConfig, reference_sector_space, solve_connected
from .cluster import (
    ClusterOperator,
    amplitude_matrix,
    cluster_analysis,
    exp_nilpotent,
    mbpt2_contribution,
)
from .errors import BlockError, IntruderStateError, NonRealRootError
from .fock import apply_annihilation, apply_creation, apply_excitation
from .integrals import HamiltonianSpec, assemble_matrix, check_space_size

REFERENCE_OVERLAP_FLOOR = 1e-8
IMAGINARY_TOLERANCE = 1e-10


@dataclass(frozen=True)
class EffectiveHamiltonian:
    """Externally-dressed Hamiltonian restricted to a sub-algebra's CAS."""

    matrix: np.ndarray
    cas: CASSpace
    generator: SubAlgebra
    source_t_ext: ClusterOperator
    hermitian: bool = False

    def __post_init__(self):
        if self.matrix.shape != (len(self.cas), len(self.cas)):
            raise ValueError("matrix dimension must equal the CAS dimension")


@dataclass
class FlowConfig:
    subalgebras: list[SubAlgebra]
    mode: str = "serial"
    ordering: str = "given"
    energy_tolerance: float = 1e-8
    amplitude_tolerance: float = 1e-7
    max_cycles: int = 100
    block_solver: str = "exact_diagonalization"
    max_internal_rank: int | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if not self.subalgebras:
            raise ValueError("a flow needs at least one sub-algebra")
        if self.mode not in ("serial", "parallel"):
            raise ValueError(f"unknown flow mode {self.mode!r}")
        if self.ordering not in ("given", "mbpt2"):
            raise ValueError(f"unknown ordering criterion {self.ordering!r}")
        if self.energy_tolerance <= 0 or self.amplitude_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.block_solver not in ("exact_diagonalization", "truncated"):
            raise ValueError(f"unknown block solver {self.block_solver!r}")
        if self.block_solver == "truncated" and self.max_internal_rank is None:
            raise ValueError("truncated block solver needs max_internal_rank")


@dataclass
class PoolEntry:
    value: float
    owner: int
    cycle: int


@dataclass
class FlowState:
    t_global: ClusterOperator
    common_pool: dict
    block_energies: list[float]
    cycle: int
    converged: bool
    history: list[dict]
    energy_expression: float = float("nan")
    energy_eigenvalue: float = float("nan")


def build_effective_hamiltonian(ham: HamiltonianSpec, t_ext: ClusterOperator,
                                h: SubAlgebra) -> EffectiveHamiltonian:
    """(P + Q_int) exp(-T_ext) H exp(T_ext) (P + Q_int) on the CAS of h.

    T_ext must not contain internal signatures of h.  With an empty T_ext
    this is the bare Hamiltonian assembled directly on the CAS.
    """
    if set(t_ext.support) & set(internal_manifold(h)):
        raise ValueError("external cluster operator carries internal signatures of h")
    cas = generate_cas(h)
    if len(t_ext) == 0:
        return EffectiveHamiltonian(
            assemble_matrix(cas.determinants, ham), cas, h, t_ext
        )
    space = tuple(reference_sector_space(ham))
    check_space_size(len(space))
    hm = assemble_matrix(space, ham)
    return _effective_from_ambient(hm, space, t_ext, cas, h)


def _effective_from_ambient(hm, space, t_ext, cas, h) -> EffectiveHamiltonian:
    index = {det: i for i, det in enumerate(space)}
    tm = amplitude_matrix(dict(t_ext.items()), space, index)
    dressed = exp_nilpotent(-tm) @ hm @ exp_nilpotent(tm)
    rows = [index[det] for det in cas.determinants]
    return EffectiveHamiltonian(dressed[np.ix_(rows, rows)], cas, h, t_ext)


def _select_ground_root(matrix):
    """Eigenpair with maximal reference overlap; ties break on lowest Re."""
    values, vectors = np.linalg.eig(matrix)
    overlaps = np.abs(vectors[0, :]) / np.linalg.norm(vectors, axis=0)
    order = sorted(
        range(len(values)),
        key=lambda k: (-round(float(overlaps[k]), 12), float(values[k].real)),
    )
    best = order[0]
    if overlaps[best] < REFERENCE_OVERLAP_FLOOR:
        raise IntruderStateError(
            f"best reference overlap {overlaps[best]:.3e} is below "
            f"{REFERENCE_OVERLAP_FLOOR:.0e}"
        )
    value = values[best]
    scale = max(1.0, float(np.abs(values).max()))
    if abs(value.imag) > IMAGINARY_TOLERANCE * scale:
        partner = values[np.argmin(np.abs(values - value.conjugate()))]
        raise NonRealRootError(
            f"selected root {value} is not real", roots=(value, partner)
        )
    vector = vectors[:, best]
    vector = vector / vector[0]
    if np.abs(vector.imag).max() > 1e-8 * max(1.0, np.abs(vector).max()):
        raise NonRealRootError(f"selected eigenvector is not real for root {value}",
                               roots=(value,))
    return float(value.real), vector.real


def solve_block(heff: EffectiveHamiltonian, cp_int: ClusterOperator | None = None):
    """Diagonalize the pool-dressed block and return (energy, new amplitudes).

    Amplitudes already fixed by the common pool enter through an extra
    similarity transform and are excluded from the returned operator.
    """
    cp_int = cp_int or ClusterOperator.zero()
    internal = internal_manifold(heff.generator)
    if not set(cp_int.support) <= set(internal):
        raise ValueError("common-pool amplitudes must be internal to the block")
    dets = heff.cas.determinants
    matrix = heff.matrix
    if len(cp_int):
        tm = amplitude_matrix(dict(cp_int.items()), dets, heff.cas.index)
        matrix = exp_nilpotent(-tm) @ matrix @ exp_nilpotent(tm)
    energy, vector = _select_ground_root(matrix)
    free = [sig for sig in internal if sig not in cp_int.support]
    return energy, cluster_analysis(vector, dets, free)


def truncated_block_solve(heff: EffectiveHamiltonian, max_internal_rank: int,
                          cp_int: ClusterOperator | None = None,
                          cfg: SolverConfig | None = None):
    """Approximate block solver: connected equations on rank-limited internals.

    Projecting the block equations on excitations of rank at most
    max_internal_rank couples them back to the discarded ranks, so this is
    no longer an eigenvalue problem; the connected iteration absorbs that
    coupling and the energy comes from the scalar projection.  Raises
    ConvergenceError when the iteration runs out of cycles.
    """
    cp_int = cp_int or ClusterOperator.zero()
    h = heff.generator
    if max_internal_rank >= 2 * h.x:
        raise ValueError(
            "no truncation requested (rank covers the full internal space); "
            "use solve_block"
        )
    if max_internal_rank < 1:
        raise ValueError("max_internal_rank must be at least 1")
    internal = [sig for sig in internal_manifold(h) if sig.rank <= max_internal_rank]
    if not set(cp_int.support) <= set(internal_manifold(h)):
        raise ValueError("common-pool amplitudes must be internal to the block")
    dets = heff.cas.determinants
    diag = np.real(np.diag(heff.matrix))
    index = heff.cas.index
    denominators = {}
    from .fock import apply_excitation

    for sig in internal:
        res = apply_excitation(sig, dets[0])
        if res is None or res[0] not in index:
            denominators[sig] = 1.0
        else:
            denominators[sig] = diag[index[res[0]]] - diag[0]
    solution = solve_connected(dets, heff.matrix, internal, denominators,
                               cfg or SolverConfig(), frozen=cp_int)
    if not solution.converged:
        from .errors import ConvergenceError

        raise ConvergenceError(
            f"truncated block did not converge in {solution.iterations} iterations",
            solution.history,
        )
    return solution.energy, solution.amplitudes


def order_subalgebras(subalgebras, ham: HamiltonianSpec, criterion: str = "mbpt2"):
    """Importance ordering of sub-algebras; stable under ties."""
    blocks = list(subalgebras)
    if criterion == "given":
        return blocks
    if criterion != "mbpt2":
        raise ValueError(f"unknown ordering criterion {criterion!r}")
    weights = [abs(mbpt2_contribution(h, ham)) for h in blocks]
    order = sorted(range(len(blocks)), key=lambda k: (-weights[k], k))
    return [blocks[k] for k in order]


def run_flow(ham: HamiltonianSpec, cfg: FlowConfig):
    """Drive the coupled block eigenproblems to a common fixed point.

    Returns (FlowState, final energy).  The final energy is the standard
    scalar-projection CC energy of the converged global amplitudes; the
    block-eigenvalue energy is reported alongside in the state.
    """
    blocks = order_subalgebras(cfg.subalgebras, ham, cfg.ordering)
    internals = [internal_manifold(h) for h in blocks]
    internal_sets = [set(m) for m in internals]
    cas_list = [generate_cas(h) for h in blocks]
    space = tuple(reference_sector_space(ham))
    check_space_size(len(space))
    hm = assemble_matrix(space, ham)

    amplitudes: dict = {}
    pool: dict = {}
    block_energies = [float("nan")] * len(blocks)
    history: list[dict] = []
    converged = False
    cycle = 0

    def _solve(k, heff, cp):
        try:
            if cfg.block_solver == "truncated":
                return truncated_block_solve(heff, cfg.max_internal_rank, cp,
                                             cfg.solver)
            return solve_block(heff, cp)
        except Exception as exc:
            raise BlockError(k, blocks[k].label(), exc) from exc

    for cycle in range(1, cfg.max_cycles + 1):
        previous_amplitudes = dict(amplitudes)
        previous_energies = list(block_energies)
        snapshot = dict(amplitudes) if cfg.mode == "parallel" else None
        cycle_results = []
        for k in range(len(blocks)):
            source = snapshot if cfg.mode == "parallel" else amplitudes
            t_ext = ClusterOperator(
                {sig: v for sig, v in source.items() if sig not in internal_sets[k]}
            )
            heff = _effective_from_ambient(hm, space, t_ext, cas_list[k], blocks[k])
            if cfg.mode == "serial":
                cp = ClusterOperator({
                    sig: amplitudes[sig]
                    for sig in internals[k]
                    if sig in pool and pool[sig].cycle == cycle
                })
                energy, t_x = _solve(k, heff, cp)
                for sig, value in t_x.items():
                    amplitudes[sig] = value
                    pool[sig] = PoolEntry(value, k, cycle)
            else:
                energy, t_x = _solve(k, heff, ClusterOperator.zero())
                cycle_results.append(t_x)
            block_energies[k] = energy
            history.append({
                "cycle": cycle,
                "block": k,
                "label": blocks[k].label(),
                "cas_dimension": len(cas_list[k]),
                "eigenvalue": energy,
            })
        if cfg.mode == "parallel":
            written = set()
            for k, t_x in enumerate(cycle_results):
                for sig, value in t_x.items():
                    if sig not in written:
                        amplitudes[sig] = value
                        pool[sig] = PoolEntry(value, k, cycle)
                        written.add(sig)
        amp_change = max(
            (abs(amplitudes.get(sig, 0.0) - previous_amplitudes.get(sig, 0.0))
             for sig in set(amplitudes) | set(previous_amplitudes)),
            default=0.0,
        )
        energy_change = max(
            abs(e - p) for e, p in zip(block_energies, previous_energies)
        ) if cycle > 1 else float("inf")
        history[-1]["amplitude_change"] = amp_change
        if energy_change <= cfg.energy_tolerance and amp_change <= cfg.amplitude_tolerance:
            converged = True
            break

    t_global = ClusterOperator(amplitudes)
    tm = amplitude_matrix(amplitudes, space)
    dressed_column = exp_nilpotent(-tm) @ (hm @ exp_nilpotent(tm)[:, 0])
    energy_expression = float(np.real(dressed_column[0]))
    state = FlowState(
        t_global=t_global,
        common_pool=pool,
        block_energies=list(block_energies),
        cycle=cycle,
        converged=converged,
        history=history,
        energy_expression=energy_expression,
        energy_eigenvalue=float(block_energies[0]),
    )
    return state, energy_expression


def pair_density(h_ij: SubAlgebra, coefficients) -> np.ndarray:
    """Virtual-virtual block of the 1-RDM of a pair block's CAS eigenvector.

    The generator must be a pair sub-algebra (two active occupied
    orbitals); the coefficient vector is taken over generate_cas(h_ij)
    and normalized before contraction.  Entries are spin-summed and
    indexed by the basis's virtual spatial orbitals in ascending order.
    """
    if h_ij.x != 2:
        raise ValueError("pair density requires a pair sub-algebra (|R| = 2)")
    cas = generate_cas(h_ij)
    vec = np.asarray(coefficients, dtype=float)
    if vec.shape != (len(cas),):
        raise ValueError("coefficient vector does not match the pair CAS")
    vec = vec / np.linalg.norm(vec)
    virtuals = h_ij.basis.virtual_spatial
    position = {m: i for i, m in enumerate(virtuals)}
    density = np.zeros((len(virtuals), len(virtuals)))
    for det, c in zip(cas.determinants, vec):
        if c == 0.0:
            continue
        for b in virtuals:
            for spin in (0, 1):
                removed = apply_annihilation(det, 2 * b + spin)
                if removed is None:
                    continue
                det1, ph1 = removed
                for a in virtuals:
                    added = apply_creation(det1, 2 * a + spin)
                    if added is None:
                        continue
                    det2, ph2 = added
                    row = cas.index.get(det2)
                    if row is not None:
                        density[position[a], position[b]] += ph1 * ph2 * c * vec[row]
    return 0.5 * (density + density.T)


def select_pno(density: np.ndarray, threshold: float):
    """Natural orbitals of a pair density, kept above an occupation threshold.

    Returns (rotation, kept): rotation columns are natural orbitals sorted
    by descending occupation number, kept the column indices retained.
    """
    density = np.asarray(density, dtype=float)
    if np.abs(density - density.T).max() > 1e-10:
        raise ValueError("pair density must be symmetric")
    occupations, vectors = np.linalg.eigh(density)
    order = np.argsort(occupations)[::-1]
    occupations = occupations[order]
    rotation = vectors[:, order]
    kept = tuple(i for i, occ in enumerate(occupations) if occ > threshold)
    return rotation, kept


def secondary_downfold(heff: EffectiveHamiltonian, f_ij: SubAlgebra,
                       delta_t: ClusterOperator) -> EffectiveHamiltonian:
    """Fold discarded internal amplitudes into a smaller active space.

    f_ij must share the parent generator's occupied set with a subset of
    its virtuals; delta_t may only carry the discarded internal
    signatures.  The parent block eigenproblem restricted this way
    reproduces the parent energy exactly when delta_t is the converged
    discarded amplitude set.
    """
    parent = heff.generator
    if f_ij.active_occupied != parent.active_occupied:
        raise ValueError("secondary downfold must keep the parent occupied set")
    if not f_ij.virtual_resolved <= parent.virtual_resolved:
        raise ValueError("kept virtuals must be a subset of the parent's")
    discarded = set(internal_manifold(parent)) - set(internal_manifold(f_ij))
    if not set(delta_t.support) <= discarded:
        raise ValueError("delta amplitudes must live on the discarded signatures")
    dets = heff.cas.determinants
    tm = amplitude_matrix(dict(delta_t.items()), dets, heff.cas.index)
    dressed = exp_nilpotent(-tm) @ heff.matrix @ exp_nilpotent(tm)
    sub_cas = generate_cas(f_ij)
    rows = [heff.cas.index[det] for det in sub_cas.determinants]
    return EffectiveHamiltonian(
        dressed[np.ix_(rows, rows)], sub_cas, f_ij,
        heff.source_t_ext.updated(delta_t),
    )


def cost_estimate(cfg: FlowConfig, solver: str, n_v: int,
                  alpha: float = 1.0, beta: float = 1.0) -> float:
    """Per-iteration cost bound of a flow solved with CCSDT or CCSDTQ blocks.

    alpha * M * C(y, 3) * n_v**2 for ccsdt and beta * M * C(y, 4) * n_v**2
    for ccsdtq, with y the (uniform) active-virtual count per block.
    """
    ys = {h.y for h in cfg.subalgebras}
    if len(ys) != 1:
        raise ValueError("cost bound assumes a uniform active-virtual count")
    y = ys.pop()
    if solver == "ccsdt":
        order, prefactor = 3, alpha
    elif solver == "ccsdtq":
        order, prefactor = 4, beta
    else:
        raise ValueError(f"unknown block solver {solver!r}")
    if y < order:
        warnings.warn(
            f"active-virtual count {y} below excitation order {order}; cost is zero"
        )
        return 0.0
    return prefactor * len(cfg.subalgebras) * comb(y, order) * n_v**2


def flow_report(state: FlowState) -> str:
    """Structured text report: per-cycle block records and the dual energies."""
    lines = ["cycle block label cas_dim eigenvalue amplitude_change"]
    for record in state.history:
        lines.append(
            f"{record['cycle']} {record['block']} {record['label']} "
            f"{record['cas_dimension']} {record['eigenvalue']:.12g} "
            f"{record.get('amplitude_change', float('nan')):.3e}"
        )
    lines.append(f"converged {state.converged} after {state.cycle} cycles")
    lines.append(f"energy (scalar projection) {state.energy_expression:.12g}")
    lines.append(f"energy (block eigenvalue)  {state.energy_eigenvalue:.12g}")
    spread = max(state.block_energies) - min(state.block_energies)
    lines.append(f"block eigenvalue spread    {spread:.3e}")
    return "\n".join(lines) + "\n"
