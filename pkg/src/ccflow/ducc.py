"""Hermitian downfolding with a double-exponential unitary Ansatz, and the
Trotterized block flow that couples reduced active spaces.

Anti-Hermitian generators do not commute, so the block flow linearizes
each eigenproblem around the previous cycle's generators through a
Trotter product; every block then minimizes the downfolded quadratic
form over its own internal parameters, with a common pool freezing
shared values inside a cycle.  Classical optimizers stand in for the
quantum eigensolver over the identical parameter set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .algebra import SubAlgebra, generate_cas, internal_manifold
from .cluster import ClusterOperator, OperatorMatrix, amplitude_matrix, cluster_analysis
from .errors import BlockError, IntruderStateError
from .fock import format_determinant

EXPM_SERIES_TOLERANCE = 1e-14


@dataclass(frozen=True)
class AntiHermitianCluster:
    """sigma = T - T(dagger), stored through the excitation-part amplitudes."""

    amplitudes: ClusterOperator

    def __post_init__(self):
        if any(isinstance(v, complex) for _, v in self.amplitudes.items()):
            raise ValueError("anti-Hermitian generators are real on this path")

    @property
    def support(self):
        return self.amplitudes.support

    def matrix(self, space, index=None) -> np.ndarray:
        tm = amplitude_matrix(dict(self.amplitudes.items()), space, index)
        return tm - tm.T


def make_sigma(t: ClusterOperator) -> AntiHermitianCluster:
    """Lowest-order anti-Hermitian generator from cluster amplitudes."""
    return AntiHermitianCluster(ClusterOperator(dict(t.items())))


def expm_scaled_taylor(a: np.ndarray, tolerance: float = EXPM_SERIES_TOLERANCE,
                       max_terms: int = 120) -> np.ndarray:
    """Matrix exponential by scaling-and-squaring with a Taylor series."""
    a = np.asarray(a, dtype=float)
    norm = np.linalg.norm(a, np.inf)
    squarings = max(0, int(np.ceil(np.log2(norm / 0.5)))) if norm > 0.5 else 0
    scaled = a / (2.0 ** squarings)
    out = np.eye(a.shape[0])
    term = np.eye(a.shape[0])
    for k in range(1, max_terms + 1):
        term = term @ scaled / k
        out += term
        if np.linalg.norm(term, np.inf) < tolerance:
            break
    else:
        raise ArithmeticError("matrix exponential series did not converge")
    for _ in range(squarings):
        out = out @ out
    return out


def unitary_transform(am: OperatorMatrix, sigma: AntiHermitianCluster) -> OperatorMatrix:
    """exp(-sigma) A exp(sigma); the inverse is the transpose by antisymmetry."""
    rotation = expm_scaled_taylor(sigma.matrix(am.space, am.index))
    return OperatorMatrix(rotation.T @ am.matrix @ rotation, am.space)


@dataclass(frozen=True)
class HermitianEffective:
    """Symmetric downfolded Hamiltonian over a CAS."""

    matrix: np.ndarray
    cas: object
    generator: SubAlgebra
    provenance: str = "exact_unitary"

    def __post_init__(self):
        defect = float(np.abs(self.matrix - self.matrix.T).max())
        if defect > 1e-10:
            raise ValueError(f"downfolded matrix asymmetric by {defect:.3e}")

    @property
    def symmetry_defect(self) -> float:
        return float(np.abs(self.matrix - self.matrix.T).max())


def downfold(am: OperatorMatrix, sigma_ext: AntiHermitianCluster,
             h: SubAlgebra) -> HermitianEffective:
    """Unitary downfolding of A into the CAS of h.

    Every external generator amplitude must carry at least one spin
    orbital outside the active set of h.
    """
    active = h.active_spin_orbitals
    for sig in sigma_ext.support:
        if set(sig.holes) | set(sig.particles) <= active:
            raise ValueError(
                f"external generator {sig} carries active indices only"
            )
    transformed = unitary_transform(am, sigma_ext)
    cas = generate_cas(h)
    try:
        rows = [am.index[det] for det in cas.determinants]
    except KeyError as exc:
        raise ValueError("CAS determinant missing from A's space") from exc
    return HermitianEffective(transformed.matrix[np.ix_(rows, rows)], cas, h)


def overcount_corrector(subalgebras, sigmas) -> AntiHermitianCluster:
    """Correction X cancelling multiply-counted shared generator amplitudes.

    For a signature internal to k > 1 blocks the sum of block generators
    counts it k times; X subtracts (k - 1) copies of the owner value,
    the owner being the earliest block whose internal manifold holds it.
    """
    if len(subalgebras) != len(sigmas):
        raise ValueError("one generator per sub-algebra required")
    containing: dict = {}
    for i, h in enumerate(subalgebras):
        for sig in internal_manifold(h):
            containing.setdefault(sig, []).append(i)
    correction = {}
    for sig, owners in containing.items():
        if len(owners) < 2:
            continue
        value = sigmas[owners[0]].amplitudes.get(sig, 0.0)
        if value != 0.0:
            correction[sig] = -(len(owners) - 1) * value
    return AntiHermitianCluster(ClusterOperator(correction))


@dataclass
class TrotterFlowConfig:
    subalgebras: list[SubAlgebra]
    trotter_n: int = 1
    optimizer: str = "exact_diag_fallback"
    descent_step: float = 0.1
    descent_max_iters: int = 500
    gradient_tolerance: float = 1e-8
    tolerance: float = 1e-8
    max_cycles: int = 50

    def __post_init__(self):
        if not self.subalgebras:
            raise ValueError("a flow needs at least one sub-algebra")
        if self.trotter_n < 1:
            raise ValueError("the Trotter factor count must be at least 1")
        if self.optimizer not in ("exact_diag_fallback", "amplitude_descent"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def build_gamma(am: OperatorMatrix, sigmas, i: int,
                cfg: TrotterFlowConfig) -> OperatorMatrix:
    """Trotter-linearized block Hamiltonian for block i at frozen generators.

    G = (exp(R/N) exp(sigma_i/N))**(N-1) exp(R/N) with R the corrected sum
    of the other blocks' generators; the result is the CAS restriction of
    G^T A G (G is orthogonal, so the inverse is the transpose).
    """
    blocks = cfg.subalgebras
    n = cfg.trotter_n
    corrector = overcount_corrector(blocks, sigmas)
    rest = corrector.matrix(am.space, am.index)
    for j, sigma in enumerate(sigmas):
        if j != i:
            rest += sigma.matrix(am.space, am.index)
    own = sigmas[i].matrix(am.space, am.index)
    exp_rest = expm_scaled_taylor(rest / n)
    exp_own = expm_scaled_taylor(own / n)
    g = np.eye(am.matrix.shape[0])
    for _ in range(n - 1):
        g = g @ exp_rest @ exp_own
    g = g @ exp_rest
    gamma = g.T @ am.matrix @ g
    cas = generate_cas(blocks[i])
    rows = [am.index[det] for det in cas.determinants]
    return OperatorMatrix(gamma[np.ix_(rows, rows)], cas.determinants)


@dataclass
class BlockMinimum:
    energy: float
    theta_x: dict
    converged: bool


def _block_parameters(h: SubAlgebra, space):
    index = {det: i for i, det in enumerate(space)}
    from .fock import apply_excitation

    params = []
    for sig in internal_manifold(h):
        if not sig.conserves_sz:
            continue
        res = apply_excitation(sig, space[0])
        if res is not None and res[0] in index:
            params.append(sig)
    return params


def minimize_block(gamma: OperatorMatrix, h_i: SubAlgebra, theta_cp,
                   cfg: TrotterFlowConfig) -> BlockMinimum:
    """Minimize <Phi(theta)|Gamma_sym|Phi(theta)> over the free parameters.

    Phi(theta) = exp(sigma_int(theta)/N)|Phi> on the block CAS; frozen
    common-pool values stay fixed.  The exact-diagonalization fallback
    instead takes the ground root of the symmetrized matrix and recovers
    parameters by projection (N times the CI cluster amplitudes).
    """
    space = gamma.space
    sym = 0.5 * (gamma.matrix + gamma.matrix.T)
    n = cfg.trotter_n
    theta_cp = dict(theta_cp or {})
    params = _block_parameters(h_i, space)
    free = [sig for sig in params if sig not in theta_cp]

    def state_vector(theta):
        combined = dict(theta_cp)
        combined.update(theta)
        sig_m = amplitude_matrix(combined, space, gamma.index)
        return expm_scaled_taylor((sig_m - sig_m.T) / n)[:, 0]

    def energy_of(theta):
        vec = state_vector(theta)
        return float(vec @ sym @ vec)

    if not free:
        return BlockMinimum(energy_of({}), {}, True)

    if cfg.optimizer == "exact_diag_fallback":
        values, vectors = np.linalg.eigh(sym)
        overlaps = np.abs(vectors[0, :])
        order = sorted(range(len(values)),
                       key=lambda k: (-round(float(overlaps[k]), 12), values[k]))
        best = order[0]
        if overlaps[best] < 1e-8:
            raise IntruderStateError("no eigenvector with reference character")
        vector = vectors[:, best] / vectors[0, best]
        analysis = cluster_analysis(vector, space, free)
        theta = {sig: n * value for sig, value in analysis.items()}
        return BlockMinimum(float(values[best]), theta, True)

    theta = {sig: 0.0 for sig in free}
    step = cfg.descent_step
    gradient_norm = float("inf")
    fd = 1e-6
    for _ in range(cfg.descent_max_iters):
        gradient = {}
        for sig in free:
            up = dict(theta)
            up[sig] = theta[sig] + fd
            down = dict(theta)
            down[sig] = theta[sig] - fd
            gradient[sig] = (energy_of(up) - energy_of(down)) / (2 * fd)
        gradient_norm = max(abs(g) for g in gradient.values())
        if gradient_norm <= cfg.gradient_tolerance:
            break
        for sig in free:
            theta[sig] -= step * gradient[sig]
    converged = gradient_norm <= cfg.gradient_tolerance
    return BlockMinimum(energy_of(theta), theta, converged)


@dataclass
class DuccFlowResult:
    block_energies: list[float]
    sigmas: list[AntiHermitianCluster]
    energy: float
    cycles: int
    converged: bool
    history: list[dict] = field(default_factory=list)


def run_ducc_flow(am: OperatorMatrix, cfg: TrotterFlowConfig) -> DuccFlowResult:
    """Cycle Trotterized block minimizations to self-consistency.

    Blocks run in the given (importance) order; within a cycle the first
    writer of a shared parameter freezes it for later blocks.  The final
    energy is the expectation value of the first block's downfolded
    Hamiltonian rebuilt from the converged generators.
    """
    blocks = cfg.subalgebras
    internals = [set(internal_manifold(h)) for h in blocks]
    sigmas = [AntiHermitianCluster(ClusterOperator.zero()) for _ in blocks]
    block_energies = [float("nan")] * len(blocks)
    history = []
    converged = False
    cycle = 0
    for cycle in range(1, cfg.max_cycles + 1):
        frozen_previous = list(sigmas)
        written: dict = {}
        new_sigmas = []
        for i in range(len(blocks)):
            try:
                gamma = build_gamma(am, frozen_previous, i, cfg)
                theta_cp = {sig: written[sig] for sig in internals[i]
                            if sig in written}
                result = minimize_block(gamma, blocks[i], theta_cp, cfg)
            except Exception as exc:
                raise BlockError(i, blocks[i].label(), exc) from exc
            combined = dict(theta_cp)
            combined.update(result.theta_x)
            new_sigmas.append(AntiHermitianCluster(ClusterOperator(combined)))
            for sig, value in result.theta_x.items():
                written.setdefault(sig, value)
            block_energies[i] = result.energy
            history.append({
                "cycle": cycle, "block": i, "label": blocks[i].label(),
                "energy": result.energy, "converged": result.converged,
            })
        change = max(
            new.amplitudes.max_abs_difference(old.amplitudes)
            for new, old in zip(new_sigmas, sigmas)
        )
        sigmas = new_sigmas
        if change <= cfg.tolerance:
            converged = True
            break
    gamma_1 = build_gamma(am, sigmas, 0, cfg)
    sig_m = sigmas[0].matrix(gamma_1.space, gamma_1.index)
    vec = expm_scaled_taylor(sig_m / cfg.trotter_n)[:, 0]
    energy = float(vec @ gamma_1.matrix @ vec)
    return DuccFlowResult(list(block_energies), sigmas, energy, cycle,
                          converged, history)


@dataclass(frozen=True)
class QubitEstimate:
    per_block: tuple[int, ...]
    max_block: int
    full: int


def qubit_estimate(subalgebras) -> QubitEstimate:
    """Qubits per block (active spin orbitals) and the register bound.

    The flow needs max_block qubits; the undecomposed problem needs the
    full spin-orbital count, which is strictly larger whenever every
    block is a proper sub-space.
    """
    blocks = list(subalgebras)
    if not blocks:
        return QubitEstimate((), 0, 0)
    per_block = tuple(2 * (h.x + h.y) for h in blocks)
    return QubitEstimate(per_block, max(per_block),
                         blocks[0].basis.n_spin_orbitals)


def export_downfolded(effective: HermitianEffective) -> str:
    """Structured-text export of a downfolded Hamiltonian.

    Contains the dense matrix with determinant labels plus the
    reference-column projections used for downstream qubit mapping: the
    scalar part and the one- and two-body blocks written in the amplitude
    line format 'k holes particles value'.
    """
    cas = effective.cas
    dets = cas.determinants
    n_spin = effective.generator.basis.n_spin_orbitals
    lines = [f"dimension {len(dets)}"]
    lines.append("determinants")
    for det in dets:
        lines.append(format_determinant(det, n_spin))
    lines.append("matrix")
    for row in effective.matrix:
        lines.append(" ".join(repr(float(v)) for v in row))
    lines.append(f"scalar {effective.matrix[0, 0]!r}")
    ref = dets[0]
    from .fock import apply_excitation

    one, two = [], []
    for sig in internal_manifold(effective.generator):
        if sig.rank > 2:
            continue
        res = apply_excitation(sig, ref)
        if res is None or res[0] not in cas.index:
            continue
        det, phase = res
        value = phase * effective.matrix[cas.index[det], 0]
        idx = " ".join(str(p) for p in sig.holes + sig.particles)
        (one if sig.rank == 1 else two).append(f"{sig.rank} {idx} {float(value)!r}")
    lines.append("one_body")
    lines.extend(one)
    lines.append("two_body")
    lines.extend(two)
    return "\n".join(lines) + "\n"
