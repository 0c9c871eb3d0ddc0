"""Global connected coupled-cluster solver over arbitrary excitation
manifolds, plus the full-CI oracle.

Residuals are evaluated through the exact similarity transform on the
reference particle/spin sector, never through truncated contractions, so
a full-rank manifold reproduces FCI to solver precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cluster import (
    ClusterOperator,
    amplitude_matrix,
    exp_nilpotent,
    mp_denominator,
)
from .errors import DivergenceError, IntruderStateError
from .fock import apply_excitation, enumerate_sector
from .integrals import (
    HamiltonianSpec,
    assemble_matrix,
    check_space_size,
    fock_matrix,
)


@dataclass
class SolverConfig:
    max_iterations: int = 100
    residual_tolerance: float = 1e-10
    diis_depth: int = 6
    level_shift: float = 0.0

    def __post_init__(self):
        if self.residual_tolerance <= 0:
            raise ValueError("residual tolerance must be positive")


@dataclass
class CCSolution:
    energy: float
    amplitudes: ClusterOperator
    residual_norm: float
    iterations: int
    converged: bool
    history: list[tuple[int, float, float]] = field(default_factory=list)


@dataclass
class FCIResult:
    energy: float
    coefficients: np.ndarray
    determinants: tuple[int, ...]


class Diis:
    """Pulay extrapolation over recent (amplitude, residual) vector pairs."""

    def __init__(self, depth: int):
        self.depth = depth
        self._amplitudes: list[np.ndarray] = []
        self._residuals: list[np.ndarray] = []

    def push(self, amplitudes: np.ndarray, residual: np.ndarray) -> None:
        self._amplitudes.append(amplitudes.copy())
        self._residuals.append(residual.copy())
        if len(self._amplitudes) > self.depth:
            self._amplitudes.pop(0)
            self._residuals.pop(0)

    def extrapolate(self) -> np.ndarray | None:
        m = len(self._amplitudes)
        if m < 2:
            return None
        b = np.empty((m + 1, m + 1))
        b[:m, :m] = [[float(np.dot(ri, rj).real) for rj in self._residuals]
                     for ri in self._residuals]
        b[m, :], b[:, m], b[m, m] = -1.0, -1.0, 0.0
        rhs = np.zeros(m + 1)
        rhs[m] = -1.0
        try:
            coeff = np.linalg.solve(b, rhs)[:m]
        except np.linalg.LinAlgError:
            return None
        return sum(c * t for c, t in zip(coeff, self._amplitudes))


def reference_sector_space(ham: HamiltonianSpec) -> list[int]:
    """Determinants of the closed-shell reference sector (S_z = 0)."""
    n = ham.n_electrons // 2
    return enumerate_sector(ham.n_spatial, n, n)


def union_manifold(subalgebras) -> list:
    """Unique internal excitations of all sub-algebras, deterministic order."""
    from .algebra import internal_manifold

    sigs = set()
    for h in subalgebras:
        sigs.update(internal_manifold(h))
    return sorted(sigs, key=lambda s: s.sort_key())


def solve_fci(ham: HamiltonianSpec, ms2: int = 0) -> FCIResult:
    """Lowest eigenpair of the (n_electrons, ms2) sector matrix."""
    if (ham.n_electrons + ms2) % 2:
        raise ValueError("ms2 parity incompatible with the electron count")
    n_alpha = (ham.n_electrons + ms2) // 2
    n_beta = ham.n_electrons - n_alpha
    space = enumerate_sector(ham.n_spatial, n_alpha, n_beta)
    check_space_size(len(space))
    matrix = assemble_matrix(space, ham)
    values, vectors = np.linalg.eigh(matrix)
    vec = vectors[:, 0]
    ref = ham.basis.reference()
    try:
        anchor = space.index(ref)
    except ValueError:
        anchor = int(np.argmax(np.abs(vec)))
    if abs(vec[anchor]) < 1e-12:
        anchor = int(np.argmax(np.abs(vec)))
    if vec[anchor] < 0:
        vec = -vec
    return FCIResult(float(values[0]), vec, tuple(space))


def _hbar_reference_column(hm: np.ndarray, tm: np.ndarray) -> np.ndarray:
    """Column <.|exp(-T) H exp(T)|Phi> over the space."""
    ket = exp_nilpotent(tm)[:, 0]
    return exp_nilpotent(-tm) @ (hm @ ket)


def _prepare_rows(manifold, space, index, ref):
    """(row, phase) of each signature's image on the reference, or None."""
    rows = {}
    for sig in manifold:
        res = apply_excitation(sig, ref)
        if res is None:
            rows[sig] = None
            continue
        det, phase = res
        row = index.get(det)
        rows[sig] = None if row is None else (row, phase)
    return rows


def solve_connected(space, hm, manifold, denominators, cfg,
                    frozen=None, initial=None):
    """Quasi-Newton iteration for the connected equations on a manifold.

    The Hamiltonian is given as a dense matrix over `space` (reference
    first); `frozen` amplitudes enter every transform but are never
    updated.  Returns a CCSolution for the free amplitudes only.
    Signatures whose reference image falls outside the space are
    symmetry-frozen at zero.
    """
    cfg = cfg or SolverConfig()
    frozen = frozen or ClusterOperator.zero()
    space = tuple(space)
    index = {det: i for i, det in enumerate(space)}
    ref = space[0]
    manifold = [sig for sig in manifold if sig not in frozen.support]
    rows = _prepare_rows(manifold, space, index, ref)
    active = [sig for sig in manifold if rows[sig] is not None]

    t = {sig: 0.0 for sig in active}
    if initial is not None:
        for sig in active:
            t[sig] = initial.get(sig, 0.0)
    denom = np.array([denominators[sig] + cfg.level_shift for sig in active])
    diis = Diis(cfg.diis_depth) if cfg.diis_depth > 0 else None
    history = []
    energy = float("nan")
    residual_norm = float("inf")
    growth_streak = 0
    converged = False
    iteration = 0
    for iteration in range(1, cfg.max_iterations + 1):
        full = dict(frozen.items())
        full.update(t)
        tm = amplitude_matrix(full, space, index)
        column = _hbar_reference_column(hm, tm)
        energy = column[0]
        residual = np.array([rows[sig][1] * column[rows[sig][0]] for sig in active])
        previous_norm = residual_norm
        residual_norm = float(np.abs(residual).max()) if active else 0.0
        history.append((iteration, complex(energy) if np.iscomplexobj(column)
                        else float(energy), residual_norm))
        if residual_norm <= cfg.residual_tolerance:
            converged = True
            break
        growth_streak = growth_streak + 1 if residual_norm > previous_norm else 0
        if growth_streak >= 10:
            raise DivergenceError(
                f"residual norm grew for {growth_streak} consecutive iterations",
                history,
            )
        vec = np.array([t[sig] for sig in active])
        vec = vec - residual / denom
        if diis is not None and iteration >= 2:
            diis.push(vec, residual)
            extrapolated = diis.extrapolate()
            if extrapolated is not None:
                vec = extrapolated
        t = dict(zip(active, vec))
    amplitudes = ClusterOperator({sig: v for sig, v in t.items() if v != 0})
    return CCSolution(
        energy=float(np.real(energy)),
        amplitudes=amplitudes,
        residual_norm=residual_norm,
        iterations=iteration,
        converged=converged,
        history=history,
    )


def mp_denominators(ham: HamiltonianSpec, manifold):
    """Moller-Plesset preconditioner: particle minus hole Fock diagonals."""
    energies = np.diag(fock_matrix(ham))
    return {sig: -mp_denominator(sig, energies) for sig in manifold}


def solve_cc(ham: HamiltonianSpec, manifold, cfg: SolverConfig | None = None,
             initial: ClusterOperator | None = None) -> CCSolution:
    """Solve the connected CC equations on the given excitation manifold."""
    manifold = list(manifold)
    if not manifold:
        raise ValueError("manifold must be non-empty")
    space = reference_sector_space(ham)
    check_space_size(len(space))
    hm = assemble_matrix(space, ham)
    denominators = mp_denominators(ham, manifold)
    return solve_connected(space, hm, manifold, denominators,
                           cfg or SolverConfig(), initial=initial)


def cc_residual(t: ClusterOperator, manifold, ham: HamiltonianSpec) -> dict:
    """r_mu = <Phi_mu|exp(-T) H exp(T)|Phi> for every mu in the manifold."""
    space = tuple(reference_sector_space(ham))
    index = {det: i for i, det in enumerate(space)}
    hm = assemble_matrix(space, ham)
    tm = amplitude_matrix(dict(t.items()), space, index)
    column = _hbar_reference_column(hm, tm)
    rows = _prepare_rows(manifold, space, index, space[0])
    return {
        sig: (0.0 if rows[sig] is None else rows[sig][1] * column[rows[sig][0]])
        for sig in manifold
    }


def cc_energy(t: ClusterOperator, ham: HamiltonianSpec) -> float:
    """<Phi|exp(-T) H exp(T)|Phi>."""
    space = tuple(reference_sector_space(ham))
    hm = assemble_matrix(space, ham)
    tm = amplitude_matrix(dict(t.items()), space)
    return float(np.real(_hbar_reference_column(hm, tm)[0]))


def iteration_history_csv(history) -> str:
    """CSV dump of (iteration, energy, residual norm) records."""
    lines = ["iteration,energy,residual_norm"]
    for iteration, energy, norm in history:
        lines.append(f"{iteration},{np.real(energy):.12g},{norm:.12g}")
    return "\n".join(lines) + "\n"
