"""Real-time propagation of cluster amplitudes (hbar = 1).

The global mode integrates the connected time-dependent equations with
fixed-step RK4.  The sub-system flow mode computes every stage
derivative block by block through the dressed effective Hamiltonians:
the block equation i d/dt e^{T_int}|Phi> = H_eff e^{T_int}|Phi> is
pulled back to amplitude derivatives via the differential of the
cluster analysis, and shared amplitudes take the earliest block's value.
Both modes integrate the same coupled system, so trajectories agree to
integrator accuracy; the block route exercises the equivalence of the
effective-Hamiltonian representation at every stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algebra import generate_cas, internal_manifold
from .cc import reference_sector_space, union_manifold
from .cluster import ClusterOperator, OperatorMatrix, amplitude_matrix, exp_nilpotent
from .errors import InstabilityError
from .fock import apply_excitation
from .integrals import HamiltonianSpec, assemble_matrix, check_space_size


@dataclass(frozen=True)
class TDState:
    t: float
    amplitudes: ClusterOperator
    phase: complex


@dataclass
class PropagatorConfig:
    dt: float
    t_final: float
    method: str = "rk4"
    mode: str = "global"
    amplitude_norm_bound: float = 100.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("time step must be positive")
        if self.method != "rk4":
            raise ValueError(f"unknown integrator {self.method!r}")
        if self.mode not in ("global", "flow_serial"):
            raise ValueError(f"unknown propagation mode {self.mode!r}")


_RK4_NODES = (0.0, 0.5, 0.5, 1.0)
_RK4_WEIGHTS = (1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0)


class _Workspace:
    """Precomputed sector data shared by the propagation routines."""

    def __init__(self, ham: HamiltonianSpec, manifold, blocks=None):
        self.space = tuple(reference_sector_space(ham))
        check_space_size(len(self.space))
        self.index = {det: i for i, det in enumerate(self.space)}
        self.hm = assemble_matrix(self.space, ham)
        ref = self.space[0]
        self.signatures = []
        self.rows = []
        self.phases = []
        for sig in manifold:
            res = apply_excitation(sig, ref)
            if res is None or res[0] not in self.index:
                continue
            self.signatures.append(sig)
            self.rows.append(self.index[res[0]])
            self.phases.append(res[1])
        self.rows = np.array(self.rows, dtype=int)
        self.phases = np.array(self.phases, dtype=float)
        self.blocks = []
        if blocks:
            positions = {sig: i for i, sig in enumerate(self.signatures)}
            for h in blocks:
                cas = generate_cas(h)
                cas_rows = np.array([self.index[d] for d in cas.determinants])
                internal = set(internal_manifold(h))
                mask = np.array([sig in internal for sig in self.signatures])
                cas_index = {d: i for i, d in enumerate(cas.determinants)}
                sig_cas = []
                for sig in self.signatures:
                    if sig in internal:
                        det, phase = apply_excitation(sig, ref)
                        sig_cas.append((positions[sig], cas_index[det], phase))
                self.blocks.append((cas.determinants, cas_rows, mask, sig_cas))

    def amplitude_map(self, vector):
        return {sig: vector[i] for i, sig in enumerate(self.signatures)}

    def rhs_global(self, vector):
        tm = amplitude_matrix(self.amplitude_map(vector), self.space, self.index)
        if not np.iscomplexobj(tm):
            tm = tm.astype(complex)
        ket = exp_nilpotent(tm)[:, 0]
        column = exp_nilpotent(-tm) @ (self.hm @ ket)
        derivative = -1j * self.phases * column[self.rows]
        return derivative, -1j * column[0]

    def rhs_flow(self, vector):
        full = self.amplitude_map(vector)
        derivative = np.zeros(len(self.signatures), dtype=complex)
        written = np.zeros(len(self.signatures), dtype=bool)
        phase_derivative = None
        tm_full = amplitude_matrix(full, self.space, self.index)
        if not np.iscomplexobj(tm_full):
            tm_full = tm_full.astype(complex)
        for dets, cas_rows, mask, sig_cas in self.blocks:
            external = {sig: full[sig]
                        for i, sig in enumerate(self.signatures) if not mask[i]}
            tm_ext = amplitude_matrix(external, self.space, self.index)
            if not np.iscomplexobj(tm_ext):
                tm_ext = tm_ext.astype(complex)
            dressed = exp_nilpotent(-tm_ext) @ self.hm @ exp_nilpotent(tm_ext)
            heff = dressed[np.ix_(cas_rows, cas_rows)]
            internal_map = {sig: full[sig]
                            for i, sig in enumerate(self.signatures) if mask[i]}
            tm_int = amplitude_matrix(internal_map, dets)
            if not np.iscomplexobj(tm_int):
                tm_int = tm_int.astype(complex)
            ket = exp_nilpotent(tm_int)[:, 0]
            action = heff @ ket
            if phase_derivative is None:
                phase_derivative = -1j * action[0]
            ket_derivative = -1j * (action - action[0] * ket)
            pulled = exp_nilpotent(-tm_int) @ ket_derivative
            for position, cas_row, phase in sig_cas:
                if not written[position]:
                    derivative[position] = pulled[cas_row] / phase
                    written[position] = True
        return derivative, phase_derivative


def td_rhs_global(state: TDState, ham: HamiltonianSpec, manifold):
    """i t-dot = residual column of the instantaneous similarity transform."""
    work = _Workspace(ham, list(manifold))
    vector = np.array(
        [complex(state.amplitudes.get(sig, 0.0)) for sig in work.signatures]
    )
    derivative, phase_derivative = work.rhs_global(vector)
    return (
        {sig: derivative[i] for i, sig in enumerate(work.signatures)},
        phase_derivative,
    )


def build_td_effective(h, state: TDState, ham: HamiltonianSpec) -> OperatorMatrix:
    """CAS restriction of exp(-T_ext(t)) H exp(T_ext(t)) at the state's time.

    The state's amplitudes are the external cluster operator and must not
    touch internal signatures of h.
    """
    t_ext = state.amplitudes
    if set(t_ext.support) & set(internal_manifold(h)):
        raise ValueError("external amplitudes carry internal signatures of h")
    space = tuple(reference_sector_space(ham))
    index = {det: i for i, det in enumerate(space)}
    hm = assemble_matrix(space, ham)
    tm = amplitude_matrix(dict(t_ext.items()), space, index).astype(complex)
    dressed = exp_nilpotent(-tm) @ hm @ exp_nilpotent(tm)
    cas = generate_cas(h)
    rows = [index[d] for d in cas.determinants]
    return OperatorMatrix(dressed[np.ix_(rows, rows)], cas.determinants)


def propagate(initial: TDState, ham: HamiltonianSpec, cfg: PropagatorConfig,
              manifold=None, blocks=None) -> list[TDState]:
    """Fixed-step RK4 trajectory, sampled every step (initial state included).

    Global mode needs a manifold (or blocks, whose union is taken); the
    serial flow mode needs blocks.  A step that pushes any amplitude
    beyond the configured bound aborts with the last good state attached.
    """
    if cfg.mode == "flow_serial":
        if not blocks:
            raise ValueError("flow-mode propagation needs sub-algebra blocks")
        manifold = union_manifold(blocks)
    elif manifold is None:
        if not blocks:
            raise ValueError("global propagation needs a manifold or blocks")
        manifold = union_manifold(blocks)
    work = _Workspace(ham, list(manifold), blocks if cfg.mode == "flow_serial" else None)
    rhs = work.rhs_flow if cfg.mode == "flow_serial" else work.rhs_global

    vector = np.array(
        [complex(initial.amplitudes.get(sig, 0.0)) for sig in work.signatures]
    )
    phase = complex(initial.phase)
    t = initial.t
    steps = int(round(cfg.t_final / cfg.dt))
    trajectory = [TDState(t, ClusterOperator(work.amplitude_map(vector)), phase)]
    for _ in range(steps):
        stage_derivatives = []
        stage_phase = []
        for node, prev in zip(_RK4_NODES, [None, *range(3)]):
            if prev is None:
                stage_vector = vector
            else:
                stage_vector = vector + cfg.dt * node * stage_derivatives[prev]
            dv, dp = rhs(stage_vector)
            stage_derivatives.append(dv)
            stage_phase.append(dp)
        vector = vector + cfg.dt * sum(
            w * k for w, k in zip(_RK4_WEIGHTS, stage_derivatives)
        )
        phase = phase + cfg.dt * sum(w * k for w, k in zip(_RK4_WEIGHTS, stage_phase))
        t += cfg.dt
        if vector.size and np.abs(vector).max() > cfg.amplitude_norm_bound:
            raise InstabilityError(
                f"amplitude norm exceeded {cfg.amplitude_norm_bound} at t = {t:.6g}",
                last_good=trajectory[-1],
                trajectory=trajectory,
            )
        trajectory.append(TDState(t, ClusterOperator(work.amplitude_map(vector)), phase))
    return trajectory


def energy_trace(trajectory, ham: HamiltonianSpec, manifold) -> list[complex]:
    """<Phi|exp(-T(t)) H exp(T(t))|Phi> along a trajectory."""
    work = _Workspace(ham, list(manifold))
    energies = []
    for state in trajectory:
        vector = np.array(
            [complex(state.amplitudes.get(sig, 0.0)) for sig in work.signatures]
        )
        _, dphase = work.rhs_global(vector)
        energies.append(complex(1j * dphase))
    return energies


def trajectory_csv(trajectory, ham: HamiltonianSpec, manifold,
                   traced_signatures=None, overlaps=None) -> str:
    """CSV dump: time, energy, selected amplitude traces, optional overlap."""
    manifold = list(manifold)
    traced = list(traced_signatures) if traced_signatures else manifold[:4]
    energies = energy_trace(trajectory, ham, manifold)
    header = ["t", "energy_re", "energy_im"]
    for sig in traced:
        tag = "h" + "_".join(map(str, sig.holes)) + "p" + "_".join(map(str, sig.particles))
        header += [f"re_{tag}", f"im_{tag}"]
    if overlaps is not None:
        header.append("overlap_with_oracle")
    lines = [",".join(header)]
    for i, state in enumerate(trajectory):
        row = [f"{state.t:.12g}", f"{energies[i].real:.12g}", f"{energies[i].imag:.12g}"]
        for sig in traced:
            value = complex(state.amplitudes.get(sig, 0.0))
            row += [f"{value.real:.12g}", f"{value.imag:.12g}"]
        if overlaps is not None:
            row.append(f"{overlaps[i]:.12g}")
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
