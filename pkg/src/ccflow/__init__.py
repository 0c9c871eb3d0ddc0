"""Desk-scale coupled-cluster engine built around sub-system flows.

Reduced-dimensionality eigenproblems over embedded active spaces are
coupled into iterative flows whose fixed points reproduce connected
coupled-cluster solutions, with Hermitian unitary downfolding and
real-time propagation sharing the same exact determinant-space kernels.
"""

__version__ = "0.1.0"

from .algebra import (
    ALL,
    CASSpace,
    SubAlgebra,
    generate_cas,
    internal_manifold,
    is_ses,
    parse_subalgebra,
    partition,
    projector,
    shared_amplitudes,
)
from .cc import (
    CCSolution,
    FCIResult,
    SolverConfig,
    cc_energy,
    cc_residual,
    solve_cc,
    solve_fci,
    union_manifold,
)
from .cluster import (
    ClusterOperator,
    OperatorMatrix,
    cluster_analysis,
    dump_amplitudes,
    exp_matrix,
    mbpt2_contribution,
    parse_amplitudes,
    similarity_transform,
    to_matrix,
)
from .ducc import (
    AntiHermitianCluster,
    HermitianEffective,
    TrotterFlowConfig,
    build_gamma,
    downfold,
    export_downfolded,
    make_sigma,
    minimize_block,
    overcount_corrector,
    qubit_estimate,
    run_ducc_flow,
    unitary_transform,
)
from .fock import (
    ExcitationSignature,
    SpinOrbitalBasis,
    apply_annihilation,
    apply_creation,
    apply_excitation,
    enumerate_manifold,
    enumerate_sector,
)
from .flow import (
    EffectiveHamiltonian,
    FlowConfig,
    FlowState,
    build_effective_hamiltonian,
    cost_estimate,
    order_subalgebras,
    pair_density,
    run_flow,
    secondary_downfold,
    select_pno,
    solve_block,
    truncated_block_solve,
)
from .integrals import (
    HamiltonianSpec,
    ModelSpec,
    assemble_matrix,
    build_model,
    canonicalize,
    emit_fcidump,
    matrix_element,
    orbital_energies,
    parse_fcidump,
)
from .td import PropagatorConfig, TDState, build_td_effective, propagate, td_rhs_global
