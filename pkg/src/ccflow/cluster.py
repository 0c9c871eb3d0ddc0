"""Cluster operators: matrix images, exact exponentials, cluster analysis.

Excitation operators are nilpotent on any closed determinant space, so
exp and log are exact terminating series here; nothing is truncated.
"""

from __future__ import annotations

import cmath
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DegenerateOrbitalError, DegenerateReferenceError
from .fock import (
    ExcitationSignature,
    apply_excitation,
    excitation_between,
    spatial_of,
)
from .integrals import HamiltonianSpec, matrix_element, orbital_energies


class ClusterOperator:
    """Immutable map ExcitationSignature -> amplitude; absent keys are zero."""

    __slots__ = ("_amps",)

    def __init__(self, amplitudes=None):
        amps = {}
        items = amplitudes.items() if hasattr(amplitudes, "items") else (amplitudes or ())
        for sig, value in items:
            if not isinstance(sig, ExcitationSignature):
                raise ValueError("amplitude keys must be excitation signatures")
            if not cmath.isfinite(complex(value)):
                raise ValueError("amplitudes must be finite")
            amps[sig] = value
        self._amps = amps

    @staticmethod
    def zero() -> "ClusterOperator":
        return ClusterOperator()

    def items(self):
        return self._amps.items()

    def get(self, sig, default=0.0):
        return self._amps.get(sig, default)

    def __contains__(self, sig):
        return sig in self._amps

    def __len__(self):
        return len(self._amps)

    def __iter__(self):
        return iter(self._amps)

    def __eq__(self, other):
        return isinstance(other, ClusterOperator) and self._amps == other._amps

    def __repr__(self):
        return f"ClusterOperator({len(self._amps)} amplitudes)"

    @property
    def support(self) -> frozenset[ExcitationSignature]:
        return frozenset(self._amps)

    def restrict(self, signatures) -> "ClusterOperator":
        keep = frozenset(signatures)
        return ClusterOperator({s: v for s, v in self._amps.items() if s in keep})

    def without(self, signatures) -> "ClusterOperator":
        drop = frozenset(signatures)
        return ClusterOperator({s: v for s, v in self._amps.items() if s not in drop})

    def updated(self, mapping) -> "ClusterOperator":
        merged = dict(self._amps)
        merged.update(mapping.items() if hasattr(mapping, "items") else mapping)
        return ClusterOperator(merged)

    def max_abs(self) -> float:
        return max((abs(v) for v in self._amps.values()), default=0.0)

    def max_abs_difference(self, other: "ClusterOperator") -> float:
        sigs = set(self._amps) | set(other._amps)
        return max((abs(self.get(s) - other.get(s)) for s in sigs), default=0.0)


@dataclass(frozen=True)
class OperatorMatrix:
    """Dense operator over an ordered determinant list."""

    matrix: np.ndarray
    space: tuple[int, ...]

    def __post_init__(self):
        m = np.asarray(self.matrix)
        if m.shape != (len(self.space), len(self.space)):
            raise ValueError("matrix shape does not match the determinant space")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "space", tuple(self.space))

    @cached_property
    def index(self) -> dict[int, int]:
        return {det: i for i, det in enumerate(self.space)}


def amplitude_matrix(amplitudes, space, index=None) -> np.ndarray:
    """Raw matrix image of an amplitude map on an ordered determinant list."""
    items = list(amplitudes.items())
    dtype = complex if any(isinstance(v, complex) for _, v in items) else float
    if index is None:
        index = {det: i for i, det in enumerate(space)}
    out = np.zeros((len(space), len(space)), dtype=dtype)
    for sig, value in items:
        if value == 0:
            continue
        for col, det in enumerate(space):
            res = apply_excitation(sig, det)
            if res is None:
                continue
            target, phase = res
            row = index.get(target)
            if row is not None:
                out[row, col] += phase * value
    return out


def to_matrix(t: ClusterOperator, space) -> OperatorMatrix:
    """Matrix image of a cluster operator; strictly rank-raising, hence nilpotent."""
    space = tuple(space)
    return OperatorMatrix(amplitude_matrix(t, space), space)


def exp_nilpotent(m: np.ndarray) -> np.ndarray:
    """Exact terminating Taylor sum of a nilpotent matrix."""
    n = m.shape[0]
    out = np.eye(n, dtype=m.dtype)
    term = np.eye(n, dtype=m.dtype)
    for k in range(1, n + 2):
        term = term @ m / k
        if not term.any():
            return out
        out += term
    raise ValueError("matrix is not nilpotent (excitation-type input expected)")


def log_wave_operator(omega_minus_identity: np.ndarray) -> np.ndarray:
    """Exact terminating log(1 + X) for nilpotent X."""
    x = omega_minus_identity
    n = x.shape[0]
    out = np.zeros_like(x)
    term = np.eye(n, dtype=x.dtype)
    for k in range(1, n + 2):
        term = term @ x
        if not term.any():
            return out
        out += term * ((-1.0) ** (k + 1) / k)
    raise ValueError("wave operator is not of nilpotent CI form")


def exp_matrix(tm: OperatorMatrix) -> OperatorMatrix:
    return OperatorMatrix(exp_nilpotent(tm.matrix), tm.space)


def similarity_transform(hm: OperatorMatrix, t: ClusterOperator) -> OperatorMatrix:
    """exp(-T) H exp(T) with exact exponentials on hm's space."""
    tm = amplitude_matrix(t, hm.space, hm.index)
    right = exp_nilpotent(tm)
    left = exp_nilpotent(-tm)
    return OperatorMatrix(left @ hm.matrix @ right, hm.space)


def cluster_analysis(coefficients, space, manifold) -> ClusterOperator:
    """Connected amplitudes of a CI vector under intermediate normalization.

    The space is an ordered determinant list with the reference first; the
    vector is rescaled so its reference coefficient is one, the wave
    operator 1 + C is formed, and T = log(1 + C) is read off its
    reference column, restricted to the requested manifold.
    """
    space = tuple(space)
    c = np.asarray(coefficients)
    if c.shape != (len(space),):
        raise ValueError("coefficient vector does not match the space")
    if abs(c[0]) < 1e-12:
        raise DegenerateReferenceError(
            "reference coefficient is zero; intermediate normalization impossible"
        )
    c = c / c[0]
    ref = space[0]
    phases = {}
    ci = {}
    for i, det in enumerate(space[1:], 1):
        sig = excitation_between(ref, det)
        if sig is None:
            raise ValueError("reference determinant repeated in the space")
        _, phase = apply_excitation(sig, ref)
        phases[i] = (sig, phase)
        if c[i] != 0:
            ci[sig] = c[i] / phase
    tm = log_wave_operator(amplitude_matrix(ci, space))
    column = tm[:, 0]
    keep = frozenset(manifold)
    amps = {}
    for i, (sig, phase) in phases.items():
        if sig in keep and column[i] != 0:
            amps[sig] = column[i] / phase
    return ClusterOperator(amps)


def mp_denominator(sig: ExcitationSignature, energies: np.ndarray) -> float:
    """Sum of hole orbital energies minus particle orbital energies."""
    return float(
        sum(energies[spatial_of(i)] for i in sig.holes)
        - sum(energies[spatial_of(a)] for a in sig.particles)
    )


def mbpt2_contribution(h, ham: HamiltonianSpec, denominator_floor: float = 1e-8) -> float:
    """Second-order correlation energy from the internal doubles of h.

    Standard Moller-Plesset denominators; requires canonical orbitals.
    A denominator below the floor aborts rather than regularizes.
    """
    from .algebra import internal_manifold

    energies = orbital_energies(ham)
    ref = ham.basis.reference()
    e2 = 0.0
    for sig in internal_manifold(h):
        if sig.rank != 2:
            continue
        res = apply_excitation(sig, ref)
        if res is None:
            continue
        numerator = matrix_element(res[0], ref, ham)
        if numerator == 0.0:
            continue
        delta = mp_denominator(sig, energies)
        if abs(delta) < denominator_floor:
            raise DegenerateOrbitalError(
                f"vanishing Moller-Plesset denominator for {sig}"
            )
        e2 += numerator * numerator / delta
    return e2


def dump_amplitudes(t: ClusterOperator) -> str:
    """Text dump 'k  i1..ik  a1..ak  value' (0-based spin orbitals)."""
    lines = []
    for sig in sorted(t.support, key=lambda s: s.sort_key()):
        value = t.get(sig)
        if isinstance(value, complex):
            raise ValueError("amplitude dump is defined for real amplitudes")
        idx = " ".join(str(i) for i in sig.holes + sig.particles)
        lines.append(f"{sig.rank} {idx} {value!r}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_amplitudes(text: str) -> ClusterOperator:
    """Inverse of dump_amplitudes."""
    amps = {}
    for raw in text.splitlines():
        tokens = raw.split()
        if not tokens:
            continue
        rank = int(tokens[0])
        if len(tokens) != 2 * rank + 2:
            raise ValueError(f"malformed amplitude line: {raw!r}")
        holes = tuple(int(tok) for tok in tokens[1:rank + 1])
        particles = tuple(int(tok) for tok in tokens[rank + 1:2 * rank + 1])
        amps[ExcitationSignature(holes, particles)] = float(tokens[-1])
    return ClusterOperator(amps)
