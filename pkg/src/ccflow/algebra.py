"""Excitation sub-algebras over active occupied/virtual orbital sets.

A SubAlgebra singles out active occupied spatial orbitals R and active
virtual spatial orbitals S (or ALL).  Both spins of every active spatial
orbital are included, so the internal exponential Ansatz preserves the
closed-shell spin structure of the reference by construction.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .fock import (
    ExcitationSignature,
    SpinOrbitalBasis,
    apply_excitation,
    enumerate_manifold,
    spin_orbitals_of,
)
from .integrals import check_space_size


class _All:
    """Sentinel: every virtual spatial orbital is active."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "ALL"


ALL = _All()


@dataclass(frozen=True)
class SubAlgebra:
    """g(x_R, y_S): all excitations from occupied set R into virtual set S."""

    active_occupied: frozenset[int]
    active_virtual: frozenset[int] | _All
    basis: SpinOrbitalBasis

    def __post_init__(self):
        object.__setattr__(self, "active_occupied", frozenset(self.active_occupied))
        if not self.active_occupied:
            raise ValueError("active occupied set must be non-empty")
        if not self.active_occupied <= set(self.basis.occupied_spatial):
            raise ValueError("active occupied orbitals must be occupied in the reference")
        if self.active_virtual is not ALL:
            object.__setattr__(self, "active_virtual", frozenset(self.active_virtual))
            if not self.active_virtual <= set(self.basis.virtual_spatial):
                raise ValueError("active virtual orbitals must be virtual in the reference")

    @property
    def x(self) -> int:
        return len(self.active_occupied)

    @property
    def virtual_resolved(self) -> frozenset[int]:
        if self.active_virtual is ALL:
            return frozenset(self.basis.virtual_spatial)
        return self.active_virtual

    @property
    def y(self) -> int:
        return len(self.virtual_resolved)

    @property
    def hole_spin_orbitals(self) -> tuple[int, ...]:
        return tuple(
            p for m in sorted(self.active_occupied) for p in spin_orbitals_of(m)
        )

    @property
    def particle_spin_orbitals(self) -> tuple[int, ...]:
        return tuple(
            p for m in sorted(self.virtual_resolved) for p in spin_orbitals_of(m)
        )

    @property
    def active_spin_orbitals(self) -> frozenset[int]:
        return frozenset(self.hole_spin_orbitals) | frozenset(self.particle_spin_orbitals)

    def label(self) -> str:
        return format_subalgebra(self)


def format_subalgebra(h: SubAlgebra) -> str:
    """Config-file literal, 1-based spatial indices: 'R=[1,3];S=ALL'."""
    r = ",".join(str(m + 1) for m in sorted(h.active_occupied))
    if h.active_virtual is ALL:
        s = "ALL"
    else:
        s = "[" + ",".join(str(m + 1) for m in sorted(h.active_virtual)) + "]"
    return f"R=[{r}];S={s}"


_LITERAL = re.compile(
    r"^\s*R\s*=\s*\[(?P<r>[\d\s,]*)\]\s*;\s*S\s*=\s*(?:(?P<all>ALL)|\[(?P<s>[\d\s,]*)\])\s*$",
    re.IGNORECASE,
)


def parse_subalgebra(text: str, basis: SpinOrbitalBasis) -> SubAlgebra:
    """Parse the sub-algebra literal syntax (see format_subalgebra)."""
    m = _LITERAL.match(text)
    if not m:
        raise ValueError(f"malformed sub-algebra literal {text!r}")

    def _indices(raw):
        return frozenset(int(tok) - 1 for tok in raw.split(",") if tok.strip())

    occupied = _indices(m.group("r"))
    virtual = ALL if m.group("all") else _indices(m.group("s"))
    return SubAlgebra(occupied, virtual, basis)


@dataclass(frozen=True)
class CASSpace:
    """Complete active space of a sub-algebra; the reference is element 0."""

    determinants: tuple[int, ...]
    generator: SubAlgebra

    @cached_property
    def index(self) -> dict[int, int]:
        return {det: i for i, det in enumerate(self.determinants)}

    def __len__(self) -> int:
        return len(self.determinants)


@dataclass(frozen=True)
class ManifoldPartition:
    internal: frozenset[ExcitationSignature]
    external: frozenset[ExcitationSignature]


def internal_manifold(h: SubAlgebra) -> list[ExcitationSignature]:
    """Every excitation with holes in R's and particles in S's spin orbitals.

    Ranks run up to 2x (all active electrons promoted).  Delegates to the
    fock-level enumeration, so spin-flip signatures are included; they are
    symmetry-zero in every solver downstream.
    """
    max_rank = min(2 * h.x, 2 * h.y)
    if max_rank == 0:
        return []
    return enumerate_manifold(
        h.basis, max_rank, h.hole_spin_orbitals, h.particle_spin_orbitals
    )


def generate_cas(h: SubAlgebra) -> CASSpace:
    """Reference plus every determinant its internal excitations reach.

    Restricted to the reference S_z sector: spin-flip internal signatures
    would leave the closed-shell symmetry sector and carry no amplitude.
    """
    ref = h.basis.reference()
    dets = [ref]
    for sig in internal_manifold(h):
        if not sig.conserves_sz:
            continue
        res = apply_excitation(sig, ref)
        if res is not None:
            dets.append(res[0])
    check_space_size(len(dets))
    return CASSpace(tuple(dets), h)


def partition(manifold, h: SubAlgebra) -> ManifoldPartition:
    """Split a manifold into the internal part of h and the remainder."""
    internal = frozenset(internal_manifold(h))
    manifold = frozenset(manifold)
    inside = manifold & internal
    return ManifoldPartition(inside, manifold - inside)


def is_ses(h: SubAlgebra, manifold) -> bool:
    """Whether h embeds a sub-system of the approximation defined by manifold.

    True iff the full internal manifold of h is contained in the given
    manifold, so that the internal exponential Ansatz spans the complete
    active space.  The spin-symmetry condition holds by construction
    because R and S are spatial-orbital complete.
    """
    return frozenset(internal_manifold(h)) <= frozenset(manifold)


def shared_amplitudes(h1: SubAlgebra, h2: SubAlgebra) -> frozenset[ExcitationSignature]:
    """Signatures internal to both sub-algebras."""
    return frozenset(internal_manifold(h1)) & frozenset(internal_manifold(h2))


def projector(cas: CASSpace, ambient) -> np.ndarray:
    """Orthogonal projector onto span(cas) in ambient determinant coordinates."""
    ambient = list(ambient)
    index = {det: i for i, det in enumerate(ambient)}
    out = np.zeros((len(ambient), len(ambient)))
    for det in cas.determinants:
        if det not in index:
            raise ValueError("CAS determinant missing from the ambient space")
        out[index[det], index[det]] = 1.0
    return out
