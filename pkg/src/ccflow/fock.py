"""Fermionic Fock-space kernel on bitstring determinants.

A determinant is a plain int: bit p set means spin orbital p is occupied.
Spin orbitals interleave alpha/beta per spatial orbital (alpha = 2m,
beta = 2m + 1).  The canonical phase of a determinant is fixed by writing
its creation operators in ascending orbital order, so every elementary
phase is (-1)**(number of occupied orbitals below the acted index).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from .errors import ResourceLimitError

MAX_SPIN_ORBITALS = 64


def spin_of(p: int) -> int:
    """0 for alpha, 1 for beta."""
    return p & 1


def spatial_of(p: int) -> int:
    return p >> 1


def spin_orbitals_of(spatial: int) -> tuple[int, int]:
    """Alpha/beta spin-orbital pair of a spatial orbital."""
    return 2 * spatial, 2 * spatial + 1


@dataclass(frozen=True)
class SpinOrbitalBasis:
    """Closed-shell reference frame: occupied/virtual split of spin orbitals."""

    n_spatial: int
    n_electrons: int

    def __post_init__(self):
        if self.n_spatial < 1:
            raise ValueError("need at least one spatial orbital")
        if 2 * self.n_spatial > MAX_SPIN_ORBITALS:
            raise ResourceLimitError(
                f"{2 * self.n_spatial} spin orbitals exceed the "
                f"{MAX_SPIN_ORBITALS}-bit determinant capacity"
            )
        if self.n_electrons < 2 or self.n_electrons % 2:
            raise ValueError("closed-shell reference needs an even electron count >= 2")
        if self.n_electrons > 2 * self.n_spatial:
            raise ValueError("more electrons than spin orbitals")

    @property
    def n_spin_orbitals(self) -> int:
        return 2 * self.n_spatial

    @property
    def occupied(self) -> tuple[int, ...]:
        return tuple(range(self.n_electrons))

    @property
    def virtual(self) -> tuple[int, ...]:
        return tuple(range(self.n_electrons, self.n_spin_orbitals))

    @property
    def occupied_spatial(self) -> tuple[int, ...]:
        return tuple(range(self.n_electrons // 2))

    @property
    def virtual_spatial(self) -> tuple[int, ...]:
        return tuple(range(self.n_electrons // 2, self.n_spatial))

    @property
    def spin_orbital_order(self) -> tuple[tuple[int, str], ...]:
        return tuple(
            (m, s) for m in range(self.n_spatial) for s in ("a", "b")
        )

    def reference(self) -> int:
        """Aufbau determinant: lowest n_electrons spin orbitals occupied."""
        return (1 << self.n_electrons) - 1


@dataclass(frozen=True, order=True)
class ExcitationSignature:
    """Ordered hole/particle index tuples (i1 < ... < ik -> a1 < ... < ak)."""

    holes: tuple[int, ...]
    particles: tuple[int, ...]

    def __post_init__(self):
        if len(self.holes) != len(self.particles) or not self.holes:
            raise ValueError("need equally many holes and particles, at least one each")
        for idx in (self.holes, self.particles):
            if any(a >= b for a, b in zip(idx, idx[1:])) or min(idx) < 0:
                raise ValueError("indices must be strictly ascending and non-negative")
        if set(self.holes) & set(self.particles):
            raise ValueError("holes and particles must not repeat an index")

    @property
    def rank(self) -> int:
        return len(self.holes)

    @property
    def sz2_change(self) -> int:
        """Twice the S_z change: +1 per alpha, -1 per beta index."""
        up = sum(1 if spin_of(p) == 0 else -1 for p in self.particles)
        down = sum(1 if spin_of(i) == 0 else -1 for i in self.holes)
        return up - down

    @property
    def conserves_sz(self) -> bool:
        return self.sz2_change == 0

    def sort_key(self):
        return (self.rank, self.holes, self.particles)


def _check_index(p: int, n_orbitals: int | None) -> None:
    if p < 0 or (n_orbitals is not None and p >= n_orbitals):
        raise ValueError(f"spin-orbital index {p} out of range")


def _phase_below(det: int, p: int) -> int:
    return -1 if (det & ((1 << p) - 1)).bit_count() & 1 else 1


def apply_creation(det: int, p: int, n_orbitals: int | None = None):
    """a+_p |det>; None if the orbital is already occupied."""
    _check_index(p, n_orbitals)
    bit = 1 << p
    if det & bit:
        return None
    return det | bit, _phase_below(det, p)


def apply_annihilation(det: int, p: int, n_orbitals: int | None = None):
    """a_p |det>; None if the orbital is empty."""
    _check_index(p, n_orbitals)
    bit = 1 << p
    if not det & bit:
        return None
    return det & ~bit, _phase_below(det, p)


def apply_excitation(sig: ExcitationSignature, det: int, n_orbitals: int | None = None):
    """Apply a+_{a1}..a+_{ak} a_{ik}..a_{i1}; None if any elementary step kills it.

    Operators act right to left: holes are annihilated in ascending order,
    particles created in descending order.
    """
    phase = 1
    for i in sig.holes:
        res = apply_annihilation(det, i, n_orbitals)
        if res is None:
            return None
        det, ph = res
        phase *= ph
    for a in reversed(sig.particles):
        res = apply_creation(det, a, n_orbitals)
        if res is None:
            return None
        det, ph = res
        phase *= ph
    return det, phase


def excitation_between(ref: int, det: int) -> ExcitationSignature | None:
    """Signature mapping ref onto det, or None when they coincide."""
    if ref == det:
        return None
    holes = occupied_orbitals(ref & ~det)
    particles = occupied_orbitals(det & ~ref)
    return ExcitationSignature(holes, particles)


def occupied_orbitals(det: int) -> tuple[int, ...]:
    out = []
    p = 0
    while det:
        if det & 1:
            out.append(p)
        det >>= 1
        p += 1
    return tuple(out)


def det_sector(det: int) -> tuple[int, int]:
    """(n_alpha, n_beta) occupation of a determinant."""
    occ = occupied_orbitals(det)
    n_alpha = sum(1 for p in occ if spin_of(p) == 0)
    return n_alpha, len(occ) - n_alpha


def format_determinant(det: int, n_spin_orbitals: int) -> str:
    """Occupation string with spin orbital 0 leftmost, e.g. '1100'."""
    return "".join("1" if det >> p & 1 else "0" for p in range(n_spin_orbitals))


def enumerate_manifold(
    basis: SpinOrbitalBasis,
    max_rank: int,
    hole_domain=None,
    particle_domain=None,
) -> list[ExcitationSignature]:
    """All signatures with holes/particles inside the given spin-orbital domains.

    Ranks run from 1 to max_rank; ordering is deterministic (rank, then
    lexicographic on holes, then particles).  Empty domains give an empty
    manifold.
    """
    if max_rank > basis.n_electrons:
        raise ValueError("max_rank cannot exceed the electron count")
    holes = sorted(basis.occupied if hole_domain is None else hole_domain)
    parts = sorted(basis.virtual if particle_domain is None else particle_domain)
    if not set(holes) <= set(basis.occupied):
        raise ValueError("hole domain must lie inside the occupied set")
    if not set(parts) <= set(basis.virtual):
        raise ValueError("particle domain must lie inside the virtual set")
    out = []
    for k in range(1, min(max_rank, len(holes), len(parts)) + 1):
        for hs in itertools.combinations(holes, k):
            for ps in itertools.combinations(parts, k):
                out.append(ExcitationSignature(hs, ps))
    return out


def enumerate_sector(n_spatial: int, n_alpha: int, n_beta: int) -> list[int]:
    """All determinants of a fixed (n_alpha, n_beta) sector, ascending ints."""
    if not 0 <= n_alpha <= n_spatial or not 0 <= n_beta <= n_spatial:
        raise ValueError("sector occupation out of range")
    spatials = range(n_spatial)
    dets = []
    for alphas in itertools.combinations(spatials, n_alpha):
        abits = sum(1 << (2 * m) for m in alphas)
        for betas in itertools.combinations(spatials, n_beta):
            dets.append(abits + sum(1 << (2 * m + 1) for m in betas))
    dets.sort()
    return dets
