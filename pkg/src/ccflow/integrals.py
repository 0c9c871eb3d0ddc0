"""Hamiltonian specifications and determinant matrix elements.

A HamiltonianSpec carries restricted (spatial-orbital) integrals: a
symmetric one-body matrix and a chemists'-notation two-body tensor (pq|rs)
stored on unique index quadruples under the full 8-fold real-orbital
symmetry.  Matrix elements between determinants follow the Slater-Condon
rules with the phase convention of the fock module.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import FCIDumpError, ResourceLimitError
from .fock import (
    SpinOrbitalBasis,
    apply_annihilation,
    apply_creation,
    det_sector,
    occupied_orbitals,
    spatial_of,
    spin_of,
)

DETERMINANT_CAP_ENV = "CCFLOW_MAX_DETS"
DEFAULT_DETERMINANT_CAP = 20_000


def determinant_cap() -> int:
    """Hard cap on dense determinant spaces; overridable via the environment."""
    raw = os.environ.get(DETERMINANT_CAP_ENV)
    if raw is None:
        return DEFAULT_DETERMINANT_CAP
    try:
        return int(raw)
    except ValueError as exc:
        raise ValueError(f"{DETERMINANT_CAP_ENV} must be an integer") from exc


def check_space_size(n: int) -> None:
    cap = determinant_cap()
    if n > cap:
        raise ResourceLimitError(
            f"{n} determinants exceed the configured cap of {cap} "
            f"(override with {DETERMINANT_CAP_ENV})"
        )


def canonical_quadruple(p: int, q: int, r: int, s: int) -> tuple[int, int, int, int]:
    """Representative of the 8-fold symmetry orbit of (pq|rs)."""
    if p < q:
        p, q = q, p
    if r < s:
        r, s = s, r
    if (p, q) < (r, s):
        p, q, r, s = r, s, p, q
    return p, q, r, s


@dataclass(eq=False)
class HamiltonianSpec:
    """Second-quantized problem definition over restricted spatial orbitals."""

    n_spatial: int
    n_electrons: int
    core_energy: float
    one_body: np.ndarray
    two_body: dict[tuple[int, int, int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        h = np.array(self.one_body, dtype=float)
        if h.shape != (self.n_spatial, self.n_spatial):
            raise ValueError("one-body matrix shape does not match n_spatial")
        if not np.isfinite(h).all() or not math.isfinite(self.core_energy):
            raise ValueError("integrals must be finite")
        if np.abs(h - h.T).max() > 1e-10:
            raise ValueError("one-body matrix must be symmetric")
        h = 0.5 * (h + h.T)
        h.setflags(write=False)
        self.one_body = h
        clean = {}
        for key, value in self.two_body.items():
            if key != canonical_quadruple(*key):
                raise ValueError(f"two-body key {key} is not in canonical order")
            if max(key) >= self.n_spatial or min(key) < 0:
                raise ValueError(f"two-body key {key} out of range")
            if not math.isfinite(value):
                raise ValueError("integrals must be finite")
            clean[key] = float(value)
        self.two_body = clean
        self._dense = None

    @classmethod
    def from_dense(cls, n_spatial, n_electrons, core_energy, one_body, two_body,
                   tol=1e-10):
        """Build from a dense (pq|rs) tensor, validating 8-fold symmetry."""
        g = np.asarray(two_body, dtype=float)
        unique = {}
        for key in np.ndindex(g.shape):
            canon = canonical_quadruple(*key)
            if key == canon:
                unique[canon] = g[key]
        for key in np.ndindex(g.shape):
            if abs(g[key] - unique[canonical_quadruple(*key)]) > tol:
                raise ValueError("dense two-body tensor violates 8-fold symmetry")
        unique = {k: v for k, v in unique.items() if abs(v) > 1e-14}
        return cls(n_spatial, n_electrons, float(core_energy), one_body, unique)

    @property
    def basis(self) -> SpinOrbitalBasis:
        return SpinOrbitalBasis(self.n_spatial, self.n_electrons)

    def value(self, p: int, q: int, r: int, s: int) -> float:
        """(pq|rs) through any symmetry-equivalent index path."""
        return self.two_body.get(canonical_quadruple(p, q, r, s), 0.0)

    def dense_two_body(self) -> np.ndarray:
        """Full (pq|rs) tensor; built once and cached read-only."""
        if self._dense is None:
            n = self.n_spatial
            g = np.zeros((n, n, n, n))
            for (p, q, r, s), v in self.two_body.items():
                for a, b in ((p, q), (q, p)):
                    for c, d in ((r, s), (s, r)):
                        g[a, b, c, d] = v
                        g[c, d, a, b] = v
            g.setflags(write=False)
            self._dense = g
        return self._dense


@dataclass(frozen=True)
class ModelSpec:
    """Built-in model Hamiltonian request: 'hubbard_chain' or 'pairing'."""

    kind: str
    params: dict

    def __post_init__(self):
        if self.kind not in ("hubbard_chain", "pairing"):
            raise ValueError(f"unknown model kind {self.kind!r}")


def build_model(spec: ModelSpec) -> HamiltonianSpec:
    """Construct the integrals of a built-in model.

    hubbard_chain: params sites L, hopping t, on-site u, periodic flag,
    optional n_electrons (default: L rounded down to even).  One-body is
    -t on nearest-neighbour bonds, (pp|pp) = u.

    pairing: params levels, spacing, g, optional n_electrons (default:
    levels rounded down to even).  Doubly degenerate levels eps_p = p *
    spacing with an attractive pair interaction (pq|pq) = -g; note the
    8-fold-symmetric real-integral storage identifies (pq|pq) with
    (pq|qp), so the realized interaction carries the symmetry-forced
    exchange counterpart of the level-pair hopping as well.
    """
    params = dict(spec.params)
    if spec.kind == "hubbard_chain":
        sites = int(params.pop("sites"))
        t = float(params.pop("hopping", 1.0))
        u = float(params.pop("u", 0.0))
        periodic = bool(params.pop("periodic", False))
        n_electrons = int(params.pop("n_electrons", sites - sites % 2))
        if params:
            raise ValueError(f"unknown hubbard parameters: {sorted(params)}")
        if sites < 1:
            raise ValueError("need at least one site")
        h = np.zeros((sites, sites))
        for i in range(sites - 1):
            h[i, i + 1] = h[i + 1, i] = -t
        if periodic and sites > 2:
            h[0, sites - 1] = h[sites - 1, 0] = -t
        two = {canonical_quadruple(p, p, p, p): u for p in range(sites) if u}
        return HamiltonianSpec(sites, n_electrons, 0.0, h, two)

    levels = int(params.pop("levels"))
    spacing = float(params.pop("spacing", 1.0))
    g = float(params.pop("g", 0.0))
    n_electrons = int(params.pop("n_electrons", levels - levels % 2))
    if params:
        raise ValueError(f"unknown pairing parameters: {sorted(params)}")
    if levels < 1:
        raise ValueError("need at least one level")
    h = np.diag([spacing * p for p in range(levels)])
    two = {}
    if g:
        for p in range(levels):
            for q in range(levels):
                two[canonical_quadruple(p, q, p, q)] = -g
    return HamiltonianSpec(levels, n_electrons, 0.0, h, two)


_NAMELIST_KEY = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)\s*=")


def parse_fcidump(text: str) -> HamiltonianSpec:
    """Parse an FCIDUMP character stream.

    The grammar is a namelist header ``&FCI NORB=<n>,NELEC=<n>,MS2=<n>[,...]``
    terminated by ``&END`` or ``/``, followed by whitespace-separated records
    ``value i j k l`` with 1-based spatial indices: ``i j 0 0`` one-body,
    ``0 0 0 0`` core energy, anything else a chemists'-notation two-body
    integral (ij|kl).  Keys are case-insensitive and reals free-format.

    Raises
    ------
    FCIDumpError
        On malformed headers, non-numeric tokens, out-of-range indices or
        conflicting duplicate integral values, with the offending line.
    """
    lines = text.splitlines()
    header_parts: list[str] = []
    body_start = None
    for ln, line in enumerate(lines, 1):
        stripped = line.strip()
        if not header_parts:
            if not stripped:
                continue
            if not stripped.upper().startswith("&FCI"):
                raise FCIDumpError("expected '&FCI' namelist header", ln)
            stripped = stripped[4:]
        terminated = False
        for term in ("&END", "/"):
            idx = stripped.upper().find(term)
            if idx >= 0:
                stripped = stripped[:idx]
                terminated = True
                break
        header_parts.append(stripped)
        if terminated:
            body_start = ln
            break
    if body_start is None:
        raise FCIDumpError("namelist header never terminated", len(lines))

    header = " ".join(header_parts)
    keys: dict[str, str] = {}
    matches = list(_NAMELIST_KEY.finditer(header))
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(header)
        keys[m.group(1).upper()] = header[m.end():end].strip().rstrip(",")
    try:
        norb = int(keys["NORB"])
        nelec = int(keys["NELEC"])
    except KeyError as exc:
        raise FCIDumpError(f"header is missing {exc.args[0]}", body_start) from exc
    except ValueError as exc:
        raise FCIDumpError(f"non-integer header value: {exc}", body_start) from exc
    if norb < 1:
        raise FCIDumpError("NORB must be positive", body_start)

    core = 0.0
    core_seen = False
    h = np.zeros((norb, norb))
    h_seen: dict[tuple[int, int], float] = {}
    two: dict[tuple[int, int, int, int], float] = {}
    for ln in range(body_start + 1, len(lines) + 1):
        tokens = lines[ln - 1].split()
        if not tokens:
            continue
        if len(tokens) != 5:
            raise FCIDumpError(f"expected 'value i j k l', got {len(tokens)} tokens", ln)
        try:
            value = float(tokens[0].replace("D", "E").replace("d", "e"))
            i, j, k, l = (int(tok) for tok in tokens[1:])
        except ValueError as exc:
            raise FCIDumpError(f"non-numeric token: {exc}", ln) from exc
        if not math.isfinite(value):
            raise FCIDumpError("non-finite integral value", ln)
        if max(i, j, k, l) > norb:
            raise FCIDumpError(f"orbital index exceeds NORB={norb}", ln)
        if (i, j, k, l) == (0, 0, 0, 0):
            if core_seen and value != core:
                raise FCIDumpError("conflicting duplicate core energy", ln)
            core, core_seen = value, True
        elif k == 0 and l == 0:
            if min(i, j) < 1:
                raise FCIDumpError("one-body record with a zero index", ln)
            key = (max(i, j) - 1, min(i, j) - 1)
            if key in h_seen and h_seen[key] != value:
                raise FCIDumpError(f"conflicting duplicate one-body value at {key}", ln)
            h_seen[key] = value
            h[key[0], key[1]] = h[key[1], key[0]] = value
        else:
            if min(i, j, k, l) < 1:
                raise FCIDumpError("two-body record with a zero index", ln)
            key = canonical_quadruple(i - 1, j - 1, k - 1, l - 1)
            if key in two and two[key] != value:
                raise FCIDumpError(f"conflicting duplicate two-body value at {key}", ln)
            two[key] = value
    return HamiltonianSpec(norb, nelec, core, h, two)


def emit_fcidump(ham: HamiltonianSpec) -> str:
    """Inverse of parse_fcidump; stored unique entries round-trip bit-exactly."""
    out = [f"&FCI NORB={ham.n_spatial},NELEC={ham.n_electrons},MS2=0", "&END"]
    for (p, q, r, s) in sorted(ham.two_body):
        out.append(f"{ham.two_body[(p, q, r, s)]!r} {p + 1} {q + 1} {r + 1} {s + 1}")
    for p in range(ham.n_spatial):
        for q in range(p + 1):
            if ham.one_body[p, q] != 0.0:
                out.append(f"{ham.one_body[p, q]!r} {p + 1} {q + 1} 0 0")
    out.append(f"{ham.core_energy!r} 0 0 0 0")
    return "\n".join(out) + "\n"


def matrix_element(bra: int, ket: int, ham: HamiltonianSpec) -> float:
    """<bra|H|ket> by the Slater-Condon rules (exact, fock-module phases)."""
    if det_sector(bra) != det_sector(ket):
        raise ValueError("bra and ket lie in different particle/spin sectors")
    diff = bra ^ ket
    ndiff = diff.bit_count()
    if ndiff > 4:
        return 0.0
    h = ham.one_body
    g = ham.dense_two_body()

    if ndiff == 0:
        occ = occupied_orbitals(ket)
        e = ham.core_energy
        for p in occ:
            e += h[spatial_of(p), spatial_of(p)]
        for n, p in enumerate(occ):
            a = spatial_of(p)
            for q in occ[n + 1:]:
                b = spatial_of(q)
                e += g[a, a, b, b]
                if spin_of(p) == spin_of(q):
                    e -= g[a, b, b, a]
        return float(e)

    if ndiff == 2:
        m = occupied_orbitals(diff & ket)[0]
        p = occupied_orbitals(diff & bra)[0]
        if spin_of(m) != spin_of(p):
            return 0.0
        det1, ph1 = apply_annihilation(ket, m)
        _, ph2 = apply_creation(det1, p)
        a, b = spatial_of(p), spatial_of(m)
        val = h[a, b]
        for q in occupied_orbitals(ket & bra):
            c = spatial_of(q)
            val += g[a, b, c, c]
            if spin_of(q) == spin_of(m):
                val -= g[a, c, c, b]
        return float(ph1 * ph2 * val)

    m, n = occupied_orbitals(diff & ket)
    p, q = occupied_orbitals(diff & bra)
    det1, ph1 = apply_annihilation(ket, m)
    det2, ph2 = apply_annihilation(det1, n)
    det3, ph3 = apply_creation(det2, q)
    _, ph4 = apply_creation(det3, p)
    phase = ph1 * ph2 * ph3 * ph4
    val = 0.0
    if spin_of(p) == spin_of(m) and spin_of(q) == spin_of(n):
        val += g[spatial_of(p), spatial_of(m), spatial_of(q), spatial_of(n)]
    if spin_of(p) == spin_of(n) and spin_of(q) == spin_of(m):
        val -= g[spatial_of(p), spatial_of(n), spatial_of(q), spatial_of(m)]
    return float(phase * val)


def assemble_matrix(space, ham: HamiltonianSpec) -> np.ndarray:
    """Dense symmetric Hamiltonian matrix over an ordered determinant list."""
    dets = list(space)
    check_space_size(len(dets))
    n = len(dets)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            out[i, j] = out[j, i] = matrix_element(dets[i], dets[j], ham)
    return out


def fock_matrix(ham: HamiltonianSpec) -> np.ndarray:
    """Closed-shell mean-field operator for the aufbau reference occupation."""
    g = ham.dense_two_body()
    f = ham.one_body.copy()
    for j in range(ham.n_electrons // 2):
        f += 2.0 * g[:, :, j, j] - g[:, j, j, :]
    return f


def orbital_energies(ham: HamiltonianSpec, tol: float = 1e-8) -> np.ndarray:
    """Diagonal of the Fock matrix; requires a canonical orbital basis."""
    f = fock_matrix(ham)
    off = f - np.diag(np.diag(f))
    if np.abs(off).max() > tol:
        raise ValueError(
            "orbital basis is not canonical (off-diagonal Fock elements "
            f"up to {np.abs(off).max():.3e}); canonicalize first"
        )
    return np.diag(f).copy()


def canonicalize(ham: HamiltonianSpec, tol: float = 1e-11, max_iterations: int = 500):
    """Self-consistent closed-shell canonical orbitals.

    Returns (transformed HamiltonianSpec, orbital energies, coefficient
    matrix).  The transformed one-body part diagonalizes the converged
    mean-field operator; orbitals are ordered by energy so the aufbau
    reference is the mean-field ground determinant.
    """
    from .errors import ConvergenceError

    h = ham.one_body
    g = ham.dense_two_body()
    nocc = ham.n_electrons // 2
    _, coeffs = np.linalg.eigh(h)
    density = 2.0 * coeffs[:, :nocc] @ coeffs[:, :nocc].T
    energies = None
    for _ in range(max_iterations):
        f = (
            h
            + np.einsum("rs,pqrs->pq", density, g)
            - 0.5 * np.einsum("rs,prsq->pq", density, g)
        )
        energies, coeffs = np.linalg.eigh(f)
        new_density = 2.0 * coeffs[:, :nocc] @ coeffs[:, :nocc].T
        delta = np.abs(new_density - density).max()
        density = new_density
        if delta < tol:
            break
    else:
        raise ConvergenceError("mean-field iteration did not converge")
    h_mo = coeffs.T @ h @ coeffs
    g_mo = np.einsum("pi,qj,rk,sl,pqrs->ijkl", coeffs, coeffs, coeffs, coeffs, g,
                     optimize=True)
    spec = HamiltonianSpec.from_dense(
        ham.n_spatial, ham.n_electrons, ham.core_energy, h_mo, g_mo
    )
    return spec, energies, coeffs
