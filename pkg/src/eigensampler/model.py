"""Decomposable Hamiltonians and their projector-sampling distributions.

A Hamiltonian H = sum_k h_k qualifies when every term h_k has a complete
eigendecomposition over product states of a single local basis (here: the
computational Z basis or the Hadamard X basis).  Shifting each term by c_k
so its spectrum is non-negative yields a density-matrix encoding

    rho = (H + (sum_k c_k) I) / C,

realized as a probability distribution over rank-1 product projectors:
entry (i, k) carries weight (lambda_i^k + c_k)/C.  Sampling projectors from
this distribution is what drives the evolution engine.

Site ordering is big-endian throughout: site 0 is the most significant bit
of a basis-state index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .qlinalg import MAX_MATRIX_DIM

PROB_NORMALIZATION_TOL = 1e-12


def fwht(a):
    """Normalized fast Walsh-Hadamard transform along axis 0 (H^{tensor n} @ a)."""
    a = np.array(a, dtype=float, copy=True)
    dim = a.shape[0]
    h = 1
    while h < dim:
        for start in range(0, dim, 2 * h):
            x = a[start : start + h].copy()
            y = a[start + h : start + 2 * h].copy()
            a[start : start + h] = x + y
            a[start + h : start + 2 * h] = x - y
        h *= 2
    return a / np.sqrt(dim)


@dataclass(frozen=True)
class ProductProjector:
    """Rank-1 projector onto a product state of one local basis.

    basis "Z": site i holds |0> or |1> per bit i of `bits`.
    basis "X": site i holds |+> (bit 0) or |-> (bit 1).
    """

    basis: str
    bits: int
    n: int

    def __post_init__(self):
        if self.basis not in ("Z", "X"):
            raise ValueError(f"unknown projector basis {self.basis!r}")
        if not 0 <= self.bits < 2**self.n:
            raise ValueError(f"bits {self.bits} out of range for {self.n} sites")


def projector_vector(p: ProductProjector) -> np.ndarray:
    """Dense unit vector |psi> with P = |psi><psi|."""
    dim = 2**p.n
    if p.basis == "Z":
        v = np.zeros(dim)
        v[p.bits] = 1.0
        return v
    # X basis: amplitude on |j> is 2^{-n/2} * (-1)^{popcount(j & bits)}
    j = np.arange(dim)
    parity = np.zeros(dim, dtype=np.int64)
    y = j & p.bits
    while y.any():
        parity ^= y & 1
        y >>= 1
    return (1 - 2 * parity) * 2 ** (-p.n / 2)


@dataclass(frozen=True)
class HamiltonianTerm:
    """One term h_k with a complete product-state spectrum in a single basis.

    `energies[i]` is the eigenvalue on the basis state with index i, so the
    projectors {(basis, i)} are complete by construction.
    """

    label: str
    basis: str
    energies: np.ndarray
    n: int

    def spectrum(self) -> Iterator[tuple[float, ProductProjector]]:
        for i, e in enumerate(self.energies):
            yield float(e), ProductProjector(self.basis, i, self.n)

    def matrix(self) -> np.ndarray:
        dim = 2**self.n
        if dim > MAX_MATRIX_DIM:
            raise ValueError(f"term matrix dimension {dim} exceeds cap {MAX_MATRIX_DIM}")
        if self.basis == "Z":
            return np.diag(self.energies.astype(float))
        return fwht(fwht(np.diag(self.energies.astype(float))).T)


def _site_spins(L):
    """spins[j, i] = +1/-1 for bit i of index j (big-endian)."""
    j = np.arange(2**L)
    bits = (j[:, None] >> np.arange(L - 1, -1, -1)) & 1
    return 1 - 2 * bits


def _bond_energies(L, coupling, periodic):
    spins = _site_spins(L)
    bonds = [(i, (i + 1) % L) for i in range(L)] if periodic else [(i, i + 1) for i in range(L - 1)]
    e = np.zeros(2**L)
    for a, b in bonds:
        e += -coupling * spins[:, a] * spins[:, b]
    return e


def build_tfim(L, J, B, periodic=True, K=0.0) -> list[HamiltonianTerm]:
    """Transverse-field Ising chain -J sum Z_i Z_{i+1} - B sum X_i.

    With K nonzero a third term -K sum X_i X_{i+1} is appended (the XX-ZZ
    extension).  Periodic boundaries are the default; L=2 periodic counts
    the single bond twice.
    """
    if L < 2:
        raise ValueError(f"need at least 2 sites, got L={L}")
    terms = [
        HamiltonianTerm("zz", "Z", _bond_energies(L, J, periodic), L),
        HamiltonianTerm("x", "X", -B * _site_spins(L).sum(axis=1).astype(float), L),
    ]
    if K != 0.0:
        terms.append(HamiltonianTerm("xx", "X", _bond_energies(L, K, periodic), L))
    return terms


def hamiltonian_matrix(terms: Sequence[HamiltonianTerm]) -> np.ndarray:
    if not terms:
        raise ValueError("empty term list")
    n = terms[0].n
    if any(t.n != n for t in terms):
        raise ValueError("terms disagree on qubit count")
    h = np.zeros((2**n, 2**n))
    for t in terms:
        h += t.matrix()
    return h


@dataclass
class SamplingDistribution:
    """Probability-weighted product projectors realizing rho = (H + c I)/C.

    Entries with zero weight (each term's ground configuration under the
    default shift) are omitted.  An alias table over the entries is built
    eagerly so single draws cost O(1).
    """

    n: int
    probabilities: np.ndarray
    projectors: list[ProductProjector]
    shifts: dict[str, float]
    normalization: float
    _alias_prob: np.ndarray = field(init=False, repr=False)
    _alias_index: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        total = self.probabilities.sum()
        if abs(total - 1) > PROB_NORMALIZATION_TOL:
            raise ValueError(f"probabilities sum to {total!r}, expected 1")
        if len(self.projectors) != len(self.probabilities):
            raise ValueError("probability/projector length mismatch")
        self._alias_prob, self._alias_index = _build_alias_table(self.probabilities)

    def __len__(self):
        return len(self.projectors)

    def density_matrix(self) -> np.ndarray:
        """Dense rho = sum p_i P_i (for oracles and success-rate estimates)."""
        dim = 2**self.n
        if dim > MAX_MATRIX_DIM:
            raise ValueError(f"density matrix dimension {dim} exceeds cap {MAX_MATRIX_DIM}")
        diag_z = np.zeros(dim)
        diag_x = np.zeros(dim)
        for p, proj in zip(self.probabilities, self.projectors):
            if proj.basis == "Z":
                diag_z[proj.bits] += p
            else:
                diag_x[proj.bits] += p
        rho = np.diag(diag_z)
        if diag_x.any():
            rho += fwht(fwht(np.diag(diag_x)).T)
        return rho


def _build_alias_table(probs):
    """Vose alias method: O(1) draws from a discrete distribution."""
    m = len(probs)
    scaled = np.asarray(probs, dtype=float) * m
    alias_prob = np.ones(m)
    alias_index = np.arange(m)
    small = [i for i in range(m) if scaled[i] < 1.0]
    large = [i for i in range(m) if scaled[i] >= 1.0]
    scaled = scaled.copy()
    while small and large:
        s = small.pop()
        g = large.pop()
        alias_prob[s] = scaled[s]
        alias_index[s] = g
        scaled[g] = (scaled[g] + scaled[s]) - 1.0
        (small if scaled[g] < 1.0 else large).append(g)
    for i in large + small:
        alias_prob[i] = 1.0
    return alias_prob, alias_index


def build_distribution(terms: Sequence[HamiltonianTerm], shifts=None) -> SamplingDistribution:
    """Shift each term's spectrum to be non-negative and normalize to probabilities.

    `shifts` may give a per-term-label override c_k; the default is
    c_k = -min_i lambda_i^k, which zeroes out each term's ground weight.
    """
    if not terms:
        raise ValueError("empty term list")
    n = terms[0].n
    if any(t.n != n for t in terms):
        raise ValueError("terms disagree on qubit count")
    used_shifts = {}
    weights = []
    projectors = []
    for t in terms:
        c = -float(t.energies.min())
        if shifts is not None and t.label in shifts:
            c = float(shifts[t.label])
        lam_min = float(t.energies.min())
        if c < -lam_min - 1e-12:
            raise ValueError(
                f"shift {c} for term {t.label!r} leaves negative weight (min eigenvalue {lam_min})"
            )
        used_shifts[t.label] = c
        shifted = t.energies + c
        for i, lam in enumerate(shifted):
            if lam > 0.0:
                weights.append(float(lam))
                projectors.append(ProductProjector(t.basis, i, n))
    if not weights:
        raise ValueError("all shifted weights vanish; distribution is empty")
    weights = np.array(weights)
    C = float(weights.sum())
    return SamplingDistribution(
        n=n,
        probabilities=weights / C,
        projectors=projectors,
        shifts=used_shifts,
        normalization=C,
    )
