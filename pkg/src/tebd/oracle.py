"""Exact references for validating the MPS simulation.

Two independent routes:

* dense state vectors with full diagonalization of the assembled
  Hamiltonian, for chains up to ``d**n <= DENSE_CAP``;
* the two-magnon sector of the spin-1/2 Heisenberg ferromagnet, whose
  ``n(n-1)/2``-dimensional propagator is exact at any chain length.

Dense vectors use the first site as the most significant digit, so the
amplitude of configuration ``(i_0, ..., i_{n-1})`` sits at index
``sum_s i_s d**(n-1-s)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import product

import numpy as np
import scipy.sparse as sp

from .hamiltonian import LocalHamiltonian
from .mps import VidalMps, amplitude, inner_product, site_matrices

DENSE_CAP = 16384


class OracleError(ValueError):
    pass


def _check_cap(n: int, d: int, cap: int):
    if d**n > cap:
        raise OracleError(f"d**n = {d**n} exceeds the dense cap {cap}")


@dataclass
class DenseState:
    n: int
    d: int
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.shape != (self.d**self.n,):
            raise OracleError(f"expected {self.d**self.n} amplitudes, got {self.amplitudes.shape}")

    @classmethod
    def basis(cls, config, d: int = 2) -> DenseState:
        n = len(config)
        vec = np.zeros(d**n, dtype=np.complex128)
        vec[config_index(config, d)] = 1.0
        return cls(n, d, vec)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


def config_index(config, d: int = 2) -> int:
    idx = 0
    for i in config:
        idx = idx * d + int(i)
    return idx


def dense_from_mps(state: VidalMps, cap: int = DENSE_CAP) -> DenseState:
    """Contract the whole chain into a ``d**n`` vector."""
    _check_cap(state.n, state.d, cap)
    vec = np.ones((1, 1), dtype=np.complex128)
    for m in site_matrices(state):
        vec = np.tensordot(vec, m, axes=(1, 0)).reshape(-1, m.shape[2])
    return DenseState(state.n, state.d, vec[:, 0])


def embed_operator(op, sites, n: int, d: int) -> sp.csr_matrix:
    """Sparse ``d**n`` matrix of an operator on consecutive ``sites``."""
    first = sites[0]
    width = len(sites)
    left = sp.identity(d**first, dtype=np.complex128, format="csr")
    right = sp.identity(d ** (n - first - width), dtype=np.complex128, format="csr")
    return sp.kron(sp.kron(left, sp.csr_matrix(op)), right, format="csr")


def dense_hamiltonian(h: LocalHamiltonian, cap: int = DENSE_CAP, sparse: bool = False):
    n, d = h.n, h.d
    _check_cap(n, d, cap)
    total = sp.csr_matrix((d**n, d**n), dtype=np.complex128)
    for s, k1 in enumerate(h.k1):
        total = total + embed_operator(k1, (s,), n, d)
    for s, k2 in enumerate(h.k2):
        total = total + embed_operator(k2, (s, s + 1), n, d)
    return total if sparse else total.toarray()


class DenseEvolver:
    """``exp(-iHt)`` for a fixed Hamiltonian, diagonalized once."""

    def __init__(self, h: LocalHamiltonian, cap: int = DENSE_CAP):
        self.n, self.d = h.n, h.d
        mat = dense_hamiltonian(h, cap)
        self.energies, self.vectors = np.linalg.eigh(mat)

    def evolve(self, state: DenseState, t: float) -> DenseState:
        if (state.n, state.d) != (self.n, self.d):
            raise OracleError("state and Hamiltonian shapes differ")
        coeffs = self.vectors.conj().T @ state.amplitudes
        out = self.vectors @ (np.exp(-1j * self.energies * t) * coeffs)
        return DenseState(self.n, self.d, out)

    def ground_state(self) -> tuple[float, DenseState]:
        return float(self.energies[0]), DenseState(self.n, self.d, self.vectors[:, 0].copy())


def dense_evolve(state: DenseState, h: LocalHamiltonian, t: float, cap: int = DENSE_CAP) -> DenseState:
    return DenseEvolver(h, cap).evolve(state, t)


def dense_ground_state(h: LocalHamiltonian, cap: int = DENSE_CAP) -> tuple[float, DenseState]:
    return DenseEvolver(h, cap).ground_state()


def dense_expectation(state: DenseState, op) -> complex:
    op_psi = op @ state.amplitudes
    return complex(np.vdot(state.amplitudes, op_psi))


# -- two-magnon sector --------------------------------------------------------


class TwoMagnonBasis:
    """Lexicographically ordered pairs ``(i, j)``, ``0 <= i < j < n``, of flipped sites."""

    def __init__(self, n: int):
        if n < 2:
            raise OracleError("need n >= 2")
        self.n = n
        self.pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        self.index = {p: k for k, p in enumerate(self.pairs)}

    def __len__(self):
        return len(self.pairs)

    def config(self, k: int) -> list[int]:
        cfg = [0] * self.n
        i, j = self.pairs[k]
        cfg[i] = cfg[j] = 1
        return cfg

    @cached_property
    def dense_indices(self) -> np.ndarray:
        return np.array([config_index(self.config(k)) for k in range(len(self))])

    @cached_property
    def pair_matrix(self) -> np.ndarray:
        """``pair_matrix[i, j]`` is the basis index of ``(i, j)`` (``-1`` where ``i >= j``)."""
        out = -np.ones((self.n, self.n), dtype=int)
        for k, (i, j) in enumerate(self.pairs):
            out[i, j] = k
        return out


def two_magnon_hamiltonian(n: int, b_field: float, j_coupling: float) -> np.ndarray:
    """Heisenberg ferromagnet restricted to states with exactly two down spins."""
    basis = TwoMagnonBasis(n)
    dim = len(basis)
    mat = np.zeros((dim, dim))
    field_energy = -b_field * (n - 4)
    for k, (i, j) in enumerate(basis.pairs):
        flips = {i, j}
        diag = field_energy
        for left in range(n - 1):
            right = left + 1
            if (left in flips) == (right in flips):
                diag -= j_coupling
                continue
            # antiparallel bond: s.s = 2 SWAP - 1
            diag += j_coupling
            moved = tuple(sorted((flips - {left, right}) | ({left, right} - flips)))
            mat[basis.index[moved], k] += -2.0 * j_coupling
        mat[k, k] = diag
    return mat


@dataclass
class TwoMagnonState:
    n: int
    amplitudes: np.ndarray

    @cached_property
    def basis(self) -> TwoMagnonBasis:
        return TwoMagnonBasis(self.n)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def to_dense(self, cap: int = DENSE_CAP) -> DenseState:
        _check_cap(self.n, 2, cap)
        vec = np.zeros(2**self.n, dtype=np.complex128)
        vec[self.basis.dense_indices] = self.amplitudes
        return DenseState(self.n, 2, vec)


class TwoMagnonPropagator:
    """Exact evolution inside the two-flip sector; one diagonalization, any ``t``."""

    def __init__(self, n: int, b_field: float = 1.0, j_coupling: float = 1.0):
        self.n = n
        self.basis = TwoMagnonBasis(n)
        self.energies, self.vectors = np.linalg.eigh(two_magnon_hamiltonian(n, b_field, j_coupling))

    def evolve(self, init, t: float) -> TwoMagnonState:
        if isinstance(init, TwoMagnonState):
            start = init.amplitudes
        else:
            start = np.zeros(len(self.basis), dtype=np.complex128)
            start[self.basis.index[tuple(init)]] = 1.0
        coeffs = self.vectors.T @ start
        return TwoMagnonState(self.n, self.vectors @ (np.exp(-1j * self.energies * t) * coeffs))


def two_magnon_evolve(n: int, b_field: float, j_coupling: float, init_pair, t: float) -> TwoMagnonState:
    """Exact state at time ``t`` starting from spins ``init_pair`` flipped (0-based, ``i < j``)."""
    i, j = init_pair
    if not 0 <= i < j < n:
        raise OracleError(f"pair {init_pair} not in the basis for n={n}")
    return TwoMagnonPropagator(n, b_field, j_coupling).evolve((i, j), t)


def two_magnon_overlap(exact: TwoMagnonState, state: VidalMps) -> complex:
    """``<exact|state>`` without densifying: a left sweep carrying the zero-,
    one- and two-flip partial contractions, ``O(n^2 chi^2)``."""
    if state.n != exact.n or state.d != 2:
        raise OracleError("two-magnon overlap needs a spin-1/2 MPS of matching length")
    n = exact.n
    coeff = np.zeros((n, n), dtype=np.complex128)
    pm = exact.basis.pair_matrix
    mask = pm >= 0
    coeff[mask] = np.conj(exact.amplitudes[pm[mask]])
    v0 = np.ones((1, 1), dtype=np.complex128)
    v1 = np.zeros((0, 1), dtype=np.complex128)
    v2 = np.zeros((1, 1), dtype=np.complex128)
    for s, m in enumerate(site_matrices(state)):
        up, down = m[:, 0, :], m[:, 1, :]
        # pairs completed at site s: sum_i conj(c_{i,s}) v1[i] @ down
        v2 = v2 @ up + (coeff[:s, s][None, :] @ v1) @ down if s else v2 @ up
        v1 = np.vstack((v1 @ up, v0 @ down)) if s else v0 @ down
        v0 = v0 @ up
    return complex(v2[0, 0])


def two_magnon_overlap_by_amplitudes(exact: TwoMagnonState, state: VidalMps) -> complex:
    """Reference version: explicit sum of ``n(n-1)/2`` MPS amplitudes."""
    total = 0.0 + 0.0j
    for k in range(len(exact.basis)):
        total += np.conj(exact.amplitudes[k]) * amplitude(state, exact.basis.config(k))
    return complex(total)


def _overlap_and_norms(a, b) -> tuple[complex, float, float]:
    if isinstance(a, VidalMps) and not isinstance(b, VidalMps):
        ov, na, nb = _overlap_and_norms(b, a)
        return np.conj(ov), nb, na
    if isinstance(a, TwoMagnonState):
        if isinstance(b, TwoMagnonState):
            return complex(np.vdot(a.amplitudes, b.amplitudes)), a.norm(), b.norm()
        if isinstance(b, VidalMps):
            return two_magnon_overlap(a, b), a.norm(), float(np.sqrt(inner_product(b, b).real))
        a = a.to_dense()
    if isinstance(b, TwoMagnonState):
        b = b.to_dense()
    if isinstance(a, VidalMps) and isinstance(b, VidalMps):
        return inner_product(a, b), float(np.sqrt(inner_product(a, a).real)), float(np.sqrt(inner_product(b, b).real))
    if isinstance(b, VidalMps):
        b = dense_from_mps(b)
    if not (isinstance(a, DenseState) and isinstance(b, DenseState)):
        raise OracleError(f"cannot compare {type(a).__name__} with {type(b).__name__}")
    if (a.n, a.d) != (b.n, b.d):
        raise OracleError("state shapes differ")
    return complex(np.vdot(a.amplitudes, b.amplitudes)), a.norm(), b.norm()


def fidelity_error(a, b) -> float:
    """``1 - |<a|b>|^2`` for unit-normalized copies of ``a`` and ``b``.

    Accepts any mix of :class:`DenseState`, :class:`TwoMagnonState` and
    :class:`~tebd.mps.VidalMps`; an MPS is compared with a two-magnon state
    without densification.
    """
    ov, na, nb = _overlap_and_norms(a, b)
    if na == 0.0 or nb == 0.0:
        raise OracleError("zero-norm state")
    return float(1.0 - abs(ov) ** 2 / (na * na * nb * nb))


def all_configs(n: int, d: int = 2):
    return product(range(d), repeat=n)
