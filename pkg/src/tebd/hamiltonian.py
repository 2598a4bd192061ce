"""Nearest-neighbour Hamiltonians and their Trotter gate schedules.

A :class:`LocalHamiltonian` holds one single-site term per site and one
two-site term per bond. Bond ``l`` couples sites ``l-1`` and ``l`` (see
:mod:`tebd.mps` for the indexing convention). The single-site term of site
``s`` is attached to bond ``s+1`` as ``K1 x I``; the F layer collects the
even bonds, the G layer the odd ones. The last site has no bond of its own,
so its term becomes a single-site gate in the layer matching the parity of
``n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .kernel import HERMITIAN_TOL, as_matrix, expm_hermitian, is_hermitian

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)
#: Lowers sigma_z: maps spin up |0> to spin down |1>.
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=np.complex128)
SIGMA_PLUS = SIGMA_MINUS.T.copy()
IDENTITY2 = np.eye(2, dtype=np.complex128)


class HamiltonianError(ValueError):
    pass


class TimeAxis(str, Enum):
    REAL = "real"
    IMAGINARY = "imaginary"


@dataclass(frozen=True)
class LocalHamiltonian:
    """``H = sum_s k1[s] + sum_l k2[l-1]`` with ``k2[l-1]`` acting on bond ``l``."""

    k1: tuple
    k2: tuple

    def __init__(self, k1: Sequence, k2: Sequence):
        k1 = tuple(as_matrix(m, name="single-site term") for m in k1)
        k2 = tuple(as_matrix(m, name="two-site term") for m in k2)
        if len(k1) < 2 or len(k2) != len(k1) - 1:
            raise HamiltonianError(f"need n >= 2 site terms and n-1 bond terms, got {len(k1)} and {len(k2)}")
        d = k1[0].shape[0]
        for m in k1:
            if m.shape != (d, d) or not is_hermitian(m, HERMITIAN_TOL):
                raise HamiltonianError(f"single-site terms must be Hermitian {d}x{d}")
        for m in k2:
            if m.shape != (d * d, d * d) or not is_hermitian(m, HERMITIAN_TOL):
                raise HamiltonianError(f"two-site terms must be Hermitian {d * d}x{d * d}")
        object.__setattr__(self, "k1", k1)
        object.__setattr__(self, "k2", k2)

    @property
    def n(self) -> int:
        return len(self.k1)

    @property
    def d(self) -> int:
        return self.k1[0].shape[0]

    def bond_term(self, bond: int) -> np.ndarray:
        return self.k2[bond - 1]


@dataclass(frozen=True)
class Term:
    """A piece of the Hamiltonian (or a gate) acting on ``sites``."""

    sites: tuple[int, ...]
    matrix: np.ndarray

    @property
    def bond(self) -> int | None:
        """Bond label for two-site terms, ``None`` for single-site ones."""
        return self.sites[1] if len(self.sites) == 2 else None


@dataclass
class GateSchedule:
    """Gate layers realizing one Trotter step of length ``delta``."""

    delta: float
    order: int
    axis: TimeAxis
    layers: list[list[Term]] = field(default_factory=list)

    def gates(self):
        for layer in self.layers:
            yield from layer


def zero_hamiltonian(n: int, d: int = 2) -> LocalHamiltonian:
    return LocalHamiltonian([np.zeros((d, d))] * n, [np.zeros((d * d, d * d))] * (n - 1))


def heisenberg_ferromagnet(n: int, b_field: float = 1.0, j_coupling: float = 1.0) -> LocalHamiltonian:
    """Spin-1/2 chain ``-B sum sz - J sum s.s`` (Pauli matrices, open ends)."""
    if n < 2:
        raise HamiltonianError("need n >= 2")
    exchange = np.kron(SIGMA_X, SIGMA_X) + np.kron(SIGMA_Y, SIGMA_Y) + np.kron(SIGMA_Z, SIGMA_Z)
    return LocalHamiltonian([-b_field * SIGMA_Z] * n, [-j_coupling * exchange] * (n - 1))


def transverse_ising(n: int, field_strength: float = 1.0, coupling: float = 1.0) -> LocalHamiltonian:
    """``-g sum sx - J sum sz sz``."""
    if n < 2:
        raise HamiltonianError("need n >= 2")
    return LocalHamiltonian([-field_strength * SIGMA_X] * n, [-coupling * np.kron(SIGMA_Z, SIGMA_Z)] * (n - 1))


def uniform_field(n: int, direction: Sequence[float] = (0.0, 0.0, 1.0), strength: float = 1.0) -> LocalHamiltonian:
    """Decoupled spins in a field: ``-h sum (n . sigma)``; product ground state."""
    nx, ny, nz = direction
    k1 = -strength * (nx * SIGMA_X + ny * SIGMA_Y + nz * SIGMA_Z)
    return LocalHamiltonian([k1] * n, [np.zeros((4, 4))] * (n - 1))


def interpolate(h_start: LocalHamiltonian, h_end: LocalHamiltonian, s: float) -> LocalHamiltonian:
    """Term-wise ``(1-s) h_start + s h_end``."""
    if h_start.n != h_end.n or h_start.d != h_end.d:
        raise HamiltonianError("Hamiltonians differ in n or d")
    if s == 0.0:
        return h_start
    if s == 1.0:
        return h_end
    k1 = [(1 - s) * a + s * b for a, b in zip(h_start.k1, h_end.k1)]
    k2 = [(1 - s) * a + s * b for a, b in zip(h_start.k2, h_end.k2)]
    return LocalHamiltonian(k1, k2)


def even_odd_split(h: LocalHamiltonian) -> tuple[list[Term], list[Term]]:
    """Partition ``H`` into the commuting layers ``F`` (even bonds) and ``G`` (odd bonds).

    Each bond term is ``k1[l-1] x I + k2[l-1]``; the last site's single-body
    term is returned as a one-site :class:`Term` in the layer of parity ``n``.
    """
    n, d = h.n, h.d
    eye = np.eye(d)
    f_terms, g_terms = [], []
    for bond in range(1, n):
        term = Term((bond - 1, bond), np.kron(h.k1[bond - 1], eye) + h.k2[bond - 1])
        (f_terms if bond % 2 == 0 else g_terms).append(term)
    last = Term((n - 1,), h.k1[n - 1])
    (f_terms if n % 2 == 0 else g_terms).append(last)
    return f_terms, g_terms


def _exp_layer(terms: list[Term], scale: complex) -> list[Term]:
    return [Term(t.sites, expm_hermitian(t.matrix, scale)) for t in terms]


def make_schedule(h: LocalHamiltonian, delta: float, order: int = 2, axis: TimeAxis | str = TimeAxis.REAL) -> GateSchedule:
    """Gate layers for one Trotter step.

    ``order=1`` gives ``[F(delta), G(delta)]`` and ``order=2`` the symmetric
    ``[F(delta/2), G(delta), F(delta/2)]``. Real-time gates are
    ``exp(-i term dt)``, imaginary-time ones ``exp(-term dt)``.
    """
    axis = TimeAxis(axis)
    if not delta > 0:
        raise HamiltonianError(f"delta must be positive, got {delta}")
    if order not in (1, 2):
        raise HamiltonianError(f"unsupported Trotter order {order}; only 1 and 2 are implemented")
    unit = -1j if axis is TimeAxis.REAL else -1.0
    f_terms, g_terms = even_odd_split(h)
    if order == 1:
        layers = [_exp_layer(f_terms, unit * delta), _exp_layer(g_terms, unit * delta)]
    else:
        half = _exp_layer(f_terms, unit * delta / 2)
        layers = [half, _exp_layer(g_terms, unit * delta), half]
    return GateSchedule(delta=delta, order=order, axis=axis, layers=layers)


def from_spec(spec: dict, n: int) -> LocalHamiltonian:
    """Build a Hamiltonian from a plain-data description.

    Recognized forms::

        {"model": "ferromagnet", "B": 1.0, "J": 1.0}
        {"model": "transverse_ising", "g": 1.0, "J": 1.0}
        {"model": "field", "direction": [1, 0, 0], "h": 1.0}
        {"model": "explicit", "k1": M or [M, ...], "k2": M or [M, ...]}

    where a matrix ``M`` is either a nested list of reals or
    ``{"re": [[...]], "im": [[...]]}``. A single matrix is repeated on every
    site (or bond).
    """
    spec = dict(spec)
    model = spec.pop("model", None)
    allowed = {
        "ferromagnet": {"B", "J"},
        "transverse_ising": {"g", "J"},
        "field": {"direction", "h"},
        "explicit": {"k1", "k2"},
    }
    if model not in allowed:
        raise HamiltonianError(f"unknown model {model!r}; expected one of {sorted(allowed)}")
    unknown = set(spec) - allowed[model]
    if unknown:
        raise HamiltonianError(f"unknown keys for model {model!r}: {sorted(unknown)}")
    if model == "ferromagnet":
        return heisenberg_ferromagnet(n, float(spec.get("B", 1.0)), float(spec.get("J", 1.0)))
    if model == "transverse_ising":
        return transverse_ising(n, float(spec.get("g", 1.0)), float(spec.get("J", 1.0)))
    if model == "field":
        return uniform_field(n, tuple(spec.get("direction", (0.0, 0.0, 1.0))), float(spec.get("h", 1.0)))
    k1 = _matrix_list(spec["k1"], n)
    k2 = _matrix_list(spec["k2"], n - 1)
    return LocalHamiltonian(k1, k2)


def parse_matrix(data) -> np.ndarray:
    """A nested list of numbers, or ``{"re": [[...]], "im": [[...]]}``."""
    if isinstance(data, dict):
        if set(data) - {"re", "im"}:
            raise HamiltonianError(f"matrix keys must be 're'/'im', got {sorted(data)}")
        re = np.asarray(data.get("re", 0.0), dtype=float)
        im = np.asarray(data.get("im", np.zeros_like(re)), dtype=float)
        return re + 1j * im
    return np.asarray(data, dtype=np.complex128)


def _matrix_list(data, count: int) -> list[np.ndarray]:
    if isinstance(data, dict):
        return [parse_matrix(data)] * count
    if isinstance(data[0], (list, tuple)) and not isinstance(data[0][0], (list, tuple, dict)):
        return [parse_matrix(data)] * count
    mats = [parse_matrix(m) for m in data]
    if len(mats) != count:
        raise HamiltonianError(f"expected {count} matrices, got {len(mats)}")
    return mats
