"""Matrix product states in the Gamma/lambda (Vidal) form.

Conventions used throughout the package:

* sites are 0-based, ``0 .. n-1``;
* a *bond* is labelled by the number of sites to its left, ``l = 1 .. n-1``,
  so bond ``l`` sits between sites ``l-1`` and ``l`` and carries
  ``lambdas[l]``. ``lambdas[0]`` and ``lambdas[n]`` are dummy ``(1,)`` vectors;
* ``gammas[s]`` has shape ``(chi_s, d, chi_{s+1})`` with ``chi_s = len(lambdas[s])``;
* basis state ``|0>`` is spin up (sigma_z = +1), ``|1>`` is spin down.

States are treated as immutable: every operation returns a new
:class:`VidalMps` that shares the untouched arrays with its input.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Sequence

import numpy as np
from numpy.typing import NDArray

from .kernel import KernelError, as_matrix, contract_bond_gate, is_unitary, svd

#: Singular values below this fraction of the largest one are numerical zeros.
NUMERICAL_ZERO = 1e-14
#: Boundary Schmidt values below this are never used as divisors.
DIVISION_FLOOR = 1e-12

_MAGIC = b"VIDALMPS"
_FORMAT_VERSION = 1


class MpsError(ValueError):
    """Invalid operation on a matrix product state."""


@dataclass(frozen=True)
class TruncationPolicy:
    """How many Schmidt values survive a two-site update.

    The smallest rank whose discarded weight stays below ``weight_tol`` is
    kept, then capped at ``chi_max`` (the cap wins). ``chi_max=None`` means
    no cap.
    """

    chi_max: int | None = None
    weight_tol: float = 0.0
    renormalize: bool = True

    def __post_init__(self):
        if self.chi_max is not None and self.chi_max < 1:
            raise MpsError(f"chi_max must be >= 1, got {self.chi_max}")
        if not self.weight_tol >= 0.0:
            raise MpsError(f"weight_tol must be non-negative, got {self.weight_tol}")

    def select_rank(self, s: NDArray[np.float64]) -> int:
        """Number of leading singular values to keep out of ``s`` (sorted)."""
        if s.size == 0 or s[0] <= 0.0:
            return 1
        rank = int(np.count_nonzero(s > NUMERICAL_ZERO * s[0]))
        if self.weight_tol > 0.0:
            sq = s[:rank] ** 2
            # tails[k] = weight discarded when keeping k values
            tails = np.concatenate((np.cumsum(sq[::-1])[::-1], [0.0]))
            rank = int(np.argmax(tails <= self.weight_tol))
        if self.chi_max is not None:
            rank = min(rank, self.chi_max)
        return max(rank, 1)


NO_TRUNCATION = TruncationPolicy()


class VidalMps:
    """An ``n``-site pure state stored as Gamma tensors and Schmidt vectors."""

    __slots__ = ("gammas", "lambdas")

    def __init__(self, gammas: Sequence[np.ndarray], lambdas: Sequence[np.ndarray], *, check: bool = True):
        self.gammas = tuple(gammas)
        self.lambdas = tuple(lambdas)
        if check:
            self._validate()

    def _validate(self):
        n = len(self.gammas)
        if n < 2:
            raise MpsError(f"need at least 2 sites, got {n}")
        if len(self.lambdas) != n + 1:
            raise MpsError(f"expected {n + 1} bond vectors, got {len(self.lambdas)}")
        d = self.gammas[0].shape[1] if self.gammas[0].ndim == 3 else -1
        if d < 2:
            raise MpsError("physical dimension must be >= 2")
        for end in (0, n):
            if self.lambdas[end].shape != (1,):
                raise MpsError("boundary bond vectors must have length 1")
        for s, g in enumerate(self.gammas):
            if g.ndim != 3 or g.shape[1] != d:
                raise MpsError(f"site {s}: bad tensor shape {g.shape}")
            if g.shape[0] != self.lambdas[s].shape[0] or g.shape[2] != self.lambdas[s + 1].shape[0]:
                raise MpsError(f"site {s}: bond dimensions {g.shape} do not chain with neighbours")
            if not np.all(np.isfinite(g)):
                raise MpsError(f"site {s}: non-finite entries")
        for lam in self.lambdas:
            if lam.ndim != 1 or not np.all(np.isfinite(lam)) or np.any(lam < 0):
                raise MpsError("bond vectors must be finite and non-negative")

    @property
    def n(self) -> int:
        return len(self.gammas)

    @property
    def d(self) -> int:
        return self.gammas[0].shape[1]

    @property
    def bond_dims(self) -> list[int]:
        """Ranks of the interior bonds ``1 .. n-1``."""
        return [lam.shape[0] for lam in self.lambdas[1:-1]]

    def replace(self, sites: dict[int, np.ndarray] | None = None, bonds: dict[int, np.ndarray] | None = None) -> VidalMps:
        gammas = list(self.gammas)
        lambdas = list(self.lambdas)
        for s, g in (sites or {}).items():
            gammas[s] = g
        for b, lam in (bonds or {}).items():
            lambdas[b] = lam
        return VidalMps(gammas, lambdas, check=False)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.gammas) and all(np.all(np.isfinite(x)) for x in self.lambdas)

    def __repr__(self):
        return f"VidalMps(n={self.n}, d={self.d}, chi={max(self.bond_dims)})"


def _check_site(state: VidalMps, site: int):
    if not 0 <= site < state.n:
        raise MpsError(f"site {site} out of range for n={state.n}")


def _check_bond(state: VidalMps, bond: int):
    if not 1 <= bond <= state.n - 1:
        raise MpsError(f"bond {bond} out of range 1..{state.n - 1}")


def from_product_state(local_states: Sequence) -> VidalMps:
    """Product state ``|phi_0> x ... x |phi_{n-1}>`` with all bond ranks 1."""
    vecs = [np.asarray(v, dtype=np.complex128).ravel() for v in local_states]
    if len(vecs) < 2:
        raise MpsError("need at least 2 sites")
    d = vecs[0].size
    gammas = []
    for s, v in enumerate(vecs):
        if v.size != d:
            raise MpsError(f"site {s}: local dimension {v.size} != {d}")
        if abs(np.linalg.norm(v) - 1.0) > 1e-12:
            raise MpsError(f"site {s}: local vector is not normalized")
        gammas.append(v.reshape(1, d, 1).copy())
    lambdas = [np.ones(1) for _ in range(len(vecs) + 1)]
    return VidalMps(gammas, lambdas)


def basis_state(config: Sequence[int], d: int = 2) -> VidalMps:
    """Computational basis product state, e.g. ``basis_state([1, 1, 0, 0])``."""
    return from_product_state([np.eye(d)[i] for i in config])


def from_dense(psi, n: int, d: int = 2, policy: TruncationPolicy = NO_TRUNCATION) -> VidalMps:
    """Decompose a dense state vector (first site most significant)."""
    psi = np.asarray(psi, dtype=np.complex128).ravel()
    if psi.size != d**n:
        raise MpsError(f"vector of length {psi.size} is not d**n = {d**n}")
    tensors = []
    rest = psi.reshape(1, -1)
    for _ in range(n - 1):
        chi = rest.shape[0]
        q, r = np.linalg.qr(rest.reshape(chi * d, -1))
        tensors.append(q.reshape(chi, d, q.shape[1]))
        rest = r
    tensors.append(rest.reshape(rest.shape[0], d, 1))
    return _from_left_canonical(tensors, policy)


def _from_left_canonical(tensors: list[np.ndarray], policy: TruncationPolicy = NO_TRUNCATION) -> VidalMps:
    """Vidal form from left-orthonormal tensors ``A_0 .. A_{n-2}`` and a free last tensor."""
    n = len(tensors)
    d = tensors[0].shape[1]
    norm = np.linalg.norm(tensors[-1])
    if norm == 0.0:
        raise MpsError("state has zero norm")
    c = tensors[-1] / norm
    right = [None] * n
    lambdas = [None] * (n + 1)
    lambdas[0] = np.ones(1)
    lambdas[n] = np.ones(1)
    for s in range(n - 1, 0, -1):
        chi_l, _, chi_r = c.shape
        u, sv, vh = svd(c.reshape(chi_l, d * chi_r))
        k = policy.select_rank(sv)
        sv = sv[:k]
        sv = sv / np.linalg.norm(sv)
        right[s] = vh[:k].reshape(k, d, chi_r)
        lambdas[s] = sv
        c = np.tensordot(tensors[s - 1], u[:, :k] * sv, axes=(2, 0))
    c = c / np.linalg.norm(c)
    right[0] = c
    gammas = []
    for s in range(n):
        b = right[s]
        if s < n - 1:
            b = b / lambdas[s + 1][None, None, :]
        gammas.append(b)
    return VidalMps(gammas, lambdas)


def canonicalize(state: VidalMps, policy: TruncationPolicy = NO_TRUNCATION) -> VidalMps:
    """Rebuild exact Vidal form (unit norm, orthonormal Schmidt vectors).

    A left-to-right QR sweep followed by a right-to-left SVD sweep; numerical
    zeros are dropped and ``policy`` may truncate further.
    """
    tensors = []
    r = np.ones((1, 1), dtype=np.complex128)
    for s, g in enumerate(state.gammas):
        m = np.tensordot(r, g * state.lambdas[s + 1][None, None, :], axes=(1, 0))
        chi_l, d, chi_r = m.shape
        if s == state.n - 1:
            tensors.append(m)
            break
        q, r = np.linalg.qr(m.reshape(chi_l * d, chi_r))
        tensors.append(q.reshape(chi_l, d, q.shape[1]))
    return _from_left_canonical(tensors, policy)


def normalize(state: VidalMps) -> VidalMps:
    """Unit-norm copy of ``state`` with every bond vector restored to Schmidt form.

    Raises
    ------
    MpsError
        If the state has zero norm.
    """
    return canonicalize(state)


def apply_single_site_gate(state: VidalMps, site: int, u, *, allow_nonunitary: bool = False) -> VidalMps:
    """Apply a ``d x d`` operator to one site. Only ``gammas[site]`` changes."""
    _check_site(state, site)
    u = as_matrix(u, name="single-site gate")
    if u.shape != (state.d, state.d):
        raise MpsError(f"gate must be {state.d}x{state.d}, got {u.shape}")
    if not allow_nonunitary and not is_unitary(u):
        raise MpsError("gate is not unitary (pass allow_nonunitary=True for imaginary time)")
    g = np.matmul(u, state.gammas[site])
    return state.replace(sites={site: g})


def apply_two_site_gate(
    state: VidalMps,
    bond: int,
    v,
    policy: TruncationPolicy = NO_TRUNCATION,
) -> tuple[VidalMps, float]:
    """Apply a ``d^2 x d^2`` gate on sites ``bond-1, bond`` and re-split.

    Returns the updated state and the discarded weight, the sum of squared
    singular values dropped from the un-renormalized spectrum.
    """
    _check_bond(state, bond)
    d = state.d
    v = np.asarray(v, dtype=np.complex128)
    if v.shape != (d * d, d * d):
        raise MpsError(f"gate must be {d * d}x{d * d}, got {v.shape}")
    left, right = bond - 1, bond
    lam_l = state.lambdas[left]
    lam_r = state.lambdas[right + 1]
    theta = contract_bond_gate(
        lam_l, state.gammas[left], state.lambdas[bond], state.gammas[right], lam_r, v
    )
    u, s, vh = svd(theta)
    k = policy.select_rank(s)
    discarded = float(np.sum(s[k:] ** 2))
    s = s[:k]
    if policy.renormalize:
        s = s / np.linalg.norm(s)
    chi_l, chi_r = lam_l.shape[0], lam_r.shape[0]
    new_left = u[:, :k].reshape(chi_l, d, k) * _safe_inverse(lam_l)[:, None, None]
    new_right = vh[:k].reshape(k, d, chi_r) * _safe_inverse(lam_r)[None, None, :]
    return state.replace(sites={left: new_left, right: new_right}, bonds={bond: s}), discarded


def _safe_inverse(lam: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(lam >= DIVISION_FLOOR, 1.0 / lam, 0.0)


def schmidt_spectrum(state: VidalMps, bond: int) -> NDArray[np.float64]:
    """Schmidt coefficients across bond ``bond`` (sites ``0..bond-1`` vs the rest)."""
    _check_bond(state, bond)
    return state.lambdas[bond].copy()


def chi_profile(state: VidalMps) -> tuple[list[int], int]:
    ranks = state.bond_dims
    return ranks, max(ranks)


def amplitude(state: VidalMps, config: Sequence[int]) -> complex:
    if len(config) != state.n:
        raise MpsError(f"configuration has {len(config)} entries, need {state.n}")
    vec = np.ones(1, dtype=np.complex128)
    for s, i in enumerate(config):
        if not 0 <= i < state.d:
            raise MpsError(f"index {i} at site {s} outside [0, {state.d})")
        vec = (vec @ state.gammas[s][:, i, :]) * state.lambdas[s + 1]
    return complex(vec[0])


def site_matrices(state: VidalMps) -> list[np.ndarray]:
    """Tensors ``Gamma_s * lambda_{s+1}`` (right-canonical when the state is)."""
    return [g * state.lambdas[s + 1][None, None, :] for s, g in enumerate(state.gammas)]


def inner_product(a: VidalMps, b: VidalMps) -> complex:
    """``<a|b>`` by transfer-matrix contraction from the left."""
    if a.n != b.n or a.d != b.d:
        raise MpsError(f"shape mismatch: ({a.n}, {a.d}) vs ({b.n}, {b.d})")
    env = np.ones((1, 1), dtype=np.complex128)
    for ma, mb in zip(site_matrices(a), site_matrices(b)):
        tmp = np.tensordot(env, mb, axes=(1, 0))
        env = np.tensordot(ma.conj(), tmp, axes=([0, 1], [0, 1]))
    return complex(env[0, 0])


def norm_squared(state: VidalMps) -> float:
    return inner_product(state, state).real


def expect_local(state: VidalMps, site: int, op) -> complex:
    """``<psi| op_site |psi>`` from the local canonical environment."""
    _check_site(state, site)
    op = as_matrix(op, name="operator")
    if op.shape != (state.d, state.d):
        raise MpsError(f"operator must be {state.d}x{state.d}, got {op.shape}")
    theta = state.gammas[site] * state.lambdas[site][:, None, None] * state.lambdas[site + 1][None, None, :]
    return complex(np.vdot(theta, np.matmul(op, theta)))


def expect_bond(state: VidalMps, bond: int, op) -> complex:
    """``<psi| op |psi>`` for a two-site operator on sites ``bond-1, bond``."""
    _check_bond(state, bond)
    d = state.d
    op = as_matrix(op, name="operator")
    if op.shape != (d * d, d * d):
        raise MpsError(f"operator must be {d * d}x{d * d}, got {op.shape}")
    left = bond - 1
    theta = contract_bond_gate(
        state.lambdas[left], state.gammas[left], state.lambdas[bond], state.gammas[bond], state.lambdas[bond + 1]
    )
    chi_l = state.lambdas[left].shape[0]
    theta = theta.reshape(chi_l, d * d, -1)
    return complex(np.vdot(theta, np.matmul(op, theta)))


def canonical_form_errors(state: VidalMps) -> tuple[list[float], list[float]]:
    """Deviation from identity of the left and right environments at each bond.

    ``left[l-1]`` is the max-abs error of the contraction of sites
    ``0..l-1`` with their conjugate (interior bonds weighted by lambda^2);
    ``right[l-1]`` is the same for sites ``l..n-1``.
    """
    n = state.n
    left_errs, right_errs = [], []
    env = np.ones((1, 1), dtype=np.complex128)
    for s in range(n - 1):
        lam = state.lambdas[s]
        g = state.gammas[s]
        weighted = lam[:, None] * env * lam[None, :]
        tmp = np.tensordot(weighted, g, axes=(1, 0))
        env = np.tensordot(g.conj(), tmp, axes=([0, 1], [0, 1]))
        left_errs.append(float(np.max(np.abs(env - np.eye(env.shape[0])))))
    env = np.ones((1, 1), dtype=np.complex128)
    for s in range(n - 1, 0, -1):
        lam = state.lambdas[s + 1]
        g = state.gammas[s]
        weighted = lam[:, None] * env * lam[None, :]
        tmp = np.tensordot(g, weighted, axes=(2, 0))
        env = np.tensordot(tmp, g.conj(), axes=([1, 2], [1, 2]))
        right_errs.insert(0, float(np.max(np.abs(env - np.eye(env.shape[0])))))
    return left_errs, right_errs


def random_mps(n: int, d: int, chi: int, rng: np.random.Generator) -> VidalMps:
    """Random normalized state with bond ranks ``min(chi, d**l, d**(n-l))``."""
    tensors = []
    chi_l = 1
    for s in range(n):
        chi_r = min(chi, d ** (s + 1), d ** (n - s - 1))
        m = rng.normal(size=(chi_l, d, chi_r)) + 1j * rng.normal(size=(chi_l, d, chi_r))
        tensors.append(m)
        chi_l = chi_r
    r = np.ones((1, 1), dtype=np.complex128)
    left = []
    for s, m in enumerate(tensors):
        m = np.tensordot(r, m, axes=(1, 0))
        if s == n - 1:
            left.append(m)
            break
        q, r = np.linalg.qr(m.reshape(-1, m.shape[2]))
        left.append(q.reshape(m.shape[0], d, q.shape[1]))
    return _from_left_canonical(left)


# -- snapshots ---------------------------------------------------------------
#
# Layout (all integers little-endian uint32, floats little-endian IEEE-754):
#   8 bytes  magic "VIDALMPS"
#   uint32   format version
#   uint32   n, uint32 d
#   n+1 x uint32   bond vector lengths
#   n+1 bond vectors as float64
#   n site tensors as complex128 (re, im interleaved), C order over
#   (left, physical, right)


def write_snapshot(state: VidalMps, fh: BinaryIO):
    dims = [lam.shape[0] for lam in state.lambdas]
    fh.write(_MAGIC)
    fh.write(struct.pack("<III", _FORMAT_VERSION, state.n, state.d))
    fh.write(struct.pack(f"<{len(dims)}I", *dims))
    for lam in state.lambdas:
        fh.write(np.ascontiguousarray(lam, dtype="<f8").tobytes())
    for g in state.gammas:
        fh.write(np.ascontiguousarray(g, dtype="<c16").tobytes())


def read_snapshot(fh: BinaryIO) -> VidalMps:
    if fh.read(len(_MAGIC)) != _MAGIC:
        raise MpsError("not an MPS snapshot")
    version, n, d = struct.unpack("<III", fh.read(12))
    if version != _FORMAT_VERSION:
        raise MpsError(f"unsupported snapshot version {version}")
    dims = struct.unpack(f"<{n + 1}I", fh.read(4 * (n + 1)))
    lambdas = [np.frombuffer(fh.read(8 * k), dtype="<f8").astype(np.float64) for k in dims]
    gammas = []
    for s in range(n):
        shape = (dims[s], d, dims[s + 1])
        count = int(np.prod(shape))
        gammas.append(np.frombuffer(fh.read(16 * count), dtype="<c16").astype(np.complex128).reshape(shape))
    return VidalMps(gammas, lambdas)


def save_snapshot(state: VidalMps, path):
    with open(path, "wb") as fh:
        write_snapshot(state, fh)


def load_snapshot(path) -> VidalMps:
    with open(path, "rb") as fh:
        return read_snapshot(fh)


__all__ = [
    "DIVISION_FLOOR",
    "KernelError",
    "MpsError",
    "NO_TRUNCATION",
    "NUMERICAL_ZERO",
    "TruncationPolicy",
    "VidalMps",
    "amplitude",
    "apply_single_site_gate",
    "apply_two_site_gate",
    "basis_state",
    "canonical_form_errors",
    "canonicalize",
    "chi_profile",
    "expect_bond",
    "expect_local",
    "from_dense",
    "from_product_state",
    "inner_product",
    "load_snapshot",
    "norm_squared",
    "normalize",
    "random_mps",
    "read_snapshot",
    "save_snapshot",
    "schmidt_spectrum",
    "site_matrices",
    "write_snapshot",
]
