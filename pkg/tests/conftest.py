"""Shared helpers: a brute-force state-vector simulator used as the test oracle.

Nothing here calls into the MPS code, so agreement with it is a real check.
"""

import itertools

import numpy as np
import pytest


def random_unitary(rng, dim):
    z = (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_hermitian(rng, dim):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return (a + a.conj().T) / 2


def random_unit_vector(rng, dim):
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def product_vector(locals_):
    out = np.ones(1, dtype=complex)
    for v in locals_:
        out = np.kron(out, v)
    return out


def apply_op(psi, op, first_site, n, d):
    """Apply an operator on consecutive sites starting at ``first_site``."""
    width = int(round(np.log(op.shape[0]) / np.log(d)))
    t = psi.reshape((d,) * n)
    t = np.moveaxis(t, list(range(first_site, first_site + width)), list(range(width)))
    shape = t.shape
    t = (op @ t.reshape(d**width, -1)).reshape(shape)
    t = np.moveaxis(t, list(range(width)), list(range(first_site, first_site + width)))
    return t.reshape(-1)


def reduced_density_eigenvalues(psi, cut, n, d):
    m = psi.reshape(d**cut, d ** (n - cut))
    return np.sort(np.linalg.eigvalsh(m @ m.conj().T))[::-1]


def all_amplitudes(state_amplitude, n, d):
    return np.array([state_amplitude(cfg) for cfg in itertools.product(range(d), repeat=n)])


def dense_from_terms(k1, k2, n, d):
    """Kronecker assembly of ``sum k1[s] + sum k2[l]`` (independent of the package)."""
    dim = d**n
    h = np.zeros((dim, dim), dtype=complex)
    for s, m in enumerate(k1):
        h += np.kron(np.kron(np.eye(d**s), m), np.eye(d ** (n - s - 1)))
    for s, m in enumerate(k2):
        h += np.kron(np.kron(np.eye(d**s), m), np.eye(d ** (n - s - 2)))
    return h


def expm_dense(h, scale):
    evals, vecs = np.linalg.eigh(h)
    return (vecs * np.exp(scale * evals)) @ vecs.conj().T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def record_acceptance(number: int, ok: bool, detail: str):
    """Store one criterion's verdict; a criterion checked in several tests passes only if all do."""
    prev_ok, prev_detail = ACCEPTANCE_RESULTS.get(number, (True, ""))
    ACCEPTANCE_RESULTS[number] = (prev_ok and ok, f"{prev_detail}; {detail}" if prev_detail else detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
