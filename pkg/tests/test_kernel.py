import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tebd.kernel import KernelError, contract_bond_gate, expm_hermitian, svd

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SZ = np.diag([1.0, -1.0]).astype(complex)


def random_complex(rng, *shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def random_hermitian(rng, dim):
    a = random_complex(rng, dim, dim)
    return (a + a.conj().T) / 2


def test_svd_identity():
    u, s, vh = svd(np.eye(3))
    assert np.allclose(s, [1, 1, 1], atol=1e-15)


def test_svd_rank_one():
    _, s, _ = svd([[1, 1], [1, 1]])
    assert np.allclose(s, [2, 0], atol=1e-14)


def test_svd_random_against_gram_eigenvalues():
    rng = np.random.default_rng(1)
    m = random_complex(rng, 6, 4)
    u, s, vh = svd(m)
    assert np.max(np.abs(u @ np.diag(s) @ vh - m)) < 1e-12 * s[0]
    assert np.allclose(u.conj().T @ u, np.eye(4), atol=1e-12)
    assert np.allclose(vh @ vh.conj().T, np.eye(4), atol=1e-12)
    gram = np.linalg.eigvalsh(m.conj().T @ m)[::-1]
    assert np.allclose(s**2, gram, atol=1e-10)
    assert np.all(np.diff(s) <= 0)


@settings(max_examples=40, deadline=None)
@given(rows=st.integers(1, 7), cols=st.integers(1, 7), seed=st.integers(0, 2**31))
def test_svd_properties(rows, cols, seed):
    rng = np.random.default_rng(seed)
    m = random_complex(rng, rows, cols)
    u, s, vh = svd(m)
    k = min(rows, cols)
    assert np.max(np.abs(u @ np.diag(s) @ vh - m)) <= 1e-12 * max(s[0], 1.0)
    assert np.allclose(u.conj().T @ u, np.eye(k), atol=1e-12)
    assert np.allclose(vh @ vh.conj().T, np.eye(k), atol=1e-12)
    assert np.allclose(s**2, np.sort(np.linalg.eigvalsh(m.conj().T @ m))[::-1][:k], atol=1e-10)


def test_svd_rejects_non_finite():
    with pytest.raises(KernelError):
        svd([[1.0, np.nan], [0.0, 1.0]])


def test_svd_keeps_tiny_values():
    m = np.diag([1.0, 1e-15, 1e-300])
    _, s, _ = svd(m)
    assert s[1] == pytest.approx(1e-15, rel=1e-6)
    assert s[2] > 0


def test_expm_zero_is_identity():
    for dim in (1, 2, 4):
        assert np.allclose(expm_hermitian(np.zeros((dim, dim)), -0.7j), np.eye(dim), atol=0)


def test_expm_sigma_z():
    out = expm_hermitian(SZ, -1j * np.pi / 2)
    assert np.allclose(out, np.diag([np.exp(-1j * np.pi / 2), np.exp(1j * np.pi / 2)]), atol=1e-15)


def test_expm_sigma_x_against_taylor_series():
    a = -0.3j * SX
    term = np.eye(2, dtype=complex)
    series = term.copy()
    for k in range(1, 40):
        term = term @ a / k
        series = series + term
    assert np.allclose(expm_hermitian(SX, -0.3j), series, atol=1e-12, rtol=0)


def test_expm_rejects_non_hermitian():
    with pytest.raises(KernelError):
        expm_hermitian([[0, 1], [0, 0]], -1j)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), t1=st.floats(-3, 3), t2=st.floats(-3, 3))
def test_expm_unitary_and_group_property(seed, t1, t2):
    rng = np.random.default_rng(seed)
    h = random_hermitian(rng, 4)
    u1 = expm_hermitian(h, -1j * t1)
    u2 = expm_hermitian(h, -1j * t2)
    assert np.allclose(u1.conj().T @ u1, np.eye(4), atol=1e-12)
    assert np.allclose(u1 @ u2, expm_hermitian(h, -1j * (t1 + t2)), atol=1e-11, rtol=0)


def naive_theta(lam_l, g1, lam_m, g2, lam_r, gate):
    chi_l, d, chi_m = g1.shape
    chi_r = g2.shape[2]
    plain = np.zeros((chi_l, d, d, chi_r), dtype=complex)
    for a in range(chi_l):
        for i in range(d):
            for j in range(d):
                for c in range(chi_r):
                    for b in range(chi_m):
                        plain[a, i, j, c] += lam_l[a] * g1[a, i, b] * lam_m[b] * g2[b, j, c] * lam_r[c]
    out = np.zeros_like(plain)
    for a in range(chi_l):
        for c in range(chi_r):
            for i in range(d):
                for j in range(d):
                    for ip in range(d):
                        for jp in range(d):
                            out[a, i, j, c] += gate[i * d + j, ip * d + jp] * plain[a, ip, jp, c]
    return out.reshape(chi_l * d, d * chi_r)


def test_contract_bond_one_dims_outer_product():
    v1 = np.array([0.6, 0.8])
    v2 = np.array([1.0, 1.0j]) / np.sqrt(2)
    theta = contract_bond_gate([1.0], v1.reshape(1, 2, 1), [1.0], v2.reshape(1, 2, 1), [1.0], np.eye(4))
    assert np.allclose(theta, np.outer(v1, v2), atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(
    chi_l=st.integers(1, 4),
    chi_m=st.integers(1, 4),
    chi_r=st.integers(1, 4),
    d=st.integers(2, 3),
    seed=st.integers(0, 2**31),
)
def test_contract_bond_matches_loops(chi_l, chi_m, chi_r, d, seed):
    rng = np.random.default_rng(seed)
    g1 = random_complex(rng, chi_l, d, chi_m)
    g2 = random_complex(rng, chi_m, d, chi_r)
    lam_l, lam_m, lam_r = (rng.uniform(0.1, 1, size=k) for k in (chi_l, chi_m, chi_r))
    gate = random_complex(rng, d * d, d * d)
    got = contract_bond_gate(lam_l, g1, lam_m, g2, lam_r, gate)
    assert np.allclose(got, naive_theta(lam_l, g1, lam_m, g2, lam_r, gate), atol=1e-12, rtol=0)
    bare = contract_bond_gate(lam_l, g1, lam_m, g2, lam_r)
    assert np.allclose(contract_bond_gate(lam_l, g1, lam_m, g2, lam_r, np.eye(d * d)), bare, atol=1e-14)


def test_contract_bond_dimension_mismatch():
    g = np.ones((1, 2, 2))
    with pytest.raises(KernelError):
        contract_bond_gate([1.0], g, [1.0, 1.0], np.ones((3, 2, 1)), [1.0])
    with pytest.raises(KernelError):
        contract_bond_gate([1.0], g, [1.0, 1.0], np.ones((2, 2, 1)), [1.0], np.eye(3))
