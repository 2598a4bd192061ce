"""Dense complex linear-algebra primitives.

Everything here works on plain ``numpy`` arrays in double precision. Site
tensors are rank-3 arrays indexed ``(left_bond, physical, right_bond)``; every
two-site object is handled as a matrix grouped ``(left*physical) x
(physical*right)``, in that order.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

HERMITIAN_TOL = 1e-12

_gesdd = scipy.linalg.get_lapack_funcs("gesdd", dtype=np.complex128)

ComplexArray = NDArray[np.complex128]


class KernelError(ValueError):
    """Raised when a primitive receives input it cannot handle."""


def as_tensor3(data, *, name: str = "tensor") -> ComplexArray:
    """Validate and return a rank-3 complex tensor (left, physical, right)."""
    t = np.asarray(data, dtype=np.complex128)
    if t.ndim != 3 or min(t.shape) < 1:
        raise KernelError(f"{name} must be rank 3 with positive dims, got shape {t.shape}")
    if not np.all(np.isfinite(t)):
        raise KernelError(f"{name} has non-finite entries")
    return t


def as_matrix(data, *, name: str = "matrix") -> ComplexArray:
    m = np.asarray(data, dtype=np.complex128)
    if m.ndim != 2 or min(m.shape) < 1:
        raise KernelError(f"{name} must be a non-empty 2-d array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise KernelError(f"{name} has non-finite entries")
    return m


def is_hermitian(m, tol: float = HERMITIAN_TOL) -> bool:
    m = np.asarray(m)
    return m.ndim == 2 and m.shape[0] == m.shape[1] and bool(np.max(np.abs(m - m.conj().T), initial=0.0) <= tol)


def is_unitary(m, tol: float = 1e-10) -> bool:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return False
    return bool(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))) <= tol)


def svd(m) -> tuple[ComplexArray, NDArray[np.float64], ComplexArray]:
    """Thin singular value decomposition ``m = u @ diag(s) @ vh``.

    Singular values come back sorted non-increasing and are never clamped;
    tiny values are the caller's business.

    Raises
    ------
    KernelError
        If ``m`` has non-finite entries or LAPACK fails to converge with
        both the divide-and-conquer and the QR-iteration drivers.
    """
    m = np.asarray(m, dtype=np.complex128)
    if m.ndim != 2 or min(m.shape) < 1:
        raise KernelError(f"svd input must be a non-empty 2-d array, got shape {m.shape}")
    # a finite sum proves every entry finite; a bad factorisation shows up in s
    if not np.isfinite(m.sum()) and not np.isfinite(m).all():
        raise KernelError("svd input has non-finite entries")
    u, s, vh, info = _gesdd(m, compute_uv=1, full_matrices=0)
    if info != 0:
        try:
            u, s, vh = scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesvd", check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise KernelError(f"SVD did not converge for a {m.shape} matrix") from exc
    if not np.isfinite(s.sum()):
        raise KernelError(f"SVD produced non-finite output for a {m.shape} matrix")
    return u, s, vh


def expm_hermitian(h, scale: complex) -> ComplexArray:
    """Return ``exp(scale * h)`` for Hermitian ``h`` via its eigendecomposition.

    Use ``scale = -1j * dt`` for real-time propagators and ``scale = -dt`` for
    imaginary-time ones.
    """
    h = as_matrix(h, name="generator")
    if not is_hermitian(h):
        raise KernelError("generator is not Hermitian within 1e-12")
    h = 0.5 * (h + h.conj().T)
    evals, vecs = np.linalg.eigh(h)
    return (vecs * np.exp(complex(scale) * evals)) @ vecs.conj().T


def contract_bond_gate(
    lam_left,
    gamma_left,
    lam_mid,
    gamma_right,
    lam_right,
    gate=None,
) -> ComplexArray:
    """Build the two-site matrix ``theta`` for one bond, optionally gated.

    ``theta[(a, i), (j, c)] = sum_b lam_left[a] G1[a, i, b] lam_mid[b] G2[b, j, c] lam_right[c]``
    with ``gate`` (shape ``d^2 x d^2``, row index ``i*d + j``) applied to the
    joint physical index. Returns a ``(chi_l*d) x (d*chi_r)`` matrix.
    """
    g1 = np.asarray(gamma_left)
    g2 = np.asarray(gamma_right)
    lam_left = np.asarray(lam_left)
    lam_mid = np.asarray(lam_mid)
    lam_right = np.asarray(lam_right)
    if g1.ndim != 3 or g2.ndim != 3:
        raise KernelError("site tensors must be rank 3")
    chi_l, d, chi_m = g1.shape
    chi_m2, d2, chi_r = g2.shape
    if chi_m != chi_m2 or d != d2:
        raise KernelError(f"incompatible site tensors {g1.shape} and {g2.shape}")
    if lam_left.shape != (chi_l,) or lam_mid.shape != (chi_m,) or lam_right.shape != (chi_r,):
        raise KernelError("bond vectors do not match tensor bond dimensions")

    a = g1 * lam_left[:, None, None] * lam_mid[None, None, :]
    b = g2 * lam_right[None, None, :]
    theta = (a.reshape(chi_l * d, chi_m) @ b.reshape(chi_m, d * chi_r)).reshape(chi_l, d, d, chi_r)
    if gate is not None:
        gate = np.asarray(gate)
        if gate.shape != (d * d, d * d):
            raise KernelError(f"gate must be {d * d}x{d * d}, got {gate.shape}")
        theta = np.matmul(gate, theta.reshape(chi_l, d * d, chi_r))
    return theta.reshape(chi_l * d, d * chi_r)
