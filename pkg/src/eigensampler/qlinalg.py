"""Dense linear-algebra kernel shared by the rest of the package.

Everything here operates on plain numpy arrays over 2^n-dimensional spaces.
Matrices are kept dense; the dimension caps below reflect the intended
problem sizes (up to 10 qubits in density-matrix form, up to 20 in vector
form) and guard against accidentally materializing something enormous.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

MAX_MATRIX_DIM = 2**12
MAX_VECTOR_DIM = 2**20

HERMITICITY_TOL = 1e-12
PSD_EIGENVALUE_FLOOR = -1e-8


class EigenDecomposition(NamedTuple):
    """Full spectrum of a Hermitian matrix, eigenvalues ascending."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # orthonormal columns, eigenvectors[:, i] <-> eigenvalues[i]


def hermitianize(a):
    """(A + A^dagger)/2 — drift control for operators that should stay Hermitian."""
    a = np.asarray(a)
    return (a + a.conj().T) / 2


def is_hermitian(a, tol=HERMITICITY_TOL):
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return False
    return np.max(np.abs(a - a.conj().T)) <= tol * max(1.0, np.max(np.abs(a)))


def _check_square(a, name="matrix"):
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")


def hermitian_eigen(a) -> EigenDecomposition:
    """Eigendecomposition of a Hermitian matrix, eigenvalues ascending.

    Raises ValueError on non-Hermitian input or dimension above the cap.
    """
    a = np.asarray(a)
    _check_square(a)
    if a.shape[0] > MAX_MATRIX_DIM:
        raise ValueError(f"matrix dimension {a.shape[0]} exceeds cap {MAX_MATRIX_DIM}")
    if not is_hermitian(a):
        raise ValueError("hermitian_eigen requires a Hermitian matrix")
    vals, vecs = np.linalg.eigh(a)
    return EigenDecomposition(vals, vecs)


def trace_norm(a) -> float:
    """Sum of singular values."""
    a = np.asarray(a)
    _check_square(a)
    return float(np.linalg.svd(a, compute_uv=False).sum())


def matrix_exp_hermitian(a, scale=1.0):
    """e^{scale * A} for Hermitian A, via eigendecomposition."""
    a = np.asarray(a)
    _check_square(a)
    if not is_hermitian(a):
        raise ValueError("matrix_exp_hermitian requires a Hermitian matrix")
    vals, vecs = np.linalg.eigh(a)
    return (vecs * np.exp(scale * vals)) @ vecs.conj().T


def matrix_sqrt_psd(a):
    """Principal square root of a PSD Hermitian matrix.

    Eigenvalues in [-1e-12, 0) are clamped to zero; anything more negative
    is treated as a genuinely non-PSD input.
    """
    a = np.asarray(a)
    _check_square(a)
    if not is_hermitian(a):
        raise ValueError("matrix_sqrt_psd requires a Hermitian matrix")
    vals, vecs = np.linalg.eigh(a)
    if vals[0] < PSD_EIGENVALUE_FLOOR:
        raise ValueError(f"matrix is not PSD: min eigenvalue {vals[0]:.3e}")
    vals = np.where(vals < 0, 0.0, vals)
    return (vecs * np.sqrt(vals)) @ vecs.conj().T


def _check_density(rho, name):
    _check_square(rho, name)
    tr = np.trace(rho)
    if abs(tr - 1) > 1e-8:
        raise ValueError(f"{name} must have unit trace, got {tr:.10f}")


def fidelity(rho1, rho2) -> float:
    """Uhlmann fidelity Tr sqrt(sqrt(rho1) rho2 sqrt(rho1)) of two density matrices.

    Symmetric in its arguments.  When one argument is (numerically) pure the
    equivalent sqrt(<psi|rho|psi>) fast path is used.
    """
    rho1 = np.asarray(rho1)
    rho2 = np.asarray(rho2)
    _check_density(rho1, "rho1")
    _check_density(rho2, "rho2")
    for rho, other in ((rho1, rho2), (rho2, rho1)):
        purity = np.trace(rho @ rho).real
        if purity >= 1 - 1e-10:
            vals, vecs = np.linalg.eigh(rho)
            if vals[0] < PSD_EIGENVALUE_FLOOR:
                raise ValueError(f"density matrix is not PSD: min eigenvalue {vals[0]:.3e}")
            psi = vecs[:, -1]
            overlap = np.real(psi.conj() @ other @ psi)
            return float(np.sqrt(max(overlap, 0.0)))
    s1 = matrix_sqrt_psd(rho1)
    inner = hermitianize(s1 @ rho2 @ s1)
    vals = np.linalg.eigvalsh(inner)
    if vals[0] < PSD_EIGENVALUE_FLOOR:
        raise ValueError(f"fidelity kernel not PSD: min eigenvalue {vals[0]:.3e}")
    vals = np.where(vals < 0, 0.0, vals)
    return float(np.sqrt(vals).sum())


def pure_fidelity(psi, state) -> float:
    """Fidelity of a pure state vector against another vector or a density matrix."""
    psi = np.asarray(psi)
    state = np.asarray(state)
    if state.ndim == 1:
        return float(abs(np.vdot(psi, state)))
    return float(np.sqrt(max(np.real(np.vdot(psi, state @ psi)), 0.0)))


def partial_trace(a, dims: Sequence[int], keep: Sequence[int]):
    """Trace out all tensor factors not in `keep`.

    `dims` declares the factorization (product must match the matrix
    dimension); `keep` lists factor indices to retain, in their original
    order.  The trace of the input is preserved.
    """
    a = np.asarray(a)
    _check_square(a)
    dims = list(dims)
    total = int(np.prod(dims))
    if total != a.shape[0]:
        raise ValueError(f"factor dims {dims} inconsistent with matrix dim {a.shape[0]}")
    keep = sorted(keep)
    if any(k < 0 or k >= len(dims) for k in keep):
        raise ValueError(f"keep indices {keep} out of range for {len(dims)} factors")
    nfac = len(dims)
    tensor = a.reshape(dims + dims)
    traced = [i for i in range(nfac) if i not in keep]
    for done, i in enumerate(traced):
        # after `done` traces the tensor has (nfac-done) row axes followed by
        # as many column axes; original factor i sits at row axis i-done
        ax = i - done
        tensor = np.trace(tensor, axis1=ax, axis2=ax + nfac - done)
    kept_dim = int(np.prod([dims[i] for i in keep])) if keep else 1
    return tensor.reshape(kept_dim, kept_dim)
