"""Dense complex linear algebra used throughout the package.

Matrices are plain ``numpy`` arrays.  The helpers here validate Hermitian /
PSD structure, compute deterministic Hermitian eigendecompositions and
evaluate ``log2 det(I + s*G)`` through a Cholesky factorization.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Tolerances",
    "TOL",
    "check_finite",
    "check_hermitian",
    "check_psd",
    "herm_eig",
    "top_eigvec",
    "psd_sqrt",
    "log2_det_I_plus",
    "log2det_eye_plus_batch",
]

LN2 = np.log(2.0)


@dataclass(frozen=True)
class Tolerances:
    """Acceptance thresholds for structural checks on matrices."""

    # ||A - A*||_max <= hermitian_rtol * (1 + ||A||_max)
    hermitian_rtol: float = 1e-10
    # lambda_min >= -psd_rtol * lambda_max
    psd_rtol: float = 1e-9
    # first eigenvector entry above this modulus fixes the phase
    phase_pivot: float = 1e-12


TOL = Tolerances()


def check_finite(A: np.ndarray, name: str = "matrix") -> np.ndarray:
    A = np.asarray(A)
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains NaN or Inf entries")
    return A


def check_hermitian(A: np.ndarray, tol: Tolerances = TOL, name: str = "matrix") -> np.ndarray:
    """Return ``A`` as a complex array after checking it is square and Hermitian."""
    A = check_finite(np.asarray(A, dtype=complex), name)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be square, got shape {A.shape}")
    scale = 1.0 + (np.max(np.abs(A)) if A.size else 0.0)
    if A.size and np.max(np.abs(A - A.conj().T)) > tol.hermitian_rtol * scale:
        raise ValueError(f"{name} is not Hermitian within tolerance")
    return A


def check_psd(A: np.ndarray, tol: Tolerances = TOL, name: str = "matrix") -> np.ndarray:
    """Return the Hermitian part of ``A`` after checking it is PSD."""
    A = check_hermitian(A, tol, name)
    A = 0.5 * (A + A.conj().T)
    if A.size == 0:
        return A
    w = np.linalg.eigvalsh(A)
    # eigvalsh itself is only accurate to ~eps * ||A||
    floor = tol.psd_rtol * max(w[-1], 0.0) + 16 * np.finfo(float).eps * np.max(np.abs(w))
    if w[0] < -floor:
        raise ValueError(f"{name} is not positive semidefinite (min eigenvalue {w[0]:.3e})")
    return A


def _fix_phase(V: np.ndarray, pivot: float) -> np.ndarray:
    # make the first non-negligible entry of every column real positive
    V = V.copy()
    for j in range(V.shape[1]):
        col = V[:, j]
        idx = np.flatnonzero(np.abs(col) > pivot)
        if idx.size:
            c = col[idx[0]]
            V[:, j] = col * (np.conj(c) / abs(c))
    return V


def herm_eig(A: np.ndarray, tol: Tolerances = TOL):
    """
    Eigendecomposition of a Hermitian matrix with a fixed ordering and phase.

    Parameters
    ----------
    A : np.ndarray
        Hermitian matrix.
    tol : Tolerances
        Hermitian tolerance and phase-pivot threshold.

    Returns
    -------
    (w, V) : (np.ndarray, np.ndarray)
        Eigenvalues sorted in descending order and the matching orthonormal
        eigenvectors as columns of ``V``.  In each column the first entry
        with modulus above ``tol.phase_pivot`` is real and positive.

    Notes
    -----
    Eigenvectors inside clusters of (nearly) repeated eigenvalues are not
    unique; callers must not rely on any particular basis there.
    """
    A = check_hermitian(A, tol)
    A = 0.5 * (A + A.conj().T)
    w, V = np.linalg.eigh(A)
    # stable descending order keeps LAPACK's basis order inside exact ties
    order = np.argsort(-w, kind="stable")
    w = w[order]
    V = V[:, order]
    return w, _fix_phase(V, tol.phase_pivot)


def top_eigvec(A: np.ndarray, tol: Tolerances = TOL):
    """Largest eigenvalue of a Hermitian matrix and its unit eigenvector."""
    w, V = herm_eig(A, tol)
    return w[0], V[:, 0]


def psd_sqrt(A: np.ndarray, tol: Tolerances = TOL) -> np.ndarray:
    """Hermitian PSD square root ``V sqrt(L) V*``; tiny negative eigenvalues are clipped."""
    A = check_psd(A, tol)
    w, V = np.linalg.eigh(A)
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)) @ V.conj().T


def log2det_eye_plus_batch(M: np.ndarray) -> np.ndarray:
    """
    ``log2 det(I + M)`` for a stack of Hermitian PSD matrices ``M[..., n, n]``.

    No structural validation is performed; this is the inner loop of the
    Monte Carlo evaluators.
    """
    n = M.shape[-1]
    A = M + np.eye(n)
    L = np.linalg.cholesky(A)
    d = np.real(np.diagonal(L, axis1=-2, axis2=-1))
    return 2.0 * np.sum(np.log(d), axis=-1) / LN2


def log2_det_I_plus(scale: float, G: np.ndarray, tol: Tolerances = TOL) -> float:
    """
    Compute ``log2 det(I + scale * G)`` for a Hermitian PSD ``G``.

    Parameters
    ----------
    scale : float
        Positive multiplier, typically the inverse noise variance.
    G : np.ndarray
        Hermitian positive semidefinite matrix.

    Returns
    -------
    float
        The value in bits; always >= 0 up to rounding.
    """
    if not scale > 0 or not np.isfinite(scale):
        raise ValueError("scale must be a positive finite number")
    G = check_psd(G, tol, "G")
    if G.size == 0:
        return 0.0
    return float(log2det_eye_plus_batch(scale * G))
