"""Dense complex linear algebra used by the soft detectors.

All routines accept a leading batch shape so that one call can cover every
channel use of a frame.  Matrices are plain ``numpy`` arrays with the last
two axes holding rows and columns.
"""

import numpy as np

from .errors import ContractViolation, SolverFailure

#: A pivot is accepted when it exceeds this fraction of the largest diagonal entry.
PIVOT_RTOL = 1e-12


def _first_bad_pivot(A):
    """Index of the first failing pivot of one Hermitian matrix, or None."""
    A = np.array(A, dtype=complex)
    n = A.shape[0]
    tol = PIVOT_RTOL * max(float(np.max(np.real(np.diag(A)))), 0.0)
    L = np.zeros_like(A)
    for j in range(n):
        pivot = np.real(A[j, j]) - np.sum(np.abs(L[j, :j]) ** 2)
        if not pivot > tol:
            return j
        L[j, j] = np.sqrt(pivot)
        L[j + 1:, j] = (A[j + 1:, j] - L[j + 1:, :j] @ np.conj(L[j, :j])) / L[j, j]
    return None


def cholesky(A):
    """Lower Cholesky factor of one or many Hermitian positive definite matrices.

    Raises
    ------
    SolverFailure
        If a pivot is not above ``PIVOT_RTOL`` times the largest diagonal
        entry of its matrix.  ``err.pivot`` identifies the offending column.
    """
    A = np.asarray(A)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ContractViolation(f"expected square matrices, got shape {A.shape}")
    tol = PIVOT_RTOL * np.max(np.real(np.diagonal(A, axis1=-2, axis2=-1)), axis=-1)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        L = None
    if L is not None:
        piv = np.real(np.diagonal(L, axis1=-2, axis2=-1)) ** 2
        bad = ~(piv > tol[..., None])
        if not bad.any():
            return L
        flat = bad.reshape(-1, bad.shape[-1])
        first = int(np.argmax(flat.any(axis=1)))
        raise SolverFailure(int(np.argmax(flat[first])))
    for mat in A.reshape(-1, A.shape[-2], A.shape[-1]):
        j = _first_bad_pivot(mat)
        if j is not None:
            raise SolverFailure(j)
    raise SolverFailure(0)


def hermitian_solve(A, b):
    """Solve ``A x = b`` for Hermitian positive definite ``A``.

    Parameters
    ----------
    A : ndarray, shape (..., n, n)
    b : ndarray, shape (..., n) or (..., n, r)
        Right-hand side(s); batch axes broadcast against those of ``A``.

    Returns
    -------
    ndarray
        Solution with the shape of ``b`` (after broadcasting).
    """
    A = np.asarray(A)
    b = np.asarray(b)
    n = A.shape[-1]
    vector = b.ndim == A.ndim - 1
    rhs = b[..., None] if vector else b
    if rhs.shape[-2] != n:
        raise ContractViolation(f"right-hand side length {rhs.shape[-2]} does not match matrix size {n}")
    L = cholesky(A)
    batch = np.broadcast_shapes(L.shape[:-2], rhs.shape[:-2])
    L = np.broadcast_to(L, batch + L.shape[-2:])
    rhs = np.broadcast_to(rhs, batch + rhs.shape[-2:])
    z = np.linalg.solve(L, rhs)
    x = np.linalg.solve(np.conj(np.swapaxes(L, -1, -2)), z)
    return x[..., 0] if vector else x


def gram_plus_scaled_identity(G, D, c):
    """Return ``c I + G diag(D) G^H``.

    ``G`` has shape (..., L, K) and ``D`` shape (..., K); the result has
    shape (..., L, L) and is exactly Hermitian.
    """
    G = np.asarray(G)
    D = np.asarray(D, dtype=float)
    if D.shape[-1] != G.shape[-1]:
        raise ContractViolation(f"{D.shape[-1]} weights for {G.shape[-1]} columns")
    if np.any(D < 0) or c < 0:
        raise ContractViolation("weights and scale must be nonnegative")
    M = (G * D[..., None, :]) @ np.conj(np.swapaxes(G, -1, -2))
    M = 0.5 * (M + np.conj(np.swapaxes(M, -1, -2)))
    M = M + c * np.eye(G.shape[-2])
    return M


def scaled_gram_plus_identity(A, d, c):
    """Return ``c I + diag(d) A diag(d)`` for Hermitian ``A`` and real ``d``.

    This is the K x K counterpart of :func:`gram_plus_scaled_identity` with
    ``A = G^H G`` and ``d = sqrt(D)``; the detectors work with it because
    K is usually much smaller than L.
    """
    A = np.asarray(A)
    d = np.asarray(d, dtype=float)
    if d.shape[-1] != A.shape[-1]:
        raise ContractViolation(f"{d.shape[-1]} scales for a {A.shape[-1]}x{A.shape[-1]} matrix")
    M = d[..., :, None] * A * d[..., None, :]
    M = 0.5 * (M + np.conj(np.swapaxes(M, -1, -2)))
    M = M + c * np.eye(A.shape[-1])
    return M
