"""Dense matrix helpers: validated products, thin SVD and SPD solves.

Matrices are plain C-contiguous ``float64`` numpy arrays; :func:`as_matrix`
is the single entry point that enforces shape and finiteness.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels

MAX_SWEEPS = 100
JITTER_START = 1e-10
JITTER_STOP = 1e-4


class SvdConvergenceError(np.linalg.LinAlgError):
    """Jacobi sweeps hit the iteration cap."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Cholesky failed even at the largest diagonal jitter."""


def as_matrix(a, name="matrix"):
    """Return ``a`` as a finite 2-D C-contiguous float64 array."""
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf entries")
    return arr


def matmul(a, b):
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


@dataclass(frozen=True)
class SvdResult:
    u_basis: np.ndarray
    singular_values: np.ndarray
    v_transposed: np.ndarray

    def reconstruct(self):
        return (self.u_basis * self.singular_values) @ self.v_transposed


def _complete_basis(u, keep):
    # Replace columns of ``u`` outside ``keep`` by an orthonormal complement of
    # the kept ones; happens for (numerically) zero singular values.
    good = u[:, keep]
    n_missing = u.shape[1] - good.shape[1]
    if good.shape[1]:
        q, _ = np.linalg.qr(good, mode="complete")
        extra = q[:, good.shape[1]:good.shape[1] + n_missing]
    else:
        extra = np.eye(u.shape[0])[:, :n_missing]
    out = u.copy()
    out[:, ~keep] = extra
    return out


def _svd_tall(a):
    m, n = a.shape
    if m > n:
        # QR first so the rotations act on n-vectors instead of m-vectors
        q, r = np.linalg.qr(a)
    else:
        q, r = None, a
    w = np.ascontiguousarray(r.T)
    vt = np.eye(n)
    tol = max(m, 1) * np.finfo(np.float64).eps
    sweeps = kernels.jacobi_orthogonalize(w, vt, tol, MAX_SWEEPS)
    if sweeps < 0:
        raise SvdConvergenceError(f"one-sided Jacobi did not converge in {MAX_SWEEPS} sweeps")

    sigma = np.sqrt(np.einsum("ij,ij->i", w, w))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    w = w[order]
    vt = vt[order]

    cutoff = max(m, n) * np.finfo(np.float64).eps * (sigma[0] if sigma.size else 0.0)
    keep = sigma > cutoff
    u = np.zeros((w.shape[1], n))
    u[:, keep] = (w[keep] / sigma[keep, None]).T
    sigma = np.where(keep, sigma, 0.0)
    if not np.all(keep):
        u = _complete_basis(u, keep)
    if q is not None:
        u = q @ u
    return u, sigma, vt


def svd_thin(a):
    """Thin SVD ``a = U diag(s) Vt`` by one-sided (Hestenes) Jacobi.

    Tall inputs are QR-preconditioned, wide inputs are handled through the
    transpose. Singular values come back sorted non-increasing; columns of
    ``U`` attached to zero singular values are completed to an orthonormal
    set.

    Raises
    ------
    SvdConvergenceError
        If the rotations have not converged after ``MAX_SWEEPS`` sweeps.
    """
    a = as_matrix(a, "a")
    if a.size == 0:
        raise ValueError("svd_thin needs a non-empty matrix")
    m, n = a.shape
    if m >= n:
        u, s, vt = _svd_tall(a)
        return SvdResult(u, s, vt)
    u, s, vt = _svd_tall(np.ascontiguousarray(a.T))
    return SvdResult(np.ascontiguousarray(vt.T), s, np.ascontiguousarray(u.T))


def solve_spd(a, b):
    """Solve ``a x = b`` for symmetric positive (semi-)definite ``a``.

    A plain Cholesky factorization is tried first. On failure a diagonal
    jitter starting at ``1e-10 * trace/n`` is added and raised tenfold up to
    ``1e-4 * trace/n``.
    """
    a = as_matrix(a, "a")
    b_arr = np.asarray(b, dtype=np.float64)
    vector_rhs = b_arr.ndim == 1
    b = as_matrix(b_arr.reshape(-1, 1) if vector_rhs else b_arr, "b")
    n = a.shape[0]
    if a.shape[1] != n:
        raise ValueError(f"solve_spd needs a square matrix, got {a.shape}")
    if b.shape[0] != n:
        raise ValueError(f"right-hand side has {b.shape[0]} rows, expected {n}")
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.T)) > 1e-12 * scale:
        raise ValueError("solve_spd needs a symmetric matrix")

    mean_diag = float(np.trace(a)) / n
    n_levels = int(round(np.log10(JITTER_STOP / JITTER_START))) + 1
    jitters = [0.0] + [JITTER_START * 10.0**i * mean_diag for i in range(n_levels)]
    eye = np.eye(n)
    for jitter in jitters:
        low, ok = kernels.cholesky_lower(a + jitter * eye if jitter else a)
        if ok:
            x = kernels.cholesky_solve(low, b)
            return x.ravel() if vector_rhs else x
    raise NotPositiveDefiniteError(
        f"Cholesky failed up to jitter {JITTER_STOP:g} * trace/n ({jitters[-1]:.3e})"
    )
