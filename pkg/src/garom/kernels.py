"""Hot numeric kernels, each with a numba loop version and a numpy twin.

The public names (``jacobi_orthogonalize``, ``adam_update`` ...) point at
the numba versions unless numba is unavailable or disabled through
``GAROM_DISABLE_NUMBA``; the few in ``NUMPY_PREFERRED`` always use numpy.
Both variants stay importable under ``*_numba`` / ``*_numpy`` so tests and
``benchmarks/bench_kernels.py`` can compare them.
"""

import math

import numpy as np
import scipy.linalg

from ._jit import HAS_NUMBA, njit

__all__ = [
    "HAS_NUMBA",
    "jacobi_orthogonalize",
    "cholesky_lower",
    "cholesky_solve",
    "gaussian_gram",
    "adam_update",
    "silu_forward",
    "silu_backward",
    "l1_loss_grad",
]


# --------------------------------------------------------------------------
# one-sided Jacobi


def _jacobi_loop(w, vt, tol, max_sweeps):
    # Rows of ``w`` are the vectors being orthogonalized; ``vt`` receives the
    # same plane rotations. Returns the number of sweeps, or -1 on hitting the cap.
    k, m = w.shape
    for sweep in range(max_sweeps):
        rotated = 0
        for p in range(k - 1):
            for q in range(p + 1, k):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for i in range(m):
                    alpha += w[p, i] * w[p, i]
                    beta += w[q, i] * w[q, i]
                    gamma += w[p, i] * w[q, i]
                if gamma == 0.0 or abs(gamma) <= tol * math.sqrt(alpha * beta):
                    continue
                rotated += 1
                zeta = (beta - alpha) / (2.0 * gamma)
                sgn = 1.0 if zeta >= 0.0 else -1.0
                t = sgn / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                for i in range(m):
                    wp = w[p, i]
                    wq = w[q, i]
                    w[p, i] = c * wp - s * wq
                    w[q, i] = s * wp + c * wq
                for i in range(vt.shape[1]):
                    vp = vt[p, i]
                    vq = vt[q, i]
                    vt[p, i] = c * vp - s * vq
                    vt[q, i] = s * vp + c * vq
        if rotated == 0:
            return sweep + 1
    return -1


def jacobi_orthogonalize_numpy(w, vt, tol, max_sweeps):
    k = w.shape[0]
    for sweep in range(max_sweeps):
        rotated = 0
        for p in range(k - 1):
            for q in range(p + 1, k):
                wp = w[p]
                wq = w[q]
                alpha = wp @ wp
                beta = wq @ wq
                gamma = wp @ wq
                if gamma == 0.0 or abs(gamma) <= tol * math.sqrt(alpha * beta):
                    continue
                rotated += 1
                zeta = (beta - alpha) / (2.0 * gamma)
                sgn = 1.0 if zeta >= 0.0 else -1.0
                t = sgn / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                w[p], w[q] = c * wp - s * wq, s * wp + c * wq
                vp = vt[p]
                vq = vt[q]
                vt[p], vt[q] = c * vp - s * vq, s * vp + c * vq
        if rotated == 0:
            return sweep + 1
    return -1


jacobi_orthogonalize_numba = njit(_jacobi_loop)


# --------------------------------------------------------------------------
# Cholesky


def _cholesky_loop(a):
    n = a.shape[0]
    low = np.zeros((n, n))
    for j in range(n):
        s = a[j, j]
        for k in range(j):
            s -= low[j, k] * low[j, k]
        if not s > 0.0:
            return low, False
        d = math.sqrt(s)
        low[j, j] = d
        for i in range(j + 1, n):
            t = a[i, j]
            for k in range(j):
                t -= low[i, k] * low[j, k]
            low[i, j] = t / d
    return low, True


def _cho_solve_loop(low, b):
    n, r = b.shape
    y = np.empty((n, r))
    for col in range(r):
        for i in range(n):
            t = b[i, col]
            for k in range(i):
                t -= low[i, k] * y[k, col]
            y[i, col] = t / low[i, i]
        for i in range(n - 1, -1, -1):
            t = y[i, col]
            for k in range(i + 1, n):
                t -= low[k, i] * y[k, col]
            y[i, col] = t / low[i, i]
    return y


def cholesky_lower_numpy(a):
    try:
        return scipy.linalg.cholesky(a, lower=True, check_finite=False), True
    except np.linalg.LinAlgError:
        return np.zeros_like(a), False


def cholesky_solve_numpy(low, b):
    y = scipy.linalg.solve_triangular(low, b, lower=True, check_finite=False)
    return scipy.linalg.solve_triangular(low.T, y, lower=False, check_finite=False)


cholesky_lower_numba = njit(_cholesky_loop)
cholesky_solve_numba = njit(_cho_solve_loop)


# --------------------------------------------------------------------------
# Gaussian kernel matrix, k(r) = exp(-(r / length_scale)^2)


def _gram_loop(x, y, length_scale):
    n, d = x.shape
    m = y.shape[0]
    out = np.empty((n, m))
    inv = 1.0 / (length_scale * length_scale)
    for i in range(n):
        for j in range(m):
            r2 = 0.0
            for k in range(d):
                diff = x[i, k] - y[j, k]
                r2 += diff * diff
            out[i, j] = math.exp(-r2 * inv)
    return out


def gaussian_gram_numpy(x, y, length_scale):
    diff = x[:, None, :] - y[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", diff, diff)
    return np.exp(-r2 / (length_scale * length_scale))


gaussian_gram_numba = njit(_gram_loop)


# --------------------------------------------------------------------------
# fused Adam update on flat parameter vectors (in place)


# Moments of parameters whose gradient stays exactly zero (dead ReLU units,
# the fake term while k = 0) decay geometrically into subnormal range, where
# every flop costs tens of cycles. Below this floor a moment changes the
# update by less than 1e-140 relative to eps, so it is flushed to zero.
MOMENT_FLOOR = 1e-150


def _adam_loop(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    # bias corrections folded into multipliers: one divide and one sqrt per entry
    step = lr / bc1
    inv_bc2 = 1.0 / bc2
    for i in range(p.shape[0]):
        gi = g[i]
        mi = beta1 * m[i] + (1.0 - beta1) * gi
        vi = beta2 * v[i] + (1.0 - beta2) * gi * gi
        if abs(mi) < MOMENT_FLOOR:
            mi = 0.0
        if vi < MOMENT_FLOOR:
            vi = 0.0
        m[i] = mi
        v[i] = vi
        p[i] -= step * mi / (math.sqrt(vi * inv_bc2) + eps)


def adam_update_numpy(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    np.copyto(m, 0.0, where=np.abs(m) < MOMENT_FLOOR)
    np.copyto(v, 0.0, where=v < MOMENT_FLOOR)
    p -= (lr / bc1) * m / (np.sqrt(v * (1.0 / bc2)) + eps)


adam_update_numba = njit(_adam_loop)


# --------------------------------------------------------------------------
# SiLU


def _silu_fwd_loop(x):
    out = np.empty_like(x)
    flat_x = x.reshape(-1)
    flat_o = out.reshape(-1)
    for i in range(flat_x.shape[0]):
        xi = flat_x[i]
        flat_o[i] = xi / (1.0 + math.exp(-xi))
    return out


def _silu_bwd_loop(x, grad):
    out = np.empty_like(x)
    flat_x = x.reshape(-1)
    flat_g = grad.reshape(-1)
    flat_o = out.reshape(-1)
    for i in range(flat_x.shape[0]):
        xi = flat_x[i]
        sig = 1.0 / (1.0 + math.exp(-xi))
        flat_o[i] = flat_g[i] * sig * (1.0 + xi * (1.0 - sig))
    return out


def _sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu_forward_numpy(x):
    return x * _sigmoid(x)


def silu_backward_numpy(x, grad):
    sig = _sigmoid(x)
    return grad * sig * (1.0 + x * (1.0 - sig))


silu_forward_numba = njit(_silu_fwd_loop)
silu_backward_numba = njit(_silu_bwd_loop)


# --------------------------------------------------------------------------
# mean absolute error and its gradient w.r.t. ``a``


def _l1_loop(a, b):
    n = a.size
    grad = np.empty_like(a)
    fa = a.reshape(-1)
    fb = b.reshape(-1)
    fg = grad.reshape(-1)
    total = 0.0
    inv = 1.0 / n
    for i in range(n):
        d = fa[i] - fb[i]
        total += abs(d)
        if d > 0.0:
            fg[i] = inv
        elif d < 0.0:
            fg[i] = -inv
        else:
            # 0 for d == 0, NaN propagates like np.sign
            fg[i] = d * inv
    return total * inv, grad


def l1_loss_grad_numpy(a, b):
    d = a - b
    return float(np.mean(np.abs(d))), np.sign(d) / d.size


l1_loss_grad_numba = njit(_l1_loop)


# Kernels whose numpy twin measured faster even with numba available
# (benchmarks/bench_kernels.py): numpy's exp/tanh are SIMD vectorized while
# the jitted loop calls scalar libm, and LAPACK's blocked Cholesky beats a
# plain triple loop. The jitted versions stay as cross-checks.
NUMPY_PREFERRED = frozenset({"silu_forward", "silu_backward", "cholesky_lower",
                             "cholesky_solve"})


def _pick(name):
    jitted = globals()[name + "_numba"]
    if jitted is None or name in NUMPY_PREFERRED:
        return globals()[name + "_numpy"]
    return jitted


jacobi_orthogonalize = _pick("jacobi_orthogonalize")
cholesky_lower = _pick("cholesky_lower")
cholesky_solve = _pick("cholesky_solve")
gaussian_gram = _pick("gaussian_gram")
adam_update = _pick("adam_update")
silu_forward = _pick("silu_forward")
silu_backward = _pick("silu_backward")
l1_loss_grad = _pick("l1_loss_grad")
