"""Hot loops with an optional numba backend.

Set FKIRCHHOFF_NO_NUMBA=1 to force the pure numpy implementations.  Both
backends compute the same thing and are cross-checked in the test suite.
"""
import os

import numpy as np

_DISABLED = os.environ.get("FKIRCHHOFF_NO_NUMBA", "0").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    njit = None
    HAVE_NUMBA = False


def _shifted_solve_numpy(kap, k0, ex, w, shifts, rhs):
    # Vectorized over the shifts; the recursion over nodes stays a python loop.
    M = w.shape[0]
    K = shifts.shape[0]
    q = np.empty((M, K))
    y = np.empty((M, K))
    q[0] = ex[0] + k0 + shifts * w[0]
    y[0] = rhs[0]
    for i in range(1, M):
        k = kap[i - 1]
        den = k + q[i - 1]
        q[i] = ex[i] + shifts * w[i] + k * q[i - 1] / den
        y[i] = rhs[i] + (k / den) * y[i - 1]
    x = np.empty((M, K))
    x[M - 1] = y[M - 1] / q[M - 1]
    for i in range(M - 2, -1, -1):
        k = kap[i]
        x[i] = (y[i] + k * x[i + 1]) / (q[i] + k)
    return x


if HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _shifted_solve_numba(kap, k0, ex, w, shifts, rhs):  # pragma: no cover - compiled
        M = w.shape[0]
        K = shifts.shape[0]
        x = np.empty((M, K))
        q = np.empty(M)
        y = np.empty(M)
        for j in range(K):
            t = shifts[j]
            q[0] = ex[0] + k0 + t * w[0]
            y[0] = rhs[0, j]
            for i in range(1, M):
                k = kap[i - 1]
                den = k + q[i - 1]
                q[i] = ex[i] + t * w[i] + k * q[i - 1] / den
                y[i] = rhs[i, j] + (k / den) * y[i - 1]
            x[M - 1, j] = y[M - 1] / q[M - 1]
            for i in range(M - 2, -1, -1):
                k = kap[i]
                x[i, j] = (y[i] + k * x[i + 1, j]) / (q[i] + k)
        return x


def shifted_solve(kap, k0, ex, w, shifts, rhs, backend=None):
    """Solve (S + t W) x = b for every shift t.

    S is the tridiagonal stiffness matrix written as couplings ``kap`` between
    neighbours plus a nonnegative diagonal excess ``ex`` (and ``k0`` on the
    first node).  The elimination tracks the pivot excess over the next
    coupling, so every pivot is a sum of positive terms and keeps full
    relative accuracy even when t is many orders below the largest entry.

    rhs has shape (M, K), one column per shift.
    """
    kap = np.ascontiguousarray(kap, dtype=float)
    ex = np.ascontiguousarray(ex, dtype=float)
    w = np.ascontiguousarray(w, dtype=float)
    shifts = np.ascontiguousarray(shifts, dtype=float)
    rhs = np.ascontiguousarray(rhs, dtype=float)
    if backend is None:
        backend = "numba" if HAVE_NUMBA else "numpy"
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but unavailable")
        return _shifted_solve_numba(kap, float(k0), ex, w, shifts, rhs)
    return _shifted_solve_numpy(kap, float(k0), ex, w, shifts, rhs)
