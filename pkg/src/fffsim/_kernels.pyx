# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled linear-algebra kernels: incomplete Cholesky and preconditioned CG."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

ctypedef cnp.int64_t idx_t


def ic0(const idx_t[::1] indptr, const int[::1] indices, double[::1] L,
        const unsigned char[::1] locked, Py_ssize_t row_start=0):
    """In-place IC(0) of a lower-triangular CSR (sorted columns, diagonal last).

    Rows before ``row_start`` must already hold factor values. Locked rows become
    identity rows and locked columns are dropped, which factors the free block.
    """
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t i, j, p, a, b, ae, be, dj
    cdef int ca, cb
    cdef double s
    cdef Py_ssize_t breakdowns = 0
    for i in range(row_start, n):
        if locked[i]:
            for p in range(indptr[i], indptr[i + 1] - 1):
                L[p] = 0.0
            L[indptr[i + 1] - 1] = 1.0
            continue
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if j != i and locked[j]:
                L[p] = 0.0
                continue
            s = L[p]
            a = indptr[i]
            ae = p
            b = indptr[j]
            be = indptr[j + 1] - 1
            while a < ae and b < be:
                ca = indices[a]
                cb = indices[b]
                if ca == cb:
                    s -= L[a] * L[b]
                    a += 1
                    b += 1
                elif ca < cb:
                    a += 1
                else:
                    b += 1
            if j == i:
                if s > 0:
                    L[p] = sqrt(s)
                else:
                    breakdowns += 1
                    L[p] = sqrt(fabs(L[p])) if L[p] != 0 else 1.0
            else:
                dj = indptr[j + 1] - 1
                L[p] = s / L[dj]
    return breakdowns


cdef void _precond(const idx_t[::1] lp, const int[::1] li, const double[::1] L,
                   const double[::1] r, double[::1] z) noexcept nogil:
    cdef Py_ssize_t n = lp.shape[0] - 1
    cdef Py_ssize_t i, p, d
    cdef double s, zi
    for i in range(n):
        s = r[i]
        d = lp[i + 1] - 1
        for p in range(lp[i], d):
            s -= L[p] * z[li[p]]
        z[i] = s / L[d]
    for i in range(n - 1, -1, -1):
        d = lp[i + 1] - 1
        z[i] /= L[d]
        zi = z[i]
        for p in range(lp[i], d):
            z[li[p]] -= L[p] * zi


def pcg(const idx_t[::1] lp, const int[::1] li, const double[::1] A, const double[::1] C,
        const double[::1] L, const double[::1] f, const double[::1] x_old, double[::1] x,
        const unsigned char[::1] locked, double tol, Py_ssize_t maxit):
    """Backward-Euler step solve on a lower-triangular CSR shared by A, C and L.

    Solves A x = C x_old + f on unlocked rows, with x already holding the
    Dirichlet values on locked rows and a warm start elsewhere. ``C`` is the
    capacitance divided by the time step. Returns (iterations, residual relative
    to the reduced right-hand side).
    """
    cdef Py_ssize_t n = lp.shape[0] - 1
    cdef Py_ssize_t i, j, p, d, it = 0
    cdef double a, rhs2 = 0.0, rr = 0.0, rz, rz_new, pq, alpha, beta, v, bnorm
    cdef double[::1] r = np.zeros(n)
    cdef double[::1] yf = np.zeros(n)
    cdef double[::1] z = np.zeros(n)
    cdef double[::1] pv = np.zeros(n)
    cdef double[::1] q = np.zeros(n)
    with nogil:
        # r = C x_old + f - A x and yf = A (x on free rows), one pass
        for i in range(n):
            r[i] += f[i]
            d = lp[i + 1] - 1
            for p in range(lp[i], d):
                j = li[p]
                a = A[p]
                r[i] += C[p] * x_old[j] - a * x[j]
                r[j] += C[p] * x_old[i] - a * x[i]
                if not locked[j]:
                    yf[i] += a * x[j]
                if not locked[i]:
                    yf[j] += a * x[i]
            r[i] += C[d] * x_old[i] - A[d] * x[i]
            if not locked[i]:
                yf[i] += A[d] * x[i]
        for i in range(n):
            if locked[i]:
                r[i] = 0.0
            else:
                # reduced right-hand side: b - A_fl x_l = r + A_ff x_f
                v = r[i] + yf[i]
                rhs2 += v * v
                rr += r[i] * r[i]
    bnorm = sqrt(rhs2)
    if bnorm == 0.0:
        for i in range(n):
            if not locked[i]:
                x[i] = 0.0
        return 0, 0.0
    if sqrt(rr) <= tol * bnorm:
        return 0, sqrt(rr) / bnorm
    with nogil:
        _precond(lp, li, L, r, z)
        rz = 0.0
        for i in range(n):
            pv[i] = z[i]
            rz += r[i] * z[i]
        while it < maxit:
            it += 1
            for i in range(n):
                q[i] = 0.0
            for i in range(n):
                d = lp[i + 1] - 1
                v = A[d] * pv[i]
                for p in range(lp[i], d):
                    j = li[p]
                    v += A[p] * pv[j]
                    q[j] += A[p] * pv[i]
                q[i] += v
            pq = 0.0
            for i in range(n):
                if locked[i]:
                    q[i] = 0.0
                pq += q[i] * pv[i]
            alpha = rz / pq
            rr = 0.0
            for i in range(n):
                x[i] += alpha * pv[i]
                r[i] -= alpha * q[i]
                rr += r[i] * r[i]
            if sqrt(rr) <= tol * bnorm:
                break
            _precond(lp, li, L, r, z)
            rz_new = 0.0
            for i in range(n):
                rz_new += r[i] * z[i]
            beta = rz_new / rz
            rz = rz_new
            for i in range(n):
                pv[i] = z[i] + beta * pv[i]
    return it, sqrt(rr) / bnorm
