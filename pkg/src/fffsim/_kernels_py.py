"""Pure-Python kernels, used when the compiled extension is unavailable.

``ic0`` mirrors the compiled factorization line by line and is only practical
for small matrices. ``pcg`` is vectorized with numpy but preconditions with the
matrix diagonal instead of the incomplete factor.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp


def ic0(indptr, indices, L, locked, row_start=0):
    n = len(indptr) - 1
    breakdowns = 0
    for i in range(row_start, n):
        lo, hi = indptr[i], indptr[i + 1]
        if locked[i]:
            L[lo:hi - 1] = 0.0
            L[hi - 1] = 1.0
            continue
        for p in range(lo, hi):
            j = indices[p]
            if j != i and locked[j]:
                L[p] = 0.0
                continue
            s = L[p]
            a, ae = lo, p
            b, be = indptr[j], indptr[j + 1] - 1
            while a < ae and b < be:
                ca, cb = indices[a], indices[b]
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
                    L[p] = math.sqrt(s)
                else:
                    breakdowns += 1
                    L[p] = math.sqrt(abs(L[p])) if L[p] != 0 else 1.0
            else:
                L[p] = s / L[indptr[j + 1] - 1]
    return breakdowns


def _symmetric(lp, li, vals, n):
    low = sp.csr_matrix((vals, li, lp), shape=(n, n))
    return (low + low.T - sp.diags(low.diagonal())).tocsr()


def pcg(lp, li, A, C, L, f, x_old, x, locked, tol, maxit):
    n = len(lp) - 1
    Am = _symmetric(lp, li, A, n)
    b = _symmetric(lp, li, C, n) @ x_old + f
    free = ~np.asarray(locked, bool)
    xl = np.where(free, 0.0, x)
    rhs = np.where(free, b - Am @ xl, 0.0)
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0:
        x[free] = 0.0
        return 0, 0.0
    r = np.where(free, rhs - Am @ np.where(free, x, 0.0), 0.0)
    res = np.linalg.norm(r)
    if res <= tol * bnorm:
        return 0, res / bnorm
    dinv = np.where(free, 1.0 / Am.diagonal(), 0.0)
    z = dinv * r
    p = z.copy()
    rz = r @ z
    it = 0
    while it < maxit:
        it += 1
        q = np.where(free, Am @ p, 0.0)
        alpha = rz / (p @ q)
        x += alpha * p
        r -= alpha * q
        res = np.linalg.norm(r)
        if res <= tol * bnorm:
            break
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return it, res / bnorm
