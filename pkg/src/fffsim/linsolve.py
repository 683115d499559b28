"""Preconditioned CG for the per-step systems of a deposition run.

Activation only changes matrix entries among the dofs of the layer being
printed (the *window*). Ordering the window last lets the incomplete Cholesky
factor of everything else be computed once per layer; each step refactors the
trailing window rows only, with that step's Dirichlet locks. A, C and the
factor share one lower-triangular pattern in the permuted order.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .femcore import SparsePattern


class WindowSolver:
    def __init__(self, pattern: SparsePattern, window: np.ndarray, backend=None):
        self.kern = backend or kernels.active
        # the fallback CG preconditions with the diagonal, so skip the factor
        self.use_ic = self.kern is not kernels.python
        n = pattern.n
        self.n = n
        in_window = np.zeros(n, bool)
        in_window[window] = True
        self.perm = np.concatenate([np.flatnonzero(~in_window), np.flatnonzero(in_window)])
        self.row_start = n - int(in_window.sum())
        iperm = np.empty(n, np.int64)
        iperm[self.perm] = np.arange(n)
        rows = np.repeat(np.arange(n), np.diff(pattern.indptr))
        nr, nc = iperm[rows], iperm[pattern.indices]
        sel = np.flatnonzero(nr >= nc)
        order = np.argsort(nr[sel] * n + nc[sel], kind="stable")
        self.src = sel[order]
        self.li = nc[self.src].astype(np.int32)
        self.lp = np.zeros(n + 1, np.int64)
        np.cumsum(np.bincount(nr[self.src], minlength=n), out=self.lp[1:])
        nnz = len(self.src)
        self.A = np.empty(nnz)
        self.C = np.empty(nnz)
        self.L = np.empty(nnz)
        self.tail = int(self.lp[self.row_start])
        self.lockp = np.zeros(n, np.uint8)
        self.breakdowns = 0

    def _refresh(self, a_data, c_data, dt, start, row_start, locked):
        src = self.src[start:]
        self.A[start:] = a_data[src]
        self.C[start:] = c_data[src] / dt
        self.lockp[row_start:] = locked[self.perm[row_start:]]
        if self.use_ic:
            self.L[start:] = self.A[start:]
            self.breakdowns = self.kern.ic0(self.lp, self.li, self.L, self.lockp, row_start)

    def factor_leading(self, a_data, c_data, dt, locked) -> None:
        """Full refresh and factorization; once per window."""
        self._refresh(a_data, c_data, dt, 0, 0, locked)

    def factor_window(self, a_data, c_data, dt, locked) -> None:
        self._refresh(a_data, c_data, dt, self.tail, self.row_start, locked)

    def solve(self, f, x_old, x, tol=1e-10, maxit=1000):
        """One backward-Euler solve; ``x`` holds locks and warm start, updated in place."""
        perm = self.perm
        xp = x[perm]
        it, res = self.kern.pcg(self.lp, self.li, self.A, self.C, self.L, f[perm],
                                x_old[perm], xp, self.lockp, tol, maxit)
        if not res <= tol:
            raise RuntimeError(f"CG did not converge: residual {res:.3e} after {it} iterations")
        x[perm] = xp
        return it, res
