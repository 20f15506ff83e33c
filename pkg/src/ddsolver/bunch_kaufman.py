"""Dense symmetric indefinite LDL^T with Bunch-Kaufman partial pivoting.

Works for real and complex *symmetric* matrices; magnitudes are moduli and
nothing is conjugated. The factor satisfies ``P B P^T = L D L^T`` with ``D``
block diagonal (1x1 and 2x2 pivots) and an explicit permutation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

ALPHA = (1.0 + np.sqrt(17.0)) / 8.0
PIVOT_TAU = 1e-12


@nb.njit(cache=True, nogil=True)
def _bk_inplace(W, perm, pivsize, flags, alpha, floor):
    # Lower triangle of A lives transposed in W: A[i, j] == W[j, i] for i >= j,
    # so every column of A is a contiguous row of W.
    n = W.shape[0]
    k = 0
    while k < n:
        kstep = 1
        absakk = abs(W[k, k])
        imax = k
        colmax = 0.0
        for i in range(k + 1, n):
            v = abs(W[k, i])
            if v > colmax:
                colmax = v
                imax = i
        if max(absakk, colmax) <= floor:
            # numerically zero column: perturb the pivot and carry on
            d = W[k, k]
            if d == 0:
                W[k, k] = floor
            else:
                W[k, k] = d / abs(d) * floor
            flags[k] = True
            kp = k
        elif absakk >= alpha * colmax:
            kp = k
        else:
            rowmax = 0.0
            for j in range(k, imax):
                v = abs(W[j, imax])
                if v > rowmax:
                    rowmax = v
            for i in range(imax + 1, n):
                v = abs(W[imax, i])
                if v > rowmax:
                    rowmax = v
            if absakk * rowmax >= alpha * colmax * colmax:
                kp = k
            elif abs(W[imax, imax]) >= alpha * rowmax:
                kp = imax
            else:
                kp = imax
                kstep = 2

        kk = k + kstep - 1
        if kp != kk:
            for i in range(kp + 1, n):
                t = W[kk, i]
                W[kk, i] = W[kp, i]
                W[kp, i] = t
            for j in range(kk + 1, kp):
                t = W[kk, j]
                W[kk, j] = W[j, kp]
                W[j, kp] = t
            t = W[kk, kk]
            W[kk, kk] = W[kp, kp]
            W[kp, kp] = t
            if kstep == 2:
                t = W[k, kk]
                W[k, kk] = W[k, kp]
                W[k, kp] = t
            for c in range(k):
                t = W[c, kk]
                W[c, kk] = W[c, kp]
                W[c, kp] = t
            t = perm[kk]
            perm[kk] = perm[kp]
            perm[kp] = t

        if kstep == 1:
            pivsize[k] = 1
            r1 = 1.0 / W[k, k]
            for j in range(k + 1, n):
                t = r1 * W[k, j]
                for i in range(j, n):
                    W[j, i] -= t * W[k, i]
            for i in range(k + 1, n):
                W[k, i] *= r1
        else:
            pivsize[k] = 2
            pivsize[k + 1] = 0
            a = W[k, k]
            b = W[k, k + 1]
            c = W[k + 1, k + 1]
            det = a * c - b * b
            ia = c / det
            ib = -b / det
            ic = a / det
            for j in range(k + 2, n):
                wk = W[k, j] * ia + W[k + 1, j] * ib
                wk1 = W[k, j] * ib + W[k + 1, j] * ic
                for i in range(j, n):
                    W[j, i] -= W[k, i] * wk + W[k + 1, i] * wk1
                W[k, j] = wk
                W[k + 1, j] = wk1
        k += kstep


@nb.njit(cache=True, nogil=True)
def _apply_dinv(X, d, e, pivsize):
    """X <- X D^{-1} in place (X is m x n, D is n x n block diagonal)."""
    n = len(d)
    m = X.shape[0]
    k = 0
    while k < n:
        if pivsize[k] == 1:
            r = 1.0 / d[k]
            for i in range(m):
                X[i, k] *= r
            k += 1
        else:
            a = d[k]
            b = e[k]
            c = d[k + 1]
            det = a * c - b * b
            ia = c / det
            ib = -b / det
            ic = a / det
            for i in range(m):
                x0 = X[i, k]
                x1 = X[i, k + 1]
                X[i, k] = x0 * ia + x1 * ib
                X[i, k + 1] = x0 * ib + x1 * ic
            k += 2


@dataclass(eq=False)
class DenseLDL:
    """``B[perm][:, perm] = L @ D @ L.T``; ``pivsize[k]`` is 1, 2, or 0 (second of a pair)."""

    L: np.ndarray
    d: np.ndarray
    e: np.ndarray
    perm: np.ndarray
    pivsize: np.ndarray
    perturbed: np.ndarray

    @property
    def n(self) -> int:
        return len(self.d)

    @property
    def n_perturbed(self) -> int:
        return int(self.perturbed.sum())

    def D(self) -> np.ndarray:
        out = np.diag(self.d).astype(self.d.dtype)
        k = np.flatnonzero(self.pivsize == 2)
        out[k + 1, k] = self.e[k]
        out[k, k + 1] = self.e[k]
        return out

    def apply_dinv(self, X: np.ndarray) -> np.ndarray:
        """``X @ D^{-1}`` (``X`` is overwritten when C-contiguous of matching dtype)."""
        X = np.ascontiguousarray(X, dtype=np.result_type(X.dtype, self.d.dtype))
        _apply_dinv(X, self.d, self.e, self.pivsize)
        return X

    def nbytes(self) -> int:
        return sum(a.nbytes for a in (self.L, self.d, self.e, self.perm, self.pivsize, self.perturbed))


def dense_bk_ldlt(b: np.ndarray, tau: float = PIVOT_TAU) -> DenseLDL:
    """Bunch-Kaufman factorization of the symmetric matrix ``b`` (lower triangle read)."""
    b = np.asarray(b)
    n = b.shape[0]
    if b.ndim != 2 or b.shape[1] != n:
        raise ValueError(f"expected a square matrix, got {b.shape}")
    dtype = np.complex128 if np.iscomplexobj(b) else np.float64
    W = np.array(b.T, dtype=dtype, order="C")
    if n:
        low = np.abs(np.tril(b))
        scale = float((low.sum(axis=1) + low.sum(axis=0) - np.abs(np.diagonal(b))).max())
    else:
        scale = 0.0
    floor = tau * scale if scale > 0 else tau
    perm = np.arange(n, dtype=np.int64)
    pivsize = np.zeros(n, dtype=np.int8)
    flags = np.zeros(n, dtype=np.bool_)
    if n:
        _bk_inplace(W, perm, pivsize, flags, ALPHA, floor)
    d = np.diagonal(W).copy()
    e = np.zeros(n, dtype=dtype)
    two = np.flatnonzero(pivsize == 2)
    e[two] = W[two, two + 1]
    L = np.triu(W, 1).T.copy()
    L[np.arange(n), np.arange(n)] = 1.0
    L[two + 1, two] = 0.0
    return DenseLDL(L, d, e, perm, pivsize, flags)
