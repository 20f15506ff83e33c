"""Sparse LDL^T with 1x1 pivots: the kernel shared by subdomains and the baseline.

The symbolic phase computes the elimination tree and column counts of the
fill-reduced matrix; the numeric phase builds L one row at a time from the
etree reach of the row pattern. Tiny pivots are replaced by
``sign(d) * tau * |A|_inf`` and flagged instead of aborting.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from .ordering import Orderer, amd_order
from .sparse import Permutation, SymSparseMatrix, adjacency_of, _as_block

PIVOT_TAU = 1e-12


@nb.njit(cache=True)
def _symperm_upper(n, colptr, rowidx, values, inv):
    """Upper triangle (CSC) of P A P^T from lower storage of A."""
    count = np.zeros(n, dtype=np.int64)
    for j in range(n):
        for p in range(colptr[j], colptr[j + 1]):
            r = inv[rowidx[p]]
            c = inv[j]
            count[max(r, c)] += 1
    Ap = np.zeros(n + 1, dtype=np.int64)
    for j in range(n):
        Ap[j + 1] = Ap[j] + count[j]
    nxt = Ap[:n].copy()
    Ai = np.empty(Ap[n], dtype=np.int64)
    Ax = np.empty(Ap[n], dtype=values.dtype)
    for j in range(n):
        for p in range(colptr[j], colptr[j + 1]):
            r = inv[rowidx[p]]
            c = inv[j]
            q = nxt[max(r, c)]
            nxt[max(r, c)] += 1
            Ai[q] = min(r, c)
            Ax[q] = values[p]
    return Ap, Ai, Ax


@nb.njit(cache=True)
def _symbolic(n, Ap, Ai):
    parent = np.full(n, -1, dtype=np.int64)
    flag = np.empty(n, dtype=np.int64)
    lnz = np.zeros(n, dtype=np.int64)
    for k in range(n):
        flag[k] = k
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            if i < k:
                while flag[i] != k:
                    if parent[i] == -1:
                        parent[i] = k
                    lnz[i] += 1
                    flag[i] = k
                    i = parent[i]
    Lp = np.zeros(n + 1, dtype=np.int64)
    for k in range(n):
        Lp[k + 1] = Lp[k] + lnz[k]
    return Lp, parent


@nb.njit(cache=True, nogil=True)
def _numeric(n, Ap, Ai, Ax, Lp, parent, floor):
    nnz = Lp[n]
    Li = np.empty(nnz, dtype=np.int32)
    Lx = np.empty(nnz, dtype=Ax.dtype)
    D = np.empty(n, dtype=Ax.dtype)
    perturbed = np.zeros(n, dtype=np.bool_)
    Y = np.zeros(n, dtype=Ax.dtype)
    pattern = np.empty(n, dtype=np.int64)
    flag = np.empty(n, dtype=np.int64)
    lnz = np.zeros(n, dtype=np.int64)
    for k in range(n):
        top = n
        flag[k] = k
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            Y[i] += Ax[p]
            ln = 0
            while flag[i] != k:
                pattern[ln] = i
                ln += 1
                flag[i] = k
                i = parent[i]
            while ln > 0:
                top -= 1
                ln -= 1
                pattern[top] = pattern[ln]
        dk = Y[k]
        Y[k] = 0
        for t in range(top, n):
            i = pattern[t]
            yi = Y[i]
            Y[i] = 0
            p2 = Lp[i] + lnz[i]
            for p in range(Lp[i], p2):
                Y[Li[p]] -= Lx[p] * yi
            lki = yi / D[i]
            dk -= lki * yi
            Li[p2] = k
            Lx[p2] = lki
            lnz[i] += 1
        if abs(dk) < floor:
            if dk == 0:
                dk = floor
            else:
                dk = dk / abs(dk) * floor
            perturbed[k] = True
        D[k] = dk
    return Li, Lx, D, perturbed


@nb.njit(cache=True, nogil=True)
def _solve_inplace(n, Lp, Li, Lx, D, X):
    m = X.shape[1]
    for j in range(n):
        for p in range(Lp[j], Lp[j + 1]):
            i = Li[p]
            l = Lx[p]
            for c in range(m):
                X[i, c] -= l * X[j, c]
    for j in range(n):
        d = D[j]
        for c in range(m):
            X[j, c] /= d
    for j in range(n - 1, -1, -1):
        for p in range(Lp[j], Lp[j + 1]):
            i = Li[p]
            l = Lx[p]
            for c in range(m):
                X[j, c] -= l * X[i, c]


@nb.njit(cache=True, nogil=True)
def _forward_inplace(n, Lp, Li, Lx, X):
    m = X.shape[1]
    for j in range(n):
        for p in range(Lp[j], Lp[j + 1]):
            i = Li[p]
            l = Lx[p]
            for c in range(m):
                X[i, c] -= l * X[j, c]


@dataclass(eq=False)
class SubdomainFactor:
    """``P A P^T = L D L^T`` with unit lower ``L`` (CSC, diagonal implicit)."""

    n: int
    perm: Permutation
    Lp: np.ndarray
    Li: np.ndarray
    Lx: np.ndarray
    D: np.ndarray
    perturbed: np.ndarray
    anorm: float
    index_map: np.ndarray | None = None

    @property
    def dtype(self):
        return self.D.dtype

    @property
    def nnz_l(self) -> int:
        return int(self.Lp[-1])

    @property
    def n_perturbed(self) -> int:
        return int(self.perturbed.sum())

    def nbytes(self) -> int:
        arrays = (self.Lp, self.Li, self.Lx, self.D, self.perturbed,
                  self.perm.perm, self.perm.inverse)
        total = sum(a.nbytes for a in arrays)
        if self.index_map is not None:
            total += self.index_map.nbytes
        return total

    def L_dense(self) -> np.ndarray:
        L = np.eye(self.n, dtype=self.dtype)
        cols = np.repeat(np.arange(self.n), np.diff(self.Lp))
        L[self.Li, cols] = self.Lx
        return L

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return solve_factored(self, rhs)


def numeric_factor(a: SymSparseMatrix, orderer: Orderer = amd_order,
                   tau: float = PIVOT_TAU, index_map: np.ndarray | None = None) -> SubdomainFactor:
    """Fill-reduced sparse LDL^T of ``a``; always completes (see ``perturbed``)."""
    n = a.n
    perm = orderer(adjacency_of(a)) if n > 1 else Permutation.identity(n)
    anorm = a.norm_inf()
    Ap, Ai, Ax = _symperm_upper(n, a.colptr, a.rowidx, a.values, perm.inverse)
    Lp, parent = _symbolic(n, Ap, Ai)
    floor = tau * anorm if anorm > 0 else tau
    Li, Lx, D, perturbed = _numeric(n, Ap, Ai, Ax, Lp, parent, floor)
    return SubdomainFactor(n, perm, Lp, Li, Lx, D, perturbed, anorm, index_map)


def factor_workspace_nbytes(a: SymSparseMatrix) -> int:
    """Transient bytes of ``numeric_factor`` beyond its result.

    The permuted upper copy of ``a``, the etree, and the O(n) scratch arrays
    of the numeric phase (``Y``, pattern, flags, counts).
    """
    n, w = a.n, a.values.dtype.itemsize
    upper = (n + 1) * 8 + a.nnz * (8 + w)
    symbolic = 3 * n * 8
    scratch = n * w + 3 * n * 8
    return upper + symbolic + scratch


def solve_factored(f: SubdomainFactor, rhs: np.ndarray) -> np.ndarray:
    """``A^{-1} rhs`` through permute, L, D, L^T, unpermute; keeps rhs's shape."""
    vec = np.ndim(rhs) == 1
    b = _as_block(rhs)
    if b.shape[0] != f.n:
        raise ValueError(f"rhs has {b.shape[0]} rows, factor is {f.n}")
    dtype = np.result_type(f.dtype, b.dtype)
    x = np.ascontiguousarray(b[f.perm.perm], dtype=dtype)
    if f.n:
        _solve_inplace(f.n, f.Lp, f.Li, f.Lx.astype(dtype, copy=False),
                       f.D.astype(dtype, copy=False), x)
    out = np.empty_like(x)
    out[f.perm.perm] = x
    return out[:, 0] if vec else out


def forward_factored(f: SubdomainFactor, rhs: np.ndarray) -> np.ndarray:
    """``L^{-1} P rhs`` (rows in factor order)."""
    b = _as_block(rhs)
    dtype = np.result_type(f.dtype, b.dtype)
    x = np.ascontiguousarray(b[f.perm.perm], dtype=dtype)
    if f.n:
        _forward_inplace(f.n, f.Lp, f.Li, f.Lx.astype(dtype, copy=False), x)
    return x
