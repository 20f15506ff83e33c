"""The interface problem: a symmetric matrix stored as a sparse set of dense blocks.

Symbolic analysis runs minimum degree on the group quotient graph and
completes cliques to find every fill block up front. The numeric phase is
a right-looking block LDL^T whose pivots come from Bunch-Kaufman on each
diagonal block, so no interchange ever leaves its group.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import IO, Iterable

import numba as nb
import numpy as np
import scipy.linalg as sla

from .bunch_kaufman import DenseLDL, dense_bk_ldlt


class StructuralOverflow(RuntimeError):
    """A numeric update hit a block the symbolic phase did not allocate."""


@dataclass(eq=False)
class BlockSparseSym:
    """``blocks[(g, h)]`` with ``g <= h`` is the dense ``size_g x size_h`` block."""

    sizes: np.ndarray
    blocks: dict[tuple[int, int], np.ndarray]

    @property
    def n_groups(self) -> int:
        return len(self.sizes)

    @property
    def n(self) -> int:
        return int(self.sizes.sum())

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)]).astype(np.int64)

    @property
    def dtype(self):
        for b in self.blocks.values():
            return b.dtype
        return np.dtype(np.float64)

    def nbytes(self) -> int:
        return sum(b.nbytes for b in self.blocks.values())

    def to_dense(self) -> np.ndarray:
        off = self.offsets
        out = np.zeros((self.n, self.n), dtype=self.dtype)
        for (g, h), b in self.blocks.items():
            out[off[g]:off[g + 1], off[h]:off[h + 1]] = b
            if g != h:
                out[off[h]:off[h + 1], off[g]:off[g + 1]] = b.T
        return out

    def norm_inf(self) -> float:
        rows = np.zeros(self.n)
        off = self.offsets
        for (g, h), b in self.blocks.items():
            a = np.abs(b)
            rows[off[g]:off[g + 1]] += a.sum(axis=1)
            if g != h:
                rows[off[h]:off[h + 1]] += a.sum(axis=0)
        return float(rows.max()) if self.n else 0.0

    def adjacency(self) -> list[set[int]]:
        adj: list[set[int]] = [set() for _ in range(self.n_groups)]
        for g, h in self.blocks:
            if g != h:
                adj[g].add(h)
                adj[h].add(g)
        return adj

    def dump(self, stream: IO[str], sym: "BlockSymbolic | None" = None) -> None:
        """Text summary: group sizes, block density, fill count."""
        G = self.n_groups
        off_blocks = sum(1 for g, h in self.blocks if g != h)
        pairs = G * (G - 1) // 2
        stream.write(f"groups {G}\nn {self.n}\n")
        stream.write("sizes " + " ".join(map(str, self.sizes.tolist())) + "\n")
        stream.write(f"offdiag_blocks {off_blocks}\n")
        stream.write(f"block_density {off_blocks / pairs if pairs else 0.0:.6f}\n")
        if sym is not None:
            stream.write(f"fill_blocks {len(sym.fill)}\n")


def block_sparse_from_dense(a: np.ndarray, sizes: Iterable[int], tol: float = 0.0) -> BlockSparseSym:
    """Cut a dense symmetric matrix into blocks, dropping all-zero off-diagonal ones."""
    sizes = np.asarray(list(sizes), dtype=np.int64)
    off = np.concatenate([[0], np.cumsum(sizes)])
    blocks = {}
    for g in range(len(sizes)):
        for h in range(g, len(sizes)):
            b = a[off[g]:off[g + 1], off[h]:off[h + 1]]
            if g == h or np.abs(b).max(initial=0.0) > tol:
                blocks[(g, h)] = np.array(b)
    return BlockSparseSym(sizes, blocks)


def assemble_interface(contributions, sizes) -> BlockSparseSym:
    """Sum per-part contributions in the order given (ascending part index).

    Diagonal blocks are symmetrized after summation; off-diagonal blocks
    are stored once, so the implied matrix is exactly symmetric.
    """
    sizes = np.asarray(sizes, dtype=np.int64)
    blocks: dict[tuple[int, int], np.ndarray] = {}
    dtype = np.float64
    for c in contributions:
        for key, b in c.blocks.items():
            g, h = key
            if g > h or b.shape != (sizes[g], sizes[h]):
                raise ValueError(f"block {key} of part {c.part} has shape {b.shape}")
            dtype = np.result_type(dtype, b.dtype)
            if key in blocks:
                acc = blocks[key]
                if acc.dtype != np.result_type(acc.dtype, b.dtype):
                    acc = blocks[key] = acc.astype(np.result_type(acc.dtype, b.dtype))
                acc += b
            else:
                blocks[key] = np.array(b, dtype=np.result_type(dtype, b.dtype))
    for g in range(len(sizes)):
        if (g, g) not in blocks:
            blocks[(g, g)] = np.zeros((sizes[g], sizes[g]), dtype=dtype)
        else:
            d = blocks[(g, g)]
            d += d.T
            d *= 0.5
    return BlockSparseSym(sizes, blocks)


def accumulate_contribution(s: BlockSparseSym, c) -> None:
    """Add one contribution into ``s`` in place (streaming assembly)."""
    for key, b in c.blocks.items():
        if key in s.blocks:
            acc = s.blocks[key]
            if acc.dtype != np.result_type(acc.dtype, b.dtype):
                acc = s.blocks[key] = acc.astype(np.result_type(acc.dtype, b.dtype))
            acc += b
        else:
            s.blocks[key] = np.array(b)


def symmetrize_diagonal(s: BlockSparseSym) -> None:
    for g in range(s.n_groups):
        if (g, g) not in s.blocks:
            s.blocks[(g, g)] = np.zeros((s.sizes[g], s.sizes[g]), dtype=s.dtype)
        else:
            d = s.blocks[(g, g)]
            d += d.T
            d *= 0.5


@dataclass(eq=False)
class BlockSymbolic:
    """Elimination order over groups and the complete factor block structure.

    ``column[j]`` lists, in elimination position, the later groups coupled
    to the ``j``-th eliminated group when it is eliminated.
    """

    order: list[int]
    position: list[int]
    fill: list[tuple[int, int]]
    column: list[list[int]]

    @property
    def n_groups(self) -> int:
        return len(self.order)

    def structure(self) -> set[tuple[int, int]]:
        """Every (row, col) block of L in elimination positions, row > col."""
        return {(i, j) for j, col in enumerate(self.column) for i in col}


def eliminate_blocks(adj: list[set[int]], order: list[int]) -> tuple[list[tuple[int, int]], list[list[int]]]:
    """Clique-completion fill of eliminating groups in ``order``."""
    G = len(adj)
    adj = [set(a) for a in adj]
    pos = [0] * G
    for p, g in enumerate(order):
        pos[g] = p
    alive = [True] * G
    fill, column = [], []
    for g in order:
        nbrs = sorted(adj[g], key=lambda x: pos[x])
        column.append([pos[h] for h in nbrs])
        for a in range(len(nbrs)):
            for b in range(a + 1, len(nbrs)):
                u, v = nbrs[a], nbrs[b]
                if v not in adj[u]:
                    adj[u].add(v)
                    adj[v].add(u)
                    fill.append((min(u, v), max(u, v)))
        for h in nbrs:
            adj[h].discard(g)
        adj[g] = set()
        alive[g] = False
    return fill, column


def min_degree_order(adj: list[set[int]]) -> list[int]:
    """Minimum degree on the quotient graph; ties go to the lowest group id."""
    G = len(adj)
    adj = [set(a) for a in adj]
    alive = set(range(G))
    order = []
    while alive:
        g = min(alive, key=lambda x: (len(adj[x]), x))
        nbrs = list(adj[g])
        for u in nbrs:
            adj[u].discard(g)
            adj[u].update(v for v in nbrs if v != u)
        alive.discard(g)
        order.append(g)
    return order


def block_symbolic(s: BlockSparseSym, order: list[int] | None = None) -> BlockSymbolic:
    adj = s.adjacency()
    if order is None:
        order = min_degree_order(adj)
    fill, column = eliminate_blocks(adj, order)
    position = [0] * len(order)
    for p, g in enumerate(order):
        position[g] = p
    return BlockSymbolic(list(order), position, fill, column)


@dataclass(eq=False)
class BlockLDLFactor:
    """Block LDL^T in elimination positions.

    ``L[(i, j)]`` (``i > j``) has the rows of group ``order[i]`` and the
    columns of group ``order[j]``, both in the pivot order of their diagonal
    blocks.
    """

    sym: BlockSymbolic
    sizes: np.ndarray
    diag: list[DenseLDL]
    L: dict[tuple[int, int], np.ndarray]
    dtype: np.dtype = field(default=np.dtype(np.float64))

    @property
    def n(self) -> int:
        return int(self.sizes.sum())

    @property
    def n_perturbed(self) -> int:
        return sum(d.n_perturbed for d in self.diag)

    def nbytes(self) -> int:
        return sum(b.nbytes for b in self.L.values()) + sum(d.nbytes() for d in self.diag)

    def permutation(self) -> np.ndarray:
        """Global ``perm[new] = old`` over the interface (group-major input order)."""
        off = np.concatenate([[0], np.cumsum(self.sizes)])
        return np.concatenate([off[g] + self.diag[j].perm for j, g in enumerate(self.sym.order)]).astype(np.int64)

    def dense_factors(self) -> tuple[np.ndarray, np.ndarray]:
        """Expanded ``(L, D)`` with ``S[P][:, P] = L D L^T`` for ``P = permutation()``."""
        order = self.sym.order
        sz = [int(self.sizes[g]) for g in order]
        off = np.concatenate([[0], np.cumsum(sz)]).astype(np.int64)
        n = int(off[-1])
        L = np.zeros((n, n), dtype=self.dtype)
        D = np.zeros((n, n), dtype=self.dtype)
        for j, f in enumerate(self.diag):
            sl = slice(off[j], off[j + 1])
            L[sl, sl] = f.L
            D[sl, sl] = f.D()
        for (i, j), b in self.L.items():
            L[off[i]:off[i + 1], off[j]:off[j + 1]] = b
        return L, D

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return block_solve(self, rhs)


def _working_blocks(s: BlockSparseSym, sym: BlockSymbolic, dtype, consume: bool):
    """Blocks keyed by elimination position (row > col), fill blocks zeroed."""
    pos = sym.position
    W: dict[tuple[int, int], np.ndarray] = {}
    for key in list(s.blocks):
        g, h = key
        b = s.blocks.pop(key) if consume else s.blocks[key]
        i, j = pos[g], pos[h]
        if i >= j:
            W[(i, j)] = np.asarray(b, dtype=dtype) if consume else np.array(b, dtype=dtype)
        else:
            W[(j, i)] = np.array(b.T, dtype=dtype, order="C")
    for u, v in sym.fill:
        i, j = max(pos[u], pos[v]), min(pos[u], pos[v])
        W[(i, j)] = np.zeros((s.sizes[sym.order[i]], s.sizes[sym.order[j]]), dtype=dtype)
    return W


def block_numeric(s: BlockSparseSym, sym: BlockSymbolic, consume: bool = False,
                  check_structure: bool = True) -> BlockLDLFactor:
    """Right-looking block LDL^T; with ``consume`` the blocks of ``s`` are reused."""
    dtype = np.result_type(s.dtype, np.float64)
    W = _working_blocks(s, sym, dtype, consume)
    order = sym.order
    sizes = s.sizes
    diag: list[DenseLDL] = []
    L: dict[tuple[int, int], np.ndarray] = {}
    for j in range(len(order)):
        f = dense_bk_ldlt(W.pop((j, j)))
        diag.append(f)
        col = sym.column[j]
        X = {}
        for i in col:
            a_ij = W.pop((i, j), None)
            if a_ij is None:
                raise StructuralOverflow(f"block ({i}, {j}) missing from symbolic structure")
            t = a_ij[:, f.perm]
            # X = A_ij P^T L^{-T} = L_ij D
            x = sla.solve_triangular(f.L, t.T, lower=True, unit_diagonal=True,
                                     check_finite=False).T
            X[i] = np.ascontiguousarray(x)
            L[(i, j)] = f.apply_dinv(x.copy())
        for a, i1 in enumerate(col):
            l1 = L[(i1, j)]
            for i2 in col[:a + 1]:
                tgt = W.get((i1, i2))
                if tgt is None:
                    if check_structure:
                        raise StructuralOverflow(f"update to unallocated block ({i1}, {i2})")
                    tgt = W[(i1, i2)] = np.zeros((sizes[order[i1]], sizes[order[i2]]), dtype=dtype)
                tgt -= l1 @ X[i2].T
    if W:
        raise StructuralOverflow(f"unconsumed blocks {sorted(W)[:5]}")
    for (i, j), b in L.items():
        b[:] = b[diag[i].perm]
    return BlockLDLFactor(sym, np.asarray(sizes), diag, L, np.dtype(dtype))


@nb.njit(cache=True, nogil=True)
def _unit_lower_solve(L, Y):
    """Y <- L^{-1} Y for unit lower L; columns of Y are independent."""
    n, m = Y.shape
    for k in range(n):
        for i in range(k + 1, n):
            l = L[i, k]
            for c in range(m):
                Y[i, c] -= l * Y[k, c]


@nb.njit(cache=True, nogil=True)
def _unit_lower_t_solve(L, Y):
    """Y <- L^{-T} Y for unit lower L."""
    n, m = Y.shape
    for k in range(n - 1, -1, -1):
        for i in range(k + 1, n):
            l = L[i, k]
            for c in range(m):
                Y[k, c] -= l * Y[i, c]


@nb.njit(cache=True, nogil=True)
def _sub_matmul(Y, A, Z):
    """Y <- Y - A Z."""
    r, k = A.shape
    m = Y.shape[1]
    for i in range(r):
        for p in range(k):
            a = A[i, p]
            for c in range(m):
                Y[i, c] -= a * Z[p, c]


@nb.njit(cache=True, nogil=True)
def _sub_matmul_t(Y, A, Z):
    """Y <- Y - A^T Z."""
    r, k = A.shape
    m = Y.shape[1]
    for i in range(r):
        for p in range(k):
            a = A[i, p]
            for c in range(m):
                Y[p, c] -= a * Z[i, c]


def block_solve(f: BlockLDLFactor, rhs: np.ndarray) -> np.ndarray:
    """Solve ``S X = rhs`` with the block factor (multi-column).

    The kernels loop with the column index innermost, so each column of the
    result is computed by the same arithmetic whatever the number of columns.
    """
    b = np.asarray(rhs)
    vec = b.ndim == 1
    if vec:
        b = b[:, None]
    if b.shape[0] != f.n:
        raise ValueError(f"rhs has {b.shape[0]} rows, interface has {f.n}")
    dtype = np.result_type(f.dtype, b.dtype)
    order = f.sym.order
    off = np.concatenate([[0], np.cumsum(f.sizes)]).astype(np.int64)
    G = len(order)
    # y[j]: group order[j], rows in pivot order of its diagonal block
    y = [np.ascontiguousarray(b[off[g] + f.diag[j].perm], dtype=dtype) for j, g in enumerate(order)]
    for j in range(G):
        _unit_lower_solve(f.diag[j].L, y[j])
        for i in f.sym.column[j]:
            _sub_matmul(y[i], f.L[(i, j)], y[j])
    for j in range(G):
        d = f.diag[j]
        y[j] = np.ascontiguousarray(d.apply_dinv(np.ascontiguousarray(y[j].T)).T)
    for j in range(G - 1, -1, -1):
        for i in f.sym.column[j]:
            _sub_matmul_t(y[j], f.L[(i, j)], y[i])
        _unit_lower_t_solve(f.diag[j].L, y[j])
    x = np.empty((f.n, b.shape[1]), dtype=dtype)
    for j, g in enumerate(order):
        x[off[g] + f.diag[j].perm] = y[j]
    return x[:, 0] if vec else x
