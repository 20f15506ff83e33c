"""Interior elimination: arrowhead split, Schur contributions, interior recovery."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .decompose import ArrowheadLayout, SeparatorError
from .ldl import SubdomainFactor, solve_factored
from .sparse import INDEX, SymSparseMatrix, _as_block, permute_sym

SCHUR_BLOCK_COLS = 64


@dataclass(eq=False)
class ArrowheadSplit:
    """Per-part ``A_ii`` and ``A_ib`` plus the interface block ``A_bb``.

    ``A_ib[i]`` has one column per interface position (layout order).
    """

    A_ii: list[SymSparseMatrix]
    A_ib: list[sp.csc_matrix]
    A_bb: SymSparseMatrix

    def nbytes(self) -> int:
        total = self.A_bb.nbytes() + sum(a.nbytes() for a in self.A_ii)
        for m in self.A_ib:
            total += m.data.nbytes + m.indices.nbytes + m.indptr.nbytes
        return total

    def reassemble(self, layout: ArrowheadLayout) -> SymSparseMatrix:
        """Inverse of ``split_arrowhead``: the layout-permuted matrix."""
        rows, cols, vals = [], [], []
        for i, (aii, aib) in enumerate(zip(self.A_ii, self.A_ib)):
            off = layout.part_offsets[i]
            rows.append(aii.rowidx + off)
            cols.append(aii.col_indices() + off)
            vals.append(aii.values)
            c = aib.tocoo()
            rows.append(c.col.astype(INDEX) + layout.n_interior)
            cols.append(c.row.astype(INDEX) + off)
            vals.append(c.data)
        rows.append(self.A_bb.rowidx + layout.n_interior)
        cols.append(self.A_bb.col_indices() + layout.n_interior)
        vals.append(self.A_bb.values)
        r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
        order = np.lexsort((r, c))
        colptr = np.zeros(layout.n + 1, dtype=INDEX)
        np.cumsum(np.bincount(c, minlength=layout.n), out=colptr[1:])
        return SymSparseMatrix(layout.n, colptr, r[order], v[order])


def _sym_block(n, r, c, v) -> SymSparseMatrix:
    order = np.lexsort((r, c))
    colptr = np.zeros(n + 1, dtype=INDEX)
    np.cumsum(np.bincount(c, minlength=n), out=colptr[1:])
    return SymSparseMatrix(n, colptr, r[order], v[order])


def split_arrowhead(a: SymSparseMatrix, layout: ArrowheadLayout) -> ArrowheadSplit:
    if a.n != layout.n:
        raise ValueError(f"layout is for n={layout.n}, matrix has n={a.n}")
    b = permute_sym(a, layout.perm)
    r, c, v = b.rowidx, b.col_indices(), b.values
    n_int = layout.n_interior
    seg = np.searchsorted(layout.part_offsets, np.arange(n_int), side="right") - 1
    c_int = c < n_int
    r_int = r < n_int
    if n_int and np.any(c_int & r_int & (seg[np.minimum(r, n_int - 1)] != seg[np.minimum(c, n_int - 1)])):
        raise SeparatorError("matrix couples interiors of different parts")

    A_ii, A_ib = [], []
    n_b = layout.n_interface
    both = c_int & r_int
    coup = c_int & ~r_int
    for i in range(layout.n_parts):
        lo, hi = layout.part_offsets[i], layout.part_offsets[i + 1]
        m = (c >= lo) & (c < hi)
        sel = both & m
        A_ii.append(_sym_block(int(hi - lo), r[sel] - lo, c[sel] - lo, v[sel]))
        sel = coup & m
        A_ib.append(sp.csc_matrix((v[sel], (c[sel] - lo, r[sel] - n_int)), shape=(int(hi - lo), n_b)))
    sel = ~c_int
    A_bb = _sym_block(n_b, r[sel] - n_int, c[sel] - n_int, v[sel])
    return ArrowheadSplit(A_ii, A_ib, A_bb)


@dataclass(eq=False)
class InterfaceMap:
    """Interface positions per group and the groups each part touches."""

    group_offsets: np.ndarray
    signatures: list[tuple[int, ...]]

    @classmethod
    def from_layout(cls, layout: ArrowheadLayout) -> "InterfaceMap":
        return cls(layout.group_offsets, layout.signatures)

    @property
    def n_groups(self) -> int:
        return len(self.signatures)

    @property
    def sizes(self) -> np.ndarray:
        return np.diff(self.group_offsets)

    def group_of(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_groups), self.sizes)

    def groups_of_part(self, p: int) -> list[int]:
        return [g for g, s in enumerate(self.signatures) if p in s]

    def footprint(self, p: int) -> tuple[list[int], np.ndarray]:
        groups = self.groups_of_part(p)
        if not groups:
            return groups, np.empty(0, dtype=INDEX)
        idx = np.concatenate([np.arange(self.group_offsets[g], self.group_offsets[g + 1])
                              for g in groups])
        return groups, idx.astype(INDEX)


def share_bb(a_bb: SymSparseMatrix, imap: InterfaceMap,
             n_parts: int | None = None) -> list[SymSparseMatrix]:
    """Split ``A_bb`` into per-part shares that sum back to ``A_bb``.

    Entry (u, v) goes to every part in both signatures, weighted by one
    over the number of such parts. Parts without interface get an empty share.
    """
    grp = imap.group_of()
    r, c, v = a_bb.rowidx, a_bb.col_indices(), a_bb.values
    gu, gv = grp[r], grp[c]
    pair_key = gu * imap.n_groups + gv
    if n_parts is None:
        n_parts = 1 + max((max(s) for s in imap.signatures), default=-1)
    per_part: list[list[np.ndarray]] = [[] for _ in range(n_parts)]
    weights = np.empty(len(v))
    for key in np.unique(pair_key).tolist():
        common = sorted(set(imap.signatures[key // imap.n_groups])
                        & set(imap.signatures[key % imap.n_groups]))
        sel = np.flatnonzero(pair_key == key)
        weights[sel] = 1.0 / len(common)
        for p in common:
            per_part[p].append(sel)
    out = []
    for p in range(n_parts):
        sel = np.sort(np.concatenate(per_part[p])) if per_part[p] else np.empty(0, dtype=INDEX)
        out.append(_sym_block(a_bb.n, r[sel], c[sel], v[sel] * weights[sel]))
    return out


@dataclass(eq=False)
class SchurContribution:
    """One part's additive share of the interface matrix, by group pair (g <= h)."""

    part: int
    groups: list[int]
    blocks: dict[tuple[int, int], np.ndarray]
    asymmetry: float = 0.0

    def nbytes(self) -> int:
        return sum(b.nbytes for b in self.blocks.values())


def _dense_footprint(share: SymSparseMatrix, fp: np.ndarray, dtype) -> np.ndarray:
    m = len(fp)
    out = np.zeros((m, m), dtype=dtype)
    if share.nnz == 0:
        return out
    loc = np.full(share.n, -1, dtype=INDEX)
    loc[fp] = np.arange(m)
    r, c = loc[share.rowidx], loc[share.col_indices()]
    if np.any(r < 0) or np.any(c < 0):
        raise ValueError("A_bb share reaches outside the part's interface footprint")
    np.add.at(out, (r, c), share.values)
    off = r != c
    np.add.at(out, (c[off], r[off]), share.values[off])
    return out


def schur_contribution(f: SubdomainFactor, a_ib: sp.spmatrix, share: SymSparseMatrix,
                       imap: InterfaceMap, part: int,
                       block_cols: int = SCHUR_BLOCK_COLS) -> SchurContribution:
    """``share - A_ib^T A_ii^{-1} A_ib`` scattered into group-pair blocks.

    ``W = A_ii^{-1} A_ib`` is formed ``block_cols`` columns at a time; the
    final product uses only the rows where ``A_ib`` is nonzero, as one
    dense matrix product.
    """
    groups, fp = imap.footprint(part)
    a_ib = sp.csc_matrix(a_ib)
    if a_ib.shape != (f.n, share.n):
        raise ValueError(f"A_ib is {a_ib.shape}, expected ({f.n}, {share.n})")
    outside = np.ones(share.n, dtype=bool)
    outside[fp] = False
    if a_ib[:, outside].nnz:
        raise ValueError("A_ib couples to an interface vertex outside the footprint")
    dtype = np.result_type(f.dtype, a_ib.dtype, share.dtype)
    S = _dense_footprint(share, fp, dtype)

    a_fp = a_ib[:, fp].tocsc()
    rows = np.unique(a_fp.indices)
    m = len(fp)
    if len(rows) and f.n:
        w_r = np.empty((len(rows), m), dtype=dtype)
        for c0 in range(0, m, block_cols):
            c1 = min(c0 + block_cols, m)
            w = solve_factored(f, a_fp[:, c0:c1].toarray())
            w_r[:, c0:c1] = w[rows]
        a_r = a_fp[rows, :].toarray()
        S -= a_r.T @ w_r
    scale = np.abs(S).max() if S.size else 0.0
    asym = float(np.abs(S - S.T).max() / scale) if scale > 0 else 0.0
    S = 0.5 * (S + S.T)

    bounds = np.zeros(len(groups) + 1, dtype=INDEX)
    np.cumsum(imap.sizes[groups], out=bounds[1:])
    blocks = {}
    for x, g in enumerate(groups):
        for y in range(x, len(groups)):
            h = groups[y]
            blk = S[bounds[x]:bounds[x + 1], bounds[y]:bounds[y + 1]]
            blocks[(g, h)] = np.ascontiguousarray(blk)
    return SchurContribution(part, groups, blocks, asym)


def condense_rhs(f: SubdomainFactor, a_ib: sp.spmatrix, b_i: np.ndarray) -> np.ndarray:
    """``-A_ib^T A_ii^{-1} b_i``: this part's correction to the interface rhs."""
    y = solve_factored(f, b_i)
    return -(sp.csc_matrix(a_ib).T @ y)


def interior_recover(f: SubdomainFactor, a_ib: sp.spmatrix, x_b: np.ndarray,
                     b_i: np.ndarray) -> np.ndarray:
    """``A_ii^{-1} (b_i - A_ib x_b)``."""
    x_b, b_i = _as_block(x_b), _as_block(b_i)
    if a_ib.shape[0] != b_i.shape[0] or a_ib.shape[1] != x_b.shape[0]:
        raise ValueError(f"A_ib {a_ib.shape} does not match b_i {b_i.shape} / x_b {x_b.shape}")
    return solve_factored(f, b_i - a_ib @ x_b)
