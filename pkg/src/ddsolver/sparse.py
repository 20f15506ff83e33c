"""Symmetric sparse storage, Matrix Market I/O and small shared utilities.

Matrices are kept as the lower triangle in compressed-column form. Complex
matrices are complex *symmetric*: no routine in the package conjugates.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import IO, Iterable

import numpy as np
import scipy.sparse as sp

INDEX = np.int64


class MatrixMarketError(ValueError):
    """Malformed Matrix Market input; ``lineno`` is 1-based."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class SymSparseMatrix:
    """Lower triangle (row >= col) of a symmetric matrix in CSC form."""

    n: int
    colptr: np.ndarray
    rowidx: np.ndarray
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.colptr[-1])

    @property
    def field(self) -> str:
        return "complex" if np.iscomplexobj(self.values) else "real"

    @property
    def dtype(self) -> np.dtype:
        return self.values.dtype

    def nbytes(self) -> int:
        return self.colptr.nbytes + self.rowidx.nbytes + self.values.nbytes

    def col_indices(self) -> np.ndarray:
        """Column index of every stored entry."""
        return np.repeat(np.arange(self.n, dtype=INDEX), np.diff(self.colptr))

    def diagonal(self) -> np.ndarray:
        d = np.zeros(self.n, dtype=self.dtype)
        cols = self.col_indices()
        on = self.rowidx == cols
        d[cols[on]] = self.values[on]
        return d

    def lower(self) -> sp.csc_matrix:
        return sp.csc_matrix((self.values, self.rowidx, self.colptr), shape=(self.n, self.n))

    def to_scipy(self) -> sp.csr_matrix:
        """Full (both triangles) matrix as scipy CSR."""
        low = self.lower()
        strict = sp.tril(low, k=-1)
        return (low + strict.T).tocsr()

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n), dtype=self.dtype)
        cols = self.col_indices()
        out[self.rowidx, cols] = self.values
        out[cols, self.rowidx] = self.values
        return out

    def norm_inf(self) -> float:
        """Max absolute row sum of the full symmetric matrix."""
        if self.n == 0:
            return 0.0
        a = np.abs(self.values)
        cols = self.col_indices()
        rows = np.bincount(self.rowidx, weights=a, minlength=self.n)
        off = self.rowidx != cols
        rows += np.bincount(cols[off], weights=a[off], minlength=self.n)
        return float(rows.max())

    def check(self) -> None:
        """Raise ``ValueError`` if the storage invariants are violated."""
        cp, ri = self.colptr, self.rowidx
        if len(cp) != self.n + 1 or cp[0] != 0 or np.any(np.diff(cp) < 0):
            raise ValueError("bad colptr")
        if len(ri) != cp[-1] or len(self.values) != cp[-1]:
            raise ValueError("rowidx/values length does not match colptr")
        cols = self.col_indices()
        if np.any(ri < cols) or np.any(ri >= self.n):
            raise ValueError("entry outside the lower triangle")
        same_col = cols[1:] == cols[:-1]
        if np.any(ri[1:][same_col] <= ri[:-1][same_col]):
            raise ValueError("row indices not strictly increasing within a column")


def sym_from_coo(n: int, rows, cols, vals, dtype=None) -> SymSparseMatrix:
    """Build lower-triangle storage from coordinates in either triangle.

    Entries above the diagonal are mirrored; duplicates are summed and
    explicit zeros are kept.
    """
    rows = np.asarray(rows, dtype=INDEX)
    cols = np.asarray(cols, dtype=INDEX)
    vals = np.asarray(vals, dtype=dtype)
    if vals.dtype.kind not in "fc":
        vals = vals.astype(np.float64)
    lo = np.maximum(rows, cols)
    hi = np.minimum(rows, cols)
    order = np.lexsort((lo, hi))
    lo, hi, vals = lo[order], hi[order], vals[order]
    if len(lo):
        new = np.ones(len(lo), dtype=bool)
        new[1:] = (lo[1:] != lo[:-1]) | (hi[1:] != hi[:-1])
        starts = np.flatnonzero(new)
        vals = np.add.reduceat(vals, starts) if len(starts) < len(vals) else vals
        lo, hi = lo[starts], hi[starts]
    colptr = np.zeros(n + 1, dtype=INDEX)
    np.cumsum(np.bincount(hi, minlength=n), out=colptr[1:])
    return SymSparseMatrix(n, colptr, lo.astype(INDEX), np.ascontiguousarray(vals))


def sym_from_dense(a: np.ndarray, keep_zeros: bool = False) -> SymSparseMatrix:
    a = np.asarray(a)
    r, c = np.tril_indices(a.shape[0])
    v = a[r, c]
    if not keep_zeros:
        keep = (v != 0) | (r == c)
        r, c, v = r[keep], c[keep], v[keep]
    return sym_from_coo(a.shape[0], r, c, v, dtype=a.dtype if a.dtype.kind in "fc" else np.float64)


def sym_from_scipy(a) -> SymSparseMatrix:
    """Lower triangle of a (structurally) symmetric scipy matrix."""
    low = sp.tril(sp.coo_matrix(a))
    return sym_from_coo(a.shape[0], low.row, low.col, low.data)


def identity(n: int, dtype=np.float64) -> SymSparseMatrix:
    idx = np.arange(n, dtype=INDEX)
    return SymSparseMatrix(n, np.arange(n + 1, dtype=INDEX), idx, np.ones(n, dtype=dtype))


# ---------------------------------------------------------------- Matrix Market


def _header(lines: list[str]) -> tuple[str, str, str, str, int]:
    if not lines or not lines[0].startswith("%%MatrixMarket"):
        raise MatrixMarketError("missing %%MatrixMarket banner", 1)
    tok = lines[0].split()
    if len(tok) != 5:
        raise MatrixMarketError("banner needs 5 fields", 1)
    obj, fmt, field, kind = (t.lower() for t in tok[1:])
    if obj != "matrix":
        raise MatrixMarketError(f"unsupported object {obj!r}", 1)
    i = 1
    while i < len(lines) and (lines[i].startswith("%") or not lines[i].strip()):
        i += 1
    if i == len(lines):
        raise MatrixMarketError("missing size line", i)
    return obj, fmt, field, kind, i


def load_matrix_market(stream: IO[str]) -> SymSparseMatrix:
    """Read a coordinate, symmetric, real or complex Matrix Market stream."""
    lines = stream.read().splitlines()
    _, fmt, field, kind, i = _header(lines)
    if fmt != "coordinate":
        raise MatrixMarketError(f"expected coordinate format, got {fmt!r}", 1)
    if kind != "symmetric":
        raise MatrixMarketError(f"matrix kind must be symmetric, got {kind!r}", 1)
    if field not in ("real", "complex", "integer"):
        raise MatrixMarketError(f"unsupported field {field!r}", 1)
    size = lines[i].split()
    if len(size) != 3:
        raise MatrixMarketError("size line needs rows, cols, nnz", i + 1)
    try:
        m, n, nnz = (int(s) for s in size)
    except ValueError:
        raise MatrixMarketError("non-integer size line", i + 1) from None
    if m != n:
        raise MatrixMarketError(f"matrix is not square ({m}x{n})", i + 1)
    width = 4 if field == "complex" else 3
    body_start = i + 1
    rows = np.empty(nnz, dtype=INDEX)
    cols = np.empty(nnz, dtype=INDEX)
    vals = np.empty(nnz, dtype=np.complex128 if field == "complex" else np.float64)
    k = 0
    for ln in range(body_start, len(lines)):
        s = lines[ln]
        if not s.strip() or s.startswith("%"):
            continue
        tok = s.split()
        if len(tok) != width:
            raise MatrixMarketError(f"expected {width} fields, got {len(tok)}", ln + 1)
        if k >= nnz:
            raise MatrixMarketError(f"more than {nnz} entries", ln + 1)
        try:
            r, c = int(tok[0]), int(tok[1])
            v = complex(float(tok[2]), float(tok[3])) if width == 4 else float(tok[2])
        except ValueError:
            raise MatrixMarketError("unparsable entry", ln + 1) from None
        if not (1 <= r <= n and 1 <= c <= n):
            raise MatrixMarketError(f"index ({r},{c}) out of range for n={n}", ln + 1)
        rows[k], cols[k], vals[k] = r - 1, c - 1, v
        k += 1
    if k != nnz:
        raise MatrixMarketError(f"expected {nnz} entries, found {k}", len(lines))
    return sym_from_coo(n, rows, cols, vals)


def _fmt(v) -> str:
    return repr(float(v))


def save_matrix_market(a: SymSparseMatrix, stream: IO[str]) -> None:
    complex_ = a.field == "complex"
    stream.write(f"%%MatrixMarket matrix coordinate {a.field} symmetric\n")
    stream.write(f"{a.n} {a.n} {a.nnz}\n")
    cols = a.col_indices() + 1
    rows = a.rowidx + 1
    out = []
    for r, c, v in zip(rows.tolist(), cols.tolist(), a.values.tolist()):
        if complex_:
            out.append(f"{r} {c} {_fmt(v.real)} {_fmt(v.imag)}\n")
        else:
            out.append(f"{r} {c} {_fmt(v)}\n")
    stream.writelines(out)


def load_dense_matrix_market(stream: IO[str]) -> np.ndarray:
    """Read an ``array general`` Matrix Market stream (column-major)."""
    lines = stream.read().splitlines()
    _, fmt, field, kind, i = _header(lines)
    if fmt != "array" or kind != "general":
        raise MatrixMarketError("expected array general format", 1)
    try:
        m, n = (int(s) for s in lines[i].split())
    except ValueError:
        raise MatrixMarketError("bad size line", i + 1) from None
    body = [s for s in lines[i + 1:] if s.strip() and not s.startswith("%")]
    flat = np.array(" ".join(body).split(), dtype=np.float64)
    if field == "complex":
        flat = flat[0::2] + 1j * flat[1::2]
    if flat.size != m * n:
        raise MatrixMarketError(f"expected {m * n} values, found {flat.size}", len(lines))
    return flat.reshape((n, m)).T.copy()


def save_dense_matrix_market(x: np.ndarray, stream: IO[str]) -> None:
    x = np.asarray(x)
    if x.ndim == 1:
        x = x[:, None]
    complex_ = np.iscomplexobj(x)
    stream.write(f"%%MatrixMarket matrix array {'complex' if complex_ else 'real'} general\n")
    stream.write(f"{x.shape[0]} {x.shape[1]}\n")
    flat = x.T.ravel()
    if complex_:
        stream.writelines(f"{_fmt(v.real)} {_fmt(v.imag)}\n" for v in flat.tolist())
    else:
        stream.writelines(f"{_fmt(v)}\n" for v in flat.tolist())


# ----------------------------------------------------------------- graphs


@dataclass(frozen=True, eq=False)
class Graph:
    """Symmetric, loop-free adjacency in CSR form with sorted neighbour lists."""

    n: int
    indptr: np.ndarray
    indices: np.ndarray

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def n_edges(self) -> int:
        return len(self.indices) // 2


def graph_from_edges(n: int, edges: Iterable[tuple[int, int]]) -> Graph:
    e = np.asarray(list(edges), dtype=INDEX).reshape(-1, 2)
    e = e[e[:, 0] != e[:, 1]]
    u = np.concatenate([e[:, 0], e[:, 1]])
    v = np.concatenate([e[:, 1], e[:, 0]])
    return _graph_from_pairs(n, u, v)


def _graph_from_pairs(n: int, u: np.ndarray, v: np.ndarray) -> Graph:
    order = np.lexsort((v, u))
    u, v = u[order], v[order]
    if len(u):
        keep = np.ones(len(u), dtype=bool)
        keep[1:] = (u[1:] != u[:-1]) | (v[1:] != v[:-1])
        u, v = u[keep], v[keep]
    indptr = np.zeros(n + 1, dtype=INDEX)
    np.cumsum(np.bincount(u, minlength=n), out=indptr[1:])
    return Graph(n, indptr, v.astype(INDEX))


def adjacency_of(a: SymSparseMatrix) -> Graph:
    """Structural graph of ``a``; stored zeros count as edges."""
    cols = a.col_indices()
    off = a.rowidx != cols
    r, c = a.rowidx[off], cols[off]
    return _graph_from_pairs(a.n, np.concatenate([r, c]), np.concatenate([c, r]))


# ---------------------------------------------------------- permutations


@dataclass(frozen=True, eq=False)
class Permutation:
    """``perm[new] = old`` and ``inverse[old] = new``."""

    perm: np.ndarray
    inverse: np.ndarray

    @classmethod
    def from_perm(cls, perm) -> "Permutation":
        perm = np.asarray(perm, dtype=INDEX)
        n = len(perm)
        inv = np.full(n, -1, dtype=INDEX)
        inv[perm] = np.arange(n, dtype=INDEX)
        if np.any(inv < 0) or (n and (perm.min() < 0 or perm.max() >= n)):
            raise ValueError("not a permutation")
        return cls(perm, inv)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        p = np.arange(n, dtype=INDEX)
        return cls(p, p.copy())

    def __len__(self) -> int:
        return len(self.perm)

    def compose(self, inner: "Permutation") -> "Permutation":
        """Permutation equal to applying ``inner`` first, then ``self``."""
        return Permutation.from_perm(inner.perm[self.perm])


def permute_sym(a: SymSparseMatrix, p: Permutation) -> SymSparseMatrix:
    """``B[i, j] = A[perm[i], perm[j]]`` in lower-triangle storage."""
    if len(p) != a.n:
        raise ValueError(f"permutation of length {len(p)} for n={a.n}")
    r = p.inverse[a.rowidx]
    c = p.inverse[a.col_indices()]
    lo, hi = np.maximum(r, c), np.minimum(r, c)
    order = np.lexsort((lo, hi))
    colptr = np.zeros(a.n + 1, dtype=INDEX)
    np.cumsum(np.bincount(hi, minlength=a.n), out=colptr[1:])
    return SymSparseMatrix(a.n, colptr, lo[order], a.values[order])


# ------------------------------------------------------------- arithmetic


def _as_block(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    return x[:, None] if x.ndim == 1 else x


def matvec_sym(a: SymSparseMatrix, x: np.ndarray) -> np.ndarray:
    """``A @ X`` using the implied upper triangle (no conjugation); keeps X's shape."""
    vec = np.ndim(x) == 1
    x = _as_block(x)
    if x.shape[0] != a.n:
        raise ValueError(f"X has {x.shape[0]} rows, expected {a.n}")
    low = a.lower()
    y = low @ x + low.T @ x
    y -= a.diagonal()[:, None] * x
    return y[:, 0] if vec else y


def relative_residual(a: SymSparseMatrix, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-column ``|Ax-b|_inf / (|A|_inf |x|_inf + |b|_inf)``."""
    x, b = _as_block(x), _as_block(b)
    if x.shape != b.shape or x.shape[0] != a.n:
        raise ValueError(f"shape mismatch: A is {a.n}x{a.n}, X {x.shape}, B {b.shape}")
    if x.size == 0:
        return np.zeros(x.shape[1])
    r = np.abs(matvec_sym(a, x) - b).max(axis=0)
    den = a.norm_inf() * np.abs(x).max(axis=0) + np.abs(b).max(axis=0)
    out = np.zeros(x.shape[1])
    nz = den > 0
    out[nz] = r[nz] / den[nz]
    return out
