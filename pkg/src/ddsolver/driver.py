"""End-to-end solvers: the decomposition pipeline and the one-shot baseline.

Both paths share the sparse LDL^T kernel and the same memory accounting, so
their statistics are directly comparable. Memory is counted logically: every
major buffer is registered with a ``MemoryTracker`` when it is created and
when it is dropped, in a fixed order that does not depend on the number of
worker threads.
"""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
import scipy.sparse as sp

from .decompose import ArrowheadLayout, build_layout, classify, group_interface, partition
from .interface import (BlockLDLFactor, BlockSparseSym, accumulate_contribution, block_numeric,
                        block_symbolic, symmetrize_diagonal)
from .ldl import SubdomainFactor, factor_workspace_nbytes, numeric_factor, solve_factored
from .ordering import amd_order
from .sparse import SymSparseMatrix, _as_block, adjacency_of, relative_residual
from .subdomain import (InterfaceMap, condense_rhs, interior_recover, schur_contribution,
                        share_bb, split_arrowhead, SCHUR_BLOCK_COLS)

DD_PHASES = ("partition", "subdomain_factor", "schur", "interface_symbolic",
             "interface_numeric", "solve")
BASELINE_PHASES = ("ordering", "factor", "solve")
THREADS_ENV = "DD_SOLVER_THREADS"


def default_parts(n: int) -> int:
    return int(min(64, max(2, round(math.sqrt(n) / 8))))


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get(THREADS_ENV, "").strip()
        threads = int(env) if env else 1
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    return int(threads)


class MemoryTracker:
    """Live-byte ledger of named buffers with per-phase peaks."""

    def __init__(self) -> None:
        self.live: dict[str, int] = {}
        self.current = 0
        self.peak = 0
        self.phase: str | None = None
        self.phase_peak: dict[str, int] = {}

    def enter(self, phase: str) -> None:
        self.phase = phase
        self.phase_peak[phase] = max(self.phase_peak.get(phase, 0), self.current)

    def _bump(self) -> None:
        self.peak = max(self.peak, self.current)
        if self.phase is not None:
            self.phase_peak[self.phase] = max(self.phase_peak[self.phase], self.current)

    def alloc(self, name: str, nbytes: int) -> None:
        if name in self.live:
            raise KeyError(f"buffer {name!r} is already live")
        self.live[name] = int(nbytes)
        self.current += int(nbytes)
        self._bump()

    def release(self, name: str) -> None:
        self.current -= self.live.pop(name)

    def transient(self, name: str, nbytes: int) -> None:
        self.alloc(name, nbytes)
        self.release(name)


def _csc_nbytes(m: sp.spmatrix) -> int:
    return m.data.nbytes + m.indices.nbytes + m.indptr.nbytes


@dataclass
class SolveStats:
    method: str
    n: int
    nnz: int
    n_parts: int = 1
    n_interface: int = 0
    n_groups: int = 0
    threads: int = 1
    times: dict[str, float] = field(default_factory=dict)
    peak_mem: dict[str, int] = field(default_factory=dict)
    pert_flags: int = 0
    residuals: np.ndarray | None = None
    schur_asymmetry: float = 0.0
    factor_wall: float = 0.0

    @property
    def peak_mem_bytes(self) -> int:
        return max(self.peak_mem.values(), default=0)

    def factor_peak(self) -> int:
        return max((v for k, v in self.peak_mem.items() if k != "solve"), default=0)

    @property
    def relres_max(self) -> float:
        if self.residuals is None or len(self.residuals) == 0:
            return 0.0
        return float(np.max(self.residuals))


@dataclass(eq=False)
class DDFactor:
    """Everything needed to solve with the decomposed factorization.

    ``A_ib[i]`` is restricted to the columns of ``footprints[i]`` (the
    interface positions part ``i`` touches).
    """

    A: SymSparseMatrix
    layout: ArrowheadLayout
    factors: list[SubdomainFactor]
    A_ib: list[sp.csc_matrix]
    footprints: list[np.ndarray]
    interface: BlockLDLFactor
    stats: SolveStats
    threads: int = 1
    tracker: MemoryTracker = field(default_factory=MemoryTracker)

    @property
    def n(self) -> int:
        return self.A.n

    def nbytes(self) -> int:
        total = sum(f.nbytes() for f in self.factors) + self.interface.nbytes()
        total += sum(_csc_nbytes(m) + fp.nbytes for m, fp in zip(self.A_ib, self.footprints))
        return total + _layout_nbytes(self.layout)

    def solve(self, B: np.ndarray) -> np.ndarray:
        return dd_solve(self, B)[0]


@dataclass(eq=False)
class BaselineFactor:
    A: SymSparseMatrix
    factor: SubdomainFactor
    stats: SolveStats
    tracker: MemoryTracker = field(default_factory=MemoryTracker)

    @property
    def n(self) -> int:
        return self.A.n

    def solve(self, B: np.ndarray) -> np.ndarray:
        return baseline_solve(self, B)[0]


def _layout_nbytes(layout: ArrowheadLayout) -> int:
    return 2 * layout.perm.perm.nbytes + layout.part_offsets.nbytes + layout.group_offsets.nbytes


def _graph_nbytes(g) -> int:
    return g.indptr.nbytes + g.indices.nbytes


def _pool_map(fn: Callable, items: Iterable, threads: int):
    """Ordered map; results are consumed in input order either way."""
    if threads <= 1:
        for x in items:
            yield fn(x)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        yield from pool.map(fn, items)


def _schur_workspace_nbytes(n_i: int, m: int, rows: int, itemsize: int) -> int:
    bc = min(SCHUR_BLOCK_COLS, m)
    # dense rhs block, its permuted copy and the unpermuted solution; W and
    # A_ib restricted to the coupled rows; the dense footprint S
    return itemsize * (3 * n_i * bc + 2 * rows * m + m * m)


def dd_factor(A: SymSparseMatrix, n_parts: int | None = None, threads: int | None = None,
              tracker: MemoryTracker | None = None) -> tuple[DDFactor, SolveStats]:
    """Decompose, eliminate interiors in parallel, factor the interface."""
    threads = resolve_threads(threads)
    n_parts = default_parts(A.n) if n_parts is None else int(n_parts)
    if n_parts < 1:
        raise ValueError(f"n_parts must be >= 1, got {n_parts}")
    n_parts = min(n_parts, max(A.n, 1))
    mem = tracker or MemoryTracker()
    stats = SolveStats("dd", A.n, A.nnz, n_parts=n_parts, threads=threads)
    t_start = time.perf_counter()

    mem.enter("partition")
    t0 = time.perf_counter()
    mem.alloc("A", A.nbytes())
    g = adjacency_of(A)
    mem.alloc("graph", _graph_nbytes(g))
    p = partition(g, n_parts)
    mem.alloc("partition", p.part.nbytes)
    c = classify(g, p)
    grps = group_interface(c)
    layout = build_layout(p, c, grps, g)
    mem.alloc("layout", _layout_nbytes(layout))
    del g, p, c, grps
    mem.release("graph")
    mem.release("partition")
    mem.transient("permuted", A.nbytes())
    split = split_arrowhead(A, layout)
    for i in range(n_parts):
        mem.alloc(f"A_ii{i}", split.A_ii[i].nbytes())
    mem.alloc("A_bb", split.A_bb.nbytes())
    imap = InterfaceMap.from_layout(layout)
    shares = share_bb(split.A_bb, imap, n_parts)
    for i in range(n_parts):
        mem.alloc(f"share{i}", shares[i].nbytes())
    mem.release("A_bb")
    footprints = [imap.footprint(i)[1] for i in range(n_parts)]
    A_ib_full = split.A_ib
    A_ib = [A_ib_full[i][:, footprints[i]].tocsc() for i in range(n_parts)]
    for i in range(n_parts):
        mem.alloc(f"A_ib{i}", _csc_nbytes(A_ib[i]) + footprints[i].nbytes)
    A_ii = split.A_ii
    stats.n_interface = layout.n_interface
    stats.n_groups = len(layout.signatures)
    stats.times["partition"] = time.perf_counter() - t0
    del split

    def work(i: int):
        ta = time.perf_counter()
        f = numeric_factor(A_ii[i], amd_order, index_map=layout.interior_vertices(i))
        tb = time.perf_counter()
        contrib = schur_contribution(f, A_ib_full[i], shares[i], imap, i)
        tc = time.perf_counter()
        return f, contrib, tb - ta, tc - tb

    S = BlockSparseSym(imap.sizes.astype(np.int64), {})
    itemsize = np.dtype(np.result_type(A.dtype, np.float64)).itemsize
    factors: list[SubdomainFactor] = []
    t_fac = t_schur = 0.0
    asym = 0.0
    for i, (f, contrib, dt_f, dt_s) in enumerate(_pool_map(work, range(n_parts), threads)):
        mem.enter("subdomain_factor")
        mem.transient(f"factor_ws{i}", factor_workspace_nbytes(A_ii[i]) + f.nbytes())
        mem.alloc(f"factor{i}", f.nbytes())
        mem.release(f"A_ii{i}")
        A_ii[i] = None
        A_ib_full[i] = None
        mem.enter("schur")
        rows = int(np.unique(A_ib[i].indices).size)
        mem.alloc(f"schur_ws{i}", _schur_workspace_nbytes(f.n, len(footprints[i]), rows, itemsize))
        mem.alloc(f"contrib{i}", contrib.nbytes())
        mem.release(f"schur_ws{i}")
        for key, b in contrib.blocks.items():
            if key not in S.blocks:
                mem.alloc(f"S{key}", b.nbytes)
        accumulate_contribution(S, contrib)
        mem.release(f"contrib{i}")
        mem.release(f"share{i}")
        shares[i] = None
        factors.append(f)
        t_fac += dt_f
        t_schur += dt_s
        asym = max(asym, contrib.asymmetry)
    stats.times["subdomain_factor"] = t_fac
    stats.times["schur"] = t_schur
    stats.schur_asymmetry = asym
    for key in range(S.n_groups):
        if (key, key) not in S.blocks:
            mem.alloc(f"S{(key, key)}", int(S.sizes[key]) ** 2 * np.dtype(S.dtype).itemsize)
    symmetrize_diagonal(S)

    mem.enter("interface_symbolic")
    t0 = time.perf_counter()
    sym = block_symbolic(S)
    sym_bytes = 8 * (2 * len(sym.order) + 2 * len(sym.fill) + sum(len(c) for c in sym.column))
    mem.alloc("interface_symbolic", sym_bytes)
    stats.times["interface_symbolic"] = time.perf_counter() - t0

    mem.enter("interface_numeric")
    t0 = time.perf_counter()
    sizes = [int(S.sizes[gid]) for gid in sym.order]
    fill_bytes = itemsize * sum(int(S.sizes[u]) * int(S.sizes[v]) for u, v in sym.fill)
    mem.alloc("interface_fill", fill_bytes)
    ws = max((2 * sizes[j] * sum(sizes[i] for i in sym.column[j]) + sizes[j] ** 2
              for j in range(len(sizes))), default=0)
    mem.transient("interface_numeric_ws", itemsize * ws)
    s_keys = [k for k in mem.live if k.startswith("S(")]
    iface = block_numeric(S, sym, consume=True)
    for k in s_keys:
        mem.release(k)
    mem.release("interface_fill")
    mem.alloc("interface_factor", iface.nbytes())
    stats.times["interface_numeric"] = time.perf_counter() - t0

    stats.pert_flags = sum(f.n_perturbed for f in factors) + iface.n_perturbed
    stats.peak_mem = {ph: mem.phase_peak.get(ph, 0) for ph in DD_PHASES[:-1]}
    stats.factor_wall = time.perf_counter() - t_start
    return DDFactor(A, layout, factors, A_ib, footprints, iface, stats, threads, mem), stats


def _check_rhs(n: int, B: np.ndarray) -> tuple[np.ndarray, bool]:
    B = np.asarray(B)
    vec = B.ndim == 1
    B = _as_block(B)
    if B.shape[0] != n:
        raise ValueError(f"rhs has {B.shape[0]} rows, system has {n}")
    return B, vec


def _solve_stats(base: SolveStats) -> SolveStats:
    return SolveStats(base.method, base.n, base.nnz, base.n_parts, base.n_interface,
                      base.n_groups, base.threads, pert_flags=base.pert_flags)


def dd_solve(f: DDFactor, B: np.ndarray, threads: int | None = None) -> tuple[np.ndarray, SolveStats]:
    """Condense, solve the interface, recover interiors; all columns at once."""
    B, vec = _check_rhs(f.n, B)
    threads = f.threads if threads is None else resolve_threads(threads)
    stats = _solve_stats(f.stats)
    stats.threads = threads
    mem = f.tracker
    mem.enter("solve")
    t0 = time.perf_counter()
    lay = f.layout
    k = B.shape[1]
    dtype = np.result_type(f.interface.dtype, *(fi.dtype for fi in f.factors), B.dtype)
    item = np.dtype(dtype).itemsize
    po = lay.part_offsets
    n_int = lay.n_interior

    b_lay = np.ascontiguousarray(B[lay.perm.perm], dtype=dtype)
    mem.alloc("solve_b", b_lay.nbytes)
    rhs_b = b_lay[n_int:].copy()
    mem.alloc("solve_rhs_b", rhs_b.nbytes)

    def condense(i: int):
        return condense_rhs(f.factors[i], f.A_ib[i], b_lay[po[i]:po[i + 1]])

    for i, g_i in enumerate(_pool_map(condense, range(lay.n_parts), threads)):
        mem.transient(f"solve_y{i}", item * k * (2 * f.factors[i].n + len(f.footprints[i])))
        rhs_b[f.footprints[i]] += g_i
    mem.transient("solve_interface_ws", 2 * rhs_b.nbytes)
    x_b = f.interface.solve(rhs_b)
    x_lay = np.empty((f.n, k), dtype=dtype)
    mem.alloc("solve_x", x_lay.nbytes)
    x_lay[n_int:] = x_b
    mem.release("solve_rhs_b")

    def recover(i: int):
        return interior_recover(f.factors[i], f.A_ib[i], x_b[f.footprints[i]], b_lay[po[i]:po[i + 1]])

    for i, x_i in enumerate(_pool_map(recover, range(lay.n_parts), threads)):
        mem.transient(f"solve_y{i}", item * k * (3 * f.factors[i].n + len(f.footprints[i])))
        x_lay[po[i]:po[i + 1]] = x_i
    X = np.empty_like(x_lay)
    mem.transient("solve_out", X.nbytes)
    X[lay.perm.perm] = x_lay
    mem.release("solve_x")
    mem.release("solve_b")
    stats.times["solve"] = time.perf_counter() - t0
    stats.peak_mem["solve"] = mem.phase_peak["solve"]
    stats.residuals = relative_residual(f.A, X, B)
    return (X[:, 0] if vec else X), stats


def baseline_factor(A: SymSparseMatrix,
                    tracker: MemoryTracker | None = None) -> tuple[BaselineFactor, SolveStats]:
    """AMD-ordered sparse LDL^T of the whole matrix with the subdomain kernel."""
    mem = tracker or MemoryTracker()
    stats = SolveStats("baseline", A.n, A.nnz)
    t_start = time.perf_counter()
    mem.enter("ordering")
    mem.alloc("A", A.nbytes())
    g = adjacency_of(A)
    mem.transient("graph", _graph_nbytes(g) + 2 * A.n * 8)
    perm = amd_order(g) if A.n > 1 else None
    del g
    stats.times["ordering"] = time.perf_counter() - t_start

    mem.enter("factor")
    t0 = time.perf_counter()
    f = numeric_factor(A, (lambda _g: perm) if perm is not None else amd_order)
    mem.transient("factor_ws", factor_workspace_nbytes(A) + f.nbytes())
    mem.alloc("factor", f.nbytes())
    stats.times["factor"] = time.perf_counter() - t0
    stats.pert_flags = f.n_perturbed
    stats.peak_mem = {ph: mem.phase_peak.get(ph, 0) for ph in BASELINE_PHASES[:-1]}
    stats.factor_wall = time.perf_counter() - t_start
    return BaselineFactor(A, f, stats, mem), stats


def baseline_solve(f: BaselineFactor, B: np.ndarray) -> tuple[np.ndarray, SolveStats]:
    B, vec = _check_rhs(f.n, B)
    stats = _solve_stats(f.stats)
    mem = f.tracker
    mem.enter("solve")
    t0 = time.perf_counter()
    item = np.dtype(np.result_type(f.factor.dtype, B.dtype)).itemsize
    mem.transient("solve_ws", 2 * item * B.shape[0] * B.shape[1])
    X = solve_factored(f.factor, B)
    stats.times["solve"] = time.perf_counter() - t0
    stats.peak_mem["solve"] = mem.phase_peak["solve"]
    stats.residuals = relative_residual(f.A, X, B)
    return (X[:, 0] if vec else X), stats
