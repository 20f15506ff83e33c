"""Direct solver for sparse symmetric systems by domain decomposition.

Interiors of the subdomains are eliminated with independent sparse LDL^T
factorizations; the remaining interface system is a sparse collection of
dense blocks factored by a block LDL^T with Bunch-Kaufman pivots.
"""
from .driver import (BaselineFactor, DDFactor, MemoryTracker, SolveStats, baseline_factor,
                     baseline_solve, dd_factor, dd_solve, default_parts)
from .sparse import SymSparseMatrix, load_matrix_market, save_matrix_market

__all__ = [
    "BaselineFactor", "DDFactor", "MemoryTracker", "SolveStats", "SymSparseMatrix",
    "baseline_factor", "baseline_solve", "dd_factor", "dd_solve", "default_parts",
    "load_matrix_market", "save_matrix_market",
]
