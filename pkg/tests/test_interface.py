import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ddsolver.bunch_kaufman import dense_bk_ldlt
from ddsolver.interface import (
    StructuralOverflow, assemble_interface, block_numeric, block_solve, block_sparse_from_dense,
    block_symbolic, eliminate_blocks, min_degree_order,
)
from ddsolver.sparse import relative_residual, sym_from_dense
from ddsolver.subdomain import SchurContribution

from _util import (
    block_elimination_oracle, dense_schur, random_block_matrix, schur_pipeline,
)


def factor(a, sizes):
    s = block_sparse_from_dense(a, sizes)
    return block_numeric(s, block_symbolic(s))


def recon_error(a, f):
    P = f.permutation()
    L, D = f.dense_factors()
    return np.abs(a[np.ix_(P, P)] - L @ D @ L.T).sum(axis=1).max()


def norm_inf(a):
    return np.abs(a).sum(axis=1).max()


def assert_restricted(f):
    off = np.concatenate([[0], np.cumsum(f.sizes)])
    P = f.permutation()
    pos = 0
    for g in f.sym.order:
        seg = P[pos:pos + f.sizes[g]]
        assert seg.min(initial=off[g]) >= off[g] and seg.max(initial=off[g]) < off[g + 1]
        assert sorted(seg.tolist()) == list(range(off[g], off[g + 1]))
        pos += f.sizes[g]


# ------------------------------------------------------------------ assembly

def test_assemble_single_part_single_group():
    b = np.array([[2.0, 1.0], [1.0, 5.0]])
    s = assemble_interface([SchurContribution(0, [0], {(0, 0): b})], [2])
    np.testing.assert_array_equal(s.blocks[(0, 0)], b)


def test_assemble_sums_in_part_order_and_keeps_absent_blocks_absent():
    c0 = SchurContribution(0, [0, 1], {(0, 0): np.eye(1), (0, 1): np.ones((1, 2)),
                                       (1, 1): np.eye(2)})
    c1 = SchurContribution(1, [1, 2], {(1, 1): 2 * np.eye(2), (1, 2): np.ones((2, 1)),
                                       (2, 2): np.eye(1)})
    s = assemble_interface([c0, c1], [1, 2, 1])
    assert sorted(s.blocks) == [(0, 0), (0, 1), (1, 1), (1, 2), (2, 2)]
    np.testing.assert_array_equal(s.blocks[(1, 1)], 3 * np.eye(2))
    with pytest.raises(ValueError):
        assemble_interface([SchurContribution(0, [0], {(0, 0): np.eye(3)})], [2])


def test_assemble_path_example_is_the_schur_complement():
    tri = np.array([[4.0, -1, 0, 0], [-1, 4, -1, 0], [0, -1, 4, -1], [0, 0, -1, 4]])
    lay, _, contribs, _ = schur_pipeline(sym_from_dense(tri), [0, 0, 1, 1], 2)
    s = assemble_interface(contribs, lay.group_offsets[1:] - lay.group_offsets[:-1])
    assert list(s.blocks) == [(0, 0)]
    np.testing.assert_allclose(s.blocks[(0, 0)], dense_schur(tri, [0, 3], [1, 2]), atol=1e-15)


# ------------------------------------------------------------------ symbolic

def _path3():
    a = np.zeros((3, 3))
    a[0, 1] = a[1, 0] = a[1, 2] = a[2, 1] = 1.0
    np.fill_diagonal(a, 4.0)
    return block_sparse_from_dense(a, [1, 1, 1])


def test_path_fill_rule():
    s = _path3()
    adj = s.adjacency()
    assert eliminate_blocks(adj, [1, 0, 2])[0] == [(0, 2)]
    assert eliminate_blocks(adj, [0, 1, 2])[0] == []
    sym = block_symbolic(s)
    assert sym.order[0] in (0, 2) and sym.fill == []


def test_block_diagonal_has_no_fill():
    s = block_sparse_from_dense(np.diag(np.arange(1.0, 7.0)), [2, 1, 3])
    sym = block_symbolic(s)
    assert sym.fill == [] and all(col == [] for col in sym.column)
    f = block_numeric(s, sym)
    assert f.L == {}


def test_min_degree_ties_go_to_lowest_id():
    assert min_degree_order([set(), set(), set()]) == [0, 1, 2]
    star = [{3}, {3}, {3}, {0, 1, 2}]
    assert min_degree_order(star)[:3] == [0, 1, 2]


@given(st.integers(1, 12), st.floats(0.0, 1.0), st.integers(0, 2**32 - 1))
def test_fill_matches_elimination_oracle(G, p, seed):
    rng = np.random.default_rng(seed)
    edges = [(u, v) for u in range(G) for v in range(u + 1, G) if rng.random() < p]
    adj = [set() for _ in range(G)]
    for u, v in edges:
        adj[u].add(v)
        adj[v].add(u)
    for order in (min_degree_order(adj), list(range(G)), rng.permutation(G).tolist()):
        fill, column = eliminate_blocks(adj, order)
        assert len(fill) == len(set(fill))
        assert set(fill) == block_elimination_oracle(G, edges, order)
        for j, col in enumerate(column):
            assert all(i > j for i in col)


def test_min_degree_fill_is_no_worse_than_natural_mostly():
    rng = np.random.default_rng(99)
    better = 0
    for _ in range(200):
        G = int(rng.integers(2, 9))
        adj = [set() for _ in range(G)]
        p = rng.uniform(0.3, 1.0)
        for u in range(G):
            for v in range(u + 1, G):
                if rng.random() < p:
                    adj[u].add(v)
                    adj[v].add(u)
        md = len(eliminate_blocks(adj, min_degree_order(adj))[0])
        nat = len(eliminate_blocks(adj, list(range(G)))[0])
        better += md <= nat
    assert better >= 0.9 * 200


# ------------------------------------------------------------------- numeric

def test_three_groups_against_dense_oracle():
    rng = np.random.default_rng(345)
    sizes = [3, 4, 5]
    a = rng.standard_normal((12, 12))
    a = a + a.T
    f = factor(a, sizes)
    assert recon_error(a, f) <= 1e-12 * norm_inf(a)
    assert_restricted(f)


def test_single_group_equals_dense_factor():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((9, 9))
    a = a + a.T
    np.fill_diagonal(a, 0)
    f = factor(a, [9])
    d = dense_bk_ldlt(a)
    assert np.array_equal(f.diag[0].L, d.L) and np.array_equal(f.diag[0].d, d.d)
    assert np.array_equal(f.diag[0].perm, d.perm)


def test_block_diagonal_factor_is_per_block():
    rng = np.random.default_rng(2)
    blocks = [rng.standard_normal((k, k)) for k in (2, 3, 4)]
    blocks = [b + b.T for b in blocks]
    a = np.zeros((9, 9))
    off = [0, 2, 5, 9]
    for i, b in enumerate(blocks):
        a[off[i]:off[i + 1], off[i]:off[i + 1]] = b
    f = factor(a, [2, 3, 4])
    for j, g in enumerate(f.sym.order):
        ref = dense_bk_ldlt(blocks[g])
        assert np.array_equal(f.diag[j].L, ref.L) and np.array_equal(f.diag[j].d, ref.d)


def test_random_corpus_reconstruction_and_solve():
    rng = np.random.default_rng(2024)
    for t in range(100):
        a, sizes = random_block_matrix(rng, complex_=t % 2 == 1)
        f = factor(a, sizes)
        assert_restricted(f)
        assert recon_error(a, f) <= 1e-11 * norm_inf(a), t
        B = rng.standard_normal((a.shape[0], 3))
        X = f.solve(B)
        assert relative_residual(sym_from_dense(a), X, B).max() <= 1e-12, t


def test_missing_fill_block_is_structural_overflow():
    s = _path3()
    sym = block_symbolic(s, order=[1, 0, 2])
    sym.fill = []
    with pytest.raises(StructuralOverflow):
        block_numeric(s, sym)


def test_consume_reuses_blocks():
    rng = np.random.default_rng(3)
    a, sizes = random_block_matrix(rng, n_groups=4, max_size=6)
    s = block_sparse_from_dense(a, sizes)
    sym = block_symbolic(s)
    ref = block_numeric(s, sym)
    f = block_numeric(s, sym, consume=True)
    assert s.blocks == {}
    for key in ref.L:
        assert np.array_equal(ref.L[key], f.L[key])


# --------------------------------------------------------------------- solve

def test_identity_solve():
    f = factor(np.eye(6), [2, 4])
    B = np.arange(12.0).reshape(6, 2)
    np.testing.assert_array_equal(f.solve(B), B)
    assert f.solve(B[:, 0]).shape == (6,)
    with pytest.raises(ValueError):
        block_solve(f, np.ones(5))


def test_path_interface_solve_matches_dense():
    tri = np.array([[4.0, -1, 0, 0], [-1, 4, -1, 0], [0, -1, 4, -1], [0, 0, -1, 4]])
    S = dense_schur(tri, [0, 3], [1, 2])
    f = factor(S, [2])
    r = np.array([1.0, -2.0])
    np.testing.assert_allclose(f.solve(r), np.linalg.solve(S, r), rtol=0, atol=1e-12)


@given(st.integers(1, 20), st.booleans(), st.integers(0, 2**32 - 1))
def test_multi_column_solve_bit_identical(k, cplx, seed):
    rng = np.random.default_rng(seed)
    a, sizes = random_block_matrix(rng, cplx, max_size=12)
    f = factor(a, sizes)
    B = rng.standard_normal((a.shape[0], k))
    X = f.solve(B)
    for j in range(k):
        assert X[:, j].tobytes() == f.solve(B[:, j]).tobytes()


def test_dump():
    s = _path3()
    sym = block_symbolic(s, order=[1, 0, 2])
    buf = io.StringIO()
    s.dump(buf, sym)
    assert buf.getvalue().splitlines() == [
        "groups 3", "n 3", "sizes 1 1 1", "offdiag_blocks 2", "block_density 0.666667", "fill_blocks 1"]
