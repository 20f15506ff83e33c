import numpy as np
import pytest

from ddsolver.driver import (
    DD_PHASES, THREADS_ENV, MemoryTracker, baseline_factor, baseline_solve, dd_factor, dd_solve,
    default_parts, resolve_threads,
)
from ddsolver.ldl import numeric_factor
from ddsolver.ordering import natural_order
from ddsolver.problems import sphere_problem
from ddsolver.sparse import identity, matvec_sym, relative_residual, sym_from_dense

from _util import dominant_sym_dense


def rel_diff(x, y):
    return np.abs(x - y).max() / np.abs(y).max()


@pytest.fixture(scope="module")
def sphere10():
    return sphere_problem(10, n_rhs=20, seed=3)


def test_default_parts():
    assert default_parts(10) == 2
    assert default_parts(72 * 72) == 9
    assert default_parts(10**9) == 64


def test_resolve_threads(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert resolve_threads() == 1
    monkeypatch.setenv(THREADS_ENV, "3")
    assert resolve_threads() == 3
    assert resolve_threads(2) == 2
    with pytest.raises(ValueError):
        resolve_threads(0)


def test_memory_tracker():
    m = MemoryTracker()
    m.enter("a")
    m.alloc("x", 100)
    m.transient("t", 50)
    m.release("x")
    m.enter("b")
    m.alloc("y", 30)
    assert (m.peak, m.current, m.phase_peak) == (150, 30, {"a": 150, "b": 30})
    with pytest.raises(KeyError):
        m.alloc("y", 1)


def test_single_part_is_one_factorization():
    rng = np.random.default_rng(0)
    a = sym_from_dense(dominant_sym_dense(rng, 30, 0.2))
    f, st = dd_factor(a, n_parts=1)
    assert st.n_parts == 1 and st.n_interface == 0 and st.n_groups == 0
    assert len(f.factors) == 1 and f.factors[0].n == 30
    b = rng.standard_normal(30)
    x, _ = dd_solve(f, b)
    np.testing.assert_allclose(x, np.linalg.solve(a.to_dense(), b), atol=1e-13)


def test_path_system_matches_dense():
    tri = np.array([[4.0, -1, 0, 0], [-1, 4, -1, 0], [0, -1, 4, -1], [0, 0, -1, 4]])
    f, st = dd_factor(sym_from_dense(tri), n_parts=2)
    assert st.n_interface == 2
    B = np.eye(4)
    X, _ = dd_solve(f, B)
    np.testing.assert_allclose(X, np.linalg.inv(tri), rtol=0, atol=1e-15)


def test_phases_and_stats(sphere10):
    f, st = dd_factor(sphere10.A, n_parts=4)
    assert set(st.times) == set(DD_PHASES[:-1])
    assert 0 < st.n_interface < st.n
    assert st.n == 512 and st.nnz == sphere10.A.nnz
    X, ss = dd_solve(f, sphere10.B)
    assert "solve" in ss.times and ss.residuals.shape == (20,)
    assert ss.relres_max <= 1e-10
    # Schur workspaces and contributions are gone once factorization ends
    assert not [k for k in f.tracker.live if k.startswith(("schur_ws", "contrib", "S(", "share", "A_ii"))]
    assert any(k.startswith("factor") for k in f.tracker.live)


@pytest.mark.parametrize("N, parts", [(8, 2), (10, 4), (13, 8)])
def test_manufactured_solution(N, parts):
    A = sphere_problem(N, n_rhs=1).A
    rng = np.random.default_rng(N)
    X0 = rng.standard_normal((A.n, 4))
    B = matvec_sym(A, X0)
    f, _ = dd_factor(A, n_parts=parts)
    X, st = dd_solve(f, B)
    assert st.relres_max <= 1e-10
    assert rel_diff(X, X0) <= 1e-10


def test_zero_rhs_gives_zero():
    A = sphere_problem(8, n_rhs=1).A
    f, _ = dd_factor(A, n_parts=3)
    X, st = dd_solve(f, np.zeros((A.n, 2)))
    assert np.all(X == 0) and np.all(st.residuals == 0)


def test_two_hundred_rhs_in_one_call():
    p = sphere_problem(9)
    f, _ = dd_factor(p.A, n_parts=4)
    X, st = dd_solve(f, p.B)
    assert X.shape == (p.A.n, 200) and st.residuals.shape == (200,)
    assert st.relres_max <= 1e-10


def test_rhs_shape_checked():
    f, _ = dd_factor(identity(5), n_parts=2)
    with pytest.raises(ValueError):
        dd_solve(f, np.ones(4))


@pytest.mark.parametrize("k, eps", [(0.0, 4.0), (12.0, 4.0), (9.0, 4 - 1j)])
def test_cross_method_agreement(k, eps):
    p = sphere_problem(11, k=k, eps_contrast=eps, n_rhs=6)
    fd, _ = dd_factor(p.A, n_parts=5)
    fb, _ = baseline_factor(p.A)
    Xd, sd = dd_solve(fd, p.B)
    Xb, sb = baseline_solve(fb, p.B)
    tol = 1e-10 if k == 0 else 1e-8
    assert sd.relres_max <= tol and sb.relres_max <= tol
    assert rel_diff(Xd, Xb) <= 1e-9


def test_indefinite_instance_is_really_indefinite():
    A = sphere_problem(7, k=12.0, n_rhs=1).A
    ev = np.linalg.eigvalsh(A.to_dense())
    assert ev.min() < 0 < ev.max()


def test_random_sparse_agreement():
    rng = np.random.default_rng(5)
    for _ in range(5):
        n = int(rng.integers(100, 400))
        a = sym_from_dense(dominant_sym_dense(rng, n, 5.0 / n))
        B = rng.standard_normal((n, 3))
        Xd, sd = dd_solve(dd_factor(a, n_parts=int(rng.integers(2, 6)))[0], B)
        Xb, sb = baseline_solve(baseline_factor(a)[0], B)
        assert sd.relres_max <= 1e-12 and sb.relres_max <= 1e-12
        assert rel_diff(Xd, Xb) <= 1e-10


def test_baseline_identity_and_columns():
    fb, st = baseline_factor(identity(6))
    B = np.arange(12.0).reshape(6, 2)
    X, _ = baseline_solve(fb, B)
    np.testing.assert_array_equal(X, B)
    A = sphere_problem(8, n_rhs=7).A
    fb, _ = baseline_factor(A)
    B = np.random.default_rng(1).standard_normal((A.n, 7))
    X, _ = baseline_solve(fb, B)
    for j in range(7):
        assert X[:, j].tobytes() == baseline_solve(fb, B[:, j])[0].tobytes()


def test_baseline_diagonal_memory():
    n = 50
    fb, st = baseline_factor(sym_from_dense(np.diag(np.arange(1.0, n + 1))))
    f = fb.factor
    assert f.nnz_l == 0
    index_bytes = f.nbytes() - 8 * n
    assert index_bytes <= 32 * (n + 1)


def test_tridiagonal_has_no_fill():
    n = 30
    tri = 2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    a = sym_from_dense(tri)
    assert numeric_factor(a, orderer=natural_order).nnz_l == n - 1
    assert baseline_factor(a)[0].factor.nnz_l == n - 1


def test_dd_multi_rhs_bit_identical(sphere10):
    f, _ = dd_factor(sphere10.A, n_parts=4)
    B = sphere10.B[:, :8]
    X, _ = dd_solve(f, B)
    for j in range(8):
        assert X[:, j].tobytes() == dd_solve(f, B[:, [j]])[0][:, 0].tobytes()


def test_memory_accounting_is_deterministic(sphere10):
    runs = [dd_factor(sphere10.A, n_parts=4, threads=t)[1] for t in (1, 1, 3)]
    assert runs[0].peak_mem == runs[1].peak_mem == runs[2].peak_mem
    b = [baseline_factor(sphere10.A)[1].peak_mem for _ in range(2)]
    assert b[0] == b[1]


def test_threads_are_bit_identical(sphere10):
    f1, _ = dd_factor(sphere10.A, n_parts=6, threads=1)
    f3, _ = dd_factor(sphere10.A, n_parts=6, threads=3)
    X1, s1 = dd_solve(f1, sphere10.B)
    X3, s3 = dd_solve(f3, sphere10.B)
    assert X1.tobytes() == X3.tobytes()
    assert s1.residuals.tobytes() == s3.residuals.tobytes()
    assert s1.peak_mem == s3.peak_mem


def test_residuals_use_the_original_matrix(sphere10):
    f, _ = dd_factor(sphere10.A, n_parts=4)
    X, st = dd_solve(f, sphere10.B)
    np.testing.assert_array_equal(st.residuals, relative_residual(sphere10.A, X, sphere10.B))
