import csv
import subprocess
import sys

import numpy as np
import pytest

from ddsolver.cli import CSV_HEADER, EXIT_IO, EXIT_OK, EXIT_RESIDUAL, SUMMARY_HEADER, main
from ddsolver.sparse import (identity, load_dense_matrix_market, load_matrix_market,
                             save_dense_matrix_market, save_matrix_market, sym_from_dense)

from _util import dominant_sym_dense


def write_mtx(path, a):
    with open(path, "w") as fh:
        save_matrix_market(a, fh)


def write_dense(path, x):
    with open(path, "w") as fh:
        save_dense_matrix_market(x, fh)


def read_dense(path):
    with open(path) as fh:
        return load_dense_matrix_market(fh)


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_header_is_exact():
    assert ",".join(CSV_HEADER) == ("problem,n,nnz,n_parts,n_interface,rhs,method,phase,"
                                    "peak_mem_bytes,wall_s,relres_max,pert_flags,status")


def test_gen_sphere_sweep(tmp_path):
    out = tmp_path / "gen"
    assert main(["gen", "--problem", "sphere", "--sizes", "5,6,7", "--rhs", "3", "--out", str(out)]) == 0
    mats = sorted(p.name for p in out.glob("*.mtx") if not p.name.endswith("_rhs.mtx"))
    rhs = sorted(p.name for p in out.glob("*_rhs.mtx"))
    assert mats == ["sphere5.mtx", "sphere6.mtx", "sphere7.mtx"]
    assert len(rhs) == 3
    with open(out / "sphere7.mtx") as fh:
        A = load_matrix_market(fh)
    assert A.n == 125 and read_dense(out / "sphere7_rhs.mtx").shape == (125, 3)


def test_gen_is_deterministic(tmp_path):
    for d in ("a", "b"):
        main(["gen", "--sizes", "6", "--rhs", "4", "--seed", "9", "--out", str(tmp_path / d)])
    for name in ("sphere6.mtx", "sphere6_rhs.mtx"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_gen_array_has_200_columns(tmp_path):
    assert main(["gen", "--problem", "array", "--sizes", "10x20", "--out", str(tmp_path)]) == 0
    B = read_dense(tmp_path / "array10x20_rhs.mtx")
    assert B.shape[1] == 200


def test_solve_identity(tmp_path):
    write_mtx(tmp_path / "I.mtx", identity(5))
    b = np.arange(10.0).reshape(5, 2)
    write_dense(tmp_path / "b.mtx", b)
    rc = main(["solve", str(tmp_path / "I.mtx"), str(tmp_path / "b.mtx"), "--parts", "2",
               "--out", str(tmp_path / "x.mtx"), "--csv", str(tmp_path / "s.csv")])
    assert rc == EXIT_OK
    np.testing.assert_array_equal(read_dense(tmp_path / "x.mtx"), b)
    rows = read_csv(tmp_path / "s.csv")
    assert rows[0] == CSV_HEADER
    assert [r[7] for r in rows[1:]] == ["factor", "solve"]
    assert all(r[12] == "ok" for r in rows[1:])


def test_solve_methods_agree(tmp_path):
    rng = np.random.default_rng(1)
    a = sym_from_dense(dominant_sym_dense(rng, 120, 0.05))
    write_mtx(tmp_path / "A.mtx", a)
    write_dense(tmp_path / "b.mtx", rng.standard_normal((120, 3)))
    xs = []
    for m in ("dd", "baseline"):
        assert main(["solve", str(tmp_path / "A.mtx"), str(tmp_path / "b.mtx"), "--method", m,
                     "--parts", "3", "--out", str(tmp_path / f"{m}.mtx"),
                     "--csv", str(tmp_path / f"{m}.csv")]) == EXIT_OK
        xs.append(read_dense(tmp_path / f"{m}.mtx"))
    assert np.abs(xs[0] - xs[1]).max() / np.abs(xs[1]).max() <= 1e-9


def test_solve_residual_failure_exit_code(tmp_path):
    rng = np.random.default_rng(2)
    write_mtx(tmp_path / "A.mtx", sym_from_dense(dominant_sym_dense(rng, 40, 0.2)))
    rc = main(["solve", str(tmp_path / "A.mtx"), "--threshold", "1e-300",
               "--csv", str(tmp_path / "s.csv")])
    assert rc == EXIT_RESIDUAL == 3
    assert read_csv(tmp_path / "s.csv")[1][12] == "residual"


def test_solve_io_failures(tmp_path):
    assert main(["solve", str(tmp_path / "missing.mtx")]) == EXIT_IO
    (tmp_path / "bad.mtx").write_text("%%MatrixMarket matrix coordinate real general\n1 1 1\n1 1 1\n")
    assert main(["solve", str(tmp_path / "bad.mtx")]) == EXIT_IO
    write_mtx(tmp_path / "I.mtx", identity(3))
    write_dense(tmp_path / "b.mtx", np.ones((4, 1)))
    assert main(["solve", str(tmp_path / "I.mtx"), str(tmp_path / "b.mtx")]) == EXIT_IO
    assert EXIT_IO != EXIT_RESIDUAL


def test_usage_errors_exit_2(tmp_path):
    for argv in (["bench", "--out", str(tmp_path / "x.csv")],
                 ["bench", "--sizes", "5", "--rhs", "0", "--out", str(tmp_path / "x.csv")],
                 ["bench", "--sizes", "5", "--parts", "0", "--out", str(tmp_path / "x.csv")],
                 ["gen", "--problem", "array", "--sizes", "3by4", "--out", str(tmp_path)]):
        with pytest.raises(SystemExit) as err:
            main(argv)
        assert err.value.code == 2


def _bench(tmp_path, tag, *extra):
    out = tmp_path / f"{tag}.csv"
    rc = main(["bench", "--sizes", "6,7,8", "--rhs", "5", "--parts", "3", "--threads", "1",
               "--seed", "4", "--out", str(out), "--plot-data", str(tmp_path / f"{tag}.dat"), *extra])
    return rc, out


def test_bench_rows_and_side_files(tmp_path):
    rc, out = _bench(tmp_path, "run")
    assert rc == EXIT_OK
    rows = read_csv(out)
    assert rows[0] == CSV_HEADER
    data = rows[1:]
    # one factor row and one solve row per sweep point and method
    assert len(data) == 3 * 2 * 2
    assert {(r[6], r[7]) for r in data} == {(m, p) for m in ("dd", "baseline") for p in ("factor", "solve")}
    for r in data:
        assert r[12] == "ok" and float(r[10]) < 1e-8
        assert len(r[9].split(".")[1]) == 6
    summary = read_csv(tmp_path / "run_summary.csv")
    assert summary[0] == SUMMARY_HEADER and len(summary) == 4
    for s in summary[1:]:
        assert float(s[5]) == pytest.approx(int(s[3]) / int(s[4]), rel=1e-5)
    dat = (tmp_path / "run.dat").read_text()
    assert dat.count("# method=") == 4
    body = [ln for ln in dat.splitlines() if ln and not ln.startswith("#")]
    assert len(body) == 12 and all(len(ln.split()) == 13 for ln in body)


def test_bench_is_deterministic(tmp_path):
    def strip(path):
        return [r[:9] + r[10:] for r in read_csv(path)]
    _, a = _bench(tmp_path, "a")
    _, b = _bench(tmp_path, "b")
    assert strip(a) == strip(b)


def test_bench_records_failed_points(tmp_path):
    out = tmp_path / "x.csv"
    rc = main(["bench", "--problem", "mtx", "--files", str(tmp_path / "nope.mtx"),
               str(tmp_path / "I.mtx"), "--out", str(out)])
    write_mtx(tmp_path / "I.mtx", identity(4))
    rows = read_csv(out)[1:]
    assert rc == EXIT_IO
    assert all(r[12].startswith("error:") for r in rows)
    rc = main(["bench", "--problem", "mtx", "--files", str(tmp_path / "nope.mtx"),
               str(tmp_path / "I.mtx"), "--parts", "2", "--out", str(out)])
    rows = read_csv(out)[1:]
    assert rc == EXIT_IO
    assert [r[12] for r in rows].count("ok") == 4 and len(rows) == 8


def test_bench_array_and_mtx_rhs(tmp_path):
    out = tmp_path / "arr.csv"
    assert main(["bench", "--problem", "array", "--sizes", "1x1,2x3", "--parts", "2",
                 "--method", "dd", "--out", str(out)]) == EXIT_OK
    rows = read_csv(out)[1:]
    assert [r[5] for r in rows] == ["1", "1", "6", "6"]
    write_mtx(tmp_path / "m.mtx", identity(6))
    write_dense(tmp_path / "m_rhs.mtx", np.ones((6, 7)))
    assert main(["bench", "--problem", "mtx", "--files", str(tmp_path / "m.mtx"),
                 "--method", "baseline", "--out", str(out)]) == EXIT_OK
    assert read_csv(out)[1][5] == "7"
    # a glob that also lists the rhs file still yields one point
    files = sorted(str(f) for f in tmp_path.glob("m*.mtx"))
    assert main(["bench", "--problem", "mtx", "--files", *files,
                 "--method", "baseline", "--out", str(out)]) == EXIT_OK
    rows = read_csv(out)[1:]
    assert [r[0] for r in rows] == ["m", "m"] and rows[0][5] == "7"


def test_threads_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("DD_SOLVER_THREADS", "2")
    rc, out = _bench(tmp_path, "env")
    assert rc == EXIT_OK


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "ddsolver.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "gen" in r.stdout and "bench" in r.stdout
