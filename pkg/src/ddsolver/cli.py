"""Command line entry point: ``ddsolver gen|solve|bench``."""
from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .driver import (THREADS_ENV, SolveStats, baseline_factor,
                     baseline_solve, dd_factor, dd_solve, default_parts, resolve_threads)
from .problems import array_dims, array_problem, sphere_problem
from .sparse import (MatrixMarketError, SymSparseMatrix, load_dense_matrix_market,
                     load_matrix_market, save_dense_matrix_market, save_matrix_market)

CSV_HEADER = ["problem", "n", "nnz", "n_parts", "n_interface", "rhs", "method", "phase",
              "peak_mem_bytes", "wall_s", "relres_max", "pert_flags", "status"]
SUMMARY_HEADER = ["problem", "n", "n_parts", "dd_peak_mem_bytes", "baseline_peak_mem_bytes",
                  "mem_ratio", "dd_factor_s", "baseline_factor_s", "factor_time_ratio"]
EXIT_OK, EXIT_IO, EXIT_RESIDUAL = 0, 1, 3
DEFAULT_THRESHOLD = 1e-8
SPHERE_RHS = 200


@dataclass
class BenchConfig:
    problem: str
    sizes: list = field(default_factory=list)
    n_parts: int | None = None
    rhs: int | None = None
    wavenumber: float = 0.0
    eps_contrast: complex = 4.0
    methods: tuple[str, ...] = ("dd", "baseline")
    threads: int = 1
    seed: int = 0
    spacing: int = 2
    threshold: float = DEFAULT_THRESHOLD
    repeat: int = 1

    def __post_init__(self):
        if not self.sizes:
            raise ValueError("the size sweep is empty")
        if self.rhs is not None and self.rhs < 1:
            raise ValueError(f"--rhs must be >= 1, got {self.rhs}")
        if self.threads < 1:
            raise ValueError(f"--threads must be >= 1, got {self.threads}")
        if self.repeat < 1:
            raise ValueError(f"--repeat must be >= 1, got {self.repeat}")


@dataclass
class Instance:
    name: str
    A: SymSparseMatrix
    B: np.ndarray


def _parse_array_size(tok: str) -> tuple[int, int]:
    try:
        r, c = tok.lower().split("x")
        return int(r), int(c)
    except ValueError:
        raise argparse.ArgumentTypeError(f"array size must look like ROWSxCOLS, got {tok!r}") from None


def _parse_complex(s: str) -> complex | float:
    v = complex(s.replace("i", "j"))
    return v.real if v.imag == 0 else v


def make_instances(cfg: BenchConfig):
    """Yield ``(label, thunk)`` so a failing point can be recorded and skipped."""
    for size in cfg.sizes:
        if cfg.problem == "sphere":
            N = int(size)

            def build(N=N):
                pr = sphere_problem(N, k=cfg.wavenumber, eps_contrast=cfg.eps_contrast,
                                    n_rhs=cfg.rhs or SPHERE_RHS, seed=cfg.seed)
                return Instance(pr.name, pr.A, pr.B)
            yield f"sphere{N}", build
        elif cfg.problem == "array":
            rows, cols = size

            def build(rows=rows, cols=cols):
                dims = array_dims(rows, cols, cfg.spacing)
                A, B, _ = array_problem(rows, cols, cfg.spacing, dims, k=cfg.wavenumber)
                return Instance(f"array{rows}x{cols}", A, B)
            yield f"array{rows}x{cols}", build
        else:
            path = Path(size)
            # a shell glob picks up the right-hand sides too; they belong to their matrix
            if path.stem.endswith("_rhs") and str(path.with_name(path.stem[:-4] + ".mtx")) in map(str, cfg.sizes):
                continue

            def build(path=path):
                A = _read_matrix(path)
                rhs_path = path.with_name(path.stem + "_rhs.mtx")
                if rhs_path.exists():
                    B = _read_dense(rhs_path)
                else:
                    B = np.random.default_rng(cfg.seed).standard_normal((A.n, cfg.rhs or 1))
                return Instance(path.stem, A, B)
            yield path.stem, build


def _read_matrix(path: Path) -> SymSparseMatrix:
    with open(path) as fh:
        return load_matrix_market(fh)


def _read_dense(path: Path) -> np.ndarray:
    with open(path) as fh:
        return load_dense_matrix_market(fh)


def _write_matrix(path: Path, A: SymSparseMatrix) -> None:
    with open(path, "w") as fh:
        save_matrix_market(A, fh)


def _write_dense(path: Path, x: np.ndarray) -> None:
    with open(path, "w") as fh:
        save_dense_matrix_market(x, fh)


_WARM: set[str] = set()


def warm_up(dtype) -> None:
    """Run both methods once on a tiny system so kernel compilation is not timed."""
    key = np.dtype(dtype).kind
    if key in _WARM:
        return
    eps = 4.0 + 1.0j if key == "c" else 4.0
    pr = sphere_problem(6, k=1.0, eps_contrast=eps, n_rhs=2)
    for method in ("dd", "baseline"):
        run_method(method, pr.A, pr.B, 2, 1)
    _WARM.add(key)


@dataclass
class RunResult:
    factor: SolveStats
    solve: SolveStats
    X: np.ndarray


def run_method(method: str, A: SymSparseMatrix, B: np.ndarray, n_parts: int | None,
               threads: int, repeat: int = 1) -> RunResult:
    """Factor and solve ``repeat`` times; keep the fastest wall times."""
    best: RunResult | None = None
    for _ in range(repeat):
        if method == "dd":
            f, fs = dd_factor(A, n_parts, threads)
            X, ss = dd_solve(f, B)
        elif method == "baseline":
            f, fs = baseline_factor(A)
            X, ss = baseline_solve(f, B)
        else:
            raise ValueError(f"unknown method {method!r}")
        if best is None:
            best = RunResult(fs, ss, X)
        else:
            best.factor.factor_wall = min(best.factor.factor_wall, fs.factor_wall)
            best.solve.times["solve"] = min(best.solve.times["solve"], ss.times["solve"])
    return best


def _fmt_row(name, inst_n, nnz, n_parts, n_iface, rhs, method, phase, mem, wall, relres,
             flags, status) -> list[str]:
    return [name, str(inst_n), str(nnz), str(n_parts), str(n_iface), str(rhs), method, phase,
            str(mem), f"{wall:.6f}", f"{relres:.6e}", str(flags), status]


def result_rows(name: str, method: str, res: RunResult, rhs: int, threshold: float) -> list[list[str]]:
    fs, ss = res.factor, res.solve
    relres = ss.relres_max
    status = "ok" if relres <= threshold else "residual"
    common = (name, fs.n, fs.nnz, fs.n_parts, fs.n_interface, rhs, method)
    return [
        _fmt_row(*common, "factor", fs.factor_peak(), fs.factor_wall, relres, fs.pert_flags, status),
        _fmt_row(*common, "solve", ss.peak_mem["solve"], ss.times["solve"], relres, ss.pert_flags, status),
    ]


def error_rows(name: str, method: str, exc: BaseException, inst: Instance | None) -> list[list[str]]:
    n = inst.A.n if inst is not None else ""
    nnz = inst.A.nnz if inst is not None else ""
    rhs = inst.B.shape[1] if inst is not None else ""
    status = f"error:{type(exc).__name__}"
    return [[name, str(n), str(nnz), "", "", str(rhs), method, phase, "", "", "", "", status]
            for phase in ("factor", "solve")]


def write_plot_data(path: Path, rows: list[list[str]]) -> None:
    """Whitespace-separated columns, one gnuplot index block per (method, phase)."""
    blocks: dict[tuple[str, str], list[list[str]]] = {}
    for r in rows:
        blocks.setdefault((r[6], r[7]), []).append(r)
    with open(path, "w") as fh:
        fh.write("# " + " ".join(CSV_HEADER) + "\n")
        for k, (key, rs) in enumerate(blocks.items()):
            if k:
                fh.write("\n\n")
            fh.write(f"# method={key[0]} phase={key[1]}\n")
            for r in rs:
                fh.write(" ".join(v if v != "" else "nan" for v in r) + "\n")


def summary_rows(rows: list[list[str]]) -> list[list[str]]:
    by = {}
    for r in rows:
        if r[12] not in ("ok", "residual"):
            continue
        by[(r[0], r[6], r[7])] = r
    out = []
    for (name, method, phase), r in by.items():
        if method != "dd" or phase != "factor" or (name, "baseline", "factor") not in by:
            continue
        b = by[(name, "baseline", "factor")]
        dd_peak = max(int(r[8]), int(by[(name, "dd", "solve")][8]))
        base_peak = max(int(b[8]), int(by[(name, "baseline", "solve")][8]))
        dd_t, base_t = float(r[9]), float(b[9])
        out.append([name, r[1], r[3], str(dd_peak), str(base_peak), f"{dd_peak / base_peak:.6f}",
                    f"{dd_t:.6f}", f"{base_t:.6f}",
                    f"{dd_t / base_t:.6f}" if base_t > 0 else "inf"])
    return out


def _monotone_warnings(rows: list[list[str]]) -> list[str]:
    warn = []
    last: dict[tuple[str, str], tuple[int, int]] = {}
    for r in rows:
        if r[12] != "ok":
            continue
        key = (r[6], r[7])
        n, mem = int(r[1]), int(r[8])
        if key in last and n > last[key][0] and mem < last[key][1]:
            warn.append(f"warning: {r[6]}/{r[7]} peak memory fell from {last[key][1]} to {mem} "
                        f"as n grew to {n}")
        last[key] = (n, mem)
    return warn


def cmd_bench(cfg: BenchConfig, out: Path, plot_data: Path | None, summary: Path | None) -> int:
    rows: list[list[str]] = []
    any_err = any_res = False
    for name, build in make_instances(cfg):
        inst = None
        try:
            inst = build()
        except Exception as exc:  # noqa: BLE001 - recorded as a failed sweep point
            for m in cfg.methods:
                rows.extend(error_rows(name, m, exc, None))
            any_err = True
            print(f"{name}: generation failed: {exc}", file=sys.stderr)
            continue
        n_parts = cfg.n_parts if cfg.n_parts is not None else default_parts(inst.A.n)
        warm_up(inst.A.dtype)
        for m in cfg.methods:
            try:
                res = run_method(m, inst.A, inst.B, n_parts, cfg.threads, cfg.repeat)
            except Exception as exc:  # noqa: BLE001
                rows.extend(error_rows(name, m, exc, inst))
                any_err = True
                print(f"{name}/{m}: failed: {exc}", file=sys.stderr)
                continue
            new = result_rows(name, m, res, inst.B.shape[1], cfg.threshold)
            any_res |= new[0][12] != "ok"
            rows.extend(new)
            print(f"{name} n={inst.A.n} {m}: factor {res.factor.factor_wall:.3f}s "
                  f"peak {res.factor.factor_peak()} B, solve {res.solve.times['solve']:.3f}s, "
                  f"relres {res.solve.relres_max:.2e}", file=sys.stderr)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        w.writerows(rows)
    if plot_data is not None:
        write_plot_data(plot_data, rows)
    summ = summary_rows(rows)
    if summ:
        path = summary or out.with_name(out.stem + "_summary.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SUMMARY_HEADER)
            w.writerows(summ)
        for s in summ:
            print(f"{s[0]}: dd/baseline peak memory ratio {s[5]}, factor time ratio {s[8]}",
                  file=sys.stderr)
    for msg in _monotone_warnings(rows):
        print(msg, file=sys.stderr)
    if any_err:
        return EXIT_IO
    return EXIT_RESIDUAL if any_res else EXIT_OK


def cmd_gen(cfg: BenchConfig, outdir: Path) -> int:
    outdir.mkdir(parents=True, exist_ok=True)
    for name, build in make_instances(cfg):
        inst = build()
        _write_matrix(outdir / f"{name}.mtx", inst.A)
        _write_dense(outdir / f"{name}_rhs.mtx", inst.B)
        print(f"{outdir / name}.mtx n={inst.A.n} nnz={inst.A.nnz} rhs={inst.B.shape[1]}",
              file=sys.stderr)
    return EXIT_OK


def cmd_solve(matrix: Path, rhs: Path | None, method: str, n_parts: int | None, threads: int,
              out: Path | None, csv_path: Path | None, threshold: float, seed: int) -> int:
    try:
        A = _read_matrix(matrix)
        if rhs is not None:
            B = _read_dense(rhs)
        else:
            B = np.random.default_rng(seed).standard_normal((A.n, 1))
    except (OSError, MatrixMarketError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    if B.shape[0] != A.n:
        print(f"error: rhs has {B.shape[0]} rows, matrix has {A.n}", file=sys.stderr)
        return EXIT_IO
    methods = ["dd", "baseline"] if method == "both" else [method]
    n_parts = n_parts if n_parts is not None else default_parts(A.n)
    warm_up(A.dtype)
    rows, sols = [], []
    for m in methods:
        res = run_method(m, A, B, n_parts, threads)
        rows.extend(result_rows(matrix.stem, m, res, B.shape[1], threshold))
        sols.append(res.X)
    if len(sols) == 2:
        scale = np.abs(sols[1]).max()
        diff = np.abs(sols[0] - sols[1]).max() / scale if scale > 0 else 0.0
        print(f"dd vs baseline relative difference {diff:.3e}", file=sys.stderr)
    try:
        if out is not None:
            _write_dense(out, sols[0])
        w_target = open(csv_path, "w", newline="") if csv_path is not None else sys.stdout
        try:
            w = csv.writer(w_target, lineterminator="\n")
            w.writerow(CSV_HEADER)
            w.writerows(rows)
        finally:
            if csv_path is not None:
                w_target.close()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    bad = [r for r in rows if r[12] != "ok"]
    if bad:
        print(f"error: residual {bad[0][10]} exceeds threshold {threshold:g}", file=sys.stderr)
        return EXIT_RESIDUAL
    return EXIT_OK


def _parts_arg(s: str) -> int | None:
    if s == "auto":
        return None
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("--parts must be >= 1 or 'auto'")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ddsolver", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, sweep: bool):
        p.add_argument("--parts", type=_parts_arg, default=None, metavar="N|auto",
                       help="number of subdomains (default: auto)")
        p.add_argument("--threads", type=int, default=None,
                       help=f"worker threads (default: ${THREADS_ENV} or 1)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD,
                       help="largest accepted relative residual")
        if sweep:
            p.add_argument("--problem", choices=("sphere", "array", "mtx"), default="sphere")
            p.add_argument("--sizes", default=None,
                           help="comma list: grid nodes per axis (sphere) or ROWSxCOLS (array)")
            p.add_argument("--files", nargs="+", default=None, help="Matrix Market files (mtx)")
            p.add_argument("--rhs", type=int, default=None,
                           help=f"right-hand sides (sphere default {SPHERE_RHS}; array uses rows*cols)")
            p.add_argument("--wavenumber", type=float, default=0.0)
            p.add_argument("--eps-contrast", type=_parse_complex, default=4.0)
            p.add_argument("--spacing", type=int, default=2, help="array element spacing in nodes")

    g = sub.add_parser("gen", help="write Matrix Market systems for a sweep")
    common(g, True)
    g.add_argument("--out", type=Path, required=True, help="output directory")

    s = sub.add_parser("solve", help="solve one Matrix Market system")
    common(s, False)
    s.add_argument("matrix", type=Path)
    s.add_argument("rhs", type=Path, nargs="?")
    s.add_argument("--method", choices=("dd", "baseline", "both"), default="dd")
    s.add_argument("--out", type=Path, default=None, help="solution file (dense Matrix Market)")
    s.add_argument("--csv", type=Path, default=None, help="stats CSV (default: stdout)")

    b = sub.add_parser("bench", help="factor and solve a sweep, write CSV")
    common(b, True)
    b.add_argument("--method", choices=("dd", "baseline", "both"), default="both")
    b.add_argument("--out", type=Path, required=True, help="CSV output")
    b.add_argument("--plot-data", type=Path, default=None)
    b.add_argument("--summary", type=Path, default=None,
                   help="dd/baseline ratio CSV (default: <out stem>_summary.csv)")
    b.add_argument("--repeat", type=int, default=1, help="best-of-N wall times")
    return ap


def _config(args) -> BenchConfig:
    if args.problem == "mtx":
        if not args.files:
            raise ValueError("--problem mtx needs --files")
        sizes = list(args.files)
    else:
        if not args.sizes:
            raise ValueError(f"--problem {args.problem} needs --sizes")
        toks = [t for t in args.sizes.split(",") if t.strip()]
        sizes = [_parse_array_size(t) for t in toks] if args.problem == "array" else [int(t) for t in toks]
    methods = ("dd", "baseline") if getattr(args, "method", "both") == "both" else (args.method,)
    return BenchConfig(args.problem, sizes, args.parts, args.rhs, args.wavenumber, args.eps_contrast,
                       methods, resolve_threads(args.threads), args.seed, args.spacing,
                       args.threshold, getattr(args, "repeat", 1))


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        if args.command == "solve":
            return cmd_solve(args.matrix, args.rhs, args.method, args.parts,
                             resolve_threads(args.threads), args.out, args.csv,
                             args.threshold, args.seed)
        cfg = _config(args)
    except (ValueError, argparse.ArgumentTypeError) as exc:
        ap.error(str(exc))
    try:
        if args.command == "gen":
            return cmd_gen(cfg, args.out)
        return cmd_bench(cfg, args.out, args.plot_data, args.summary)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
