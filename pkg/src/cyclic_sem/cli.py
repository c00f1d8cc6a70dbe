"""Command-line entry point."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, io
from .admm import AdmmOptions, admm_path
from .alm import AlmOptions, alm_refine, oracle_radius
from .design import DesignKind, is_completely_separating, redundancy
from .diagnostics import identifiability_rank
from .llc import estimate_llc, lambda_max, lambda_path
from .model import ExperimentSystem, sample_dataset

TRACE_COLUMNS = ("iter", "objective", "primal_residual", "dual_residual", "rho", "wall_time_ms")
ROW_COLUMNS = ("row", "iterations", "kkt_residual", "converged", "n_rows", "error")

log = logging.getLogger("cyclic_sem")


def _kind(args) -> DesignKind:
    tag = {"single": "single_node", "single_node": "single_node"}.get(args.kind, args.kind)
    return DesignKind(tag, args.k if tag == "bounded" else None)


def parse_lambda(text: str):
    """``0.1`` is a single value; ``low:high:count`` is a log-spaced grid, returned high to low."""
    if ":" in text:
        lo, hi, cnt = text.split(":")
        return [float(x) for x in np.logspace(np.log10(float(hi)), np.log10(float(lo)), int(cnt))]
    return [float(text)]


def cmd_design(args):
    system = _kind(args).build(args.p)
    io.write_system(args.out, system)
    ok, _ = is_completely_separating(system)
    print(f"E = {system.E}\ncompletely_separating = {str(ok).lower()}\nredundancy = {redundancy(system)}")
    return 0


def cmd_simulate(args):
    if args.truth:
        B = io.read_matrix(args.truth)
    elif args.graph == "disconnected_cliques":
        B = bench.gen_disconnected_cliques(args.p, args.d, args.eta, args.seed)
    else:
        B = bench.gen_random_regular(args.p, args.d, args.eta, args.seed)
    system = io.read_system(args.system) if args.system else _kind(args).build(B.shape[0])
    bundle = sample_dataset(B, system, args.n, args.seed)
    io.write_dataset(args.out, bundle, mode=args.mode)
    io.write_matrix(Path(args.out) / "truth.csv", B)
    print(f"wrote {system.E} experiments, n = {bundle.n}, to {args.out}")
    return 0


def _truth(args, p):
    if args.truth is None:
        return None
    B = io.read_matrix(args.truth)
    if B.shape != (p, p):
        raise SystemExit(f"truth matrix has shape {B.shape}, expected {(p, p)}")
    return B


def _pick(cands, B_true, what):
    if len(cands) == 1:
        return cands[0]
    if B_true is None:
        raise SystemExit(f"a {what} grid needs --truth for oracle selection")
    return bench.oracle_select(cands, B_true)


def cmd_estimate_llc(args):
    bundle = io.read_dataset(args.data)
    B_true = _truth(args, bundle.p)
    grid = parse_lambda(args.lam)
    if args.relative:
        grid = [g * lambda_max(bundle) for g in grid]
    if len(grid) > 1:
        path = lambda_path(bundle, grid)
        lam, _ = _pick([(l, B) for l, B, _ in path], B_true, "lambda")
    else:
        lam = grid[0]
    rep = estimate_llc(bundle, lam)
    io.write_matrix(args.out, rep.estimate)
    if args.report:
        io.write_trace(args.report, rep.trace, ROW_COLUMNS)
    print(f"lambda = {lam!r}\nconverged = {str(rep.converged).lower()}")
    if B_true is not None:
        print(f"sq_frob_error = {bench.frobenius_error(rep.estimate, B_true)!r}")
    return 0


def cmd_estimate_mle(args):
    bundle = io.read_dataset(args.data)
    covs, system = bundle.covariances, bundle.system
    B_true = _truth(args, bundle.p)
    opts = AdmmOptions(primal_tol=args.admm_tol, dual_tol=args.admm_tol, max_iter=args.admm_max_iter)
    path = admm_path(covs, system, parse_lambda(args.lambda_init), opts)
    lam_i, B_init = _pick([(l, r.estimate) for l, r in path], B_true, "lambda-init")
    init_rep = next(r for l, r in path if l == lam_i)
    if args.init_out:
        io.write_matrix(args.init_out, B_init)
    if args.radius == "oracle":
        if B_true is None:
            raise SystemExit("--radius oracle needs --truth")
        R = oracle_radius(B_init, B_true)
    else:
        R = float(args.radius)
    alm_opts = AlmOptions(fast_likelihood=args.fast_likelihood)
    cands, reports = [], {}
    start = B_init
    for lam in parse_lambda(args.lambda_loc):
        rep = alm_refine(covs, system, B_init, R, lam, alm_opts, B_start=start)
        cands.append((lam, rep.estimate))
        reports[lam] = rep
        start = rep.estimate
    lam_l, B_loc = _pick(cands, B_true, "lambda-loc")
    loc_rep = reports[lam_l]
    io.write_matrix(args.out, B_loc)
    if args.report:
        io.write_trace(args.report, loc_rep.trace, TRACE_COLUMNS)
    if args.init_report:
        io.write_trace(args.init_report, init_rep.trace, TRACE_COLUMNS)
    print(f"lambda_init = {lam_i!r}\nlambda_loc = {lam_l!r}\nradius = {R!r}")
    print(f"init_flags = {';'.join(init_rep.flags)}\nloc_flags = {';'.join(loc_rep.flags)}")
    if B_true is not None:
        print(f"sq_frob_error_init = {bench.frobenius_error(B_init, B_true)!r}")
        print(f"sq_frob_error_loc = {bench.frobenius_error(B_loc, B_true)!r}")
    return 0


def cmd_identifiability(args):
    if args.system:
        system = io.read_system(args.system)
        if args.p is not None and args.p != system.p:
            raise SystemExit(f"--p {args.p} disagrees with the system file (p = {system.p})")
    else:
        if args.p is None:
            raise SystemExit("give --system or --p")
        system = ExperimentSystem.from_sets(args.p, [[]])
    p = system.p
    d = args.d if args.d is not None else max(1, min(2, p - 1))
    B = bench.gen_random_regular(p, d, args.eta, args.seed) if p > 1 else np.zeros((1, 1))
    rep = identifiability_rank(B, system, tol=args.tol, seed=args.seed)
    sys.stdout.write(rep.as_text())
    if args.sv_out:
        np.savetxt(args.sv_out, rep.singular_values, fmt="%.17g", delimiter=",")
    return 0


def cmd_bench(args):
    cfg = bench.load_config(args.config)
    if args.workers is not None:
        cfg.workers = args.workers
    records = bench.run_benchmark(cfg, args.out)
    for row in bench.summarize(records):
        print(f"{row['sweep_value']}\t{row['estimator']}\tmedian={row['median']:.6g}\tmean={row['mean']:.6g}"
              f"\tfailures={row['failures']}")
    return 0


def _design_args(p):
    p.add_argument("--kind", default="binary", choices=["single", "single_node", "binary", "bounded"])
    p.add_argument("--k", type=int, default=2, help="block size for the bounded design")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cyclic-sem", description="Sparse linear cyclic SEM estimation from interventions.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    d = sub.add_parser("design", help="write an intervention system")
    d.add_argument("--p", type=int, required=True)
    _design_args(d)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_design)

    s = sub.add_parser("simulate", help="draw a structure matrix and interventional samples")
    s.add_argument("--p", type=int, default=10)
    s.add_argument("--d", type=int, default=2)
    s.add_argument("--eta", type=float, default=0.5)
    s.add_argument("--graph", default="random_regular", choices=["random_regular", "disconnected_cliques"])
    s.add_argument("--truth", help="use this structure matrix instead of drawing one")
    s.add_argument("--system", help="system descriptor; overrides --kind")
    _design_args(s)
    s.add_argument("--n", type=int, default=8000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--mode", default="samples", choices=["samples", "covariances"])
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="run an estimator on a dataset directory")
    esub = e.add_subparsers(dest="estimator", required=True)
    llc = esub.add_parser("llc")
    llc.add_argument("--data", required=True)
    llc.add_argument("--lambda", dest="lam", required=True, help="value or low:high:count grid")
    llc.add_argument("--relative", action="store_true", help="scale lambda by the data's KKT bound")
    llc.add_argument("--truth", help="truth matrix for oracle selection and error reporting")
    llc.add_argument("--out", required=True)
    llc.add_argument("--report", help="per-row solver report CSV")
    llc.set_defaults(func=cmd_estimate_llc)

    mle = esub.add_parser("mle")
    mle.add_argument("--data", required=True)
    mle.add_argument("--lambda-init", required=True, help="value or low:high:count grid")
    mle.add_argument("--lambda-loc", required=True, help="value or low:high:count grid")
    mle.add_argument("--radius", default="oracle", help="ball radius, 'inf', or 'oracle' (needs --truth)")
    mle.add_argument("--fast-likelihood", action="store_true")
    mle.add_argument("--admm-tol", type=float, default=1e-5)
    mle.add_argument("--admm-max-iter", type=int, default=500)
    mle.add_argument("--truth")
    mle.add_argument("--out", required=True)
    mle.add_argument("--init-out")
    mle.add_argument("--report", help="refinement trace CSV")
    mle.add_argument("--init-report", help="ADMM trace CSV")
    mle.set_defaults(func=cmd_estimate_mle)

    g = sub.add_parser("diagnose", help="model diagnostics")
    gsub = g.add_subparsers(dest="diagnostic", required=True)
    ident = gsub.add_parser("identifiability")
    ident.add_argument("--system")
    ident.add_argument("--p", type=int)
    ident.add_argument("--d", type=int)
    ident.add_argument("--eta", type=float, default=0.5)
    ident.add_argument("--seed", type=int, default=0)
    ident.add_argument("--tol", type=float, default=1e-8)
    ident.add_argument("--sv-out", help="CSV of singular values")
    ident.set_defaults(func=cmd_identifiability)

    b = sub.add_parser("bench", help="run a benchmark sweep")
    b.add_argument("--config", required=True)
    b.add_argument("--out", default="bench_out")
    b.add_argument("--workers", type=int)
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
