"""Command-line entry point: ``dqlc <subcommand> [options]``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from . import __version__, analysis, bounds, harness
from .gauss import SourceModel

LOSS_COLUMNS = ["M", "rho", "C", "dqlc_loss_db", "uncoded_loss_db", "bound_sdr_db", "uncoded_sdr_db"]


def _common(p, sim=False, grid=True):
    p.add_argument("--config", help="key=value file with defaults for any of these options")
    p.add_argument("--m", type=int, default=3, help="number of sources (default 3)")
    if grid:
        p.add_argument("--rho", default="0,0.5,0.9,0.95", help="comma list of source correlations")
        p.add_argument("--snr-db", default="0:50:2", help="start:stop:step (inclusive) or comma list")
    p.add_argument("--out", help="output file (default: standard output)")
    p.add_argument("--power", type=float, default=1.0, help="per-encoder power P")
    if sim:
        p.add_argument("--samples", type=int, default=10**6)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--plain", action="store_true",
                       help="estimate the analog source by beta * residual only")


def _search_args(p):
    p.add_argument("--nq-max", type=int, default=64, help="largest level count tried for encoder 2")
    p.add_argument("--b", type=float, default=4.0, help="segment length factor")
    p.add_argument("--spread", choices=[analysis.DECODER, analysis.JOINT], default=analysis.DECODER)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dqlc", description=__doc__)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bound", help="SDR upper bound")
    _common(p)

    p = sub.add_parser("uncoded", help="Monte Carlo of uncoded transmission")
    _common(p, sim=True)

    p = sub.add_parser("dqlc-opt", help="optimise parameters and write a parameter file")
    _common(p)
    _search_args(p)

    p = sub.add_parser("dqlc-sim", help="simulate the quantizer linear coder")
    _common(p, sim=True)
    _search_args(p)
    p.add_argument("--params", help="parameter file from dqlc-opt (default: optimise per point)")

    p = sub.add_parser("sweep", help="several schemes on an rho x snr grid")
    _common(p, sim=True)
    _search_args(p)
    p.add_argument("--schemes", default="bound,uncoded,dqlc-analytic,dqlc-sim",
                   help=f"comma list from {','.join(harness.SCHEMES)}")
    p.add_argument("--params", help="fixed parameter file instead of optimising")

    p = sub.add_parser("loss-curve", help="high-SNR loss versus number of sources")
    p.add_argument("--config")
    p.add_argument("--snr-db", default="100")
    p.add_argument("--rho", default="0,0.95")
    p.add_argument("--m-range", default="1:20", help="start:stop (inclusive)")
    p.add_argument("--b", type=float, default=4.0)
    p.add_argument("--out")
    return ap


def _apply_config(ap: argparse.ArgumentParser, argv) -> argparse.Namespace:
    """Parse ``argv``; values from ``--config`` fill in options not given on the command line."""
    args = ap.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    sub = ap._subparsers._group_actions[0].choices[args.command]
    dests = {a.dest: a for a in sub._actions}
    values = harness.read_keyvalue(args.config)
    defaults = {}
    for key, raw in values.items():
        if key not in dests or key in ("config", "help"):
            ap.error(f"unknown key {key!r} in config file {args.config}")
        act = dests[key]
        if act.const is True and act.nargs == 0:
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        else:
            defaults[key] = act.type(raw) if act.type else raw
    sub.set_defaults(**defaults)
    return ap.parse_args(argv)


def _search_config(args) -> analysis.SearchConfig:
    nq = tuple(n for n in range(2, args.nq_max + 1, 2))
    if not nq:
        raise ValueError("--nq-max must be at least 2")
    est = analysis.PLAIN if getattr(args, "plain", False) else analysis.CONDITIONAL
    return analysis.SearchConfig(nq_values=nq, b=args.b, P=args.power, spread=args.spread, estimator=est,
                                 nq_window=8)


def _emit_csv(results, args, meta):
    if args.out:
        harness.write_csv(results, args.out, meta)
    else:
        import csv
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(harness.CSV_COLUMNS)
        for r in results:
            row = r.row()
            w.writerow([harness._fmt(row.get(c)) for c in harness.CSV_COLUMNS])


def _spec(args, schemes, params=None):
    return harness.ExperimentSpec(
        schemes=schemes, M=args.m, rho=harness.parse_float_list(args.rho),
        snr_db=harness.parse_snr_range(args.snr_db), P=args.power,
        samples=getattr(args, "samples", 10**6), seed=getattr(args, "seed", 0),
        threads=getattr(args, "threads", 1),
        search=_search_config(args) if hasattr(args, "nq_max") else analysis.SearchConfig(),
        params=params, conditional=not getattr(args, "plain", False), out=args.out)


def _meta(args, spec):
    return {"command": args.command, "seed": spec.seed, "threads": spec.threads, "samples": spec.samples,
            "version": __version__}


def main(argv=None) -> int:
    ap = build_parser()
    args = _apply_config(ap, argv)
    try:
        return _dispatch(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"dqlc: error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "loss-curve":
        parts = [int(v) for v in args.m_range.split(":")]
        if len(parts) != 2 or parts[0] < 1 or parts[1] < parts[0]:
            raise ValueError("--m-range must be start:stop with 1 <= start <= stop")
        snr = bounds.from_db(harness.parse_snr_range(args.snr_db)[0])
        rows = analysis.loss_vs_M_curve(snr, harness.parse_float_list(args.rho), range(parts[0], parts[1] + 1),
                                        args.b)
        if args.out:
            harness.write_table(rows, args.out, LOSS_COLUMNS)
        else:
            print(",".join(LOSS_COLUMNS))
            for r in rows:
                print(",".join(harness._fmt(r[c]) for c in LOSS_COLUMNS))
        return 0

    if cmd == "dqlc-opt":
        rhos = harness.parse_float_list(args.rho)
        snrs = harness.parse_snr_range(args.snr_db)
        if len(rhos) != 1 or len(snrs) != 1:
            raise ValueError("dqlc-opt needs a single --rho and a single --snr-db value")
        if args.m != 3:
            raise ValueError("parameter optimisation is available for three sources only")
        cfg = replace(_search_config(args), nq_window=None)
        params, rep = analysis.optimize_m3(SourceModel.from_correlation(3, rhos[0]), bounds.from_db(snrs[0]), cfg)
        note = (f"optimised for M=3 rho={rhos[0]:g} snr_db={snrs[0]:g} power={args.power:g}\n"
                f"analytic sdr_db={rep.sdr_db():.4f} bound_sdr_db={bounds.sdr_upper_bound_db(3, bounds.from_db(snrs[0]), rhos[0]):.4f}")
        if args.out:
            harness.write_params(params, args.out, note)
        else:
            for line in note.splitlines():
                print(f"# {line}")
            for k, v in params.__dict__.items():
                print(f"{k}={','.join(harness._fmt(x) for x in v) if isinstance(v, tuple) else harness._fmt(v)}")
        return 0

    schemes = {"bound": ("bound",), "uncoded": ("uncoded",), "dqlc-sim": ("dqlc-sim",)}.get(cmd)
    if cmd == "sweep":
        schemes = tuple(s.strip() for s in args.schemes.split(",") if s.strip())
    params = harness.read_params(args.params) if getattr(args, "params", None) else None
    if params is not None and params.M != args.m:
        raise ValueError(f"parameter file is for M={params.M} but --m is {args.m}")
    spec = _spec(args, schemes, params)
    results = harness.sweep(spec)
    _emit_csv(results, args, _meta(args, spec))
    failed = [r for r in results if r.error]
    for r in failed:
        print(f"dqlc: warning: {r.scheme} rho={r.rho:g} snr_db={r.snr_db:g}: {r.error}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
