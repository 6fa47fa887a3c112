"""Command-line front end: ``kalpha estimate | interval | simulate``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from importlib import resources

from . import __version__
from .anova import summarize, unit_sums
from .data import drop_units, get_distance, load_csv, prune_units
from .errors import DataFormatError, DegenerateDataError, PreconditionError
from .estimators import KINDS, estimate
from .intervals import bootstrap_from_sums, jackknife_from_sums
from .simulation import ExperimentSpec, run_experiment

EXIT_OK, EXIT_IO, EXIT_PRECONDITION, EXIT_DEGENERATE = 0, 3, 4, 5

EXAMPLE = "krippendorff_nominal.csv"


def _default_cores() -> int:
    env = os.environ.get("KALPHA_CORES")
    if env:
        return int(env)
    return os.cpu_count() or 1


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("input", nargs="?", help="units-by-coders CSV file")
    p.add_argument("--example", action="store_true",
                   help="use the bundled Krippendorff nominal dataset instead of INPUT")
    p.add_argument("--distance", choices=("nominal", "interval", "ratio"), default="nominal")
    p.add_argument("--missing-token", default="NA")
    p.add_argument("--dot-missing", action="store_true", help="treat '.' as the missing token")
    p.add_argument("--header", action="store_true", help="first row holds coder labels")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--drop-row", type=int, action="append", default=[], metavar="I",
                   help="leave out unit I (1-based); repeatable")
    p.add_argument("--prune", action="store_true",
                   help="drop units with a single score before estimation")
    p.add_argument("--pooling", choices=("pairable", "classical"), default="pairable")
    p.add_argument("--format", choices=("plain", "json", "csv"), default="plain")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kalpha", description="Inference for Krippendorff's alpha")
    parser.add_argument("--version", action="version", version=f"kalpha {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="point estimates")
    _add_data_args(est)
    est.add_argument("--estimator", action="append", choices=KINDS + ("all",),
                     help="estimator(s) to report (default: customary and analytical)")

    itv = sub.add_parser("interval", help="confidence interval")
    _add_data_args(itv)
    itv.add_argument("--method", choices=("jackknife", "customary-boot", "improved-boot"), default="jackknife")
    itv.add_argument("--estimator", choices=("customary", "analytical"), default="customary",
                     help="statistic bootstrapped by improved-boot")
    itv.add_argument("--level", type=float, default=0.95)
    itv.add_argument("--b", type=int, default=2000, help="bootstrap replicates")
    itv.add_argument("--df", choices=("fixed", "hinkley"), default="fixed",
                     help="jackknife degrees of freedom: a - 1 or double-jackknife estimate")
    itv.add_argument("--seed", type=int, default=0)
    itv.add_argument("--cores", type=int, default=None)

    sim = sub.add_parser("simulate", help="run a Monte Carlo experiment from a JSON spec")
    sim.add_argument("spec", help="experiment spec (JSON)")
    sim.add_argument("--output", "-o", help="write results here instead of stdout")
    sim.add_argument("--format", choices=("csv", "json"), default="csv")
    sim.add_argument("--cores", type=int, default=None)
    sim.add_argument("--quiet", action="store_true", help="no progress on stderr")
    return parser


def _load(args):
    mode = "categorical" if args.distance == "nominal" else "numeric"
    if args.example:
        with resources.as_file(resources.files("kalpha.fixtures") / EXAMPLE) as path:
            m = load_csv(path, missing_token=".", value_mode=mode, header=True)
    else:
        if not args.input:
            raise PreconditionError("an INPUT file (or --example) is required")
        token = "." if args.dot_missing else args.missing_token
        m = load_csv(args.input, missing_token=token, value_mode=mode, header=args.header,
                     delimiter=args.delimiter)
    if args.drop_row:
        m = drop_units(m, [i - 1 for i in args.drop_row])
    m = prune_units(m, min_scores=2 if args.prune else 1)
    return m


def _fmt(x) -> str:
    if x is None:
        return "-"
    if isinstance(x, float):
        return f"{x:.6f}"
    return str(x)


def _emit_table(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: ";".join(v) if isinstance(v, list) else ("" if v is None else v) for k, v in r.items()})
    return buf.getvalue()


def cmd_estimate(args) -> str:
    t0 = time.perf_counter()
    m = _load(args)
    f = get_distance(args.distance)
    s = summarize(unit_sums(m, f), pooling=args.pooling)
    kinds = args.estimator or ["customary", "analytical"]
    if "all" in kinds:
        kinds = list(KINDS)
    results = [e.as_dict() for e in estimate(s, kinds)]
    elapsed = (time.perf_counter() - t0) * 1000.0
    data = {"units": m.a, "scores": m.N, "distance": args.distance, "dropped": list(m.dropped)}
    if args.format == "json":
        return json.dumps({"data": data, "estimates": results, "timing_ms": elapsed}, indent=2)
    if args.format == "csv":
        return _emit_table(results, ["kind", "alpha", "theta", "gamma", "flags"])
    _timing(elapsed)
    lines = [f"units: {m.a}  scores: {m.N}  distance: {args.distance}"]
    if m.dropped:
        lines.append(f"dropped: {', '.join(m.dropped)}")
    for r in results:
        line = f"{r['kind']:<11} alpha = {_fmt(r['alpha'])}"
        if r["theta"] is not None:
            line += f"  theta = {_fmt(r['theta'])}"
        if r["gamma"] is not None:
            line += f"  gamma = {_fmt(r['gamma'])}"
        if r["flags"]:
            line += f"  [{', '.join(r['flags'])}]"
        lines.append(line)
    return "\n".join(lines) + "\n"


def cmd_interval(args) -> str:
    t0 = time.perf_counter()
    if not 0.0 < args.level < 1.0:
        raise PreconditionError("--level must lie in (0, 1)")
    cores = args.cores if args.cores is not None else _default_cores()
    if cores < 1:
        raise PreconditionError("--cores must be >= 1")
    m = _load(args)
    f = get_distance(args.distance)
    us = unit_sums(m, f)
    delta = 1.0 - args.level
    if args.method == "jackknife":
        ci, _ = jackknife_from_sums(us, delta, "hinkley" if args.df == "hinkley" else "fixed_a_minus_1",
                                    pooling=args.pooling)
    elif args.method == "customary-boot":
        ci = bootstrap_from_sums(us, "customary_boot", "customary", args.b, delta, args.seed,
                                 args.pooling, cores)
    else:
        ci = bootstrap_from_sums(us, "improved_boot", args.estimator, args.b, delta, args.seed,
                                 args.pooling, cores)
    elapsed = (time.perf_counter() - t0) * 1000.0
    est, itv = ci.estimate.as_dict(), ci.as_dict()
    if args.format == "json":
        return json.dumps({"estimate": est, "interval": itv, "timing_ms": elapsed}, indent=2)
    if args.format == "csv":
        row = {"kind": est["kind"], "alpha": est["alpha"], **itv}
        return _emit_table([row], ["kind", "alpha", "lower", "upper", "level", "method", "df",
                                   "discarded", "replicates", "flags"])
    _timing(elapsed)
    lines = [
        f"units: {m.a}  scores: {m.N}  distance: {args.distance}",
        f"estimate ({est['kind']}): {_fmt(est['alpha'])}",
        f"{itv['level'] * 100:g}% interval ({itv['method']}): ({_fmt(itv['lower'])}, {_fmt(itv['upper'])})",
    ]
    if itv["df"] is not None:
        lines.append(f"df: {itv['df']:g}")
    if itv["replicates"] is not None:
        lines.append(f"replicates: {itv['replicates']}  discarded: {itv['discarded']}")
    if itv["flags"]:
        lines.append(f"flags: {', '.join(itv['flags'])}")
    return "\n".join(lines) + "\n"


def cmd_simulate(args) -> str:
    try:
        with open(args.spec, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise PreconditionError(f"invalid experiment spec: not valid JSON ({exc})") from None
    except OSError as exc:
        raise DataFormatError(f"cannot read {args.spec}: {exc}") from exc
    try:
        spec = ExperimentSpec.from_dict(raw)
    except (PreconditionError, TypeError) as exc:
        raise PreconditionError(f"invalid experiment spec: {exc}") from None
    cores = args.cores if args.cores is not None else _default_cores()

    def progress(done, total):
        if not args.quiet:
            print(f"\rchunks {done}/{total}", end="" if done < total else "\n", file=sys.stderr, flush=True)

    result = run_experiment(spec, cores=cores, progress=progress)
    text = result.to_json() + "\n" if args.format == "json" else result.to_csv()
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        return ""
    return text


def _timing(ms: float) -> None:
    print(f"wall time: {ms:.0f} ms", file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {"estimate": cmd_estimate, "interval": cmd_interval, "simulate": cmd_simulate}[args.command]
    fmt = getattr(args, "format", "plain")
    try:
        out = handler(args)
    except (DataFormatError, OSError) as exc:
        return _fail(fmt, "io", exc, EXIT_IO)
    except DegenerateDataError as exc:
        return _fail(fmt, "degenerate", exc, EXIT_DEGENERATE)
    except PreconditionError as exc:
        return _fail(fmt, "precondition", exc, EXIT_PRECONDITION)
    sys.stdout.write(out)
    return EXIT_OK


def _fail(fmt: str, kind: str, exc: Exception, code: int) -> int:
    if fmt == "json":
        print(json.dumps({"error": {"type": kind, "message": str(exc)}}))
    print(f"kalpha: error: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
