"""Command-line front end.

Exit status is 0 on success, 2 for bad input or usage, 1 for internal
failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys

import numpy as np

from . import __version__
from .core import FLAG_NAMES, read_csv
from .errors import CqregError, SolverError, UserError
from .estimator import FitConfig, fit
from .inference import bootstrap
from .oracles import increments, kaplan_meier, nelson_aalen
from .simulation import SimulationAborted, run_monte_carlo


class UsageError(Exception):
    pass


def dumps(obj, indent=0) -> str:
    """JSON text with floats written to 17 significant digits.

    Non-finite floats become ``null``.
    """
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_str(str(k))}: {dumps(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist(), indent)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return "%.17g" % v if math.isfinite(v) else "null"
    return _str(str(obj))


def _str(s):
    out = ['"']
    for ch in s:
        if ch in '"\\':
            out.append("\\" + ch)
        elif ord(ch) < 0x20:
            out.append("\\u%04x" % ord(ch))
        else:
            out.append(ch)
    out.append('"')
    return "".join(out)


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _load(args):
    src = sys.stdin if args.input == "-" else args.input
    return read_csv(src, log_time=getattr(args, "log_time", False))


def _prob_list(text):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"cannot parse probabilities {text!r}") from None
    if not vals or any(not (0.0 <= v < 1.0) for v in vals):
        raise UsageError(f"probabilities must lie in [0, 1): {text!r}")
    return vals


def _metadata(args, ds, seed=None):
    return {"input": args.input, "n": ds.n, "p": ds.p, "columns": list(ds.names),
            "seed": seed, "version": __version__}


def _process_block(proc):
    return {
        "breakpoints": proc.breakpoints.tolist(),
        "coefficients": proc.coefficients.tolist(),
        "tau_end": proc.tau_end,
        "flags": [FLAG_NAMES[int(f)] for f in proc.round_flags],
        "relative_breakpoints": proc.weight_trace.lambdas.tolist(),
        "status": proc.status,
    }


def cmd_fit(args):
    ds = _load(args)
    proc = fit(ds, FitConfig(tau_max=args.tau_max))
    doc = {"metadata": _metadata(args, ds), "process": _process_block(proc)}
    _write(args.output, dumps(doc) + "\n")
    if args.process_csv:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tau_lo", "tau_hi", "flag"] + list(ds.names))
        hi = np.append(proc.breakpoints[1:], proc.tau_end)
        for k in range(proc.breakpoints.size):
            w.writerow(["%.17g" % proc.breakpoints[k], "%.17g" % min(hi[k], 1.0),
                        FLAG_NAMES[int(proc.round_flags[k])]]
                       + ["%.17g" % v for v in proc.coefficients[k]])
        _write(args.process_csv, buf.getvalue())
    return 0


def cmd_se(args):
    ds = _load(args)
    taus = _prob_list(args.taus)
    trim = None
    if args.trim:
        t = [float(v) for v in args.trim.split(",")]
        if len(t) != 2:
            raise UsageError("--trim expects tau1,tau2")
        trim = (t[0], t[1])
    config = FitConfig(tau_max=args.tau_max)
    proc = fit(ds, config)
    bs = bootstrap(ds, taus, B=args.boot, seed=args.seed, config=config, trim=trim,
                   ci_method=args.ci, point_fit=proc)
    doc = {"metadata": _metadata(args, ds, args.seed), "process": _process_block(proc),
           "bootstrap": bs.to_dict()}
    _write(args.output, dumps(doc) + "\n")
    return 0


def cmd_simulate(args):
    if args.reps < 2:
        raise UsageError("--reps must be at least 2")
    if args.n < 2:
        raise UsageError("--n must be at least 2")
    taus = _prob_list(args.taus) if args.taus else None
    rep = run_monte_carlo(args.scenario, n=args.n, reps=args.reps, taus=taus, B=args.boot,
                          seed=args.seed)
    doc = {"metadata": {"seed": args.seed, "version": __version__}, "report": rep.to_dict(),
           "table": rep.table().splitlines()}
    _write(args.output, dumps(doc) + "\n")
    if args.table:
        _write(args.table, rep.table() + "\n")
    elif args.output not in (None, "-"):
        sys.stdout.write(rep.table() + "\n")
    return 0


def cmd_km(args):
    ds = _load(args)
    if ds.p != 1:
        raise UsageError(f"km expects time,status only; found covariates {list(ds.names[1:])}")
    F = kaplan_meier(ds)
    H = nelson_aalen(ds)
    mass = float(F.values[-1]) if F.values.size else 0.0
    starts = np.concatenate([[0.0], F.values[:-1]]) if F.values.size else np.zeros(0)
    keep = F.values > starts  # drop zero-mass jumps (none for product-limit, kept for safety)
    doc = {
        "metadata": _metadata(args, ds),
        "distribution": {"times": F.jump_points.tolist(), "F": F.values.tolist()},
        "nelson_aalen": {"times": H.jump_points.tolist(),
                         "increments": increments(H).tolist(),
                         "cumulative": H.values.tolist()},
        "inverse": {"tau": starts[keep].tolist(), "time": F.jump_points[keep].tolist(),
                    "total_mass": mass, "last_followup": float(ds.x.max())},
    }
    _write(args.output, dumps(doc) + "\n")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="cqreg",
                                 description="Censored quantile regression processes.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit the coefficient process")
    f.add_argument("--input", required=True, help="CSV path or - for stdin")
    f.add_argument("--log-time", action="store_true", help="log-transform the time column")
    f.add_argument("--tau-max", type=float, default=None)
    f.add_argument("--output", default="-")
    f.add_argument("--process-csv", default=None, help="write segment table as CSV")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("se", help="bootstrap standard errors")
    s.add_argument("--input", required=True)
    s.add_argument("--log-time", action="store_true")
    s.add_argument("--taus", required=True, help="comma-separated probabilities")
    s.add_argument("--boot", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trim", default=None, help="tau1,tau2 for the trimmed-mean effect")
    s.add_argument("--tau-max", type=float, default=None)
    s.add_argument("--ci", choices=("wald", "percentile"), default="wald")
    s.add_argument("--output", default="-")
    s.set_defaults(func=cmd_se)

    m = sub.add_parser("simulate", help="Monte Carlo experiment")
    m.add_argument("--scenario", type=int, choices=(1, 2, 3), required=True)
    m.add_argument("--n", type=int, default=200)
    m.add_argument("--reps", type=int, default=200)
    m.add_argument("--boot", type=int, default=0)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--taus", default=None)
    m.add_argument("--output", default="-")
    m.add_argument("--table", default=None, help="also write the text table here")
    m.set_defaults(func=cmd_simulate)

    k = sub.add_parser("km", help="one-sample product-limit summaries")
    k.add_argument("--input", required=True)
    k.add_argument("--output", default="-")
    k.set_defaults(func=cmd_km)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, UserError, OSError) as exc:
        print(f"cqreg: error: {exc}", file=sys.stderr)
        return 2
    except (SimulationAborted, SolverError, CqregError) as exc:
        print(f"cqreg: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
