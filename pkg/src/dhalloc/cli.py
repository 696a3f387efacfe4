"""Command-line front end.

Every output file starts with the fully resolved configuration, so a run
can be repeated from its own output. JSON is used for structured results,
CSV (chosen by a ``.csv`` extension on ``--out``) for per-level tables.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys

from . import __version__
from .core import ConfigError, ConsistencyError, RngStream, SimConfig, STRATEGIES, is_prime, next_prime_at_least
from .coupling import CouplingConfig, default_delta, extra_ball_tally, run_coupling
from .eta import eta_expectation_audit
from .experiments import compare_strategies, max_load_study, run_trials
from .fluid import solution_rows, solve_fluid

SCHEMA_VERSION = 1

log = logging.getLogger("dhalloc")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _prime(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if n < 2 or not is_prime(n):
        hint = next_prime_at_least(max(n, 2))
        raise argparse.ArgumentTypeError(f"n={n} is not prime; the next prime is {hint} (use --n {hint})")
    return n


def _prime_list(text: str) -> list:
    return [_prime(tok.strip()) for tok in text.split(",") if tok.strip()]


def _seed(text: str) -> int:
    s = int(text, 0)
    if not 0 <= s < 1 << 64:
        raise argparse.ArgumentTypeError("seed must be in [0, 2^64)")
    return s


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="dhalloc", description=__doc__.splitlines()[0], formatter_class=fmt)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, n=True, T=True, seed=True):
        if n:
            sp.add_argument("--n", type=_prime, required=True, help="number of bins (prime)")
        sp.add_argument("--d", type=int, default=2, help="choices per ball")
        if T:
            sp.add_argument("--T", type=float, default=1.0, help="balls per bin; m = floor(T*n)")
        if seed:
            sp.add_argument("--seed", type=_seed, default=0, help="64-bit base seed")
        sp.add_argument("--out", default=None, help="output path (.csv for a table, else JSON); stdout if omitted")

    sp = sub.add_parser("simulate", help="batch of independent runs vs the fluid limit", formatter_class=fmt)
    common(sp)
    sp.add_argument("--strategy", choices=STRATEGIES, default="double",
                    help="placement rule (single ignores --d)")
    sp.add_argument("--trials", type=int, default=10, help="independent runs")
    sp.add_argument("--threads", type=int, default=1, help="parallel trials")

    sp = sub.add_parser("fluid", help="solve the fluid-limit ODEs", formatter_class=fmt)
    common(sp, n=False, seed=False)
    sp.add_argument("--imax", type=int, default=20, help="highest load level tracked")
    sp.add_argument("--dt", type=float, default=1e-4, help="RK4 step")
    sp.add_argument("--perturb-n", type=int, default=None,
                    help="use the modified-process drift for this n (default: off)")

    sp = sub.add_parser("couple", help="run the double-hashing coupling", formatter_class=fmt)
    common(sp)
    sp.add_argument("--delta", type=float, default=None, help="coupling slack (default n^-0.01)")
    sp.add_argument("--trace", default=None, help="write per-step trace as JSON lines")

    sp = sub.add_parser("audit-eta", help="average exact eta by ordered position", formatter_class=fmt)
    common(sp, T=False)
    sp.add_argument("--samples", type=int, default=1000, help="random rankings averaged")

    sp = sub.add_parser("compare", help="two strategies on identical settings", formatter_class=fmt)
    common(sp)
    sp.add_argument("--strategy-a", choices=STRATEGIES, default="double", help="first strategy")
    sp.add_argument("--strategy-b", choices=STRATEGIES, default="random", help="second strategy")
    sp.add_argument("--trials", type=int, default=10, help="runs per strategy")
    sp.add_argument("--threads", type=int, default=1, help="parallel trials")

    sp = sub.add_parser("maxload", help="max load across table sizes", formatter_class=fmt)
    common(sp, n=False)
    sp.add_argument("--n-list", type=_prime_list, required=True, help="comma-separated primes")
    sp.add_argument("--trials", type=int, default=10, help="runs per table size")
    sp.add_argument("--strategy", choices=STRATEGIES, default="double", help="placement rule")
    sp.add_argument("--threads", type=int, default=1, help="parallel trials")
    return p


def _write(out, command: str, config: dict, result: dict, header=None, rows=None) -> None:
    if out and out.endswith(".csv") and rows is not None:
        buf = io.StringIO()
        buf.write(f"# schema_version: {SCHEMA_VERSION}\n")
        buf.write(f"# command: {command}\n")
        buf.write(f"# config: {json.dumps(config, sort_keys=True)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        text = buf.getvalue()
    else:
        doc = {"schema_version": SCHEMA_VERSION, "command": command, "config": config, "result": result}
        text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _cmd_simulate(a):
    cfg = SimConfig(n=a.n, d=a.d, T=a.T, seed=a.seed, strategy=a.strategy)
    rep = run_trials(cfg, a.trials, threads=a.threads)
    conf = dict(cfg.to_dict(), trials=a.trials, threads=a.threads)
    _write(a.out, "simulate", conf, rep.to_dict(), rep.row_header, rep.rows())


def _cmd_fluid(a):
    sol = solve_fluid(a.d, a.T, i_max=a.imax, dt=a.dt, perturb_n=a.perturb_n)
    conf = {"d": a.d, "T": a.T, "imax": a.imax, "dt": a.dt, "perturb_n": a.perturb_n}
    header = ["t"] + [f"x_{i}" for i in range(1, a.imax + 1)]
    result = {"t": sol.T, "final": sol.final()[1:].tolist()}
    _write(a.out, "fluid", conf, result, header, solution_rows(sol))


def _cmd_couple(a):
    base = SimConfig(n=a.n, d=a.d, T=a.T, seed=a.seed, strategy="double")
    delta = a.delta if a.delta is not None else default_delta(a.n)
    cc = CouplingConfig(base, delta=delta, keep_trace=a.trace is not None)
    res = run_coupling(cc)
    summary = res.summary()
    if res.failed_at is None:
        summary["tally"] = extra_ball_tally(res, base.m, delta)
    if a.trace:
        with open(a.trace, "w") as fh:
            res.write_trace(fh)
    conf = dict(base.to_dict(), delta=delta, total_balls=cc.total_balls)
    del conf["strategy"]
    _write(a.out, "couple", conf, summary)


def _cmd_audit(a):
    SimConfig(n=a.n, d=a.d)
    audit = eta_expectation_audit(a.n, a.d, a.samples, RngStream(a.seed, "audit"))
    conf = {"n": a.n, "d": a.d, "samples": a.samples, "seed": a.seed}
    _write(a.out, "audit-eta", conf, audit.to_dict(),
           ["j", "formula_mean", "empirical_mean", "stderr"], audit.rows())


def _cmd_compare(a):
    ca = SimConfig(n=a.n, d=a.d, T=a.T, seed=a.seed, strategy=a.strategy_a)
    cb = ca.with_(strategy=a.strategy_b)
    cmp = compare_strategies(ca, cb, a.trials, threads=a.threads)
    conf = dict(ca.to_dict(), strategy_a=a.strategy_a, strategy_b=a.strategy_b,
                trials=a.trials, threads=a.threads)
    del conf["strategy"]
    _write(a.out, "compare", conf, cmp.to_dict(), cmp.row_header, cmp.rows())


def _cmd_maxload(a):
    for n in a.n_list:
        SimConfig(n=n, d=a.d)
    study = max_load_study(a.n_list, a.d, a.T, a.trials, a.strategy, seed=a.seed, threads=a.threads)
    conf = {"n_list": a.n_list, "d": a.d, "T": a.T, "trials": a.trials,
            "strategy": a.strategy, "seed": a.seed, "threads": a.threads}
    _write(a.out, "maxload", conf, study.to_dict(), study.row_header, study.rows())


COMMANDS = {
    "simulate": _cmd_simulate,
    "fluid": _cmd_fluid,
    "couple": _cmd_couple,
    "audit-eta": _cmd_audit,
    "compare": _cmd_compare,
    "maxload": _cmd_maxload,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ConfigError, ValueError) as e:
        print(f"dhalloc {args.command}: {e}", file=sys.stderr)
        return 1
    except ConsistencyError as e:
        print(f"dhalloc {args.command}: internal consistency error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
