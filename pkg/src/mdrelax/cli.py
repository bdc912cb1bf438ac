"""Command line interface: ``mdrelax growth|convergence|gamma-trace|tableau dump|plot``.

Run settings come from an optional JSON file (``--config``) whose keys are
the ``RunSpec`` field names; command line flags override it.  The exit
status is 1 when a run aborts before reaching its end time.
"""

from __future__ import annotations

import argparse
import sys

from .errors import InsufficientAsymptoticRange, MalformedCSV, UnknownTableau
from .harness import (RunSpec, cmd_convergence, cmd_gamma_trace, cmd_growth, cmd_plot,
                      tableau_dump, write_trajectory)
from .hbpc import CORRECTOR_SCALINGS, QUADRATURE_SOURCES
from .tableau import BUILTINS

EXIT_ABORTED = 1
EXIT_USAGE = 2

# flag -> RunSpec field
FLAG_FIELDS = {
    "problem": "problem",
    "tableau": "tableau",
    "kmax": "kmax",
    "relaxed": "relaxed",
    "dt": "dt",
    "tend": "T_end",
    "out": "output_dir",
    "functional": "functional",
    "corrector_scaling": "corrector_scaling",
    "quadrature_source": "quadrature_source",
    "backend": "backend",
}


def _add_run_flags(p, multi_dt=False):
    p.add_argument("--config", help="JSON file with RunSpec fields")
    p.add_argument("--problem", choices=["oscillator", "kepler"])
    p.add_argument("--tableau", choices=sorted(BUILTINS))
    p.add_argument("--kmax", type=int)
    p.add_argument("--relaxed", action=argparse.BooleanOptionalAction, default=None)
    if multi_dt:
        p.add_argument("--dt", type=float, nargs="+", help="step sizes (default: 6 halvings)")
    else:
        p.add_argument("--dt", type=float)
    p.add_argument("--tend", type=float)
    p.add_argument("--out", help="output directory")
    p.add_argument("--functional", choices=["default", "angular_momentum", "hamiltonian"])
    p.add_argument("--corrector-scaling", choices=CORRECTOR_SCALINGS)
    p.add_argument("--quadrature-source", choices=QUADRATURE_SOURCES)
    p.add_argument("--backend", choices=["auto", "python", "compiled"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdrelax", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("growth", help="error and functional against time (t,error,eta)")
    _add_run_flags(p)
    p.add_argument("--trajectory", help="also write t,error,eta,gamma,newton_iters here")

    p = sub.add_parser("convergence", help="final error against dt (dt,error,eta_drift)")
    _add_run_flags(p, multi_dt=True)

    p = sub.add_parser("gamma-trace", help="relaxation parameter per step (t,gamma)")
    _add_run_flags(p)

    p = sub.add_parser("tableau", help="tableau utilities")
    tsub = p.add_subparsers(dest="action", required=True)
    d = tsub.add_parser("dump", help="print a builtin tableau as JSON")
    d.add_argument("--name", required=True)

    p = sub.add_parser("plot", help="write a matplotlib script for harness CSVs")
    p.add_argument("kind", choices=["growth", "convergence"])
    p.add_argument("csv", nargs="+")
    p.add_argument("--out", help="script path (default: stdout)")
    return parser


def spec_from_args(args) -> RunSpec:
    doc = {}
    if args.config:
        doc.update(RunSpec.from_json(args.config).to_dict())
    for flag, name in FLAG_FIELDS.items():
        val = getattr(args, flag, None)
        if val is not None:
            doc[name] = val
    return RunSpec.from_dict(doc)


def _report_outcome(outcome, what):
    print(f"wrote {outcome.path}")
    if outcome.newton_failures:
        print(f"warning: Newton did not converge in {outcome.newton_failures} stage solves",
              file=sys.stderr)
    if not outcome.completed:
        exc = outcome.failure
        print(f"{what} aborted at t = {exc.t:.6g}: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_ABORTED
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "tableau":
            print(tableau_dump(args.name))
            return 0
        if args.command == "plot":
            script = cmd_plot(args.csv, args.kind, out=args.out)
            if args.out:
                print(f"wrote {args.out}")
            else:
                print(script)
            return 0
        spec = spec_from_args(args)
        if args.command == "growth":
            outcome = cmd_growth(spec)
            if args.trajectory:
                write_trajectory(outcome.trajectory, args.trajectory)
            return _report_outcome(outcome, "run")
        if args.command == "gamma-trace":
            return _report_outcome(cmd_gamma_trace(spec), "run")
        report = cmd_convergence(spec)
        print(f"wrote {report.path}")
        for dt, err, drift in report.rows:
            print(f"  dt={dt:<12.6g} error={err:.3e} eta_drift={drift:.3e}")
        print(report.summary())
        return 0
    except (UnknownTableau, MalformedCSV, InsufficientAsymptoticRange, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
