"""Command-line entry point: ``shufflepriv {calibrate,simulate,sweep,moments,audit}``.

Exit codes: 0 success, 1 runtime error, 2 validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from shufflepriv import harness
from shufflepriv.errors import AmplificationInvalidError, CalibrationError, InvalidParameterError, TruncationError

EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION = 0, 1, 2


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--protocol", choices=harness.PROTOCOLS, default="p1")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--alpha", type=float, default=0.4)
    p.add_argument("--eps", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=0.01)
    p.add_argument("--n", type=float, default=None, help="override the planner's sample size")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alt", dest="alternative", default="uniform",
                   help="uniform | paninski:FACTOR | file:PATH")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--repeat", type=int, default=1, help="majority vote over R protocol runs per trial")
    p.add_argument("--safety-const", type=float, default=harness.ghr.DEFAULT_SAFETY_CONST)
    p.add_argument("--lam", type=float, default=None, help="force the p1 noise rate")
    p.add_argument("--eps-l", type=float, default=None, help="force the local epsilon (p2, ldp-only)")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--format", choices=("json", "csv"), default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shufflepriv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()
    sub.add_parser("calibrate", parents=[common], help="print calibrated parameters")
    sub.add_parser("simulate", parents=[common], help="run Monte Carlo protocol trials")
    sw = sub.add_parser("sweep", parents=[common], help="accept/reject rates over a grid of n")
    sw.add_argument("--grid", default="auto", help="comma-separated n values, or 'auto'")
    sub.add_parser("moments", parents=[common], help="analytic vs empirical moments of Z (p1)")
    au = sub.add_parser("audit", parents=[common], help="privacy certificates and trace diagnostics")
    au.add_argument("--matrix", type=Path, default=None, help="whitespace-separated channel matrix to audit")
    return parser


def _config(args) -> harness.ExperimentConfig:
    keys = harness.ExperimentConfig.__dataclass_fields__
    return harness.ExperimentConfig(**{k: v for k, v in vars(args).items() if k in keys})


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _text_table(table: dict) -> str:
    lines = []
    for key, value in table.items():
        if key == "robust_profile":
            for row in value:
                lines.append("robust " + "  ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                                                   for k, v in row.items()))
        else:
            lines.append(f"{key:>14}  {value:.10g}" if isinstance(value, float) else f"{key:>14}  {value}")
    return "\n".join(lines) + "\n"


def cmd_calibrate(args) -> int:
    table = harness.calibration_table(harness.resolve(_config(args)))
    payload = {"schema_version": harness.SCHEMA_VERSION, "command": "calibrate", "calibration": table}
    if args.format == "json":
        _emit(_dump(payload), args.out)
    else:
        sys.stdout.write(_text_table(table))
        if args.out is not None:
            args.out.write_text(_dump(payload))
    return EXIT_OK


def cmd_simulate(args) -> int:
    report = harness.simulate(_config(args))
    _emit(report.records_csv() if args.format == "csv" else report.to_json(), args.out)
    agg = report.aggregates
    logging.getLogger(__name__).info("accept rate %.4f over %d trials", agg["accept_rate"], agg["trials"])
    return EXIT_OK


def _parse_grid(text: str, config: harness.ExperimentConfig) -> list[float]:
    if text.strip() == "auto":
        return harness.auto_grid(config)
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InvalidParameterError(f"bad grid {text!r}") from None


def cmd_sweep(args) -> int:
    config = _config(args)
    result = harness.sweep(config, _parse_grid(args.grid, config))
    if args.format == "json":
        _emit(_dump({"schema_version": harness.SCHEMA_VERSION, "command": "sweep",
                     "rows": [asdict(r) for r in result.rows], "min_n": result.min_n}), args.out)
    else:
        _emit(result.to_csv(), args.out)
    print(f"smallest passing n: {result.min_n}", file=sys.stderr)
    return EXIT_OK


def cmd_moments(args) -> int:
    table = harness.moments(_config(args))
    payload = {"schema_version": harness.SCHEMA_VERSION, "command": "moments", **table}
    if args.format == "json" or args.out is not None:
        _emit(_dump(payload), args.out)
    if args.format != "json":
        sys.stdout.write(_text_table(table))
    return EXIT_OK


def cmd_audit(args) -> int:
    matrix = harness.load_matrix(str(args.matrix)) if args.matrix is not None else None
    report = harness.run_audit(_config(args), matrix)
    if args.format == "json" or args.out is not None:
        _emit(_dump(report), args.out)
    if args.format != "json":
        for ch in report["checks"]:
            flag = "ok  " if ch["passed"] else "FLAG"
            detail = "  ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                               for k, v in ch.items() if k not in ("check", "passed"))
            print(f"{flag} {ch['check']:<18} {detail}")
    return EXIT_OK


COMMANDS = {"calibrate": cmd_calibrate, "simulate": cmd_simulate, "sweep": cmd_sweep,
            "moments": cmd_moments, "audit": cmd_audit}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except InvalidParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (AmplificationInvalidError, CalibrationError, TruncationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
