"""Command-line front end.

Subcommands:
    verify <ir-file>        static verification of a program (exit 0 iff accepted)
    run <scenario-file>     run one benchmark scenario, print the table
    bench [--csv PATH]      run the default comparison suite, emit CSV
    breakeven --O --os --of print the break-even work window
    lifecycle               register/invoke/fork/deregister demo

Exit codes: 0 success, 1 verification rejection, 2 usage error,
3 internal invariant breach.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from .bench import (
    LifecycleConfig,
    default_scenarios,
    load_scenario,
    report_to_csv,
    report_to_text,
    run_scenario,
    run_suite,
    run_lifecycle_demo,
)
from .costs import BreakevenInputs, CostParameters, breakeven, load_parameter_file
from .errors import CostConfigError, ParseError, ScenarioError, SimulatorBug, SimulatorError
from .ir import parse_program
from .verifier import verify

EXIT_OK = 0
EXIT_REJECTED = 1
EXIT_USAGE = 2
EXIT_INTERNAL = 3


def _number(value: Optional[float]) -> str:
    return f"{value:.10g}"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fastcall-sim",
        description="Deterministic fastcall mechanism simulator and latency model",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_verify = sub.add_parser("verify", help="statically verify a program file")
    p_verify.add_argument("ir_file")
    p_verify.add_argument("--ceiling", type=float, default=None,
                          help="worst-case execution budget in ns (default 5700)")
    p_verify.add_argument("--params", default=None, help="cost parameter override file")

    p_run = sub.add_parser("run", help="run one scenario file")
    p_run.add_argument("scenario_file")
    p_run.add_argument("--params", default=None)
    p_run.add_argument("--csv", default=None, help="also write the report as CSV")

    p_bench = sub.add_parser("bench", help="run the default comparison suite")
    p_bench.add_argument("--csv", default=None, help="write CSV to this path (default stdout)")
    p_bench.add_argument("--params", default=None)

    p_breakeven = sub.add_parser("breakeven", help="work window where fastcalls pay off")
    p_breakeven.add_argument("--O", dest="overhead_fraction", type=float, required=True,
                             help="negligible-overhead fraction, e.g. 0.05")
    p_breakeven.add_argument("--os", dest="syscall_overhead", type=float, required=True,
                             help="syscall overhead in ns")
    p_breakeven.add_argument("--of", dest="fastcall_overhead", type=float, required=True,
                             help="fastcall overhead in ns")

    p_life = sub.add_parser("lifecycle", help="register/invoke/fork/deregister demo")
    p_life.add_argument("--registrations", type=int, default=3)
    p_life.add_argument("--invocations", type=int, default=2)
    p_life.add_argument("--provider", default="noop")
    p_life.add_argument("--params", default=None)

    return parser


def _load_params(path: Optional[str]) -> CostParameters:
    if path is None:
        return CostParameters()
    return load_parameter_file(path)


def _cmd_verify(args) -> int:
    try:
        with open(args.ir_file, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    params = _load_params(args.params)
    ceiling = args.ceiling if args.ceiling is not None else params.wcet_ceiling_ns
    try:
        program = parse_program(text, name=args.ir_file)
    except ParseError as exc:
        print(f"parse error: {exc}")
        print("rejected")
        return EXIT_REJECTED
    report = verify(program, ceiling, params)
    print(f"instructions: {len(program.instructions)}")
    print(f"wcet_ns: {_number(report.wcet_ns)} (ceiling {_number(ceiling)})")
    print(f"max_path_len: {report.max_path_len}")
    for violation in report.violations:
        print(f"violation at {violation.index}: [{violation.rule}] {violation.message}")
    print("accepted" if report.accepted else "rejected")
    return EXIT_OK if report.accepted else EXIT_REJECTED


def _cmd_run(args) -> int:
    params = _load_params(args.params)
    scenario = load_scenario(args.scenario_file)
    report = run_scenario(scenario, params)
    print(report_to_text(report), end="")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            fh.write(report_to_csv(report))
    return EXIT_OK


def _cmd_bench(args) -> int:
    params = _load_params(args.params)
    report = run_suite(default_scenarios(), params)
    csv_text = report_to_csv(report)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            fh.write(csv_text)
        print(report_to_text(report), end="")
        print(f"wrote {args.csv}")
    else:
        print(csv_text, end="")
    return EXIT_OK


def _cmd_breakeven(args) -> int:
    inputs = BreakevenInputs(
        overhead_fraction=args.overhead_fraction,
        syscall_overhead_ns=args.syscall_overhead,
        fastcall_overhead_ns=args.fastcall_overhead,
    )
    window = breakeven(inputs)
    print(f"w_max={_number(window.w_max_ns)} w_min={_number(window.w_min_ns)}")
    return EXIT_OK


def _cmd_lifecycle(args) -> int:
    params = _load_params(args.params)
    config = LifecycleConfig(
        provider=args.provider,
        registrations=args.registrations,
        invocations_per_entry=args.invocations,
    )
    report = run_lifecycle_demo(config, params)
    print(report.render(), end="")
    return EXIT_OK


_COMMANDS = {
    "verify": _cmd_verify,
    "run": _cmd_run,
    "bench": _cmd_bench,
    "breakeven": _cmd_breakeven,
    "lifecycle": _cmd_lifecycle,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return _COMMANDS[args.command](args)
    except SimulatorBug as exc:
        print(f"internal invariant breach: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (ScenarioError, CostConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SimulatorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry() -> None:  # console-script hook
    sys.exit(main())


if __name__ == "__main__":
    entry()
