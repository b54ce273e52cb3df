"""Benchmark harness: scenario configs, comparison tables, CSV reports.

A scenario names a workload, the mechanisms and mitigation settings to
compare, and an iteration count.  Mechanism latencies are model-driven:
vDSO/syscall/ioctl rows are mechanism overhead plus the workload's work
constant, while fastcall rows come from actually registering the workload's
entry and dispatching every iteration through the syscall entry path, which
also exercises the verified program against the device models so byte-level
device state can be checked against the outcome counts.

Scenario files are INI-style text::

    [scenario]
    name = nvme-smoke
    workload = nvme_submit        # noop|copy64|ntcopy64|net_send|nvme_submit|rate_limited
    mechanisms = fastcall         # comma separated
    settings = full               # full|no_kpti|off
    iterations = 10

    [provider]                    # passed through to the provider
    queue_depth = 1024

CSV reports have the fixed header
``scenario,mechanism,setting,latency_ns,speedup_vs_fastcall,flag``; cells
whose overhead constant has no published value are emitted with empty
latency/speedup and flag ``config-required`` instead of an invented number.
"""

from __future__ import annotations

import configparser
import io
import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .costs import CostParameters, Mechanism, MitigationSetting
from .dispatch import NR_FASTCALL, NR_IOCTL, OutcomeKind, Simulator
from .errors import LifecycleAssertionError, ScenarioError
from .memory import AccessDomain
from .providers import (
    RegistrationRequest,
    build_packet_header,
    builtin_registry,
    register,
)

WORKLOADS = ("noop", "copy64", "ntcopy64", "net_send", "nvme_submit", "rate_limited")
POLICY_WORKLOADS = frozenset(("net_send", "nvme_submit", "rate_limited"))
DEVICE_WORKLOADS = frozenset(("net_send", "nvme_submit"))

CSV_HEADER = "scenario,mechanism,setting,latency_ns,speedup_vs_fastcall,flag"

_MECHANISM_ORDER = (Mechanism.VDSO, Mechanism.FASTCALL, Mechanism.SYSCALL, Mechanism.IOCTL)
_SETTING_ORDER = (MitigationSetting.FULL, MitigationSetting.NO_KPTI, MitigationSetting.OFF)


@dataclass(frozen=True)
class Scenario:
    name: str
    workload: str
    mechanisms: tuple[Mechanism, ...]
    settings: tuple[MitigationSetting, ...]
    iterations: int
    provider_params: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.workload not in WORKLOADS:
            raise ScenarioError(f"unknown workload {self.workload!r}")
        if self.iterations <= 0:
            raise ScenarioError("iterations must be positive")
        if not self.mechanisms or not self.settings:
            raise ScenarioError("need at least one mechanism and one setting")
        if self.workload in POLICY_WORKLOADS and set(self.mechanisms) != {Mechanism.FASTCALL}:
            raise ScenarioError(
                f"workload {self.workload!r} is provider-backed and only runs as fastcall"
            )
        if self.workload == "net_send":
            depth = int(str(self.provider_params.get("ring_depth", 1024)), 0)
            if self.iterations > depth:
                raise ScenarioError(
                    f"net_send fills one TX ring slot per grant: iterations ({self.iterations}) "
                    f"must not exceed ring_depth ({depth})"
                )


@dataclass(frozen=True)
class BenchRow:
    scenario: str
    mechanism: Mechanism
    setting: MitigationSetting
    latency_ns: Optional[float]
    speedup_vs_fastcall: Optional[float]
    flag: str  # "ok" or "config-required"
    outcome_counts: Mapping[str, int]
    drained_records: tuple[bytes, ...] = ()


@dataclass(frozen=True)
class BenchReport:
    rows: tuple[BenchRow, ...]


def _exact_mean(values: Sequence[float]) -> float:
    first = values[0]
    if all(v == first for v in values):
        return first
    return sum(values) / len(values)


def _workload_work_ns(workload: str, params: CostParameters) -> float:
    if workload == "copy64":
        return params.work_copy64_ns
    if workload == "ntcopy64":
        return params.work_ntcopy64_ns
    return 0.0


def _prepare_app_input(sim: Simulator, pid, entry, workload: str, params: Mapping[str, str], i: int):
    """Per-iteration application-side writes into the shared buffer."""
    if workload in ("copy64", "ntcopy64"):
        region = entry.bindings["s0"]
        blob = struct.pack("<QQQQQQQQ", *(i + k for k in range(8)))
        sim.space(pid).write(AccessDomain.USER, region.base, blob)
    elif workload == "net_send":
        region = entry.bindings["s0"]
        dest = str(params.get("send_ip", params["allowed_ip"]))
        header = build_packet_header(dest, payload=struct.pack("<Q", i))
        sim.space(pid).write(AccessDomain.USER, region.base, header)
    elif workload == "nvme_submit":
        region = entry.bindings["s0"]
        command = struct.pack("<Q", i).ljust(64, bytes([i & 0xFF]))
        sim.space(pid).write(AccessDomain.USER, region.base, command)


def _run_fastcall_cell(scenario: Scenario, setting: MitigationSetting, params: CostParameters):
    sim = Simulator(params, mitigation=setting)
    pid = f"{scenario.name}-{setting.value}"
    sim.create_process(pid)
    result = register(
        sim,
        RegistrationRequest(pid, scenario.workload, dict(scenario.provider_params)),
        builtin_registry(),
    )
    if not result.granted:
        raise ScenarioError(
            f"provider {scenario.workload!r} denied scenario setup: {result.deny_reason}"
        )
    entry = sim.table(pid).entries[result.index]

    latencies = []
    counts: Counter[str] = Counter()
    for i in range(scenario.iterations):
        _prepare_app_input(sim, pid, entry, scenario.workload, scenario.provider_params, i)
        res = sim.syscall_entry(pid, NR_FASTCALL, [result.index, i, 0, 0, 0, 0], setting)
        counts[res.outcome.value] += 1
        latencies.append(res.modeled_latency_ns)

    drained: tuple[bytes, ...] = ()
    if scenario.workload in DEVICE_WORKLOADS:
        drained = tuple(entry.bindings["s1"].device.drain())
    return _exact_mean(latencies), dict(counts), drained


def _run_routed_cell(scenario: Scenario, mechanism: Mechanism, setting: MitigationSetting,
                     params: CostParameters, work_ns: float):
    sim = Simulator(params, mitigation=setting)
    pid = f"{scenario.name}-{mechanism.value}-{setting.value}"
    sim.create_process(pid)
    number = NR_IOCTL if mechanism is Mechanism.IOCTL else 1
    latencies = []
    counts: Counter[str] = Counter()
    for i in range(scenario.iterations):
        res = sim.syscall_entry(pid, number, [i, 0, 0, 0, 0, 0], setting)
        counts[res.outcome.value] += 1
        latencies.append(res.modeled_latency_ns + work_ns)
    return _exact_mean(latencies), dict(counts)


def run_scenario(scenario: Scenario, params: Optional[CostParameters] = None) -> BenchReport:
    """Execute one scenario across its mechanism/setting grid."""
    params = params if params is not None else CostParameters()
    work_ns = _workload_work_ns(scenario.workload, params)
    rows: list[BenchRow] = []

    for setting in _SETTING_ORDER:
        if setting not in scenario.settings:
            continue
        cells: dict[Mechanism, BenchRow] = {}
        for mechanism in _MECHANISM_ORDER:
            if mechanism not in scenario.mechanisms:
                continue
            if not params.has_overhead(mechanism, setting):
                cells[mechanism] = BenchRow(
                    scenario.name, mechanism, setting,
                    latency_ns=None, speedup_vs_fastcall=None,
                    flag="config-required", outcome_counts={},
                )
                continue
            if mechanism is Mechanism.FASTCALL:
                latency, counts, drained = _run_fastcall_cell(scenario, setting, params)
                cells[mechanism] = BenchRow(
                    scenario.name, mechanism, setting, latency, None, "ok", counts, drained,
                )
            elif mechanism is Mechanism.VDSO:
                latency = params.latency(mechanism, setting, work_ns)
                cells[mechanism] = BenchRow(
                    scenario.name, mechanism, setting, latency, None, "ok",
                    {OutcomeKind.RETURN.value: scenario.iterations},
                )
            else:
                latency, counts = _run_routed_cell(scenario, mechanism, setting, params, work_ns)
                cells[mechanism] = BenchRow(
                    scenario.name, mechanism, setting, latency, None, "ok", counts,
                )

        fastcall_row = cells.get(Mechanism.FASTCALL)
        fastcall_latency = fastcall_row.latency_ns if fastcall_row is not None else None
        for mechanism in _MECHANISM_ORDER:
            row = cells.get(mechanism)
            if row is None:
                continue
            speedup = None
            if row.latency_ns is not None and fastcall_latency:
                speedup = row.latency_ns / fastcall_latency
            rows.append(BenchRow(
                row.scenario, row.mechanism, row.setting, row.latency_ns,
                speedup, row.flag, row.outcome_counts, row.drained_records,
            ))
    return BenchReport(rows=tuple(rows))


def default_scenarios() -> list[Scenario]:
    """The standard comparison suite: three workloads, full grid."""
    common = dict(
        mechanisms=_MECHANISM_ORDER,
        settings=_SETTING_ORDER,
        iterations=100,
    )
    return [
        Scenario(name="noop", workload="noop", **common),
        Scenario(name="copy64", workload="copy64", **common),
        Scenario(name="ntcopy64", workload="ntcopy64", **common),
    ]


def run_suite(scenarios: Sequence[Scenario], params: Optional[CostParameters] = None) -> BenchReport:
    rows: list[BenchRow] = []
    for scenario in scenarios:
        rows.extend(run_scenario(scenario, params).rows)
    return BenchReport(rows=tuple(rows))


# --- reports ----------------------------------------------------------------------


def _fmt(value: Optional[float]) -> str:
    if value is None:
        return ""
    text = f"{value:.6f}".rstrip("0").rstrip(".")
    return text if text else "0"


def report_to_csv(report: BenchReport) -> str:
    lines = [CSV_HEADER]
    for row in report.rows:
        lines.append(",".join((
            row.scenario,
            row.mechanism.value,
            row.setting.value,
            _fmt(row.latency_ns),
            _fmt(row.speedup_vs_fastcall),
            row.flag,
        )))
    return "\n".join(lines) + "\n"


def report_to_text(report: BenchReport) -> str:
    out = io.StringIO()
    width = max([len(r.scenario) for r in report.rows] + [8])
    out.write(f"{'scenario':<{width}}  {'mechanism':<9}  {'setting':<8}  "
              f"{'latency_ns':>12}  {'vs_fastcall':>11}  outcomes\n")
    for row in report.rows:
        latency = _fmt(row.latency_ns) if row.latency_ns is not None else f"({row.flag})"
        speedup = _fmt(row.speedup_vs_fastcall)
        counts = " ".join(f"{k}={v}" for k, v in sorted(row.outcome_counts.items()))
        out.write(f"{row.scenario:<{width}}  {row.mechanism.value:<9}  {row.setting.value:<8}  "
                  f"{latency:>12}  {speedup:>11}  {counts}\n")
    return out.getvalue()


# --- scenario files ---------------------------------------------------------------


def parse_scenario(text: str) -> Scenario:
    parser = configparser.ConfigParser(delimiters=("=",), interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ScenarioError(f"bad scenario file: {exc}") from None
    if not parser.has_section("scenario"):
        raise ScenarioError("scenario file needs a [scenario] section")
    section = parser["scenario"]
    try:
        workload = section["workload"]
        name = section.get("name", workload)
        mechanisms = tuple(
            Mechanism(token.strip())
            for token in section.get("mechanisms", "fastcall").split(",") if token.strip()
        )
        settings = tuple(
            MitigationSetting(token.strip())
            for token in section.get("settings", "full").split(",") if token.strip()
        )
        iterations = int(section.get("iterations", "100"), 0)
    except KeyError as exc:
        raise ScenarioError(f"scenario file missing key {exc}") from None
    except ValueError as exc:
        raise ScenarioError(f"bad scenario value: {exc}") from None
    provider_params = dict(parser["provider"]) if parser.has_section("provider") else {}
    return Scenario(
        name=name, workload=workload, mechanisms=mechanisms,
        settings=settings, iterations=iterations, provider_params=provider_params,
    )


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read())


# --- lifecycle demo ----------------------------------------------------------------


@dataclass(frozen=True)
class LifecycleConfig:
    provider: str = "noop"
    registrations: int = 3
    invocations_per_entry: int = 2
    provider_params: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class LifecycleReport:
    registration_latencies_ns: tuple[float, ...]
    deregistration_latencies_ns: tuple[float, ...]
    fork_stock_ns: float
    fork_no_registrations_ns: float
    fork_with_100_registrations_ns: float
    fork_current_ns: float
    registrations: int
    invocation_counts: Mapping[str, int]
    assertions: tuple[tuple[str, bool, str], ...]

    def render(self) -> str:
        out = io.StringIO()
        out.write("fastcall lifecycle demo\n")
        out.write(f"  registrations: {self.registrations}\n")
        for i, latency in enumerate(self.registration_latencies_ns):
            out.write(f"  register[{i}]: {_fmt(latency)} ns\n")
        counts = " ".join(f"{k}={v}" for k, v in sorted(self.invocation_counts.items()))
        out.write(f"  invocations: {counts}\n")
        out.write(f"  fork latency (stock kernel): {_fmt(self.fork_stock_ns)} ns\n")
        out.write(f"  fork latency (0 registrations): {_fmt(self.fork_no_registrations_ns)} ns\n")
        out.write(f"  fork latency ({self.registrations} registrations): {_fmt(self.fork_current_ns)} ns\n")
        out.write(f"  fork latency (100 registrations): {_fmt(self.fork_with_100_registrations_ns)} ns\n")
        for i, latency in enumerate(self.deregistration_latencies_ns):
            out.write(f"  deregister[{i}]: {_fmt(latency)} ns\n")
        for name, passed, detail in self.assertions:
            out.write(f"  check {name}: {'pass' if passed else 'FAIL'} ({detail})\n")
        return out.getvalue()


def run_lifecycle_demo(
    config: Optional[LifecycleConfig] = None,
    params: Optional[CostParameters] = None,
) -> LifecycleReport:
    """register -> invoke -> fork -> verify child reset -> deregister."""
    config = config if config is not None else LifecycleConfig()
    params = params if params is not None else CostParameters()
    sim = Simulator(params)
    parent, child = "parent", "child"
    sim.create_process(parent)

    assertions: list[tuple[str, bool, str]] = []

    def check(name: str, passed: bool, detail: str):
        assertions.append((name, passed, detail))
        if not passed:
            raise LifecycleAssertionError(f"lifecycle check {name!r} failed: {detail}")

    registration_latencies = []
    indices = []
    for _ in range(config.registrations):
        result = register(
            sim,
            RegistrationRequest(parent, config.provider, dict(config.provider_params)),
            builtin_registry(),
        )
        if not result.granted:
            raise ScenarioError(f"lifecycle registration denied: {result.deny_reason}")
        registration_latencies.append(result.modeled_latency_ns)
        indices.append(result.index)

    counts: Counter[str] = Counter()
    for index in indices:
        for i in range(config.invocations_per_entry):
            res = sim.syscall_entry(parent, NR_FASTCALL, [index, i, 0, 0, 0, 0])
            counts[res.outcome.value] += 1
    check(
        "parent-invocations-return",
        counts.get(OutcomeKind.RETURN.value, 0) == len(indices) * config.invocations_per_entry,
        f"outcomes {dict(counts)}",
    )

    sim.fork(parent, child)
    child_fastcall_regions = len(sim.space(child).fastcall_regions())
    check("child-fastcall-space-reset", child_fastcall_regions == 0,
          f"{child_fastcall_regions} fastcall regions in child")

    child_outcomes = [
        sim.syscall_entry(child, NR_FASTCALL, [index, 0, 0, 0, 0, 0]).outcome
        for index in indices
    ]
    check(
        "child-table-reset",
        all(outcome is OutcomeKind.TABLE_ERROR for outcome in child_outcomes),
        f"child outcomes {[o.value for o in child_outcomes]}",
    )

    parent_after = sim.syscall_entry(parent, NR_FASTCALL, [indices[0], 0, 0, 0, 0, 0]).outcome
    check("parent-intact-after-fork", parent_after is OutcomeKind.RETURN, parent_after.value)

    deregistration_latencies = []
    for index in indices:
        entry = sim.table(parent).entries[index]
        deregistration_latencies.append(
            params.deregistration_latency_ns(len(entry.bindings))
        )
        sim.remove_entry(parent, index)
    removed = sim.syscall_entry(parent, NR_FASTCALL, [indices[0], 0, 0, 0, 0, 0]).outcome
    check("deregistered-invoke-table-error", removed is OutcomeKind.TABLE_ERROR, removed.value)

    return LifecycleReport(
        registration_latencies_ns=tuple(registration_latencies),
        deregistration_latencies_ns=tuple(deregistration_latencies),
        fork_stock_ns=params.fork_stock_ns,
        fork_no_registrations_ns=params.fork_latency_ns(0),
        fork_with_100_registrations_ns=params.fork_latency_ns(100),
        fork_current_ns=params.fork_latency_ns(config.registrations),
        registrations=config.registrations,
        invocation_counts=dict(counts),
        assertions=tuple(assertions),
    )
