"""Latency constants and the analytical break-even model.

All latency numbers in the simulator come from one :class:`CostParameters`
value.  Defaults carry only measured figures quoted for the reference
machine (Intel i7-4790, Linux 5.11):

* invocation overhead per mechanism and mitigation setting, in ns:

      mechanism   full mitigations   no KPTI   mitigations off
      vdso        1.4                1.4       1.4
      fastcall    23.9               23.9      24.1
      syscall     354.7              (config)  46.4
      ioctl       413.6              (config)  (config)

  Cells marked (config) were never published as text; they stay ``None``
  until supplied through a parameter override file, and asking for them
  raises :class:`CostConfigError` rather than inventing a number.

* per-instruction execution costs used by the program cost model and the
  worst-case execution time analysis (ALU 1 ns, cached memory 1 ns,
  non-temporal or device-window store 114 ns).

* control-path costs: registration 1.4 us (2.6 us when extra data regions
  are mapped along with the code), deregistration 2.4/4.8 us, fork 38.055 us
  on a stock kernel plus 0.674 us (no registrations) to 4.956 us
  (100 registrations) of fastcall bookkeeping.

* calibrated whole-workload constants: a cached 64-byte copy is worth
  4.9 ns of work and a non-temporal 64-byte copy 113.9 ns.  Both derive
  from the measured speedup ratios (x12.5 cached, x3.4 non-temporal) by
  solving  (syscall_overhead + w) / (fastcall_overhead + w) = ratio  for w;
  ``solve_work_from_ratio`` reproduces the derivation and a unit test
  re-checks the stored constants against it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

from .errors import CostConfigError


class MitigationSetting(enum.Enum):
    FULL = "full"
    NO_KPTI = "no_kpti"
    OFF = "off"


class Mechanism(enum.Enum):
    VDSO = "vdso"
    FASTCALL = "fastcall"
    SYSCALL = "syscall"
    IOCTL = "ioctl"


def _default_overheads() -> dict[Mechanism, dict[MitigationSetting, Optional[float]]]:
    F, N, O = MitigationSetting.FULL, MitigationSetting.NO_KPTI, MitigationSetting.OFF
    return {
        Mechanism.VDSO: {F: 1.4, N: 1.4, O: 1.4},
        Mechanism.FASTCALL: {F: 23.9, N: 23.9, O: 24.1},
        Mechanism.SYSCALL: {F: 354.7, N: None, O: 46.4},
        Mechanism.IOCTL: {F: 413.6, N: None, O: None},
    }


@dataclass(frozen=True)
class CostParameters:
    overhead_ns: Mapping[Mechanism, Mapping[MitigationSetting, Optional[float]]] = field(
        default_factory=_default_overheads
    )
    # per-instruction costs
    alu_ns: float = 1.0
    mem_cached_ns: float = 1.0
    mem_nt_ns: float = 114.0
    # control path
    register_base_ns: float = 1400.0
    register_with_mappings_ns: float = 2600.0
    deregister_base_ns: float = 2400.0
    deregister_with_mappings_ns: float = 4800.0
    fork_stock_ns: float = 38055.0
    fork_delta_no_reg_ns: float = 674.0
    fork_delta_100_reg_ns: float = 4956.0
    # calibrated workload constants
    work_copy64_ns: float = 4.9
    work_ntcopy64_ns: float = 113.9
    # verifier budget: useful work above this no longer belongs in a fastcall
    wcet_ceiling_ns: float = 5700.0

    def overhead(self, mechanism: Mechanism, setting: MitigationSetting) -> float:
        value = self.overhead_ns[mechanism][setting]
        if value is None:
            raise CostConfigError(
                f"overhead.{mechanism.value}.{setting.value} has no published default; "
                "supply it via a parameter override file"
            )
        return value

    def has_overhead(self, mechanism: Mechanism, setting: MitigationSetting) -> bool:
        return self.overhead_ns[mechanism][setting] is not None

    def latency(self, mechanism: Mechanism, setting: MitigationSetting, work_ns: float) -> float:
        """Modeled invocation latency: mechanism overhead plus useful work."""
        if work_ns < 0:
            raise ValueError("work_ns must be >= 0")
        return self.overhead(mechanism, setting) + work_ns

    def speedup(
        self,
        mech_a: Mechanism,
        mech_b: Mechanism,
        setting: MitigationSetting,
        work_ns: float,
    ) -> float:
        """latency(mech_a) / latency(mech_b) for the same amount of work."""
        return self.latency(mech_a, setting, work_ns) / self.latency(mech_b, setting, work_ns)

    def registration_latency_ns(self, extra_mappings: int) -> float:
        return self.register_with_mappings_ns if extra_mappings > 0 else self.register_base_ns

    def deregistration_latency_ns(self, extra_mappings: int) -> float:
        return self.deregister_with_mappings_ns if extra_mappings > 0 else self.deregister_base_ns

    def fork_latency_ns(self, registered_entries: int) -> float:
        """Modeled fork latency on the fastcall-enabled kernel.

        Anchored at the two measured points (0 and 100 registrations) and
        linear in between: table teardown is per-entry work.
        """
        if registered_entries < 0:
            raise ValueError("registered_entries must be >= 0")
        delta = self.fork_delta_no_reg_ns + (
            (self.fork_delta_100_reg_ns - self.fork_delta_no_reg_ns) * registered_entries / 100.0
        )
        return self.fork_stock_ns + delta


@dataclass(frozen=True)
class BreakevenInputs:
    """Inputs of the break-even window computation.

    ``overhead_fraction`` is the largest share of an operation's total
    runtime (work + overhead) that still counts as negligible overhead.
    """

    overhead_fraction: float
    syscall_overhead_ns: float
    fastcall_overhead_ns: float

    def __post_init__(self):
        if not 0.0 < self.overhead_fraction < 1.0:
            raise ValueError("overhead_fraction must lie strictly between 0 and 1")
        if not self.syscall_overhead_ns > self.fastcall_overhead_ns > 0.0:
            raise ValueError("expected syscall overhead > fastcall overhead > 0")


@dataclass(frozen=True)
class BreakevenWindow:
    w_max_ns: float  # above this, syscall overhead is already negligible
    w_min_ns: float  # below this, even the fastcall overhead is not negligible


def breakeven(inputs: BreakevenInputs) -> BreakevenWindow:
    """Closed-form break-even window.

    A mechanism with overhead ``o`` is worthwhile for work ``w`` only while
    ``o / (o + w) > overhead_fraction``; solving the boundary for ``w`` gives
    ``w = o * (1 - overhead_fraction) / overhead_fraction`` for each overhead.
    """
    scale = (1.0 - inputs.overhead_fraction) / inputs.overhead_fraction
    return BreakevenWindow(
        w_max_ns=inputs.syscall_overhead_ns * scale,
        w_min_ns=inputs.fastcall_overhead_ns * scale,
    )


def solve_work_from_ratio(ratio: float, syscall_overhead_ns: float, fastcall_overhead_ns: float) -> float:
    """Solve (o_syscall + w) / (o_fastcall + w) = ratio for w."""
    if ratio <= 1.0:
        raise ValueError("ratio must exceed 1")
    return (syscall_overhead_ns - ratio * fastcall_overhead_ns) / (ratio - 1.0)


# --- parameter override files -------------------------------------------------
#
# Flat "key = value" text, one setting per line, '#' comments.  Keys:
#   overhead.<mechanism>.<setting>   e.g. overhead.syscall.full = 354.7
#   instr.alu | instr.mem_cached | instr.mem_nt
#   control.register_base | control.register_with_mappings
#   control.deregister_base | control.deregister_with_mappings
#   control.fork_stock | control.fork_delta_no_reg | control.fork_delta_100_reg
#   work.copy64 | work.ntcopy64
#   verifier.wcet_ceiling

_SCALAR_KEYS = {
    "instr.alu": "alu_ns",
    "instr.mem_cached": "mem_cached_ns",
    "instr.mem_nt": "mem_nt_ns",
    "control.register_base": "register_base_ns",
    "control.register_with_mappings": "register_with_mappings_ns",
    "control.deregister_base": "deregister_base_ns",
    "control.deregister_with_mappings": "deregister_with_mappings_ns",
    "control.fork_stock": "fork_stock_ns",
    "control.fork_delta_no_reg": "fork_delta_no_reg_ns",
    "control.fork_delta_100_reg": "fork_delta_100_reg_ns",
    "work.copy64": "work_copy64_ns",
    "work.ntcopy64": "work_ntcopy64_ns",
    "verifier.wcet_ceiling": "wcet_ceiling_ns",
}


def parse_parameter_overrides(text: str, base: Optional[CostParameters] = None) -> CostParameters:
    params = base if base is not None else CostParameters()
    overheads = {mech: dict(cells) for mech, cells in params.overhead_ns.items()}
    scalars: dict[str, float] = {}
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CostConfigError(f"parameter file line {line_no}: expected 'key = value'")
        key, _, value_text = line.partition("=")
        key = key.strip()
        try:
            value = float(value_text.strip())
        except ValueError:
            raise CostConfigError(f"parameter file line {line_no}: bad number {value_text.strip()!r}") from None
        if key in _SCALAR_KEYS:
            scalars[_SCALAR_KEYS[key]] = value
            continue
        parts = key.split(".")
        if len(parts) == 3 and parts[0] == "overhead":
            try:
                mech = Mechanism(parts[1])
                setting = MitigationSetting(parts[2])
            except ValueError:
                raise CostConfigError(f"parameter file line {line_no}: unknown key {key!r}") from None
            overheads[mech][setting] = value
            continue
        raise CostConfigError(f"parameter file line {line_no}: unknown key {key!r}")
    return replace(params, overhead_ns=overheads, **scalars)


def load_parameter_file(path, base: Optional[CostParameters] = None) -> CostParameters:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_parameter_overrides(fh.read(), base)
