"""Syscall-entry dispatch, the per-process fastcall table, and its lifecycle.

The :class:`Simulator` plays the kernel: it owns every process's address
space and fastcall table, four simulated CPUs with per-process scratchpads,
and a deterministic clock that advances by the modeled latency of each
invocation.

Invocation path (mirrors the real entry sequence): the syscall number is
tested against the dedicated fastcall number; anything else is routed to the
modeled kernel path.  Fastcall invocations bounds-check the table index,
pick the next CPU round-robin, disable interrupts on it, bind that CPU's
scratchpad into any scratchpad slot of the entry's program, run the entry's
policy hook, and only then interpret the program.  Table misses and policy
denials return before any program instruction runs, so they can never leave
partial memory effects.

Modeled latency of one invocation is::

    overhead(fastcall, setting) + hook_cost + program_cost

where ``program_cost`` is the entry's calibrated work constant when one was
supplied at install time (the microbenchmark entries do this, pinning e.g.
the 64-byte cached copy at its measured 4.9 ns) and otherwise the
interpreter's summed per-instruction cost.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .costs import CostParameters, Mechanism, MitigationSetting
from .errors import (
    EmptySlotError,
    InstallError,
    PrivilegeViolation,
    TableFullError,
)
from .interp import InvocationOutcome, MachineState, MemoryAccess, interpret
from .ir import FastcallProgram
from .memory import (
    AccessDomain,
    AddressSpace,
    AddressSpaceManager,
    MemoryRegion,
    RegionKind,
)
from .verifier import VerifierReport, verify

NR_TABLE_ENTRIES = 64
NR_FASTCALL = 442  # outside the simulated standard syscall range 0..441
NR_IOCTL = 16  # ioctl's number on the modeled ABI; routed with ioctl overhead
NUM_CPUS = 4
SCRATCHPAD_BYTES = 4096
TEXT_BYTES_PER_INSTRUCTION = 8


class OutcomeKind(enum.Enum):
    RETURN = "Return"
    TABLE_ERROR = "TableError"
    POLICY_DENIED = "PolicyDenied"
    ROUTED_TO_KERNEL = "RoutedToKernel"


@dataclass(frozen=True)
class InvocationResult:
    outcome: OutcomeKind
    modeled_latency_ns: float
    mechanism: Mechanism
    value: Optional[int] = None
    deny_reason: Optional[str] = None
    cpu_id: Optional[int] = None
    memory_trace: tuple[MemoryAccess, ...] = ()


@dataclass
class FastcallTableEntry:
    index: int
    program: FastcallProgram
    report: VerifierReport
    bindings: dict[str, MemoryRegion]
    config: tuple[int, ...]
    provider_id: str
    policy_hook: Optional["PolicyHookLike"] = None
    work_cost_ns: Optional[float] = None
    text_region: Optional[MemoryRegion] = None


class FastcallTable:
    """Fixed-capacity capability table, one per process."""

    def __init__(self, capacity: int = NR_TABLE_ENTRIES):
        self.capacity = capacity
        self.entries: list[Optional[FastcallTableEntry]] = [None] * capacity

    def lowest_free_index(self) -> Optional[int]:
        for idx, entry in enumerate(self.entries):
            if entry is None:
                return idx
        return None

    def live_entries(self) -> list[FastcallTableEntry]:
        return [e for e in self.entries if e is not None]

    def __len__(self) -> int:
        return len(self.live_entries())


@dataclass
class CpuContext:
    cpu_id: int
    scratchpad: Optional[MemoryRegion] = None  # scratchpad bound for the running fastcall
    interrupts_disabled: bool = False
    windows: list[tuple[float, float]] = field(default_factory=list)


class PolicyHookLike:
    """Protocol for entry policy hooks: callable returning a deny reason or None."""

    cost_ns: float = 0.0

    def __call__(self, ctx: "HookContext") -> Optional[str]:  # pragma: no cover - protocol
        raise NotImplementedError


@dataclass
class HookContext:
    """Everything a policy hook may look at while deciding."""

    simulator: "Simulator"
    process_id: object
    entry: FastcallTableEntry
    registers: tuple[int, ...]
    now_ns: float
    space: AddressSpace


class Simulator:
    """Single-threaded simulator core: processes, tables, CPUs, clock."""

    def __init__(
        self,
        cost_params: Optional[CostParameters] = None,
        mitigation: MitigationSetting = MitigationSetting.FULL,
        num_cpus: int = NUM_CPUS,
    ):
        self.cost = cost_params if cost_params is not None else CostParameters()
        self.mitigation = mitigation
        self.memory = AddressSpaceManager()
        self.tables: dict[object, FastcallTable] = {}
        self.cpus = [CpuContext(cpu_id=i) for i in range(num_cpus)]
        self._next_cpu = 0
        self.clock_ns = 0.0
        self._scratchpads: dict[tuple[object, int], MemoryRegion] = {}

    # --- process lifecycle ---------------------------------------------------

    def create_process(self, process_id) -> AddressSpace:
        space = self.memory.create_address_space(process_id)
        self.tables[process_id] = FastcallTable()
        return space

    def fork(self, parent_id, child_id) -> AddressSpace:
        """Fork a process: user memory is copied, the fastcall space is reset."""
        child = self.memory.fork_address_space(parent_id, child_id)
        self.on_fork(parent_id, child_id)
        return child

    def on_fork(self, parent_id, child_id) -> None:
        # the child gets a fresh table no matter what the parent holds
        self.table(parent_id)  # parent must exist
        self.tables[child_id] = FastcallTable()
        for cpu_id in range(len(self.cpus)):
            self._scratchpads.pop((child_id, cpu_id), None)

    def space(self, process_id) -> AddressSpace:
        return self.memory.get(process_id)

    def table(self, process_id) -> FastcallTable:
        self.memory.get(process_id)  # raises UnknownProcessError when absent
        return self.tables[process_id]

    # --- table management ----------------------------------------------------

    def install_entry(
        self,
        process_id,
        provider_id: str,
        program: FastcallProgram,
        bindings: dict[str, MemoryRegion],
        config: Optional[Sequence[int]] = None,
        *,
        policy_hook: Optional[PolicyHookLike] = None,
        work_cost_ns: Optional[float] = None,
        domain: AccessDomain = AccessDomain.KERNEL_INFRA,
    ) -> int:
        """Verify, bind and publish a program at the lowest free table index."""
        if domain is not AccessDomain.KERNEL_INFRA:
            raise PrivilegeViolation("only kernel infrastructure may install fastcall entries")
        space = self.space(process_id)
        table = self.table(process_id)

        report = verify(program, self.cost.wcet_ceiling_ns, self.cost)
        if not report.accepted:
            first = report.violations[0] if report.violations else None
            raise InstallError(
                "program failed verification"
                + (f": [{first.rule}] {first.message}" if first else "")
            )

        if config is None:
            config = program.config_params
        elif tuple(config) != program.config_params:
            # the verifier proved bounds against the program's constants;
            # running with different ones would void that proof
            raise InstallError("config values must match the verified program constants")

        index = table.lowest_free_index()
        if index is None:
            raise TableFullError(f"all {table.capacity} fastcall table entries in use")

        self._validate_bindings(space, program, bindings)
        self._ensure_scratchpads(process_id)

        text_region = space.map_region(
            RegionKind.FASTCALL_TEXT,
            max(1, len(program.instructions)) * TEXT_BYTES_PER_INSTRUCTION,
            AccessDomain.KERNEL_INFRA,
            owner_entry=index,
        )
        for region in bindings.values():
            region.owner_entry = index

        table.entries[index] = FastcallTableEntry(
            index=index,
            program=program,
            report=report,
            bindings=dict(bindings),
            config=tuple(config),
            provider_id=provider_id,
            policy_hook=policy_hook,
            work_cost_ns=work_cost_ns,
            text_region=text_region,
        )
        return index

    def _validate_bindings(self, space: AddressSpace, program: FastcallProgram, bindings) -> None:
        for decl in program.region_slots:
            if decl.kind is RegionKind.SCRATCHPAD:
                if decl.slot_id in bindings:
                    raise InstallError(
                        f"slot {decl.slot_id!r} is a scratchpad; it is bound per CPU at invocation"
                    )
                if decl.min_length > SCRATCHPAD_BYTES:
                    raise InstallError(
                        f"scratchpad slot {decl.slot_id!r} wants {decl.min_length} bytes, "
                        f"per-CPU scratchpads are {SCRATCHPAD_BYTES}"
                    )
                continue
            region = bindings.get(decl.slot_id)
            if region is None:
                raise InstallError(f"slot {decl.slot_id!r} has no region binding")
            if space.regions.get(region.region_id) is not region:
                raise InstallError(f"slot {decl.slot_id!r} binding is not a region of this process")
            if region.kind is not decl.kind:
                raise InstallError(
                    f"slot {decl.slot_id!r} needs {decl.kind.value}, got {region.kind.value}"
                )
            if region.length < decl.min_length:
                raise InstallError(
                    f"slot {decl.slot_id!r} needs {decl.min_length} bytes, region has {region.length}"
                )
        declared = {d.slot_id for d in program.region_slots}
        for slot_id in bindings:
            if slot_id not in declared:
                raise InstallError(f"binding for undeclared slot {slot_id!r}")

    def _ensure_scratchpads(self, process_id) -> None:
        space = self.space(process_id)
        for cpu in self.cpus:
            key = (process_id, cpu.cpu_id)
            if key not in self._scratchpads:
                self._scratchpads[key] = space.map_region(
                    RegionKind.SCRATCHPAD, SCRATCHPAD_BYTES, AccessDomain.KERNEL_INFRA
                )

    def remove_entry(self, process_id, index: int, domain: AccessDomain = AccessDomain.KERNEL_INFRA) -> None:
        """Clear a table slot and unmap every region mapped for it."""
        if domain is not AccessDomain.KERNEL_INFRA:
            raise PrivilegeViolation("only kernel infrastructure may remove fastcall entries")
        table = self.table(process_id)
        if not 0 <= index < table.capacity or table.entries[index] is None:
            raise EmptySlotError(f"no entry at index {index}")
        space = self.space(process_id)
        for region in space.regions_owned_by(index):
            space.unmap_region(region.region_id, AccessDomain.KERNEL_INFRA)
        table.entries[index] = None

    # --- invocation path -------------------------------------------------------

    def syscall_entry(
        self,
        process_id,
        syscall_number: int,
        registers: Sequence[int],
        mitigation_setting: Optional[MitigationSetting] = None,
    ) -> InvocationResult:
        """Kernel entry point: demultiplex the fastcall number or route onward."""
        setting = mitigation_setting if mitigation_setting is not None else self.mitigation
        self.space(process_id)  # unknown process is a caller error
        regs = self._normalize_registers(registers)
        if syscall_number == NR_FASTCALL:
            return self.invoke_fastcall(process_id, regs[0], regs, setting)
        mechanism = Mechanism.IOCTL if syscall_number == NR_IOCTL else Mechanism.SYSCALL
        latency = self.cost.overhead(mechanism, setting)
        self.clock_ns += latency
        return InvocationResult(
            outcome=OutcomeKind.ROUTED_TO_KERNEL,
            modeled_latency_ns=latency,
            mechanism=mechanism,
        )

    def invoke_fastcall(
        self,
        process_id,
        index: int,
        registers: Sequence[int],
        mitigation_setting: Optional[MitigationSetting] = None,
    ) -> InvocationResult:
        setting = mitigation_setting if mitigation_setting is not None else self.mitigation
        overhead = self.cost.overhead(Mechanism.FASTCALL, setting)
        table = self.table(process_id)
        regs = self._normalize_registers(registers)

        if not 0 <= index < table.capacity or table.entries[index] is None:
            self.clock_ns += overhead
            return InvocationResult(
                outcome=OutcomeKind.TABLE_ERROR,
                modeled_latency_ns=overhead,
                mechanism=Mechanism.FASTCALL,
            )

        entry = table.entries[index]
        space = self.space(process_id)
        cpu = self.cpus[self._next_cpu % len(self.cpus)]
        self._next_cpu += 1
        start = self.clock_ns
        cpu.interrupts_disabled = True
        cpu.scratchpad = self._scratchpads.get((process_id, cpu.cpu_id))
        try:
            hook_cost = 0.0
            if entry.policy_hook is not None:
                hook_cost = getattr(entry.policy_hook, "cost_ns", 0.0)
                ctx = HookContext(
                    simulator=self,
                    process_id=process_id,
                    entry=entry,
                    registers=tuple(regs),
                    now_ns=self.clock_ns,
                    space=space,
                )
                reason = entry.policy_hook(ctx)
                if reason is not None:
                    latency = overhead + hook_cost
                    self.clock_ns = start + latency
                    cpu.windows.append((start, self.clock_ns))
                    return InvocationResult(
                        outcome=OutcomeKind.POLICY_DENIED,
                        modeled_latency_ns=latency,
                        mechanism=Mechanism.FASTCALL,
                        deny_reason=reason,
                        cpu_id=cpu.cpu_id,
                    )

            bound = dict(entry.bindings)
            for decl in entry.program.region_slots:
                if decl.kind is RegionKind.SCRATCHPAD:
                    bound[decl.slot_id] = cpu.scratchpad
            state = MachineState.for_program(
                entry.program,
                bound,
                registers=[0] + [r for r in regs[1:]],
                config=entry.config,
            )
            outcome = interpret(entry.program, state, space=space, cost_params=self.cost)
            program_cost = entry.work_cost_ns if entry.work_cost_ns is not None else outcome.modeled_cost_ns
            latency = overhead + hook_cost + program_cost
            self.clock_ns = start + latency
            cpu.windows.append((start, self.clock_ns))
            return InvocationResult(
                outcome=OutcomeKind.RETURN,
                modeled_latency_ns=latency,
                mechanism=Mechanism.FASTCALL,
                value=outcome.return_value,
                cpu_id=cpu.cpu_id,
                memory_trace=outcome.memory_trace,
            )
        finally:
            cpu.interrupts_disabled = False
            cpu.scratchpad = None

    @staticmethod
    def _normalize_registers(registers: Sequence[int]) -> list[int]:
        regs = [int(r) for r in registers][:6]
        regs += [0] * (6 - len(regs))
        return regs
