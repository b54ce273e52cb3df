"""Deterministic user-space simulator of a fastcall mechanism.

Privilege-separated process address spaces, a per-process fastcall
capability table dispatched at syscall entry, statically verified fastcall
programs, provider-mediated registration with security policies, fork-reset
semantics, simulated MMIO devices, and a calibrated latency cost model.
"""

from .costs import (
    BreakevenInputs,
    BreakevenWindow,
    CostParameters,
    Mechanism,
    MitigationSetting,
    breakeven,
)
from .devices import RingDevice
from .dispatch import (
    NR_FASTCALL,
    NR_TABLE_ENTRIES,
    FastcallTable,
    FastcallTableEntry,
    InvocationResult,
    OutcomeKind,
    Simulator,
)
from .interp import InvocationOutcome, MachineState, interpret
from .ir import FastcallProgram, Instruction, Opcode, parse_program
from .memory import (
    AccessDomain,
    AccessType,
    AddressSpace,
    AddressSpaceManager,
    MemoryRegion,
    RegionKind,
)
from .providers import (
    Deny,
    Grant,
    RegistrationRequest,
    RegistrationResult,
    builtin_registry,
    register,
)
from .verifier import VerifierReport, verify, wcet

__version__ = "0.1.0"
