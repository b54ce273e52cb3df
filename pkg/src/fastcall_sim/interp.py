"""Interpreter executing verified programs against bound regions.

Every memory access is re-checked against the address-space protection rules
in the Fastcall domain (defense in depth: the verifier already proved them
safe, so a failing check is a simulator bug, not a program outcome) and
recorded in a trace for the tests.  Arithmetic is unsigned 64-bit with
wraparound; shift amounts mask to 0..63.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .costs import CostParameters
from .errors import RuntimeFault
from .ir import U64, FastcallProgram, Opcode, REGISTER_COUNT
from .memory import AccessDomain, AccessType, AddressSpace, MemoryRegion
from .verifier import _instruction_cost


@dataclass
class MachineState:
    """Mutable execution state of one invocation."""

    registers: list[int]
    bound_regions: dict[str, MemoryRegion]
    config: tuple[int, ...] = ()

    @classmethod
    def for_program(
        cls,
        program: FastcallProgram,
        bound_regions: dict[str, MemoryRegion],
        registers: Optional[list[int]] = None,
        config: Optional[tuple[int, ...]] = None,
    ) -> "MachineState":
        regs = [0] * REGISTER_COUNT
        if registers:
            for i, value in enumerate(registers[:REGISTER_COUNT]):
                regs[i] = value & U64
        state = cls(
            registers=regs,
            bound_regions=dict(bound_regions),
            config=program.config_params if config is None else tuple(config),
        )
        state.validate_bindings(program)
        return state

    def validate_bindings(self, program: FastcallProgram) -> None:
        for decl in program.region_slots:
            region = self.bound_regions.get(decl.slot_id)
            if region is None:
                raise RuntimeFault(f"slot {decl.slot_id!r} not bound")
            if region.kind is not decl.kind:
                raise RuntimeFault(
                    f"slot {decl.slot_id!r} bound to {region.kind.value}, declared {decl.kind.value}"
                )
            if region.length < decl.min_length:
                raise RuntimeFault(
                    f"slot {decl.slot_id!r} region is {region.length} bytes, declared minimum {decl.min_length}"
                )


@dataclass(frozen=True)
class MemoryAccess:
    op: str  # "load" or "store"
    slot: str
    offset: int
    width: int
    value: int
    address: int


@dataclass(frozen=True)
class InvocationOutcome:
    return_value: int
    instructions_executed: int
    memory_trace: tuple[MemoryAccess, ...]
    modeled_cost_ns: float


def _operand_value(ins, regs) -> int:
    return regs[ins.src] if ins.src is not None else ins.imm


def interpret(
    program: FastcallProgram,
    state: MachineState,
    space: Optional[AddressSpace] = None,
    cost_params: Optional[CostParameters] = None,
) -> InvocationOutcome:
    """Run a verified program to RET and report the outcome.

    ``space`` enables the defense-in-depth access checks; ``cost_params``
    enables per-instruction cost accounting (both are always supplied on the
    dispatch path).
    """
    params = cost_params if cost_params is not None else CostParameters()
    regs = state.registers
    trace: list[MemoryAccess] = []
    pc = 0
    executed = 0
    cost = 0.0
    pending_stores = 0
    limit = len(program.instructions)

    while True:
        if pc >= limit:
            raise RuntimeFault(f"execution fell off the program end at index {pc}")
        if executed >= limit:
            # forward-only branches make this unreachable; guard regardless
            raise RuntimeFault("executed more instructions than the program holds")
        ins = program.instructions[pc]
        executed += 1
        step, pending_stores = _instruction_cost(ins, program, params, pending_stores)
        cost += step
        op = ins.opcode

        if op is Opcode.RET:
            return InvocationOutcome(
                return_value=regs[ins.reg],
                instructions_executed=executed,
                memory_trace=tuple(trace),
                modeled_cost_ns=cost,
            )
        if op is Opcode.MOV_IMM:
            regs[ins.reg] = ins.imm & U64
        elif op is Opcode.MOV_REG:
            regs[ins.reg] = regs[ins.src]
        elif op is Opcode.ADD:
            regs[ins.reg] = (regs[ins.reg] + _operand_value(ins, regs)) & U64
        elif op is Opcode.SUB:
            regs[ins.reg] = (regs[ins.reg] - _operand_value(ins, regs)) & U64
        elif op is Opcode.AND:
            regs[ins.reg] = regs[ins.reg] & _operand_value(ins, regs)
        elif op is Opcode.OR:
            regs[ins.reg] = regs[ins.reg] | _operand_value(ins, regs)
        elif op is Opcode.SHL:
            regs[ins.reg] = (regs[ins.reg] << (_operand_value(ins, regs) & 63)) & U64
        elif op is Opcode.SHR:
            regs[ins.reg] = regs[ins.reg] >> (_operand_value(ins, regs) & 63)
        elif op is Opcode.CMP_JNE:
            if regs[ins.reg] != _operand_value(ins, regs):
                pc = ins.target
                continue
        elif op is Opcode.CMP_JEQ:
            if regs[ins.reg] == _operand_value(ins, regs):
                pc = ins.target
                continue
        elif op is Opcode.LOAD:
            value = _memory_access(ins, regs, state, space, trace, AccessType.READ)
            regs[ins.reg] = value
        elif op is Opcode.STORE:
            _memory_access(ins, regs, state, space, trace, AccessType.WRITE)
        elif op is Opcode.LOAD_CONFIG:
            if not 0 <= ins.imm < len(state.config):
                raise RuntimeFault(f"config index {ins.imm} out of range")
            regs[ins.reg] = state.config[ins.imm] & U64
        elif op is Opcode.FENCE_NT:
            pass  # cost effect handled above; no architectural state changes
        else:
            raise RuntimeFault(f"illegal opcode at runtime: {op}")
        pc += 1


def _memory_access(ins, regs, state, space, trace, access: AccessType) -> int:
    region = state.bound_regions.get(ins.slot)
    if region is None:
        raise RuntimeFault(f"slot {ins.slot!r} not bound")
    offset = ins.offset_imm if ins.offset_imm is not None else regs[ins.offset_reg]
    address = region.base + offset
    if offset + ins.width > region.length:
        raise RuntimeFault(
            f"{access.value} of {ins.width} at slot {ins.slot!r} offset {offset} "
            f"escapes the {region.length}-byte region"
        )
    if space is not None:
        result = space.check_access(AccessDomain.FASTCALL, address, ins.width, access)
        if not result:
            raise RuntimeFault(f"verified program failed access check: {result.reason}")
    if access is AccessType.READ:
        value = region.read_raw(offset, ins.width)
        trace.append(MemoryAccess("load", ins.slot, offset, ins.width, value, address))
        return value
    value = regs[ins.reg]
    region.write_raw(offset, ins.width, value)
    trace.append(MemoryAccess("store", ins.slot, offset, ins.width, value & ((1 << (8 * ins.width)) - 1), address))
    return value
