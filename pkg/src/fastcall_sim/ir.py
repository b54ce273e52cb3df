"""The restricted register-machine language fastcall functions are written in.

Programs run on 16 unsigned 64-bit registers, may branch only forward, and
touch memory exclusively through declared *region slots*, never through raw
addresses.  This keeps every program a DAG with statically checkable memory
behaviour.

Text format, one instruction per line, ``#`` starts a comment:

    SLOT s0 SharedRW 64        # header: slot id, required kind, min length
    CONFIG 0x0A000001          # header: appends one 64-bit constant
    MOV_IMM r0, 7              # r0 = 7
    MOV_REG r1, r0             # r1 = r0
    ADD r0, r1                 # r0 += r1      (also SUB, AND, OR)
    ADD r0, 16                 # r0 += 16      (immediate form)
    SHL r0, 3                  # r0 <<= 3      (shift amounts mask to 0..63)
    SHR r0, r2
    CMP_JNE r0, r1, 7          # if r0 != r1 jump to instruction index 7
    CMP_JEQ r0, 5, 7           # if r0 == 5 jump to index 7 (forward only)
    LOAD r1, s0, 8, w8         # r1 = 8-byte read at slot s0 offset 8
    LOAD r1, s0, r2, w4        # register offset form
    STORE s0, 8, r1, w8        # 8-byte write of r1 at slot s0 offset 8
    LOAD_CONFIG r1, 0          # r1 = config constant 0
    FENCE_NT                   # flush store buffer to memory (non-temporal)
    RET r0                     # finish, returning r0

Header lines must precede the first instruction.  Branch targets are
absolute instruction indices and must be strictly greater than the index of
the branch itself.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

from .errors import ParseError
from .memory import RegionKind

REGISTER_COUNT = 16
WIDTHS = (1, 2, 4, 8)
U64 = (1 << 64) - 1


class Opcode(enum.Enum):
    MOV_IMM = "MOV_IMM"
    MOV_REG = "MOV_REG"
    ADD = "ADD"
    SUB = "SUB"
    AND = "AND"
    OR = "OR"
    SHL = "SHL"
    SHR = "SHR"
    CMP_JNE = "CMP_JNE"
    CMP_JEQ = "CMP_JEQ"
    LOAD = "LOAD"
    STORE = "STORE"
    LOAD_CONFIG = "LOAD_CONFIG"
    FENCE_NT = "FENCE_NT"
    RET = "RET"


ALU_OPS = frozenset((Opcode.ADD, Opcode.SUB, Opcode.AND, Opcode.OR, Opcode.SHL, Opcode.SHR))
BRANCH_OPS = frozenset((Opcode.CMP_JNE, Opcode.CMP_JEQ))


@dataclass(frozen=True)
class Instruction:
    """One decoded instruction; unused operand fields stay None.

    ``reg`` is the primary register: destination for MOV/ALU/LOAD/LOAD_CONFIG,
    first compare operand for CMP_J*, value source for STORE, return value for
    RET.  ``src``/``imm`` hold the secondary operand (exactly one of them for
    two-operand forms).
    """

    opcode: Opcode
    reg: Optional[int] = None
    src: Optional[int] = None
    imm: Optional[int] = None
    slot: Optional[str] = None
    offset_reg: Optional[int] = None
    offset_imm: Optional[int] = None
    width: Optional[int] = None
    target: Optional[int] = None


@dataclass(frozen=True)
class SlotDecl:
    slot_id: str
    kind: RegionKind
    min_length: int


@dataclass(frozen=True)
class FastcallProgram:
    instructions: tuple[Instruction, ...]
    region_slots: tuple[SlotDecl, ...] = ()
    config_params: tuple[int, ...] = ()
    name: str = ""
    register_count: int = REGISTER_COUNT

    def slot(self, slot_id: str) -> SlotDecl:
        return self.slot_map[slot_id]

    @cached_property
    def slot_map(self) -> dict[str, SlotDecl]:
        return {decl.slot_id: decl for decl in self.region_slots}


_KIND_BY_NAME = {kind.value: kind for kind in RegionKind}


def _parse_int(token: str, line_no: int, what: str = "immediate") -> int:
    try:
        value = int(token, 0)
    except ValueError:
        raise ParseError(line_no, f"bad {what} {token!r}") from None
    return value


def _parse_reg(token: str, line_no: int) -> int:
    if not token.startswith("r"):
        raise ParseError(line_no, f"expected register, got {token!r}")
    idx = _parse_int(token[1:], line_no, "register index")
    if not 0 <= idx < REGISTER_COUNT:
        raise ParseError(line_no, f"register index {idx} out of range 0..{REGISTER_COUNT - 1}")
    return idx


def _parse_width(token: str, line_no: int) -> int:
    if not token.startswith("w"):
        raise ParseError(line_no, f"expected width w1/w2/w4/w8, got {token!r}")
    width = _parse_int(token[1:], line_no, "width")
    if width not in WIDTHS:
        raise ParseError(line_no, f"width must be one of {WIDTHS}, got {width}")
    return width


def _split_operands(rest: str, line_no: int, expected: int, opcode: str) -> list[str]:
    operands = [tok.strip() for tok in rest.split(",")] if rest.strip() else []
    if len(operands) != expected or any(not tok for tok in operands):
        raise ParseError(line_no, f"{opcode} expects {expected} operand(s)")
    return operands


def parse_program(text: str, name: str = "") -> FastcallProgram:
    """Parse textual IR into a program; raises :class:`ParseError` on bad input."""
    slots: list[SlotDecl] = []
    config: list[int] = []
    instructions: list[Instruction] = []
    branch_sites: list[tuple[int, int, int]] = []  # (line_no, instr index, target)
    seen_slot_ids: set[str] = set()

    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        mnemonic, _, rest = line.partition(" ")
        mnemonic = mnemonic.strip()

        if mnemonic == "SLOT":
            if instructions:
                raise ParseError(line_no, "SLOT declarations must precede instructions")
            parts = rest.split()
            if len(parts) != 3:
                raise ParseError(line_no, "SLOT expects: SLOT <id> <RegionKind> <min_length>")
            slot_id, kind_name, length_text = parts
            if slot_id in seen_slot_ids:
                raise ParseError(line_no, f"duplicate slot {slot_id!r}")
            kind = _KIND_BY_NAME.get(kind_name)
            if kind is None:
                raise ParseError(line_no, f"unknown region kind {kind_name!r}")
            min_length = _parse_int(length_text, line_no, "slot length")
            if min_length <= 0:
                raise ParseError(line_no, "slot min length must be positive")
            seen_slot_ids.add(slot_id)
            slots.append(SlotDecl(slot_id, kind, min_length))
            continue

        if mnemonic == "CONFIG":
            if instructions:
                raise ParseError(line_no, "CONFIG declarations must precede instructions")
            config.append(_parse_int(rest.strip(), line_no, "config constant") & U64)
            continue

        try:
            opcode = Opcode(mnemonic)
        except ValueError:
            raise ParseError(line_no, f"unknown opcode {mnemonic!r}") from None

        index = len(instructions)
        if opcode is Opcode.MOV_IMM:
            ops = _split_operands(rest, line_no, 2, mnemonic)
            instructions.append(Instruction(
                opcode, reg=_parse_reg(ops[0], line_no),
                imm=_parse_int(ops[1], line_no) & U64,
            ))
        elif opcode is Opcode.MOV_REG:
            ops = _split_operands(rest, line_no, 2, mnemonic)
            instructions.append(Instruction(
                opcode, reg=_parse_reg(ops[0], line_no), src=_parse_reg(ops[1], line_no),
            ))
        elif opcode in ALU_OPS:
            ops = _split_operands(rest, line_no, 2, mnemonic)
            reg = _parse_reg(ops[0], line_no)
            if ops[1].startswith("r"):
                instructions.append(Instruction(opcode, reg=reg, src=_parse_reg(ops[1], line_no)))
            else:
                instructions.append(Instruction(opcode, reg=reg, imm=_parse_int(ops[1], line_no) & U64))
        elif opcode in BRANCH_OPS:
            ops = _split_operands(rest, line_no, 3, mnemonic)
            reg = _parse_reg(ops[0], line_no)
            target = _parse_int(ops[2], line_no, "branch target")
            if target <= index:
                raise ParseError(line_no, f"branch target {target} is not strictly forward of {index}")
            branch_sites.append((line_no, index, target))
            if ops[1].startswith("r"):
                instructions.append(Instruction(opcode, reg=reg, src=_parse_reg(ops[1], line_no), target=target))
            else:
                instructions.append(Instruction(
                    opcode, reg=reg, imm=_parse_int(ops[1], line_no) & U64, target=target,
                ))
        elif opcode is Opcode.LOAD:
            ops = _split_operands(rest, line_no, 4, mnemonic)
            reg = _parse_reg(ops[0], line_no)
            slot_id = ops[1]
            if slot_id not in seen_slot_ids:
                raise ParseError(line_no, f"reference to undeclared slot {slot_id!r}")
            width = _parse_width(ops[3], line_no)
            if ops[2].startswith("r"):
                instructions.append(Instruction(
                    opcode, reg=reg, slot=slot_id, offset_reg=_parse_reg(ops[2], line_no), width=width,
                ))
            else:
                offset = _parse_int(ops[2], line_no, "offset")
                if offset < 0:
                    raise ParseError(line_no, "offsets are unsigned")
                instructions.append(Instruction(opcode, reg=reg, slot=slot_id, offset_imm=offset, width=width))
        elif opcode is Opcode.STORE:
            ops = _split_operands(rest, line_no, 4, mnemonic)
            slot_id = ops[0]
            if slot_id not in seen_slot_ids:
                raise ParseError(line_no, f"reference to undeclared slot {slot_id!r}")
            reg = _parse_reg(ops[2], line_no)
            width = _parse_width(ops[3], line_no)
            if ops[1].startswith("r"):
                instructions.append(Instruction(
                    opcode, reg=reg, slot=slot_id, offset_reg=_parse_reg(ops[1], line_no), width=width,
                ))
            else:
                offset = _parse_int(ops[1], line_no, "offset")
                if offset < 0:
                    raise ParseError(line_no, "offsets are unsigned")
                instructions.append(Instruction(opcode, reg=reg, slot=slot_id, offset_imm=offset, width=width))
        elif opcode is Opcode.LOAD_CONFIG:
            ops = _split_operands(rest, line_no, 2, mnemonic)
            reg = _parse_reg(ops[0], line_no)
            param = _parse_int(ops[1], line_no, "config index")
            if not 0 <= param < len(config):
                raise ParseError(line_no, f"config index {param} not declared (have {len(config)})")
            instructions.append(Instruction(opcode, reg=reg, imm=param))
        elif opcode is Opcode.FENCE_NT:
            if rest.strip():
                raise ParseError(line_no, "FENCE_NT takes no operands")
            instructions.append(Instruction(opcode))
        elif opcode is Opcode.RET:
            ops = _split_operands(rest, line_no, 1, mnemonic)
            instructions.append(Instruction(opcode, reg=_parse_reg(ops[0], line_no)))

    if not instructions:
        raise ParseError(0, "program has no instructions")
    for line_no, _, target in branch_sites:
        if target >= len(instructions):
            raise ParseError(line_no, f"branch target {target} beyond program end {len(instructions)}")

    return FastcallProgram(
        instructions=tuple(instructions),
        region_slots=tuple(slots),
        config_params=tuple(config),
        name=name,
    )
