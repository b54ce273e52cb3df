"""Static verifier proving that a fastcall program is self-contained.

A program is accepted only when four facts hold:

1. every LOAD/STORE offset provably stays inside the declared minimum length
   of its slot, for all register values reachable on any path;
2. only instructions of the restricted set appear, with valid operands;
3. every execution path ends in RET (forward-only branches make the control
   flow a DAG, so this is a finite check);
4. the worst-case execution time, the costliest root-to-RET path under the
   per-instruction cost table, stays within the configured ceiling.

Offset bounds come from an interval analysis: each register carries an
unsigned [lo, hi] range, merged by hull at join points.  Registers start
fully unknown (callers control them), AND with a constant tightens the upper
bound, shifts and additions propagate linearly, and anything that may wrap
drops back to unknown.  A memory offset must be an immediate or a register
whose interval fits; anything else is rejected.

Cost accounting: ALU/MOV/branch/RET and LOAD_CONFIG cost ``alu_ns``; loads
and stores on cacheable kinds cost ``mem_cached_ns``; stores to a device
window cost ``mem_nt_ns``; FENCE_NT costs ``alu_ns`` and additionally
upgrades every cacheable store since the previous fence on the same path to
``mem_nt_ns`` (the fence pushes those lines out to main memory).
"""

from __future__ import annotations

from dataclasses import dataclass

from .costs import CostParameters
from .ir import ALU_OPS, BRANCH_OPS, U64, WIDTHS, FastcallProgram, Instruction, Opcode, REGISTER_COUNT
from .memory import RegionKind

# rule identifiers used in violation reports
RULE_OUT_OF_REGION = "out-of-region"
RULE_MISSING_RET = "missing-ret"
RULE_BACKWARD_BRANCH = "backward-branch"
RULE_BAD_TARGET = "bad-branch-target"
RULE_UNKNOWN_SLOT = "unknown-slot"
RULE_UNKNOWN_CONFIG = "unknown-config"
RULE_BAD_WIDTH = "bad-width"
RULE_BAD_REGISTER = "bad-register"
RULE_BAD_OPERANDS = "bad-operands"
RULE_ILLEGAL_OPCODE = "illegal-opcode"
RULE_BAD_SLOT_DECL = "bad-slot-decl"
RULE_STORE_READONLY = "store-to-readonly"
RULE_WCET = "wcet-exceeded"
RULE_EMPTY = "empty-program"

# slot kinds a fastcall may use as data; text is execute-only and user-private
# memory is entirely off limits to the fastcall domain
LOADABLE_KINDS = frozenset((
    RegionKind.SCRATCHPAD,
    RegionKind.SHARED_RW,
    RegionKind.SHARED_RO,
    RegionKind.FASTCALL_PRIVATE,
    RegionKind.DEVICE_MMIO,
))
STORABLE_KINDS = frozenset((
    RegionKind.SCRATCHPAD,
    RegionKind.SHARED_RW,
    RegionKind.FASTCALL_PRIVATE,
    RegionKind.DEVICE_MMIO,
))


@dataclass(frozen=True)
class Violation:
    index: int  # instruction index, -1 for program-level problems
    rule: str
    message: str


@dataclass(frozen=True)
class VerifierReport:
    accepted: bool
    violations: tuple[Violation, ...]
    wcet_ns: float
    max_path_len: int


TOP = (0, U64)


def _hull(a, b):
    return (min(a[0], b[0]), max(a[1], b[1]))


def _interval_of_operand(ins: Instruction, regs) -> tuple[int, int]:
    if ins.src is not None:
        return regs[ins.src]
    return (ins.imm, ins.imm)


def _transfer(ins: Instruction, regs: tuple) -> tuple:
    """Abstract effect of one instruction on the register intervals."""
    op = ins.opcode
    if op in (Opcode.CMP_JNE, Opcode.CMP_JEQ, Opcode.STORE, Opcode.FENCE_NT, Opcode.RET):
        return regs
    out = list(regs)
    if op is Opcode.MOV_IMM:
        out[ins.reg] = (ins.imm, ins.imm)
    elif op is Opcode.MOV_REG:
        out[ins.reg] = regs[ins.src]
    elif op is Opcode.LOAD_CONFIG:
        # resolved against actual config constants by the caller; here we only
        # see the placeholder interval already computed
        raise AssertionError("handled by caller")
    elif op is Opcode.LOAD:
        out[ins.reg] = (0, (1 << (8 * ins.width)) - 1)
    elif op is Opcode.ADD:
        lo, hi = regs[ins.reg]
        slo, shi = _interval_of_operand(ins, regs)
        out[ins.reg] = TOP if hi + shi > U64 else (lo + slo, hi + shi)
    elif op is Opcode.SUB:
        lo, hi = regs[ins.reg]
        slo, shi = _interval_of_operand(ins, regs)
        out[ins.reg] = TOP if lo - shi < 0 else (lo - shi, hi - slo)
    elif op is Opcode.AND:
        _, hi = regs[ins.reg]
        _, shi = _interval_of_operand(ins, regs)
        out[ins.reg] = (0, min(hi, shi))
    elif op is Opcode.OR:
        lo, hi = regs[ins.reg]
        slo, shi = _interval_of_operand(ins, regs)
        bits = max(hi.bit_length(), shi.bit_length())
        out[ins.reg] = (max(lo, slo), min((1 << bits) - 1, U64))
    elif op is Opcode.SHL:
        lo, hi = regs[ins.reg]
        slo, shi = _interval_of_operand(ins, regs)
        if slo == shi:
            k = slo & 63
            out[ins.reg] = TOP if (hi << k) > U64 else (lo << k, hi << k)
        else:
            out[ins.reg] = TOP
    elif op is Opcode.SHR:
        lo, hi = regs[ins.reg]
        slo, shi = _interval_of_operand(ins, regs)
        if slo == shi:
            k = slo & 63
            out[ins.reg] = (lo >> k, hi >> k)
        else:
            # shifting right never grows the value
            out[ins.reg] = (0, hi)
    else:
        raise AssertionError(f"unhandled opcode {op}")
    return tuple(out)


def _check_structure(program: FastcallProgram) -> list[Violation]:
    violations: list[Violation] = []
    n = len(program.instructions)
    if n == 0:
        return [Violation(-1, RULE_EMPTY, "program has no instructions")]

    slot_map = {}
    for decl in program.region_slots:
        if decl.slot_id in slot_map:
            violations.append(Violation(-1, RULE_BAD_SLOT_DECL, f"duplicate slot {decl.slot_id!r}"))
        if decl.min_length <= 0:
            violations.append(Violation(-1, RULE_BAD_SLOT_DECL, f"slot {decl.slot_id!r} min length must be positive"))
        if decl.kind not in LOADABLE_KINDS:
            violations.append(Violation(
                -1, RULE_BAD_SLOT_DECL,
                f"slot {decl.slot_id!r} kind {decl.kind.value} is not fastcall-addressable data",
            ))
        slot_map[decl.slot_id] = decl

    def check_reg(idx, value, what):
        if value is None or not 0 <= value < REGISTER_COUNT:
            violations.append(Violation(idx, RULE_BAD_REGISTER, f"{what} register {value!r} invalid"))
            return False
        return True

    for idx, ins in enumerate(program.instructions):
        if not isinstance(ins, Instruction) or not isinstance(ins.opcode, Opcode):
            violations.append(Violation(idx, RULE_ILLEGAL_OPCODE, f"not a recognised instruction: {ins!r}"))
            continue
        op = ins.opcode
        if op is Opcode.MOV_IMM:
            check_reg(idx, ins.reg, "destination")
            if ins.imm is None:
                violations.append(Violation(idx, RULE_BAD_OPERANDS, "MOV_IMM needs an immediate"))
        elif op is Opcode.MOV_REG:
            check_reg(idx, ins.reg, "destination")
            check_reg(idx, ins.src, "source")
        elif op in ALU_OPS:
            check_reg(idx, ins.reg, "destination")
            if (ins.src is None) == (ins.imm is None):
                violations.append(Violation(idx, RULE_BAD_OPERANDS, f"{op.value} needs exactly one of src/imm"))
            elif ins.src is not None:
                check_reg(idx, ins.src, "source")
        elif op in BRANCH_OPS:
            check_reg(idx, ins.reg, "compare")
            if (ins.src is None) == (ins.imm is None):
                violations.append(Violation(idx, RULE_BAD_OPERANDS, f"{op.value} needs exactly one of src/imm"))
            elif ins.src is not None:
                check_reg(idx, ins.src, "compare")
            if ins.target is None or ins.target <= idx:
                violations.append(Violation(
                    idx, RULE_BACKWARD_BRANCH,
                    f"branch target {ins.target!r} is not strictly forward",
                ))
            elif ins.target >= n:
                violations.append(Violation(idx, RULE_BAD_TARGET, f"branch target {ins.target} beyond end"))
        elif op in (Opcode.LOAD, Opcode.STORE):
            check_reg(idx, ins.reg, "data")
            if ins.slot not in slot_map:
                violations.append(Violation(idx, RULE_UNKNOWN_SLOT, f"slot {ins.slot!r} not declared"))
            if ins.width not in WIDTHS:
                violations.append(Violation(idx, RULE_BAD_WIDTH, f"width {ins.width!r} not in {WIDTHS}"))
            if (ins.offset_reg is None) == (ins.offset_imm is None):
                violations.append(Violation(idx, RULE_BAD_OPERANDS, "need exactly one of offset_reg/offset_imm"))
            elif ins.offset_reg is not None:
                check_reg(idx, ins.offset_reg, "offset")
            if op is Opcode.STORE and ins.slot in slot_map and slot_map[ins.slot].kind not in STORABLE_KINDS:
                violations.append(Violation(
                    idx, RULE_STORE_READONLY,
                    f"slot {ins.slot!r} kind {slot_map[ins.slot].kind.value} is read-only for fastcalls",
                ))
        elif op is Opcode.LOAD_CONFIG:
            check_reg(idx, ins.reg, "destination")
            if ins.imm is None or not 0 <= ins.imm < len(program.config_params):
                violations.append(Violation(
                    idx, RULE_UNKNOWN_CONFIG,
                    f"config index {ins.imm!r} not declared (have {len(program.config_params)})",
                ))
        elif op is Opcode.RET:
            check_reg(idx, ins.reg, "return value")
        # FENCE_NT has no operands to validate
    return violations


def _successors(ins: Instruction, idx: int, n: int) -> list[int]:
    if ins.opcode is Opcode.RET:
        return []
    succs = []
    if idx + 1 < n:
        succs.append(idx + 1)
    if ins.opcode in BRANCH_OPS and ins.target is not None and idx < ins.target < n:
        if ins.target not in succs:
            succs.append(ins.target)
    return succs


def _reachable(program: FastcallProgram) -> list[bool]:
    n = len(program.instructions)
    reached = [False] * n
    reached[0] = True
    for idx in range(n):  # forward edges only, index order is topological
        if not reached[idx]:
            continue
        for succ in _successors(program.instructions[idx], idx, n):
            reached[succ] = True
    return reached


def _check_ranges_and_termination(program: FastcallProgram) -> list[Violation]:
    violations: list[Violation] = []
    n = len(program.instructions)
    reached = _reachable(program)
    in_state: list = [None] * n
    in_state[0] = tuple(TOP for _ in range(REGISTER_COUNT))

    for idx in range(n):
        if not reached[idx] or in_state[idx] is None:
            continue
        ins = program.instructions[idx]
        regs = in_state[idx]

        if ins.opcode in (Opcode.LOAD, Opcode.STORE):
            decl = program.slot_map.get(ins.slot)
            if decl is not None and ins.width in WIDTHS:
                if ins.offset_imm is not None:
                    lo, hi = ins.offset_imm, ins.offset_imm
                else:
                    lo, hi = regs[ins.offset_reg]
                if hi + ins.width > decl.min_length:
                    access = "load" if ins.opcode is Opcode.LOAD else "store"
                    if hi >= U64:
                        detail = f"offset register r{ins.offset_reg} has no provable bound"
                    else:
                        detail = f"offset may reach {hi}, so {access} of {ins.width} exceeds slot length {decl.min_length}"
                    violations.append(Violation(idx, RULE_OUT_OF_REGION, detail))

        if ins.opcode is Opcode.RET:
            continue
        succs = _successors(ins, idx, n)
        if idx + 1 >= n:
            violations.append(Violation(idx, RULE_MISSING_RET, "execution can fall off the program end"))
        if ins.opcode is Opcode.LOAD_CONFIG:
            out = list(regs)
            if ins.imm is not None and 0 <= ins.imm < len(program.config_params):
                c = program.config_params[ins.imm]
                out[ins.reg] = (c, c)
            else:
                out[ins.reg] = TOP
            out_state = tuple(out)
        else:
            out_state = _transfer(ins, regs)
        for succ in succs:
            in_state[succ] = out_state if in_state[succ] is None else tuple(
                _hull(a, b) for a, b in zip(in_state[succ], out_state)
            )
    return violations


def _instruction_cost(ins: Instruction, program: FastcallProgram, params: CostParameters, pending: int):
    """(cost of executing ins given `pending` unflushed cached stores, new pending)."""
    op = ins.opcode
    if op is Opcode.FENCE_NT:
        return params.alu_ns + (params.mem_nt_ns - params.mem_cached_ns) * pending, 0
    if op is Opcode.LOAD:
        decl = program.slot_map.get(ins.slot)
        if decl is not None and decl.kind is RegionKind.DEVICE_MMIO:
            return params.mem_nt_ns, pending  # device window reads are uncached
        return params.mem_cached_ns, pending
    if op is Opcode.STORE:
        decl = program.slot_map.get(ins.slot)
        if decl is not None and decl.kind is RegionKind.DEVICE_MMIO:
            return params.mem_nt_ns, pending
        return params.mem_cached_ns, pending + 1
    return params.alu_ns, pending


def wcet(program: FastcallProgram, params: CostParameters) -> float:
    """Longest-path cost of the program DAG in nanoseconds.

    Upper-bounds the modeled cost of any interpretation of the same program.
    Programs containing FENCE_NT need path state (the count of stores a later
    fence would upgrade), so the walk memoizes on (index, pending stores).
    """
    return _longest_path(program, params)[0]


def max_path_length(program: FastcallProgram) -> int:
    return _longest_path(program, None)[1]


def _longest_path(program: FastcallProgram, params) -> tuple[float, int]:
    n = len(program.instructions)
    if n == 0:
        return 0.0, 0

    has_fence = any(ins.opcode is Opcode.FENCE_NT for ins in program.instructions)
    # (cost, length) from each state to the end of its best path
    memo: dict[tuple[int, int], tuple[float, int]] = {}
    stack: list[tuple[int, int]] = [(0, 0)]
    while stack:
        idx, pending = stack[-1]
        if (idx, pending) in memo:
            stack.pop()
            continue
        ins = program.instructions[idx]
        if params is None:
            step, next_pending = 1.0, 0
        else:
            step, next_pending = _instruction_cost(ins, program, params, pending)
            if not has_fence:
                next_pending = 0  # no fence anywhere: pending count is irrelevant
        succs = [(s, next_pending) for s in _successors(ins, idx, n)]
        missing = [s for s in succs if s not in memo]
        if missing:
            stack.extend(missing)
            continue
        stack.pop()
        if succs:
            best_cost, best_len = max(memo[s] for s in succs)
        else:
            best_cost, best_len = 0.0, 0
        memo[(idx, pending)] = (step + best_cost, 1 + best_len)

    cost, length = memo[(0, 0)]
    return cost, length


def verify(
    program: FastcallProgram,
    wcet_ceiling_ns: float,
    cost_params: CostParameters,
) -> VerifierReport:
    """Run all static checks and return the acceptance report."""
    violations = _check_structure(program)
    wcet_ns = float("inf")
    path_len = 0
    # range analysis and path walks assume a structurally clean program
    if not violations:
        violations.extend(_check_ranges_and_termination(program))
        wcet_ns, path_len = (
            _longest_path(program, cost_params)[0],
            _longest_path(program, None)[1],
        )
        if wcet_ns > wcet_ceiling_ns:
            violations.append(Violation(
                -1, RULE_WCET,
                f"worst-case path costs {wcet_ns:g} ns, ceiling is {wcet_ceiling_ns:g} ns",
            ))
    accepted = not violations and wcet_ns <= wcet_ceiling_ns
    return VerifierReport(
        accepted=accepted,
        violations=tuple(violations),
        wcet_ns=wcet_ns,
        max_path_len=path_len,
    )
