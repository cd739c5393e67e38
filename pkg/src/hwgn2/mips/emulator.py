"""Functional interpreter for the instruction subset.

`step_plain` is the reference single-step semantics that the combinational
step netlist must match bit for bit, with one deliberate exception: data
memory accesses out of range raise here, while the netlist wraps the address
modulo the memory size.  Callers keep addresses in range so both agree.

`run_plain_vec` executes many input vectors in lockstep with numpy.  It
requires input-independent control flow (the compiled inference programs are
branchless and unrolled, so the pc trace is the same for every lane).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .asm import MipsProgram
from .isa import PC_BITS, WORD_MASK, Mnemonic, decode

PC_MASK = (1 << PC_BITS) - 1


class EmulatorError(Exception):
    pass


@dataclass
class CpuStepConfig:
    """Shape of the machine; shared by the interpreter and the step netlist."""

    dmem_words: int = 64
    include_mult: bool = True

    def __post_init__(self):
        w = self.dmem_words
        if w < 16 or w > 4096 or w & (w - 1):
            raise ValueError("dmem_words must be a power of two in [16, 4096]")


@dataclass
class CpuState:
    pc: int = 0
    halted: bool = False
    lo: int = 0
    regs: list[int] = field(default_factory=lambda: [0] * 32)
    dmem: list[int] = field(default_factory=list)

    def copy(self) -> "CpuState":
        return replace(self, regs=list(self.regs), dmem=list(self.dmem))


@dataclass(frozen=True)
class WriteEvent:
    """One architectural write; leakage models hash these into power samples."""

    kind: str    # "pc" | "reg" | "lo" | "mem"
    index: int
    value: int


@dataclass
class RunResult:
    state: CpuState
    outputs: list[int]
    steps: int


def initial_state(cfg: CpuStepConfig) -> CpuState:
    return CpuState(dmem=[0] * cfg.dmem_words)


def _signed(v: int) -> int:
    return v - (1 << 32) if v & 0x80000000 else v


def step_plain(instr_word: int, state: CpuState, cfg: CpuStepConfig,
               sink: Optional[Callable[[WriteEvent], None]] = None) -> CpuState:
    """Apply one instruction, returning the next state.

    A halted core ignores the instruction and keeps its state.  Writes to r0
    are dropped.  The sink, if given, sees every architectural write of the
    step (new pc included) in a fixed order.
    """
    if len(state.dmem) != cfg.dmem_words:
        raise EmulatorError("state dmem size does not match config")
    if state.halted:
        return state.copy()

    iw = decode(instr_word)
    m = iw.mnemonic()
    nxt = state.copy()
    rs_v, rt_v = state.regs[iw.rs], state.regs[iw.rt]
    next_pc = (state.pc + 1) & PC_MASK

    def wreg(idx: int, value: int):
        value &= WORD_MASK
        if idx != 0:
            nxt.regs[idx] = value
            if sink:
                sink(WriteEvent("reg", idx, value))

    if m is Mnemonic.HALT:
        nxt.halted = True
    elif m in (Mnemonic.ADD, Mnemonic.ADDU):
        wreg(iw.rd, rs_v + rt_v)
    elif m is Mnemonic.SUB:
        wreg(iw.rd, rs_v - rt_v)
    elif m is Mnemonic.AND:
        wreg(iw.rd, rs_v & rt_v)
    elif m is Mnemonic.OR:
        wreg(iw.rd, rs_v | rt_v)
    elif m is Mnemonic.XOR:
        wreg(iw.rd, rs_v ^ rt_v)
    elif m is Mnemonic.NOR:
        wreg(iw.rd, ~(rs_v | rt_v))
    elif m is Mnemonic.SLT:
        wreg(iw.rd, int(_signed(rs_v) < _signed(rt_v)))
    elif m is Mnemonic.SLTU:
        wreg(iw.rd, int(rs_v < rt_v))
    elif m is Mnemonic.SLL:
        wreg(iw.rd, rt_v << iw.shamt)
    elif m is Mnemonic.SRL:
        wreg(iw.rd, rt_v >> iw.shamt)
    elif m is Mnemonic.SRA:
        wreg(iw.rd, _signed(rt_v) >> iw.shamt)
    elif m is Mnemonic.JR:
        next_pc = rs_v & PC_MASK
    elif m is Mnemonic.MULT:
        if not cfg.include_mult:
            raise EmulatorError("MULT not available in this configuration")
        nxt.lo = (rs_v * rt_v) & WORD_MASK
        if sink:
            sink(WriteEvent("lo", 0, nxt.lo))
    elif m is Mnemonic.MFLO:
        if not cfg.include_mult:
            raise EmulatorError("MFLO not available in this configuration")
        wreg(iw.rd, state.lo)
    elif m in (Mnemonic.ADDI, Mnemonic.ADDIU):
        wreg(iw.rt, rs_v + iw.simm16)
    elif m is Mnemonic.SLTI:
        wreg(iw.rt, int(_signed(rs_v) < iw.simm16))
    elif m is Mnemonic.ANDI:
        wreg(iw.rt, rs_v & iw.imm16)
    elif m is Mnemonic.ORI:
        wreg(iw.rt, rs_v | iw.imm16)
    elif m is Mnemonic.XORI:
        wreg(iw.rt, rs_v ^ iw.imm16)
    elif m is Mnemonic.LUI:
        wreg(iw.rt, iw.imm16 << 16)
    elif m is Mnemonic.LW:
        addr = (rs_v + iw.simm16) & WORD_MASK
        if addr >= cfg.dmem_words:
            raise EmulatorError(f"LW address {addr} out of range")
        wreg(iw.rt, state.dmem[addr])
    elif m is Mnemonic.SW:
        addr = (rs_v + iw.simm16) & WORD_MASK
        if addr >= cfg.dmem_words:
            raise EmulatorError(f"SW address {addr} out of range")
        nxt.dmem[addr] = rt_v
        if sink:
            sink(WriteEvent("mem", addr, rt_v))
    elif m is Mnemonic.BEQ:
        if rs_v == rt_v:
            next_pc = (state.pc + 1 + iw.simm16) & PC_MASK
    elif m is Mnemonic.BNE:
        if rs_v != rt_v:
            next_pc = (state.pc + 1 + iw.simm16) & PC_MASK
    elif m in (Mnemonic.J, Mnemonic.JAL):
        if m is Mnemonic.JAL:
            wreg(31, (state.pc + 1) & PC_MASK)
        next_pc = iw.target26 & PC_MASK
    else:  # pragma: no cover - decode already rejects anything else
        raise EmulatorError(f"unhandled mnemonic {m}")

    nxt.pc = next_pc
    if sink:
        sink(WriteEvent("pc", 0, next_pc))
    return nxt


def run_plain(program: MipsProgram, cfg: CpuStepConfig,
              evaluator_input: Optional[list[int]] = None,
              max_steps: int = 100_000,
              sink: Optional[Callable[[int, WriteEvent], None]] = None) -> RunResult:
    """Run a program to HALT, returning the words of its output region.

    The garbler-side memory image comes from the program; the evaluator input
    words fill the declared input region.
    """
    state = initial_state(cfg)
    for addr, word in program.dmem_init_garbler.items():
        if addr >= cfg.dmem_words:
            raise EmulatorError(f"dmem init address {addr} out of range")
        state.dmem[addr] = word
    base, count = program.evaluator_input_region
    evaluator_input = evaluator_input or []
    if len(evaluator_input) != count:
        raise EmulatorError(f"expected {count} input words, got {len(evaluator_input)}")
    for i, word in enumerate(evaluator_input):
        if base + i >= cfg.dmem_words:
            raise EmulatorError("input region out of range")
        state.dmem[base + i] = word & WORD_MASK

    steps = 0
    while not state.halted:
        if steps >= max_steps:
            raise EmulatorError(f"no HALT within {max_steps} steps")
        if state.pc >= len(program.instructions):
            raise EmulatorError(f"pc {state.pc} outside program")
        step_sink = (lambda ev, _t=steps: sink(_t, ev)) if sink else None
        state = step_plain(program.instructions[state.pc], state, cfg, step_sink)
        steps += 1

    obase, ocount = program.output_region
    outputs = [state.dmem[obase + i] for i in range(ocount)]
    return RunResult(state=state, outputs=outputs, steps=steps)


def run_plain_vec(program: MipsProgram, cfg: CpuStepConfig,
                  evaluator_inputs: np.ndarray,
                  max_steps: int = 100_000,
                  sink: Optional[Callable[[int, str, int, np.ndarray], None]] = None,
                  ) -> tuple[np.ndarray, int]:
    """Run one program over a batch of input vectors in lockstep.

    evaluator_inputs has shape (n_lanes, n_input_words).  Control flow must
    not depend on lane data; a branch that splits the lanes raises.  The sink
    sees (step, kind, index, values) for each write, values per lane.
    Returns (outputs of shape (n_lanes, n_output_words), steps).
    """
    lanes = int(evaluator_inputs.shape[0])
    base, count = program.evaluator_input_region
    if evaluator_inputs.shape[1] != count:
        raise EmulatorError(f"expected {count} input words per lane")

    regs = np.zeros((32, lanes), dtype=np.uint32)
    dmem = np.zeros((cfg.dmem_words, lanes), dtype=np.uint32)
    lo = np.zeros(lanes, dtype=np.uint32)
    for addr, word in program.dmem_init_garbler.items():
        dmem[addr, :] = word
    dmem[base:base + count, :] = evaluator_inputs.T.astype(np.uint32)

    pc = 0
    steps = 0
    while True:
        if steps >= max_steps:
            raise EmulatorError(f"no HALT within {max_steps} steps")
        if pc >= len(program.instructions):
            raise EmulatorError(f"pc {pc} outside program")
        iw = decode(program.instructions[pc])
        m = iw.mnemonic()
        rs_v, rt_v = regs[iw.rs], regs[iw.rt]
        next_pc = (pc + 1) & PC_MASK
        val = None
        dest = iw.rd

        if m is Mnemonic.HALT:
            # HALT is a step like any other; the pc still advances
            if sink:
                sink(steps, "pc", 0, np.full(lanes, next_pc, dtype=np.uint32))
            steps += 1
            break
        elif m in (Mnemonic.ADD, Mnemonic.ADDU):
            val = rs_v + rt_v
        elif m is Mnemonic.SUB:
            val = rs_v - rt_v
        elif m is Mnemonic.AND:
            val = rs_v & rt_v
        elif m is Mnemonic.OR:
            val = rs_v | rt_v
        elif m is Mnemonic.XOR:
            val = rs_v ^ rt_v
        elif m is Mnemonic.NOR:
            val = ~(rs_v | rt_v)
        elif m is Mnemonic.SLT:
            val = (rs_v.view(np.int32) < rt_v.view(np.int32)).astype(np.uint32)
        elif m is Mnemonic.SLTU:
            val = (rs_v < rt_v).astype(np.uint32)
        elif m is Mnemonic.SLL:
            val = rt_v << np.uint32(iw.shamt)
        elif m is Mnemonic.SRL:
            val = rt_v >> np.uint32(iw.shamt)
        elif m is Mnemonic.SRA:
            val = (rt_v.view(np.int32) >> np.int32(iw.shamt)).view(np.uint32)
        elif m is Mnemonic.JR:
            tgt = np.unique(rs_v & PC_MASK)
            if tgt.size != 1:
                raise EmulatorError("JR target differs between lanes")
            next_pc = int(tgt[0])
        elif m is Mnemonic.MULT:
            if not cfg.include_mult:
                raise EmulatorError("MULT not available in this configuration")
            lo = (rs_v.astype(np.uint64) * rt_v).astype(np.uint32)
            if sink:
                sink(steps, "lo", 0, lo)
        elif m is Mnemonic.MFLO:
            val = lo.copy()
        elif m in (Mnemonic.ADDI, Mnemonic.ADDIU):
            val, dest = rs_v + np.uint32(iw.simm16 & 0xFFFFFFFF), iw.rt
        elif m is Mnemonic.SLTI:
            val = (rs_v.view(np.int32) < np.int32(iw.simm16)).astype(np.uint32)
            dest = iw.rt
        elif m is Mnemonic.ANDI:
            val, dest = rs_v & np.uint32(iw.imm16), iw.rt
        elif m is Mnemonic.ORI:
            val, dest = rs_v | np.uint32(iw.imm16), iw.rt
        elif m is Mnemonic.XORI:
            val, dest = rs_v ^ np.uint32(iw.imm16), iw.rt
        elif m is Mnemonic.LUI:
            val, dest = np.full(lanes, iw.imm16 << 16, dtype=np.uint32), iw.rt
        elif m in (Mnemonic.LW, Mnemonic.SW):
            addr = np.unique((rs_v + np.uint32(iw.simm16 & 0xFFFFFFFF)))
            if addr.size != 1:
                raise EmulatorError(f"{m.value} address differs between lanes")
            a = int(addr[0])
            if a >= cfg.dmem_words:
                raise EmulatorError(f"{m.value} address {a} out of range")
            if m is Mnemonic.LW:
                val, dest = dmem[a].copy(), iw.rt
            else:
                dmem[a] = rt_v
                if sink:
                    sink(steps, "mem", a, rt_v)
        elif m in (Mnemonic.BEQ, Mnemonic.BNE):
            cond = (rs_v == rt_v) if m is Mnemonic.BEQ else (rs_v != rt_v)
            taken = np.unique(cond)
            if taken.size != 1:
                raise EmulatorError("branch outcome differs between lanes")
            if bool(taken[0]):
                next_pc = (pc + 1 + iw.simm16) & PC_MASK
        elif m in (Mnemonic.J, Mnemonic.JAL):
            if m is Mnemonic.JAL:
                regs[31] = (pc + 1) & PC_MASK
                if sink:
                    sink(steps, "reg", 31, regs[31])
            next_pc = iw.target26 & PC_MASK

        if val is not None and dest != 0:
            regs[dest] = val.astype(np.uint32)
            if sink:
                sink(steps, "reg", dest, regs[dest])
        if sink:
            sink(steps, "pc", 0, np.full(lanes, next_pc, dtype=np.uint32))
        pc = next_pc
        steps += 1

    obase, ocount = program.output_region
    return dmem[obase:obase + ocount].T.copy(), steps
