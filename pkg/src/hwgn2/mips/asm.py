"""Two-pass assembler / disassembler for the supported subset.

Directives:
  .dmem <addr> <word>     garbler-supplied data word (weights, constants)
  .input <base> <count>   evaluator input region in data memory
  .output <base> <count>  result region read back after HALT
Labels are `name:` on their own line or before an instruction.  Branch
targets may be labels or raw signed offsets; jump targets labels or raw
word indices.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .isa import (BRANCHES, I_OPCODE, J_OPCODE, Mnemonic, R_FUNCT, SHIFTS,
                  decode, encode)


class AsmError(Exception):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass
class MipsProgram:
    instructions: list[int]
    dmem_init_garbler: dict[int, int] = field(default_factory=dict)
    evaluator_input_region: tuple[int, int] = (0, 0)
    output_region: tuple[int, int] = (0, 0)

    def __len__(self) -> int:
        return len(self.instructions)


_LABEL_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*):$")
_REG_RE = re.compile(r"^r([0-9]|[12][0-9]|3[01])$")
_MEM_RE = re.compile(r"^(-?(?:0x[0-9a-fA-F]+|[0-9]+))\(r([0-9]+)\)$")


def _int(tok: str, lineno: int) -> int:
    try:
        return int(tok, 0)
    except ValueError:
        raise AsmError(lineno, f"bad number {tok!r}") from None


def _reg(tok: str, lineno: int) -> int:
    m = _REG_RE.match(tok)
    if not m:
        raise AsmError(lineno, f"bad register {tok!r}")
    return int(m.group(1))


def assemble(text: str) -> MipsProgram:
    labels: dict[str, int] = {}
    items: list[tuple[int, str, list[str]]] = []   # (lineno, mnemonic, operands)
    dmem: dict[int, int] = {}
    input_region = (0, 0)
    output_region = (0, 0)

    # pass 1: tokenize, collect labels and directives
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _LABEL_RE.match(line.split()[0])
        if m:
            name = m.group(1)
            if name in labels:
                raise AsmError(lineno, f"duplicate label {name!r}")
            labels[name] = len(items)
            line = line.split(None, 1)[1] if " " in line else ""
            if not line:
                continue
        tok = line.replace(",", " ").split()
        head = tok[0].lower()
        if head == ".dmem":
            if len(tok) != 3:
                raise AsmError(lineno, ".dmem takes <addr> <word>")
            addr = _int(tok[1], lineno)
            if addr in dmem:
                raise AsmError(lineno, f".dmem address {addr} set twice")
            dmem[addr] = _int(tok[2], lineno) & 0xFFFFFFFF
        elif head == ".input":
            if len(tok) != 3:
                raise AsmError(lineno, ".input takes <base> <count>")
            input_region = (_int(tok[1], lineno), _int(tok[2], lineno))
        elif head == ".output":
            if len(tok) != 3:
                raise AsmError(lineno, ".output takes <base> <count>")
            output_region = (_int(tok[1], lineno), _int(tok[2], lineno))
        else:
            items.append((lineno, tok[0].upper(), tok[1:]))

    # pass 2: encode
    words = []
    for pc, (lineno, name, ops) in enumerate(items):
        try:
            m = Mnemonic(name)
        except ValueError:
            raise AsmError(lineno, f"unknown mnemonic {name!r}") from None

        def resolve_branch(tok: str) -> int:
            if tok in labels:
                return labels[tok] - (pc + 1)
            return _int(tok, lineno)

        def resolve_jump(tok: str) -> int:
            if tok in labels:
                return labels[tok]
            return _int(tok, lineno)

        try:
            if m is Mnemonic.HALT:
                words.append(encode(m))
            elif m in SHIFTS:
                rd, rt, sh = _reg(ops[0], lineno), _reg(ops[1], lineno), _int(ops[2], lineno)
                words.append(encode(m, rt=rt, rd=rd, shamt=sh))
            elif m is Mnemonic.JR:
                words.append(encode(m, rs=_reg(ops[0], lineno)))
            elif m is Mnemonic.MFLO:
                words.append(encode(m, rd=_reg(ops[0], lineno)))
            elif m is Mnemonic.MULT:
                words.append(encode(m, rs=_reg(ops[0], lineno), rt=_reg(ops[1], lineno)))
            elif m in R_FUNCT:   # three-register ALU ops
                rd, rs, rt = (_reg(ops[0], lineno), _reg(ops[1], lineno),
                              _reg(ops[2], lineno))
                words.append(encode(m, rs=rs, rt=rt, rd=rd))
            elif m in (Mnemonic.LW, Mnemonic.SW):
                rt = _reg(ops[0], lineno)
                mm = _MEM_RE.match(ops[1])
                if mm:
                    imm, rs = int(mm.group(1), 0), int(mm.group(2))
                else:
                    imm, rs = _int(ops[1], lineno), 0
                words.append(encode(m, rs=rs, rt=rt, imm=imm))
            elif m in BRANCHES:
                rs, rt = _reg(ops[0], lineno), _reg(ops[1], lineno)
                words.append(encode(m, rs=rs, rt=rt, imm=resolve_branch(ops[2])))
            elif m is Mnemonic.LUI:
                words.append(encode(m, rt=_reg(ops[0], lineno), imm=_int(ops[1], lineno)))
            elif m in I_OPCODE:  # remaining immediate ALU forms: rt, rs, imm
                rt, rs, imm = (_reg(ops[0], lineno), _reg(ops[1], lineno),
                               _int(ops[2], lineno))
                words.append(encode(m, rs=rs, rt=rt, imm=imm))
            elif m in J_OPCODE:
                words.append(encode(m, target=resolve_jump(ops[0])))
            else:
                raise AsmError(lineno, f"cannot assemble {name}")
        except IndexError:
            raise AsmError(lineno, f"missing operand for {name}") from None
        except Exception as exc:
            if isinstance(exc, AsmError):
                raise
            raise AsmError(lineno, str(exc)) from None

    return MipsProgram(instructions=words, dmem_init_garbler=dmem,
                       evaluator_input_region=input_region,
                       output_region=output_region)


def disassemble(program: MipsProgram) -> str:
    """Canonical text form; assemble(disassemble(p)) reproduces p."""
    lines = []
    if program.evaluator_input_region != (0, 0):
        b, n = program.evaluator_input_region
        lines.append(f".input {b} {n}")
    if program.output_region != (0, 0):
        b, n = program.output_region
        lines.append(f".output {b} {n}")
    for addr in sorted(program.dmem_init_garbler):
        lines.append(f".dmem {addr} {program.dmem_init_garbler[addr]}")
    for word in program.instructions:
        iw = decode(word)
        m = iw.mnemonic()
        if m is Mnemonic.HALT:
            lines.append("HALT")
        elif m in SHIFTS:
            lines.append(f"{m.value} r{iw.rd}, r{iw.rt}, {iw.shamt}")
        elif m is Mnemonic.JR:
            lines.append(f"JR r{iw.rs}")
        elif m is Mnemonic.MFLO:
            lines.append(f"MFLO r{iw.rd}")
        elif m is Mnemonic.MULT:
            lines.append(f"MULT r{iw.rs}, r{iw.rt}")
        elif m in R_FUNCT:
            lines.append(f"{m.value} r{iw.rd}, r{iw.rs}, r{iw.rt}")
        elif m in (Mnemonic.LW, Mnemonic.SW):
            lines.append(f"{m.value} r{iw.rt}, {iw.simm16}(r{iw.rs})")
        elif m in BRANCHES:
            lines.append(f"{m.value} r{iw.rs}, r{iw.rt}, {iw.simm16}")
        elif m is Mnemonic.LUI:
            lines.append(f"LUI r{iw.rt}, {iw.imm16}")
        elif m in I_OPCODE:
            imm = iw.simm16 if m in (Mnemonic.ADDI, Mnemonic.ADDIU, Mnemonic.SLTI) else iw.imm16
            lines.append(f"{m.value} r{iw.rt}, r{iw.rs}, {imm}")
        else:  # J / JAL
            lines.append(f"{m.value} {iw.target26}")
    return "\n".join(lines) + "\n"
