"""Instruction subset: encodings, decode/encode, field views.

The machine is word-addressed (pc and load/store addresses are word indices),
32-bit data, no delay slots, no traps (ADD behaves like ADDU).  HALT is a
reserved R-type funct that stops the core.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

PC_BITS = 16
WORD_MASK = 0xFFFFFFFF


class InstrError(Exception):
    pass


class Mnemonic(enum.Enum):
    ADD = "ADD"
    ADDU = "ADDU"
    SUB = "SUB"
    AND = "AND"
    OR = "OR"
    XOR = "XOR"
    NOR = "NOR"
    SLT = "SLT"
    SLTU = "SLTU"
    SLL = "SLL"
    SRL = "SRL"
    SRA = "SRA"
    JR = "JR"
    MULT = "MULT"
    MFLO = "MFLO"
    HALT = "HALT"
    ADDI = "ADDI"
    ADDIU = "ADDIU"
    SLTI = "SLTI"
    ANDI = "ANDI"
    ORI = "ORI"
    XORI = "XORI"
    LUI = "LUI"
    LW = "LW"
    SW = "SW"
    BEQ = "BEQ"
    BNE = "BNE"
    J = "J"
    JAL = "JAL"


# R-type functs (op == 0)
R_FUNCT = {
    Mnemonic.SLL: 0x00, Mnemonic.SRL: 0x02, Mnemonic.SRA: 0x03,
    Mnemonic.JR: 0x08, Mnemonic.MFLO: 0x12, Mnemonic.MULT: 0x18,
    Mnemonic.ADD: 0x20, Mnemonic.ADDU: 0x21, Mnemonic.SUB: 0x22,
    Mnemonic.AND: 0x24, Mnemonic.OR: 0x25, Mnemonic.XOR: 0x26,
    Mnemonic.NOR: 0x27, Mnemonic.SLT: 0x2A, Mnemonic.SLTU: 0x2B,
    Mnemonic.HALT: 0x3F,
}
FUNCT_R = {v: k for k, v in R_FUNCT.items()}

I_OPCODE = {
    Mnemonic.BEQ: 0x04, Mnemonic.BNE: 0x05,
    Mnemonic.ADDI: 0x08, Mnemonic.ADDIU: 0x09, Mnemonic.SLTI: 0x0A,
    Mnemonic.ANDI: 0x0C, Mnemonic.ORI: 0x0D, Mnemonic.XORI: 0x0E,
    Mnemonic.LUI: 0x0F, Mnemonic.LW: 0x23, Mnemonic.SW: 0x2B,
}
OPCODE_I = {v: k for k, v in I_OPCODE.items()}

J_OPCODE = {Mnemonic.J: 0x02, Mnemonic.JAL: 0x03}
OPCODE_J = {v: k for k, v in J_OPCODE.items()}

SHIFTS = (Mnemonic.SLL, Mnemonic.SRL, Mnemonic.SRA)
BRANCHES = (Mnemonic.BEQ, Mnemonic.BNE)
# immediates that are sign-extended (the logical ops zero-extend)
SIGNED_IMM = (Mnemonic.ADDI, Mnemonic.ADDIU, Mnemonic.SLTI,
              Mnemonic.LW, Mnemonic.SW, Mnemonic.BEQ, Mnemonic.BNE)


@dataclass(frozen=True)
class MipsInstructionWord:
    word: int

    @property
    def op(self) -> int:
        return (self.word >> 26) & 0x3F

    @property
    def rs(self) -> int:
        return (self.word >> 21) & 0x1F

    @property
    def rt(self) -> int:
        return (self.word >> 16) & 0x1F

    @property
    def rd(self) -> int:
        return (self.word >> 11) & 0x1F

    @property
    def shamt(self) -> int:
        return (self.word >> 6) & 0x1F

    @property
    def funct(self) -> int:
        return self.word & 0x3F

    @property
    def imm16(self) -> int:
        return self.word & 0xFFFF

    @property
    def simm16(self) -> int:
        v = self.imm16
        return v - 0x10000 if v & 0x8000 else v

    @property
    def target26(self) -> int:
        return self.word & 0x3FFFFFF

    def mnemonic(self) -> Mnemonic:
        if self.op == 0:
            m = FUNCT_R.get(self.funct)
        elif self.op in OPCODE_J:
            m = OPCODE_J[self.op]
        else:
            m = OPCODE_I.get(self.op)
        if m is None:
            raise InstrError(f"unsupported encoding 0x{self.word:08x} "
                             f"(op=0x{self.op:02x}, funct=0x{self.funct:02x})")
        return m


def decode(word: int) -> MipsInstructionWord:
    iw = MipsInstructionWord(word & WORD_MASK)
    iw.mnemonic()  # reject reserved encodings
    return iw


def encode(m: Mnemonic, rs: int = 0, rt: int = 0, rd: int = 0,
           shamt: int = 0, imm: int = 0, target: int = 0) -> int:
    for name, v, hi in (("rs", rs, 31), ("rt", rt, 31), ("rd", rd, 31),
                        ("shamt", shamt, 31)):
        if not 0 <= v <= hi:
            raise InstrError(f"{name}={v} out of range")
    if m in R_FUNCT:
        return (rs << 21) | (rt << 16) | (rd << 11) | (shamt << 6) | R_FUNCT[m]
    if m in J_OPCODE:
        if not 0 <= target < (1 << 26):
            raise InstrError(f"jump target {target} out of range")
        return (J_OPCODE[m] << 26) | target
    if m in I_OPCODE:
        if m in SIGNED_IMM:
            if not -0x8000 <= imm <= 0x7FFF:
                raise InstrError(f"{m.value} immediate {imm} out of signed 16-bit range")
        else:
            if not 0 <= imm <= 0xFFFF:
                raise InstrError(f"{m.value} immediate {imm} out of unsigned 16-bit range")
        return (I_OPCODE[m] << 26) | (rs << 21) | (rt << 16) | (imm & 0xFFFF)
    raise InstrError(f"unknown mnemonic {m}")
