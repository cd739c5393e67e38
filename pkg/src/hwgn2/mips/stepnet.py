"""Combinational single-step core as a boolean netlist.

One netlist application consumes the 32 instruction bits (garbler block) and
the full architectural state (evaluator block) and produces the next state.
Executing a program is repeated application with the state wires chained.

Memory and the register file are oblivious: every access touches a full mux
tree, so the gate trace never depends on addresses or data.  A halted core
holds its state (write enables are gated, the pc is frozen).

Design notes on cost: adders are Kogge-Stone (carry depth is logarithmic,
which bounds the level count that dominates single-instance garbling time);
the multiplier is a carry-save column reduction feeding one final adder and
is omitted entirely when `include_mult` is off; result buses are one-hot
masked XOR selects, which are free wherever a candidate bit is constant.

All words are wired LSB first.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from ..circuit import Netlist, NetlistBuilder
from .emulator import PC_MASK, CpuState, CpuStepConfig
from .isa import I_OPCODE, J_OPCODE, Mnemonic, PC_BITS, R_FUNCT

N_INSTR_BITS = 32
N_REGS = 32


@dataclass(frozen=True)
class StepLayout:
    """Bit positions of the state vector (shared by inputs and outputs)."""

    cfg: CpuStepConfig
    pc_off: int
    halted_off: int
    lo_off: Optional[int]
    reg_off: int        # r1 starts here; r0 is not part of the state
    mem_off: int
    n_state_bits: int

    @property
    def mem_addr_bits(self) -> int:
        return (self.cfg.dmem_words - 1).bit_length()

    def mem_word_offset(self, addr: int) -> int:
        if not 0 <= addr < self.cfg.dmem_words:
            raise ValueError(f"dmem address {addr} out of range")
        return self.mem_off + 32 * addr

    def reg_word_offset(self, reg: int) -> int:
        if not 1 <= reg <= 31:
            raise ValueError(f"register r{reg} has no state bits")
        return self.reg_off + 32 * (reg - 1)

    @staticmethod
    def instr_bits(word: int) -> list[int]:
        return [(word >> i) & 1 for i in range(N_INSTR_BITS)]

    def state_to_bits(self, state: CpuState) -> list[int]:
        bits = [0] * self.n_state_bits

        def put(off: int, value: int, width: int):
            for i in range(width):
                bits[off + i] = (value >> i) & 1

        put(self.pc_off, state.pc, PC_BITS)
        bits[self.halted_off] = int(state.halted)
        if self.lo_off is not None:
            put(self.lo_off, state.lo, 32)
        for r in range(1, 32):
            put(self.reg_word_offset(r), state.regs[r], 32)
        for a in range(self.cfg.dmem_words):
            put(self.mem_word_offset(a), state.dmem[a], 32)
        return bits

    def bits_to_state(self, bits: Sequence[int]) -> CpuState:
        if len(bits) != self.n_state_bits:
            raise ValueError(f"expected {self.n_state_bits} state bits, got {len(bits)}")

        def get(off: int, width: int) -> int:
            return sum(bits[off + i] << i for i in range(width))

        regs = [0] + [get(self.reg_word_offset(r), 32) for r in range(1, 32)]
        return CpuState(
            pc=get(self.pc_off, PC_BITS),
            halted=bool(bits[self.halted_off]),
            lo=get(self.lo_off, 32) if self.lo_off is not None else 0,
            regs=regs,
            dmem=[get(self.mem_word_offset(a), 32) for a in range(self.cfg.dmem_words)])


def _layout(cfg: CpuStepConfig) -> StepLayout:
    off = 0
    pc_off, off = off, off + PC_BITS
    halted_off, off = off, off + 1
    lo_off = None
    if cfg.include_mult:
        lo_off, off = off, off + 32
    reg_off, off = off, off + 31 * 32
    mem_off, off = off, off + cfg.dmem_words * 32
    return StepLayout(cfg=cfg, pc_off=pc_off, halted_off=halted_off,
                      lo_off=lo_off, reg_off=reg_off, mem_off=mem_off,
                      n_state_bits=off)


def _xor_fold(b: NetlistBuilder, wires: Sequence[int]) -> int:
    ws = list(wires)
    if not ws:
        return b.const0()
    while len(ws) > 1:
        nxt = [b.xor(ws[i], ws[i + 1]) for i in range(0, len(ws) - 1, 2)]
        if len(ws) % 2:
            nxt.append(ws[-1])
        ws = nxt
    return ws[0]


def _and_tree(b: NetlistBuilder, wires: Sequence[int]) -> int:
    ws = list(wires)
    while len(ws) > 1:
        nxt = [b.and_(ws[i], ws[i + 1]) for i in range(0, len(ws) - 1, 2)]
        if len(ws) % 2:
            nxt.append(ws[-1])
        ws = nxt
    return ws[0]


def _eq_const(b: NetlistBuilder, bits: Sequence[int], value: int) -> int:
    lits = [w if (value >> i) & 1 else b.not_(w) for i, w in enumerate(bits)]
    return _and_tree(b, lits)


def _ks_add(b: NetlistBuilder, a: Sequence[int], bb: Sequence[int],
            cin: Optional[int] = None) -> tuple[list[int], int]:
    """Kogge-Stone addition; returns (sum bits, carry out).

    Generate merges use XOR in place of OR: g and p&g' are never both set.
    """
    n = len(a)
    p = [b.xor(x, y) for x, y in zip(a, bb, strict=True)]
    G = [b.and_(x, y) for x, y in zip(a, bb, strict=True)]
    P = list(p)
    k = 1
    while k < n:
        for i in range(n - 1, k - 1, -1):
            G[i] = b.xor(G[i], b.and_(P[i], G[i - k]))
            P[i] = b.and_(P[i], P[i - k])
        k <<= 1
    if cin is None:
        s = [p[0]] + [b.xor(p[i], G[i - 1]) for i in range(1, n)]
        return s, G[-1]
    s = [b.xor(p[0], cin)]
    for i in range(1, n):
        ci = b.xor(G[i - 1], b.and_(P[i - 1], cin))
        s.append(b.xor(p[i], ci))
    return s, b.xor(G[-1], b.and_(P[-1], cin))


def _ripple_add(b: NetlistBuilder, a: Sequence[int], bb: Sequence[int]) -> list[int]:
    """Small-width modular add, used for data addresses only."""
    s = [b.xor(a[0], bb[0])]
    c = b.and_(a[0], bb[0])
    for x, y in zip(a[1:], bb[1:], strict=True):
        p = b.xor(x, y)
        s.append(b.xor(p, c))
        c = b.xor(b.and_(x, y), b.and_(c, p))
    return s


def _increment(b: NetlistBuilder, a: Sequence[int]) -> list[int]:
    s = [b.not_(a[0])]
    c = a[0]
    for x in a[1:]:
        s.append(b.xor(x, c))
        c = b.and_(x, c)
    return s


def _select_word(b: NetlistBuilder, sel_bits: Sequence[int],
                 words: Sequence[Sequence[int]]) -> list[int]:
    """Mux tree: words[i] where i is the value of sel_bits (LSB first)."""
    level = [list(w) for w in words]
    for s in sel_bits:
        level = [b.mux_word(s, level[i], level[i + 1])
                 for i in range(0, len(level), 2)]
    return level[0]


def _onehot(b: NetlistBuilder, sel_bits: Sequence[int]) -> list[int]:
    """2^k one-hot lines from k select bits (LSB first)."""
    hi = sel_bits[-1]
    terms = [b.not_(hi), hi]
    for s in reversed(sel_bits[:-1]):
        ns = b.not_(s)
        nxt = []
        for t in terms:
            nxt.append(b.and_(t, ns))
            nxt.append(b.and_(t, s))
        terms = nxt
    return terms


def _csa_multiply_low32(b: NetlistBuilder, a: Sequence[int],
                        bb: Sequence[int]) -> list[int]:
    """Low 32 bits of a*b (identical for signed and unsigned operands)."""
    cols: list[list[int]] = [[] for _ in range(32)]
    for i in range(32):
        for j in range(32 - i):
            cols[i + j].append(b.and_(a[j], bb[i]))
    for k in range(32):
        col = cols[k]
        while len(col) >= 3:
            x, y, z = col[0], col[1], col[2]
            del col[:3]
            pxy = b.xor(x, y)
            col.append(b.xor(pxy, z))
            if k + 1 < 32:
                cols[k + 1].append(b.xor(b.and_(x, y), b.and_(z, pxy)))
    zero = b.const0()
    row_a = [c[0] if c else zero for c in cols]
    row_b = [c[1] if len(c) > 1 else zero for c in cols]
    s, _ = _ks_add(b, row_a, row_b)
    return s


def build_step_netlist(cfg: CpuStepConfig) -> tuple[Netlist, StepLayout]:
    lay = _layout(cfg)
    b = NetlistBuilder(n_garbler_inputs=N_INSTR_BITS,
                       n_evaluator_inputs=lay.n_state_bits)
    zero = b.const0()
    one = b.const1()

    instr = list(range(N_INSTR_BITS))
    st = N_INSTR_BITS  # state block starts after the instruction bits
    funct = instr[0:6]
    shamt = instr[6:11]
    rd_f = instr[11:16]
    rt_f = instr[16:21]
    rs_f = instr[21:26]
    op = instr[26:32]
    imm = instr[0:16]
    target16 = instr[0:16]  # only the pc-sized slice of the jump target matters

    pc = [st + lay.pc_off + i for i in range(PC_BITS)]
    halted = st + lay.halted_off
    lo = ([st + lay.lo_off + i for i in range(32)] if cfg.include_mult else None)
    regs = [[st + lay.reg_word_offset(r) + i for i in range(32)]
            for r in range(1, 32)]
    dmem = [[st + lay.mem_word_offset(a) + i for i in range(32)]
            for a in range(cfg.dmem_words)]

    # instruction decode: one hot per mnemonic (reserved words select nothing)
    is_rtype = _eq_const(b, op, 0)
    sig: dict[Mnemonic, int] = {}
    for m, f in R_FUNCT.items():
        if not cfg.include_mult and m in (Mnemonic.MULT, Mnemonic.MFLO):
            continue
        sig[m] = b.and_(is_rtype, _eq_const(b, funct, f))
    for m, o in I_OPCODE.items():
        sig[m] = _eq_const(b, op, o)
    for m, o in J_OPCODE.items():
        sig[m] = _eq_const(b, op, o)

    def any_of(*ms: Mnemonic) -> int:
        return _xor_fold(b, [sig[m] for m in ms])  # one-hots are disjoint

    # register read ports (r0 reads as zero)
    reg_words = [[zero] * 32] + regs
    rs_val = _select_word(b, rs_f, reg_words)
    rt_val = _select_word(b, rt_f, reg_words)

    # main adder: rs + (rt | sign-extended imm), optionally negated, one unit
    simm32 = imm + [imm[15]] * 16
    use_simm = any_of(Mnemonic.ADDI, Mnemonic.ADDIU, Mnemonic.SLTI)
    negate = any_of(Mnemonic.SUB, Mnemonic.SLT, Mnemonic.SLTU, Mnemonic.SLTI)
    opb_raw = b.mux_word(use_simm, rt_val, simm32)
    opb = [b.xor(w, negate) for w in opb_raw]
    sum_w, cout = _ks_add(b, rs_val, opb, cin=negate)
    # signed less-than: sign of the difference corrected by overflow
    ovf = b.and_(b.xor(rs_val[31], opb_raw[31]), b.xor(rs_val[31], sum_w[31]))
    slt_bit = b.xor(sum_w[31], ovf)
    sltu_bit = b.not_(cout)  # no carry out of rs - rt means rs < rt

    # logic unit: rt or zero-extended imm
    zimm32 = imm + [zero] * 16
    use_zimm = any_of(Mnemonic.ANDI, Mnemonic.ORI, Mnemonic.XORI)
    opl = b.mux_word(use_zimm, rt_val, zimm32)
    and_w = [b.and_(x, y) for x, y in zip(rs_val, opl)]
    or_w = [b.or_(x, y) for x, y in zip(rs_val, opl)]
    xor_w = [b.xor(x, y) for x, y in zip(rs_val, opl)]
    nor_w = [b.not_(w) for w in or_w]

    # barrel shifter: one right-shift datapath; SLL runs it on a reversed word
    is_sll = sig[Mnemonic.SLL]
    sh_in = b.mux_word(is_sll, rt_val, rt_val[::-1])
    fill = b.and_(sig[Mnemonic.SRA], rt_val[31])
    for j, s in enumerate(shamt):
        k = 1 << j
        sh_in = [b.mux(s, sh_in[i], sh_in[i + k] if i + k < 32 else fill)
                 for i in range(32)]
    shift_w = b.mux_word(is_sll, sh_in, sh_in[::-1])

    # data memory: one small address adder, full-width read and write trees
    abits = lay.mem_addr_bits
    addr = _ripple_add(b, rs_val[:abits], simm32[:abits])
    lw_word = _select_word(b, addr, dmem)
    mem_onehot = _onehot(b, addr)

    # pc datapath
    pcp1 = _increment(b, pc)
    br_target, _ = _ks_add(b, pcp1, imm)
    cmp_eq = _and_tree(b, [b.xnor(x, y) for x, y in zip(rs_val, rt_val)])
    take = b.xor(b.and_(sig[Mnemonic.BEQ], cmp_eq),
                 b.and_(sig[Mnemonic.BNE], b.not_(cmp_eq)))
    pc_next = b.mux_word(take, pcp1, br_target)
    pc_next = b.mux_word(any_of(Mnemonic.J, Mnemonic.JAL), pc_next, target16)
    pc_next = b.mux_word(sig[Mnemonic.JR], pc_next, rs_val[:PC_BITS])

    # register write bus: masked XOR over disjoint one-hot selects
    sel_sum = any_of(Mnemonic.ADD, Mnemonic.ADDU, Mnemonic.SUB,
                     Mnemonic.ADDI, Mnemonic.ADDIU)
    sel_and = any_of(Mnemonic.AND, Mnemonic.ANDI)
    sel_or = any_of(Mnemonic.OR, Mnemonic.ORI)
    sel_xor = any_of(Mnemonic.XOR, Mnemonic.XORI)
    sel_slt = any_of(Mnemonic.SLT, Mnemonic.SLTI)
    sel_shift = any_of(Mnemonic.SLL, Mnemonic.SRL, Mnemonic.SRA)
    contrib: list[list[int]] = [[] for _ in range(32)]

    def add_cand(sel: int, bits: Sequence[Optional[int]]):
        for i, w in enumerate(bits):
            if w is not None and w != zero:
                contrib[i].append(b.and_(sel, w))

    add_cand(sel_sum, sum_w)
    add_cand(sel_and, and_w)
    add_cand(sel_or, or_w)
    add_cand(sel_xor, xor_w)
    add_cand(sig[Mnemonic.NOR], nor_w)
    add_cand(sel_slt, [slt_bit])
    add_cand(sig[Mnemonic.SLTU], [sltu_bit])
    add_cand(sel_shift, shift_w)
    add_cand(sig[Mnemonic.LUI], [None] * 16 + imm)
    add_cand(sig[Mnemonic.LW], lw_word)
    add_cand(sig[Mnemonic.JAL], pcp1)
    reg_sels = [sel_sum, sel_and, sel_or, sel_xor, sig[Mnemonic.NOR], sel_slt,
                sig[Mnemonic.SLTU], sel_shift, sig[Mnemonic.LUI],
                sig[Mnemonic.LW], sig[Mnemonic.JAL]]
    if cfg.include_mult:
        mult_w = _csa_multiply_low32(b, rs_val, rt_val)
        add_cand(sig[Mnemonic.MFLO], lo)
        reg_sels.append(sig[Mnemonic.MFLO])
    wdata = [_xor_fold(b, c) if c else zero for c in contrib]

    # destination register: rd for R-type results, rt for immediates, 31 for JAL
    use_rd = any_of(*[m for m in (Mnemonic.ADD, Mnemonic.ADDU, Mnemonic.SUB,
                                  Mnemonic.AND, Mnemonic.OR, Mnemonic.XOR,
                                  Mnemonic.NOR, Mnemonic.SLT, Mnemonic.SLTU,
                                  Mnemonic.SLL, Mnemonic.SRL, Mnemonic.SRA,
                                  Mnemonic.MFLO) if m in sig])
    dest = b.mux_word(use_rd, rt_f, rd_f)
    dest = b.mux_word(sig[Mnemonic.JAL], dest, [one] * 5)
    dest_onehot = _onehot(b, dest)

    run = b.not_(halted)  # a halted core makes no writes and holds its pc
    reg_we = b.and_(_xor_fold(b, reg_sels), run)
    new_regs = []
    for r in range(1, 32):
        en = b.and_(reg_we, dest_onehot[r])
        new_regs.append(b.mux_word(en, regs[r - 1], wdata))

    mem_we = b.and_(sig[Mnemonic.SW], run)
    new_dmem = []
    for a in range(cfg.dmem_words):
        en = b.and_(mem_we, mem_onehot[a])
        new_dmem.append(b.mux_word(en, dmem[a], rt_val))

    out_bits = [None] * lay.n_state_bits
    pc_out = b.mux_word(run, pc, pc_next)
    for i, w in enumerate(pc_out):
        out_bits[lay.pc_off + i] = w
    out_bits[lay.halted_off] = b.or_(halted, sig[Mnemonic.HALT])
    if cfg.include_mult:
        lo_we = b.and_(sig[Mnemonic.MULT], run)
        lo_out = b.mux_word(lo_we, lo, mult_w)
        for i, w in enumerate(lo_out):
            out_bits[lay.lo_off + i] = w
    for r in range(1, 32):
        off = lay.reg_word_offset(r)
        for i, w in enumerate(new_regs[r - 1]):
            out_bits[off + i] = w
    for a in range(cfg.dmem_words):
        off = lay.mem_word_offset(a)
        for i, w in enumerate(new_dmem[a]):
            out_bits[off + i] = w

    return b.build(out_bits), lay
