"""Boolean netlists: representation, plaintext evaluation, partitioning, file I/O.

Wire numbering convention: wires 0..n_inputs-1 are circuit inputs (garbler
block first, then evaluator block); gate i drives wire n_inputs + i.  This
makes topological validity a single integer comparison.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence


class GateKind(enum.Enum):
    AND = "AND"
    OR = "OR"
    XOR = "XOR"
    XNOR = "XNOR"
    NAND = "NAND"
    NOR = "NOR"
    NOT = "NOT"
    BUF = "BUF"

    @property
    def is_unary(self) -> bool:
        return self in (GateKind.NOT, GateKind.BUF)

    @property
    def is_free(self) -> bool:
        """Gates that cost no garbled-table rows (XOR family and inverters)."""
        return self in (GateKind.XOR, GateKind.XNOR, GateKind.NOT, GateKind.BUF)


# Truth tables indexed by (in0 << 1) | in1 for binary kinds, by in0 for unary.
_TRUTH = {
    GateKind.AND: (0, 0, 0, 1),
    GateKind.OR: (0, 1, 1, 1),
    GateKind.XOR: (0, 1, 1, 0),
    GateKind.XNOR: (1, 0, 0, 1),
    GateKind.NAND: (1, 1, 1, 0),
    GateKind.NOR: (1, 0, 0, 0),
    GateKind.NOT: (1, 0),
    GateKind.BUF: (0, 1),
}


def truth_table(kind: GateKind) -> tuple[int, ...]:
    return _TRUTH[kind]


@dataclass(frozen=True)
class Gate:
    id: int
    kind: GateKind
    in0: int
    in1: int | None
    out: int


@dataclass(eq=False)
class Netlist:
    n_garbler_inputs: int
    n_evaluator_inputs: int
    gates: list[Gate]
    output_wires: list[int]

    @property
    def n_inputs(self) -> int:
        return self.n_garbler_inputs + self.n_evaluator_inputs

    @property
    def n_outputs(self) -> int:
        return len(self.output_wires)

    @property
    def n_wires(self) -> int:
        return self.n_inputs + len(self.gates)


@dataclass(frozen=True)
class SubNetlist:
    index: int
    gates: tuple[Gate, ...]
    boundary_in: tuple[int, ...]
    boundary_out: tuple[int, ...]


@dataclass
class ValidationReport:
    ok: bool
    violations: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class GateCounts:
    total: int
    free: int
    nonfree: int


class NetlistError(Exception):
    pass


class NetlistParseError(NetlistError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def validate(netlist: Netlist) -> ValidationReport:
    """Check structural invariants; returns a report instead of raising."""
    v: list[str] = []
    n_in = netlist.n_inputs
    if netlist.n_garbler_inputs < 0 or netlist.n_evaluator_inputs < 0:
        v.append("negative input count")
    for i, g in enumerate(netlist.gates):
        if g.id != i:
            v.append(f"gate {i}: id {g.id} is not dense")
        if g.out != n_in + i:
            v.append(f"gate {i}: out wire {g.out} breaks dense numbering (expected {n_in + i})")
        if g.kind.is_unary:
            if g.in1 is not None:
                v.append(f"gate {i}: unary {g.kind.value} has a second input")
        else:
            if g.in1 is None:
                v.append(f"gate {i}: binary {g.kind.value} is missing a second input")
        for w in (g.in0, g.in1):
            if w is None:
                continue
            if w < 0 or w >= netlist.n_wires:
                v.append(f"gate {i}: input wire {w} out of range")
            elif w >= g.out:
                v.append(f"gate {i}: input wire {w} violates topological order")
    for w in netlist.output_wires:
        if w < 0 or w >= netlist.n_wires:
            v.append(f"output wire {w} out of range (undriven)")
    return ValidationReport(ok=not v, violations=v)


def _check_input_lengths(netlist: Netlist, x_garbler: Sequence[int], x_evaluator: Sequence[int]) -> None:
    if len(x_garbler) != netlist.n_garbler_inputs:
        raise NetlistError(
            f"garbler input length {len(x_garbler)} != {netlist.n_garbler_inputs}")
    if len(x_evaluator) != netlist.n_evaluator_inputs:
        raise NetlistError(
            f"evaluator input length {len(x_evaluator)} != {netlist.n_evaluator_inputs}")


def eval_plain(netlist: Netlist, x_garbler: Sequence[int], x_evaluator: Sequence[int]) -> list[int]:
    """Forward evaluation of the netlist on plaintext bits."""
    _check_input_lengths(netlist, x_garbler, x_evaluator)
    w = list(x_garbler) + list(x_evaluator) + [0] * len(netlist.gates)
    for g in netlist.gates:
        t = _TRUTH[g.kind]
        if g.in1 is None:
            w[g.out] = t[w[g.in0]]
        else:
            w[g.out] = t[(w[g.in0] << 1) | w[g.in1]]
    return [w[o] for o in netlist.output_wires]


def eval_plain_batch(netlist: Netlist, x_garbler: Sequence[int], x_evaluator: Sequence[int]) -> list[int]:
    """Bit-parallel evaluation: each input/output value is an int whose bit j
    is the value in test vector j.  Used for exhaustive/batched oracles."""
    _check_input_lengths(netlist, x_garbler, x_evaluator)
    w = list(x_garbler) + list(x_evaluator) + [0] * len(netlist.gates)
    ones = -1  # Python ints: ~x == -x-1 acts as bitwise NOT over all vectors
    for g in netlist.gates:
        a = w[g.in0]
        k = g.kind
        if k is GateKind.XOR:
            r = a ^ w[g.in1]
        elif k is GateKind.AND:
            r = a & w[g.in1]
        elif k is GateKind.OR:
            r = a | w[g.in1]
        elif k is GateKind.XNOR:
            r = ones ^ a ^ w[g.in1]
        elif k is GateKind.NAND:
            r = ones ^ (a & w[g.in1])
        elif k is GateKind.NOR:
            r = ones ^ (a | w[g.in1])
        elif k is GateKind.NOT:
            r = ones ^ a
        else:  # BUF
            r = a
        w[g.out] = r
    return [w[o] for o in netlist.output_wires]


def partition(netlist: Netlist, gates_per_batch: int) -> list[SubNetlist]:
    """Positional split of the gate list into ceil(N/gates_per_batch) slices."""
    if gates_per_batch < 1:
        raise NetlistError("gates_per_batch must be >= 1")
    gates = netlist.gates
    outputs = set(netlist.output_wires)
    # wires consumed by any later gate
    consumers: dict[int, int] = {}  # wire -> index of last consuming gate
    for g in gates:
        for w in (g.in0, g.in1):
            if w is not None:
                consumers[w] = max(consumers.get(w, -1), g.id)
    subs = []
    for idx, start in enumerate(range(0, len(gates), gates_per_batch)):
        chunk = gates[start:start + gates_per_batch]
        end = start + len(chunk)
        lo = netlist.n_inputs + start  # first wire produced inside the chunk
        boundary_in = sorted({w for g in chunk for w in (g.in0, g.in1)
                              if w is not None and w < lo})
        boundary_out = sorted(
            g.out for g in chunk
            if g.out in outputs or consumers.get(g.out, -1) >= end)
        subs.append(SubNetlist(index=idx, gates=tuple(chunk),
                               boundary_in=tuple(boundary_in),
                               boundary_out=tuple(boundary_out)))
    return subs


def count_gates(netlist: Netlist) -> GateCounts:
    free = sum(1 for g in netlist.gates if g.kind.is_free)
    total = len(netlist.gates)
    return GateCounts(total=total, free=free, nonfree=total - free)


def dumps(netlist: Netlist) -> str:
    """Canonical text form; loads(dumps(n)) round-trips byte-exactly."""
    lines = [f"NETLIST g={netlist.n_garbler_inputs} e={netlist.n_evaluator_inputs} "
             f"o={netlist.n_outputs}"]
    for g in netlist.gates:
        if g.in1 is None:
            lines.append(f"G {g.id} {g.kind.value} {g.in0} -> {g.out}")
        else:
            lines.append(f"G {g.id} {g.kind.value} {g.in0} {g.in1} -> {g.out}")
    lines.append("OUT " + " ".join(str(w) for w in netlist.output_wires))
    return "\n".join(lines) + "\n"


def loads(text: str) -> Netlist:
    header = None
    gates: list[Gate] = []
    outputs: list[int] | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] == "NETLIST":
            if header is not None:
                raise NetlistParseError(lineno, "duplicate NETLIST header")
            try:
                fields = dict(t.split("=", 1) for t in tok[1:])
                header = (int(fields["g"]), int(fields["e"]), int(fields["o"]))
            except (ValueError, KeyError) as exc:
                raise NetlistParseError(lineno, f"bad header: {exc}") from None
        elif tok[0] == "G":
            if header is None:
                raise NetlistParseError(lineno, "gate before NETLIST header")
            if "->" not in tok:
                raise NetlistParseError(lineno, "missing '->'")
            arrow = tok.index("->")
            try:
                gid = int(tok[1])
                kind = GateKind(tok[2])
            except ValueError:
                raise NetlistParseError(lineno, f"unknown gate kind {tok[2]!r}") from None
            try:
                ins = [int(t) for t in tok[3:arrow]]
                out = int(tok[arrow + 1])
            except ValueError as exc:
                raise NetlistParseError(lineno, f"bad wire id: {exc}") from None
            if kind.is_unary and len(ins) != 1:
                raise NetlistParseError(lineno, f"{kind.value} takes one input")
            if not kind.is_unary and len(ins) != 2:
                raise NetlistParseError(lineno, f"{kind.value} takes two inputs")
            gates.append(Gate(id=gid, kind=kind, in0=ins[0],
                              in1=ins[1] if len(ins) == 2 else None, out=out))
        elif tok[0] == "OUT":
            try:
                outputs = [int(t) for t in tok[1:]]
            except ValueError as exc:
                raise NetlistParseError(lineno, f"bad output wire: {exc}") from None
        else:
            raise NetlistParseError(lineno, f"unexpected token {tok[0]!r}")
    if header is None:
        raise NetlistParseError(0, "missing NETLIST header")
    if outputs is None:
        raise NetlistParseError(0, "missing OUT trailer")
    n_g, n_e, n_o = header
    if len(outputs) != n_o:
        raise NetlistParseError(0, f"header declares {n_o} outputs, OUT lists {len(outputs)}")
    netlist = Netlist(n_garbler_inputs=n_g, n_evaluator_inputs=n_e,
                      gates=gates, output_wires=outputs)
    report = validate(netlist)
    if not report.ok:
        raise NetlistError("invalid netlist: " + "; ".join(report.violations))
    return netlist


def save(netlist: Netlist, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps(netlist))


def load(path) -> Netlist:
    with open(path, "r", encoding="utf-8") as f:
        return loads(f.read())


class NetlistBuilder:
    """Incremental netlist construction with structural convenience ops.

    Wires are plain ints.  Constants are derived for free from input 0 via
    XOR/XNOR self-loops, so builders need at least one input.
    """

    def __init__(self, n_garbler_inputs: int, n_evaluator_inputs: int):
        self.n_garbler_inputs = n_garbler_inputs
        self.n_evaluator_inputs = n_evaluator_inputs
        self.gates: list[Gate] = []
        self._const0: int | None = None
        self._const1: int | None = None

    @property
    def n_inputs(self) -> int:
        return self.n_garbler_inputs + self.n_evaluator_inputs

    def gate(self, kind: GateKind, in0: int, in1: int | None = None) -> int:
        gid = len(self.gates)
        out = self.n_inputs + gid
        self.gates.append(Gate(id=gid, kind=kind, in0=in0, in1=in1, out=out))
        return out

    def and_(self, a: int, b: int) -> int:
        return self.gate(GateKind.AND, a, b)

    def or_(self, a: int, b: int) -> int:
        return self.gate(GateKind.OR, a, b)

    def xor(self, a: int, b: int) -> int:
        return self.gate(GateKind.XOR, a, b)

    def xnor(self, a: int, b: int) -> int:
        return self.gate(GateKind.XNOR, a, b)

    def not_(self, a: int) -> int:
        return self.gate(GateKind.NOT, a)

    def buf(self, a: int) -> int:
        return self.gate(GateKind.BUF, a)

    def const0(self) -> int:
        if self._const0 is None:
            self._const0 = self.gate(GateKind.XOR, 0, 0)
        return self._const0

    def const1(self) -> int:
        if self._const1 is None:
            self._const1 = self.gate(GateKind.XNOR, 0, 0)
        return self._const1

    def mux(self, sel: int, a: int, b: int) -> int:
        """b if sel else a; one AND plus two free XORs."""
        return self.xor(a, self.and_(sel, self.xor(a, b)))

    def mux_word(self, sel: int, a: Sequence[int], b: Sequence[int]) -> list[int]:
        return [self.mux(sel, x, y) for x, y in zip(a, b, strict=True)]

    def build(self, output_wires: Iterable[int]) -> Netlist:
        n = Netlist(n_garbler_inputs=self.n_garbler_inputs,
                    n_evaluator_inputs=self.n_evaluator_inputs,
                    gates=list(self.gates), output_wires=list(output_wires))
        report = validate(n)
        if not report.ok:
            raise NetlistError("builder produced invalid netlist: "
                               + "; ".join(report.violations[:5]))
        return n
