import random

from hwgn2.circuit import Gate, GateKind, Netlist

BINARY_KINDS = [GateKind.AND, GateKind.OR, GateKind.XOR, GateKind.XNOR,
                GateKind.NAND, GateKind.NOR]
UNARY_KINDS = [GateKind.NOT, GateKind.BUF]


def random_netlist(rng: random.Random, n_garbler: int = 3, n_evaluator: int = 3,
                   n_gates: int = 40, n_outputs: int = 4) -> Netlist:
    """Random valid netlist; every gate input is an earlier wire."""
    n_in = n_garbler + n_evaluator
    gates = []
    for gid in range(n_gates):
        out = n_in + gid
        if rng.random() < 0.2:
            kind = rng.choice(UNARY_KINDS)
            gates.append(Gate(id=gid, kind=kind, in0=rng.randrange(out),
                              in1=None, out=out))
        else:
            kind = rng.choice(BINARY_KINDS)
            gates.append(Gate(id=gid, kind=kind, in0=rng.randrange(out),
                              in1=rng.randrange(out), out=out))
    n_wires = n_in + n_gates
    outputs = [rng.randrange(n_wires) for _ in range(n_outputs)]
    return Netlist(n_garbler_inputs=n_garbler, n_evaluator_inputs=n_evaluator,
                   gates=gates, output_wires=outputs)
