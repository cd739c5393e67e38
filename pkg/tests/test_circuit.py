import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hwgn2 import circuit
from hwgn2.circuit import (Gate, GateKind, Netlist, NetlistBuilder,
                           NetlistError, NetlistParseError, count_gates,
                           eval_plain, eval_plain_batch, partition, validate)

from conftest import random_netlist


# Independent truth oracle: plain Python operators, no table lookups.
def _gate_oracle(kind, a, b=None):
    return {
        GateKind.AND: lambda: a & b,
        GateKind.OR: lambda: a | b,
        GateKind.XOR: lambda: a ^ b,
        GateKind.XNOR: lambda: 1 - (a ^ b),
        GateKind.NAND: lambda: 1 - (a & b),
        GateKind.NOR: lambda: 1 - (a | b),
        GateKind.NOT: lambda: 1 - a,
        GateKind.BUF: lambda: a,
    }[kind]()


def _eval_oracle(net, xg, xe):
    w = list(xg) + list(xe)
    for g in net.gates:
        w.append(_gate_oracle(g.kind, w[g.in0],
                              None if g.in1 is None else w[g.in1]))
    return [w[o] for o in net.output_wires]


class TestEvalPlain:
    def test_single_gates_exhaustive(self):
        for kind in GateKind:
            n_args = 1 if kind.is_unary else 2
            gates = [Gate(id=0, kind=kind, in0=0,
                          in1=1 if n_args == 2 else None, out=n_args)]
            net = Netlist(n_garbler_inputs=n_args, n_evaluator_inputs=0,
                          gates=gates, output_wires=[n_args])
            for x in range(1 << n_args):
                bits = [(x >> i) & 1 for i in range(n_args)]
                assert eval_plain(net, bits, []) == _eval_oracle(net, bits, [])

    def test_random_netlists_vs_oracle(self):
        rng = random.Random(11)
        for _ in range(30):
            net = random_netlist(rng)
            xg = [rng.randrange(2) for _ in range(net.n_garbler_inputs)]
            xe = [rng.randrange(2) for _ in range(net.n_evaluator_inputs)]
            assert eval_plain(net, xg, xe) == _eval_oracle(net, xg, xe)

    def test_input_length_checked(self):
        net = random_netlist(random.Random(0))
        with pytest.raises(NetlistError):
            eval_plain(net, [0], [0, 0, 0])

    @given(st.integers(min_value=0, max_value=2**31 - 1),
           st.integers(min_value=1, max_value=60))
    @settings(max_examples=40, deadline=None)
    def test_batch_matches_scalar(self, seed, n_vectors):
        rng = random.Random(seed)
        net = random_netlist(rng, n_gates=25)
        vecs = [([rng.randrange(2) for _ in range(net.n_garbler_inputs)],
                 [rng.randrange(2) for _ in range(net.n_evaluator_inputs)])
                for _ in range(n_vectors)]
        xg = [sum(v[0][i] << j for j, v in enumerate(vecs))
              for i in range(net.n_garbler_inputs)]
        xe = [sum(v[1][i] << j for j, v in enumerate(vecs))
              for i in range(net.n_evaluator_inputs)]
        packed = eval_plain_batch(net, xg, xe)
        for j, (g, e) in enumerate(vecs):
            assert [(o >> j) & 1 for o in packed] == eval_plain(net, g, e)


class TestValidate:
    def test_valid(self):
        assert validate(random_netlist(random.Random(3))).ok

    def test_topological_violation(self):
        net = Netlist(1, 0, [Gate(0, GateKind.NOT, in0=2, in1=None, out=1),
                             Gate(1, GateKind.NOT, in0=1, in1=None, out=2)],
                      [2])
        rep = validate(net)
        assert not rep.ok
        assert any("topological" in v for v in rep.violations)

    def test_dense_numbering_violation(self):
        net = Netlist(1, 0, [Gate(0, GateKind.NOT, in0=0, in1=None, out=5)], [5])
        assert not validate(net).ok

    def test_arity_violation(self):
        net = Netlist(2, 0, [Gate(0, GateKind.AND, in0=0, in1=None, out=2)], [2])
        assert not validate(net).ok

    def test_undriven_output(self):
        net = Netlist(1, 0, [], [7])
        rep = validate(net)
        assert not rep.ok and "undriven" in rep.violations[0]


class TestSerialization:
    def test_round_trip_byte_exact(self):
        rng = random.Random(5)
        for _ in range(10):
            net = random_netlist(rng)
            text = circuit.dumps(net)
            assert circuit.dumps(circuit.loads(text)) == text

    def test_header_line_format(self):
        net = random_netlist(random.Random(1), n_garbler=2, n_evaluator=5,
                             n_outputs=3)
        first = circuit.dumps(net).splitlines()[0]
        assert first == "NETLIST g=2 e=5 o=3"

    def test_parse_error_carries_position(self):
        with pytest.raises(NetlistParseError) as exc:
            circuit.loads("NETLIST g=1 e=0 o=1\nG 0 BOGUS 0 -> 1\nOUT 1\n")
        assert exc.value.lineno == 2

    def test_gate_before_header_rejected(self):
        with pytest.raises(NetlistParseError):
            circuit.loads("G 0 NOT 0 -> 1\n")

    def test_output_count_mismatch_rejected(self):
        with pytest.raises(NetlistParseError):
            circuit.loads("NETLIST g=1 e=0 o=2\nG 0 NOT 0 -> 1\nOUT 1\n")

    def test_comments_and_blank_lines_ignored(self):
        net = circuit.loads(
            "# header comment\nNETLIST g=1 e=0 o=1\n\nG 0 NOT 0 -> 1  # invert\nOUT 1\n")
        assert len(net.gates) == 1

    def test_file_round_trip(self, tmp_path):
        net = random_netlist(random.Random(9))
        p = tmp_path / "c.net"
        circuit.save(net, p)
        assert circuit.dumps(circuit.load(p)) == circuit.dumps(net)


class TestPartition:
    def test_covers_all_gates_in_order(self):
        net = random_netlist(random.Random(2), n_gates=57)
        subs = partition(net, 10)
        got = [g for s in subs for g in s.gates]
        assert got == net.gates
        assert [s.index for s in subs] == list(range(6))

    def test_boundaries_suffice_for_evaluation(self):
        # evaluating chunk by chunk, carrying only declared boundary wires,
        # must reproduce the monolithic result
        rng = random.Random(4)
        for _ in range(10):
            net = random_netlist(rng, n_gates=50)
            xg = [rng.randrange(2) for _ in range(net.n_garbler_inputs)]
            xe = [rng.randrange(2) for _ in range(net.n_evaluator_inputs)]
            full = list(xg) + list(xe)
            for g in net.gates:
                full.append(_gate_oracle(g.kind, full[g.in0],
                                         None if g.in1 is None else full[g.in1]))
            live = {i: full[i] for i in range(net.n_inputs)}
            for sub in partition(net, 7):
                assert all(w in live for w in sub.boundary_in)
                local = dict(live)
                for g in sub.gates:
                    local[g.out] = _gate_oracle(
                        g.kind, local[g.in0],
                        None if g.in1 is None else local[g.in1])
                live = {w: v for w, v in local.items()
                        if w < net.n_inputs or w in set(sub.boundary_out)
                        or w in live}
                for w in sub.boundary_out:
                    assert live[w] == full[w]
            assert eval_plain(net, xg, xe) == [full[o] for o in net.output_wires]

    def test_rejects_bad_batch_size(self):
        with pytest.raises(NetlistError):
            partition(random_netlist(random.Random(0)), 0)


class TestCounts:
    def test_free_vs_nonfree(self):
        b = NetlistBuilder(2, 0)
        b.xor(0, 1)
        b.and_(0, 1)
        b.not_(0)
        b.or_(0, 1)
        net = b.build([b.n_inputs])
        c = count_gates(net)
        assert (c.total, c.free, c.nonfree) == (4, 2, 2)


class TestBuilder:
    def test_mux_semantics(self):
        b = NetlistBuilder(3, 0)  # sel, a, b
        net = b.build([b.mux(0, 1, 2)])
        for sel in (0, 1):
            for a in (0, 1):
                for x in (0, 1):
                    assert eval_plain(net, [sel, a, x], []) == [x if sel else a]

    def test_constants(self):
        b = NetlistBuilder(1, 0)
        net = b.build([b.const0(), b.const1()])
        for x in (0, 1):
            assert eval_plain(net, [x], []) == [0, 1]

    def test_builder_output_is_valid(self):
        b = NetlistBuilder(2, 2)
        w = b.and_(0, 1)
        w = b.xor(w, 2)
        net = b.build([w, b.not_(3)])
        assert validate(net).ok
