import random

import pytest

from hwgn2 import circuit
from hwgn2.mips import run_plain
from hwgn2.mips.stepnet import build_step_netlist
from hwgn2.nncompile import (BnnModel, MlpModel, ModelError, Q_MAX, Q_MIN,
                             Q_ONE, benchmark_shape, binarize, binarize_input,
                             compile_bnn, compile_mlp, from_q, infer_plain,
                             infer_plain_bnn, load_model, save_model, sx32,
                             step_config_for, to_q)

U32 = 0xFFFFFFFF


def rand_model(rng, sizes, acts=None):
    ws, bs = [], []
    for l in range(len(sizes) - 1):
        ws.append([[rng.randint(-2 * Q_ONE, 2 * Q_ONE) for _ in range(sizes[l])]
                   for _ in range(sizes[l + 1])])
        bs.append([rng.randint(-Q_ONE, Q_ONE) for _ in range(sizes[l + 1])])
    if acts is None:
        acts = [rng.choice(["relu", "hard_sigmoid"])
                for _ in range(len(sizes) - 2)] + ["none"]
    return MlpModel(list(sizes), ws, bs, acts)


def _signed(v):
    return v - (1 << 32) if v & 0x80000000 else v


class TestFixedPoint:
    def test_to_from_q(self):
        assert to_q(1.0) == Q_ONE
        assert to_q(-0.5) == -128
        assert from_q(to_q(3.25)) == 3.25

    def test_range_enforced(self):
        with pytest.raises(ModelError):
            to_q(200.0)


class TestInferPlain:
    def test_identity_model(self):
        n = 3
        m = MlpModel([n, n],
                     [[[Q_ONE if i == j else 0 for j in range(n)]
                       for i in range(n)]],
                     [[0] * n], ["none"])
        x = [to_q(1.5), to_q(-2.0), to_q(0.25)]
        assert infer_plain(m, x) == x

    def test_hand_computed_2_2_1(self):
        # layer 1: w = [[1, 0.5], [-1, 0.25]], b = [0.5, 0], relu
        # layer 2: w = [[2, 1]], b = [-0.25], none
        m = MlpModel([2, 2, 1],
                     [[[to_q(1.0), to_q(0.5)], [to_q(-1.0), to_q(0.25)]],
                      [[to_q(2.0), to_q(1.0)]]],
                     [[to_q(0.5), 0], [to_q(-0.25)]],
                     ["relu", "none"])
        x = [to_q(1.0), to_q(2.0)]
        # h1 = relu(1*1 + 0.5*2 + 0.5) = 2.5 ; h2 = relu(-1 + 0.5 + 0) = 0
        # y = 2*2.5 + 1*0 - 0.25 = 4.75
        assert infer_plain(m, x) == [to_q(4.75)]

    def test_saturation_clamps(self):
        m = MlpModel([1, 1], [[[Q_MAX]]], [[Q_MAX]], ["none"])
        y = infer_plain(m, [Q_MAX])
        assert y == [Q_MAX]
        y = infer_plain(m, [Q_MIN & U32])
        assert y == [Q_MIN]

    def test_dimension_mismatch(self):
        m = rand_model(random.Random(0), [3, 2])
        with pytest.raises(ModelError):
            infer_plain(m, [0, 0])


class TestInferPlainBnn:
    def test_all_agree(self):
        m = BnnModel([8, 1], [[0xFF]], [[0]])
        assert infer_plain_bnn(m, [1] * 8) == [8]

    def test_all_disagree(self):
        m = BnnModel([8, 1], [[0x00]], [[0]])
        assert infer_plain_bnn(m, [1] * 8) == [-8]

    def test_against_pm1_dot_product(self):
        rng = random.Random(3)
        for _ in range(50):
            n = 16
            w = rng.getrandbits(n)
            x = [rng.randint(0, 1) for _ in range(n)]
            m = BnnModel([n, 1], [[w]], [[0]])
            dot = sum((1 if (w >> i) & 1 else -1) * (1 if x[i] else -1)
                      for i in range(n))
            assert infer_plain_bnn(m, x) == [dot]


class TestBinarize:
    def test_all_positive_to_one(self):
        m = MlpModel([3, 1], [[[5, 1, 700]]], [[0]], ["none"])
        assert binarize(m).weight_bits[0] == [0b111]

    def test_zero_tie_is_plus_one(self):
        m = MlpModel([2, 1], [[[0, -1]]], [[0]], ["none"])
        assert binarize(m).weight_bits[0] == [0b01]

    def test_threshold_from_bias(self):
        m = MlpModel([1, 1], [[[Q_ONE]]], [[to_q(2.0)]], ["none"])
        assert binarize(m).thresholds[0] == [2]

    def test_binarized_accuracy_near_fixed_point(self):
        # synthetic sign-representable task (planted +/-1 linear map over
        # +/-1 inputs): binarization should cost at most 15 accuracy points
        rng = random.Random(9)
        sizes = [16, 4]
        w = [[rng.choice([-Q_ONE, Q_ONE]) for _ in range(16)] for _ in range(4)]
        m = MlpModel(sizes, [w], [[0] * 4], ["none"])
        bm = binarize(m)
        n, agree_fp, agree_bn = 200, 0, 0
        for _ in range(n):
            x = [rng.choice([-Q_ONE, Q_ONE]) & U32 for _ in range(16)]
            label = max(range(4), key=lambda i: infer_plain(m, x)[i])
            agree_fp += 1
            yb = infer_plain_bnn(bm, binarize_input(x))
            agree_bn += label == max(range(4), key=lambda i: yb[i])
        assert agree_fp / n - agree_bn / n <= 0.15


class TestCompileMlp:
    def test_run_plain_matches_infer_plain(self):
        rng = random.Random(17)
        for _ in range(15):
            sizes = [rng.randint(2, 6) for _ in range(rng.randint(2, 4))]
            m = rand_model(rng, sizes)
            p = compile_mlp(m)
            cfg = step_config_for(p)
            for _ in range(6):
                x = [rng.randint(-4 * Q_ONE, 4 * Q_ONE) & U32
                     for _ in range(sizes[0])]
                got = [_signed(v) for v in run_plain(p, cfg, x).outputs]
                assert got == infer_plain(m, x)

    def test_weights_in_garbler_dmem(self):
        m = rand_model(random.Random(1), [3, 2])
        p = compile_mlp(m)
        flat = {v & U32 for row in m.weights[0] for v in row}
        assert flat <= set(p.dmem_init_garbler.values())
        assert p.evaluator_input_region == (0, 3)

    def test_single_neuron_is_small(self):
        m = rand_model(random.Random(2), [1, 1])
        assert len(compile_mlp(m)) < 64

    def test_dmem_overflow_reported(self):
        m = rand_model(random.Random(3), [200, 30])
        with pytest.raises(ModelError, match="4096"):
            compile_mlp(m)


class TestCompileBnn:
    def test_run_plain_matches_infer_plain_bnn(self):
        rng = random.Random(23)
        for _ in range(15):
            sizes = [rng.randint(2, 40) for _ in range(rng.randint(2, 4))]
            bm = binarize(rand_model(rng, sizes))
            p = compile_bnn(bm)
            cfg = step_config_for(p)
            assert not cfg.include_mult
            for _ in range(4):
                bits = [rng.randint(0, 1) for _ in range(sizes[0])]
                packed = sum(b << i for i, b in enumerate(bits))
                words = [(packed >> (32 * k)) & U32
                         for k in range((sizes[0] + 31) // 32)]
                got = [_signed(v)
                       for v in run_plain(p, cfg, words, max_steps=10**6).outputs]
                assert got == infer_plain_bnn(bm, bits)

    def test_fewer_instructions_than_mlp(self):
        rng = random.Random(4)
        sizes = benchmark_shape("bm2", input_width=64)
        m = rand_model(rng, sizes, acts=["relu", "relu", "none"])
        assert len(compile_bnn(binarize(m))) < len(compile_mlp(m))

    def test_fewer_nonfree_gates_per_step(self):
        # the BNN program runs on the multiplier-free core, whose step
        # netlist garbles strictly fewer tables per instruction
        rng = random.Random(5)
        m = rand_model(rng, [32, 4, 4], acts=["relu", "none"])
        cfg_mlp = step_config_for(compile_mlp(m))
        cfg_bnn = step_config_for(compile_bnn(binarize(m)))
        net_mlp, _ = build_step_netlist(cfg_mlp)
        net_bnn, _ = build_step_netlist(cfg_bnn)
        per_mlp = circuit.count_gates(net_mlp).nonfree
        per_bnn = circuit.count_gates(net_bnn).nonfree
        assert cfg_bnn.dmem_words <= cfg_mlp.dmem_words
        assert per_bnn < per_mlp


class TestModelFiles:
    def test_round_trip(self, tmp_path):
        m = rand_model(random.Random(7), [4, 3, 2])
        path = tmp_path / "model.json"
        save_model(m, path)
        m2 = load_model(path)
        assert m2 == m

    def test_malformed_json_reports_position(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{ not json }")
        with pytest.raises(ModelError, match="bad.json:"):
            load_model(path)

    def test_dimension_error(self, tmp_path):
        path = tmp_path / "dims.json"
        path.write_text('{"layer_sizes": [2, 1], "layers": '
                        '[{"weights": [["1.0"]], "bias": ["0"], '
                        '"activation": "none"}]}')
        with pytest.raises(ModelError):
            load_model(path)

    def test_out_of_range_weight_rejected(self, tmp_path):
        path = tmp_path / "range.json"
        path.write_text('{"layer_sizes": [1, 1], "layers": '
                        '[{"weights": [["300.0"]], "bias": ["0"], '
                        '"activation": "none"}]}')
        with pytest.raises(ModelError):
            load_model(path)


class TestShapes:
    def test_benchmark_shapes(self):
        assert benchmark_shape("bm2") == [784, 5, 5, 10]
        assert benchmark_shape("bm3") == [784, 6, 5, 5, 10]
        assert benchmark_shape("bm2", input_width=16) == [16, 5, 5, 10]

    def test_output_activation_enforced(self):
        m = rand_model(random.Random(0), [2, 2])
        m.activations[-1] = "relu"
        with pytest.raises(ModelError):
            m.validate()
