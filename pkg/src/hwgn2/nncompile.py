"""Compile small dense networks to programs for the garbled core.

Two families:
  * fixed-point MLPs in Q8.8 (saturating MAC, branchless activations),
  * binarized XNOR-popcount networks (no multiplier needed at all).

`infer_plain` / `infer_plain_bnn` are the bit-exact references: they mirror
the compiled instruction sequences operation for operation (wraparound
32-bit accumulation, arithmetic-shift product scaling, clamp order), so
`run_plain(compile_*(m), x) == infer_plain*(m, x)` holds exactly.

Emitted programs are fully unrolled and branchless: the pc trace never
depends on data, which is what makes vectorized trace campaigns and
per-step label chaining straightforward.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

from .mips import Mnemonic, MipsProgram, assemble, decode
from .mips.emulator import CpuStepConfig

M32 = 0xFFFFFFFF
Q_SHIFT = 8
Q_ONE = 1 << Q_SHIFT
Q_MAX = 32767          # Q8.8 saturation bounds (16-bit signed raw range)
Q_MIN = -32768

ACTIVATIONS = ("relu", "hard_sigmoid", "none")


class ModelError(Exception):
    pass


# ---------------------------------------------------------------------------
# Q8.8 helpers.

def sx32(v: int) -> int:
    v &= M32
    return v - (1 << 32) if v & 0x80000000 else v


def to_q(value: float) -> int:
    """Nearest Q8.8 raw value; rejects out-of-range model parameters."""
    raw = round(float(value) * Q_ONE)
    if not Q_MIN <= raw <= Q_MAX:
        raise ModelError(f"value {value} outside Q8.8 range")
    return raw


def from_q(raw: int) -> float:
    return sx32(raw) / Q_ONE


def q_clamp(v: int) -> int:
    v = sx32(v)
    return Q_MAX if v > Q_MAX else Q_MIN if v < Q_MIN else v


# ---------------------------------------------------------------------------
# Models.

@dataclass
class MlpModel:
    """Dense network; weights[l][i][j] is the Q8.8 raw weight from input j
    of layer l to neuron i."""

    layer_sizes: list[int]
    weights: list[list[list[int]]]
    biases: list[list[int]]
    activations: list[str]

    def validate(self) -> None:
        n_layers = len(self.layer_sizes) - 1
        if n_layers < 1:
            raise ModelError("need at least one layer")
        if not (len(self.weights) == len(self.biases)
                == len(self.activations) == n_layers):
            raise ModelError("layer list lengths disagree")
        for l in range(n_layers):
            n_in, n_out = self.layer_sizes[l], self.layer_sizes[l + 1]
            if len(self.weights[l]) != n_out or len(self.biases[l]) != n_out:
                raise ModelError(f"layer {l}: expected {n_out} neurons")
            for row in self.weights[l]:
                if len(row) != n_in:
                    raise ModelError(f"layer {l}: expected {n_in} weights per neuron")
            if self.activations[l] not in ACTIVATIONS:
                raise ModelError(f"layer {l}: unknown activation {self.activations[l]!r}")
            for v in [x for row in self.weights[l] for x in row] + list(self.biases[l]):
                if not Q_MIN <= v <= Q_MAX:
                    raise ModelError(f"layer {l}: raw value {v} outside Q8.8 range")
        if self.activations[-1] != "none":
            raise ModelError("output layer activation must be 'none'")


@dataclass
class BnnModel:
    """Binarized network: weight bit 1 means +1, 0 means -1; per-neuron
    integer threshold folded from the bias."""

    layer_sizes: list[int]
    weight_bits: list[list[int]]   # weight_bits[l][i]: n_in-bit mask
    thresholds: list[list[int]]

    def validate(self) -> None:
        n_layers = len(self.layer_sizes) - 1
        if len(self.weight_bits) != n_layers or len(self.thresholds) != n_layers:
            raise ModelError("layer list lengths disagree")
        for l in range(n_layers):
            n_in, n_out = self.layer_sizes[l], self.layer_sizes[l + 1]
            if len(self.weight_bits[l]) != n_out or len(self.thresholds[l]) != n_out:
                raise ModelError(f"layer {l}: expected {n_out} neurons")
            for w in self.weight_bits[l]:
                if w >> n_in:
                    raise ModelError(f"layer {l}: weight mask wider than {n_in} bits")


def save_model(model: MlpModel, path) -> None:
    model.validate()
    layers = []
    for w, b, act in zip(model.weights, model.biases, model.activations):
        layers.append({
            "weights": [[f"{from_q(v):.8f}" for v in row] for row in w],
            "bias": [f"{from_q(v):.8f}" for v in b],
            "activation": act,
        })
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"layer_sizes": model.layer_sizes, "layers": layers}, f, indent=1)


def load_model(path) -> MlpModel:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}:{exc.lineno}: {exc.msg}") from None
    try:
        sizes = [int(n) for n in doc["layer_sizes"]]
        weights, biases, acts = [], [], []
        for layer in doc["layers"]:
            weights.append([[to_q(float(v)) for v in row]
                            for row in layer["weights"]])
            biases.append([to_q(float(v)) for v in layer["bias"]])
            acts.append(layer["activation"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"{path}: malformed model: {exc}") from None
    model = MlpModel(layer_sizes=sizes, weights=weights, biases=biases,
                     activations=acts)
    model.validate()
    return model


# ---------------------------------------------------------------------------
# Reference inference (mirrors the compiled instruction sequences).

def _activate(v: int, activation: str) -> int:
    if activation == "relu":
        return v if v > 0 else 0
    if activation == "hard_sigmoid":
        # clamp(x/4 + 1/2, 0, 1) in Q8.8
        y = (v >> 2) + (Q_ONE // 2)
        return 0 if y < 0 else Q_ONE if y > Q_ONE else y
    return v


def infer_plain(model: MlpModel, x: Sequence[int]) -> list[int]:
    """Layerwise Q8.8 MAC with 32-bit wraparound accumulation and a
    saturating clamp before each activation."""
    model.validate()
    if len(x) != model.layer_sizes[0]:
        raise ModelError(f"expected {model.layer_sizes[0]} inputs, got {len(x)}")
    vec = [v & M32 for v in x]
    for w, b, act in zip(model.weights, model.biases, model.activations):
        nxt = []
        for row, bias in zip(w, b):
            acc = bias & M32
            for wj, xj in zip(row, vec):
                prod = (sx32(wj * sx32(xj)) >> Q_SHIFT) & M32
                acc = (acc + prod) & M32
            nxt.append(_activate(q_clamp(acc), act) & M32)
        vec = nxt
    return [sx32(v) for v in vec]


def infer_plain_bnn(model: BnnModel, x_bits: Sequence[int]) -> list[int]:
    """XNOR-popcount semantics: acc = 2*popcount(XNOR(w, x)) - n, plus the
    neuron threshold; hidden layers re-binarize with score >= 0 -> 1."""
    model.validate()
    n0 = model.layer_sizes[0]
    if len(x_bits) != n0:
        raise ModelError(f"expected {n0} input bits, got {len(x_bits)}")
    vec = sum(int(bool(b)) << i for i, b in enumerate(x_bits))
    n_layers = len(model.weight_bits)
    for l in range(n_layers):
        n_in = model.layer_sizes[l]
        mask = (1 << n_in) - 1
        scores = []
        for wbits, t in zip(model.weight_bits[l], model.thresholds[l]):
            agree = (~(wbits ^ vec)) & mask
            scores.append(2 * agree.bit_count() - n_in + t)
        if l == n_layers - 1:
            return scores
        vec = sum((1 << i) for i, s in enumerate(scores) if s >= 0)
    raise AssertionError("unreachable")


def binarize(model: MlpModel) -> BnnModel:
    """sign(w) per weight with the tie w = 0 -> +1; thresholds are biases
    rounded from Q8.8 to the nearest integer unit."""
    model.validate()
    weight_bits = []
    thresholds = []
    for w, b in zip(model.weights, model.biases):
        weight_bits.append([sum((1 << j) for j, v in enumerate(row) if v >= 0)
                            for row in w])
        thresholds.append([(v + Q_ONE // 2) >> Q_SHIFT for v in b])
    return BnnModel(layer_sizes=list(model.layer_sizes),
                    weight_bits=weight_bits, thresholds=thresholds)


def binarize_input(x: Sequence[int]) -> list[int]:
    return [1 if sx32(v) >= 0 else 0 for v in x]


# ---------------------------------------------------------------------------
# Benchmark shapes.

BENCHMARK_SHAPES = {
    "bm1": [784, 1024, 1024, 1024, 10],
    "bm2": [784, 5, 5, 10],
    "bm3": [784, 6, 5, 5, 10],
}


def benchmark_shape(name: str, input_width: int | None = None) -> list[int]:
    """Published benchmark layer sizes, optionally with a reduced input
    width for desk-scale runs."""
    sizes = list(BENCHMARK_SHAPES[name])
    if input_width is not None:
        sizes[0] = input_width
    return sizes


# ---------------------------------------------------------------------------
# Compilation.

DMEM_MAX = 4096

# register conventions for emitted code
_ACC, _TA, _TB, _TC, _TD = "r4", "r8", "r9", "r10", "r11"
_CHI, _CLO, _CONE = "r20", "r21", "r22"     # 32767, -32768, 256 (Q8.8 one)


class _Emitter:
    def __init__(self):
        self.lines: list[str] = []

    def emit(self, line: str):
        self.lines.append(line)

    def load_const(self, reg: str, value: int):
        value &= M32
        hi, lo = value >> 16, value & 0xFFFF
        if hi == 0:
            self.emit(f"ORI {reg}, r0, {lo}")
        else:
            self.emit(f"LUI {reg}, {hi}")
            if lo:
                self.emit(f"ORI {reg}, {reg}, {lo}")

    def clamp(self, reg: str, lo_reg: str, hi_reg: str):
        # branchless min/max: res = bound ^ ((bound ^ v) & -(v inside))
        self.emit(f"SLT {_TC}, {reg}, {hi_reg}")
        self.emit(f"SUB {_TC}, r0, {_TC}")
        self.emit(f"XOR {_TD}, {hi_reg}, {reg}")
        self.emit(f"AND {_TD}, {_TD}, {_TC}")
        self.emit(f"XOR {reg}, {hi_reg}, {_TD}")
        self.emit(f"SLT {_TC}, {lo_reg}, {reg}")
        self.emit(f"SUB {_TC}, r0, {_TC}")
        self.emit(f"XOR {_TD}, {lo_reg}, {reg}")
        self.emit(f"AND {_TD}, {_TD}, {_TC}")
        self.emit(f"XOR {reg}, {lo_reg}, {_TD}")

    def relu(self, reg: str):
        self.emit(f"SRA {_TC}, {reg}, 31")
        self.emit(f"NOR {_TC}, {_TC}, r0")
        self.emit(f"AND {reg}, {reg}, {_TC}")

    def assemble(self) -> MipsProgram:
        return assemble("\n".join(self.lines) + "\n")


def _check_dmem(needed: int, what: str) -> None:
    if needed > DMEM_MAX:
        raise ModelError(
            f"{what} needs {needed} data words; the step core supports at "
            f"most {DMEM_MAX}")


def compile_mlp(model: MlpModel) -> MipsProgram:
    """Unrolled, branchless Q8.8 inference program.

    Data memory: evaluator inputs first, then garbler weights/biases, then
    one scratch word per neuron; the last layer's scratch is the output
    region."""
    model.validate()
    sizes = model.layer_sizes
    cur = sizes[0]
    w_addr, b_addr, act_addr = [], [], []
    for l in range(len(sizes) - 1):
        n_in, n_out = sizes[l], sizes[l + 1]
        w_addr.append([list(range(cur + i * n_in, cur + (i + 1) * n_in))
                       for i in range(n_out)])
        cur += n_out * n_in
        b_addr.append(list(range(cur, cur + n_out)))
        cur += n_out
    for l in range(len(sizes) - 1):
        n_out = sizes[l + 1]
        act_addr.append(list(range(cur, cur + n_out)))
        cur += n_out
    _check_dmem(cur, "model")

    e = _Emitter()
    e.emit(f".input 0 {sizes[0]}")
    e.emit(f".output {act_addr[-1][0]} {sizes[-1]}")
    for l in range(len(sizes) - 1):
        for i in range(sizes[l + 1]):
            for j, wv in enumerate(model.weights[l][i]):
                e.emit(f".dmem {w_addr[l][i][j]} {wv & M32}")
            e.emit(f".dmem {b_addr[l][i]} {model.biases[l][i] & M32}")

    e.load_const(_CHI, Q_MAX)
    e.load_const(_CLO, Q_MIN)
    e.load_const(_CONE, Q_ONE)
    for l in range(len(sizes) - 1):
        x_addr = list(range(sizes[0])) if l == 0 else act_addr[l - 1]
        for i in range(sizes[l + 1]):
            e.emit(f"LW {_ACC}, {b_addr[l][i]}(r0)")
            for j in range(sizes[l]):
                e.emit(f"LW {_TA}, {w_addr[l][i][j]}(r0)")
                e.emit(f"LW {_TB}, {x_addr[j]}(r0)")
                e.emit(f"MULT {_TA}, {_TB}")
                e.emit(f"MFLO {_TA}")
                e.emit(f"SRA {_TA}, {_TA}, {Q_SHIFT}")
                e.emit(f"ADD {_ACC}, {_ACC}, {_TA}")
            e.clamp(_ACC, _CLO, _CHI)
            act = model.activations[l]
            if act == "relu":
                e.relu(_ACC)
            elif act == "hard_sigmoid":
                e.emit(f"SRA {_ACC}, {_ACC}, 2")
                e.emit(f"ADDI {_ACC}, {_ACC}, {Q_ONE // 2}")
                e.clamp(_ACC, "r0", _CONE)
            e.emit(f"SW {_ACC}, {act_addr[l][i]}(r0)")
    e.emit("HALT")
    return e.assemble()


def compile_bnn(model: BnnModel) -> MipsProgram:
    """XNOR-popcount program; multiplier-free, so it runs on the cheaper
    `include_mult=False` step core.

    Activations are packed 32 bits per data word; popcount is the SWAR
    shift-add tree (no MULT)."""
    model.validate()
    sizes = model.layer_sizes

    def words(n: int) -> int:
        return (n + 31) // 32

    cur = words(sizes[0])
    w_addr, mask_addr, act_addr, dmem = [], [], [], {}
    for l in range(len(sizes) - 1):
        n_in, n_out = sizes[l], sizes[l + 1]
        nw = words(n_in)
        layer_w = []
        for i in range(n_out):
            layer_w.append(list(range(cur, cur + nw)))
            for k in range(nw):
                dmem[cur + k] = (model.weight_bits[l][i] >> (32 * k)) & M32
            cur += nw
        w_addr.append(layer_w)
        # tail mask for the last partial word of the layer input
        mask_addr.append(cur)
        tail = n_in % 32
        dmem[cur] = M32 if tail == 0 else (1 << tail) - 1
        cur += 1
    for l in range(len(sizes) - 1):
        n_out = sizes[l + 1]
        if l < len(sizes) - 2:
            act_addr.append(list(range(cur, cur + words(n_out))))
            cur += words(n_out)
        else:
            act_addr.append(list(range(cur, cur + n_out)))  # logits, one word each
            cur += n_out
    _check_dmem(cur, "model")

    e = _Emitter()
    e.emit(f".input 0 {words(sizes[0])}")
    e.emit(f".output {act_addr[-1][0]} {sizes[-1]}")
    for addr in sorted(dmem):
        e.emit(f".dmem {addr} {dmem[addr]}")

    e.load_const(_CHI, 0x55555555)
    e.load_const(_CLO, 0x33333333)
    e.load_const(_CONE, 0x0F0F0F0F)
    last = len(sizes) - 2
    for l in range(len(sizes) - 1):
        n_in = sizes[l]
        nw = words(n_in)
        x_addr = list(range(nw)) if l == 0 else act_addr[l - 1]
        pack_word = "r5"   # bit-packed activations of this layer
        e.emit(f"ADD {pack_word}, r0, r0")
        for i in range(sizes[l + 1]):
            e.emit(f"ADD {_ACC}, r0, r0")
            for k in range(nw):
                e.emit(f"LW {_TA}, {w_addr[l][i][k]}(r0)")
                e.emit(f"LW {_TB}, {x_addr[k]}(r0)")
                e.emit(f"XOR {_TA}, {_TA}, {_TB}")
                e.emit(f"NOR {_TA}, {_TA}, r0")      # XNOR
                if k == nw - 1:
                    e.emit(f"LW {_TB}, {mask_addr[l]}(r0)")
                    e.emit(f"AND {_TA}, {_TA}, {_TB}")
                # SWAR popcount of _TA into _TA
                e.emit(f"SRL {_TB}, {_TA}, 1")
                e.emit(f"AND {_TB}, {_TB}, {_CHI}")
                e.emit(f"SUB {_TA}, {_TA}, {_TB}")
                e.emit(f"AND {_TB}, {_TA}, {_CLO}")
                e.emit(f"SRL {_TA}, {_TA}, 2")
                e.emit(f"AND {_TA}, {_TA}, {_CLO}")
                e.emit(f"ADD {_TA}, {_TA}, {_TB}")
                e.emit(f"SRL {_TB}, {_TA}, 4")
                e.emit(f"ADD {_TA}, {_TA}, {_TB}")
                e.emit(f"AND {_TA}, {_TA}, {_CONE}")
                e.emit(f"SRL {_TB}, {_TA}, 8")
                e.emit(f"ADD {_TA}, {_TA}, {_TB}")
                e.emit(f"SRL {_TB}, {_TA}, 16")
                e.emit(f"ADD {_TA}, {_TA}, {_TB}")
                e.emit(f"ANDI {_TA}, {_TA}, 63")
                e.emit(f"ADD {_ACC}, {_ACC}, {_TA}")
            # score = 2*popcount - n_in + threshold
            e.emit(f"SLL {_ACC}, {_ACC}, 1")
            e.emit(f"ADDI {_ACC}, {_ACC}, {model.thresholds[l][i] - n_in}")
            if l == last:
                e.emit(f"SW {_ACC}, {act_addr[l][i]}(r0)")
            else:
                e.emit(f"SLT {_TA}, {_ACC}, r0")     # 1 if score < 0
                e.emit(f"XORI {_TA}, {_TA}, 1")      # bit = score >= 0
                e.emit(f"SLL {_TA}, {_TA}, {i % 32}")
                e.emit(f"OR {pack_word}, {pack_word}, {_TA}")
                if i % 32 == 31 or i == sizes[l + 1] - 1:
                    e.emit(f"SW {pack_word}, {act_addr[l][i // 32]}(r0)")
                    e.emit(f"ADD {pack_word}, r0, r0")
    e.emit("HALT")
    return e.assemble()


def uses_mult(program: MipsProgram) -> bool:
    for word in program.instructions:
        if decode(word).mnemonic() in (Mnemonic.MULT, Mnemonic.MFLO):
            return True
    return False


def step_config_for(program: MipsProgram) -> CpuStepConfig:
    """Smallest step-core configuration that fits the program's data."""
    top = 0
    if program.dmem_init_garbler:
        top = max(program.dmem_init_garbler) + 1
    for base, count in (program.evaluator_input_region, program.output_region):
        top = max(top, base + count)
    for word in program.instructions:
        iw = decode(word)
        m = iw.mnemonic()
        # compiled programs address memory r0-relative with static offsets
        if m in (Mnemonic.LW, Mnemonic.SW) and iw.rs == 0:
            top = max(top, iw.simm16 + 1)
    _check_dmem(top, "program")
    w = 16
    while w < top:
        w *= 2
    return CpuStepConfig(dmem_words=w, include_mult=uses_mult(program))
