"""Simulated power-analysis laboratory.

Traces follow the Hamming-weight model: every value a target writes during
one CPU step contributes the bit count of that value to one of
`samples_per_step` sample slots, plus Gaussian noise.  Three targets:

  unprotected        the plain CPU; leakage of the actual data words
  garbled            the garbled evaluator; leakage of active wire labels
                     and table ciphertexts, freshly garbled per trace
  garbled-reused-seed  negative control: every trace reuses one garbling,
                     so labels correlate with data again and the t-test
                     must flag it (shows the test has power)

Campaigns are fixed-vs-random: half the traces process one fixed input,
half process fresh random inputs, and a per-sample Welch t-test compares
the two populations.  |t| beyond 4.5 at any sample flags a leak.
"""

from __future__ import annotations

import secrets
import struct
from dataclasses import dataclass, field

import numpy as np

from .circuit import count_gates
from .garble import evaluate_batch
from .mips import MipsProgram
from .mips.emulator import CpuStepConfig, run_plain_vec
from .mips.stepnet import build_step_netlist
from .protocol import (_CopyGarbler, _initial_state_bits,
                       _region_bit_positions, instruction_trace)

MAGIC = b"HWGN2TRC"
FORMAT_VERSION = 1
TVLA_THRESHOLD = 4.5
TARGETS = ("unprotected", "garbled", "garbled-reused-seed")

_POP8 = np.array([bin(i).count("1") for i in range(256)], dtype=np.float32)


class LeakageError(Exception):
    pass


@dataclass
class LeakageModel:
    noise_sigma: float = 1.0
    samples_per_step: int = 4

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise LeakageError("noise sigma must be >= 0")
        if self.samples_per_step < 1:
            raise LeakageError("need at least one sample slot per step")


@dataclass
class TraceSet:
    traces: np.ndarray          # (n_traces, n_samples) float32
    populations: np.ndarray     # (n_traces,) uint8; 0 = fixed, 1 = random
    samples_per_step: int
    target: str = "unprotected"

    def __post_init__(self):
        self.traces = np.asarray(self.traces, dtype=np.float32)
        self.populations = np.asarray(self.populations, dtype=np.uint8)
        if self.traces.ndim != 2:
            raise LeakageError("traces must be a 2-d array")
        if self.populations.shape != (self.traces.shape[0],):
            raise LeakageError("one population tag per trace required")

    @property
    def n_traces(self) -> int:
        return self.traces.shape[0]

    @property
    def n_samples(self) -> int:
        return self.traces.shape[1]


@dataclass
class TScoreSeries:
    t: np.ndarray               # (n_samples,) float64
    n_fixed: int
    n_random: int

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.t))) if self.t.size else 0.0


@dataclass
class TvlaVerdict:
    leaks: bool
    max_abs_t: float
    n_exceeding: int
    threshold: float = TVLA_THRESHOLD


# ---------------------------------------------------------------------------
# Trace synthesis.

class _SlotWriter:
    """Accumulates Hamming weights into (trace, step-slot) positions."""

    def __init__(self, n_traces: int, n_steps: int, samples_per_step: int):
        self.k = samples_per_step
        self.traces = np.zeros((n_traces, n_steps * self.k), dtype=np.float32)
        self._counts: dict[int, int] = {}

    def add(self, step: int, hw: np.ndarray) -> None:
        i = self._counts.get(step, 0)
        self._counts[step] = i + 1
        self.traces[:, step * self.k + i % self.k] += hw


def _hw_u32(values: np.ndarray) -> np.ndarray:
    b = np.ascontiguousarray(values, dtype=np.uint32).view(np.uint8)
    return _POP8[b.reshape(values.shape[0], -1)].sum(axis=1)


def _finish(writer: _SlotWriter, model: LeakageModel, rng) -> np.ndarray:
    out = writer.traces
    if model.noise_sigma:
        out = out + rng.normal(0.0, model.noise_sigma,
                               out.shape).astype(np.float32)
    return out


def simulate_unprotected(program: MipsProgram, cpu: CpuStepConfig,
                         inputs: np.ndarray, model: LeakageModel,
                         rng) -> np.ndarray:
    """HW traces of the plain CPU running every input row in lockstep."""
    inputs = np.asarray(inputs, dtype=np.uint32)
    T = len(instruction_trace(program, cpu, 100_000))
    writer = _SlotWriter(inputs.shape[0], T, model.samples_per_step)

    def sink(step, kind, index, values):
        writer.add(step, _hw_u32(values))

    run_plain_vec(program, cpu, inputs, sink=sink)
    return _finish(writer, model, rng)


def simulate_garbled(program: MipsProgram, cpu: CpuStepConfig,
                     inputs: np.ndarray, model: LeakageModel, rng,
                     reuse_seed: bool = False) -> np.ndarray:
    """HW traces of the garbled evaluator: every active label and table
    ciphertext it touches leaks its bit count.  Fresh garbling per trace
    unless `reuse_seed`, the deliberately broken negative control."""
    inputs = np.asarray(inputs, dtype=np.uint32)
    B = inputs.shape[0]
    net, lay = build_step_netlist(cpu)
    instrs = instruction_trace(program, cpu, 100_000)
    T = len(instrs)
    writer = _SlotWriter(B, T, model.samples_per_step)

    # one garbling serves every trace when the seed is reused, so the
    # negative control garbles once and broadcasts tables across traces
    if reuse_seed:
        seeds = [b"\x5A" * 32]
    else:
        seeds = [rng.bytes(32) for _ in range(B)]
    g = _CopyGarbler(net, lay, seeds)
    rb = g.r[:, None, :]

    state_bits = np.array(_initial_state_bits(program, lay), dtype=np.uint8)
    active = g.state_labels0 ^ state_bits[None, :, None] * rb
    if reuse_seed:
        active = np.broadcast_to(active, (B,) + active.shape[1:]).copy()
    base, count = program.evaluator_input_region
    in_pos = _region_bit_positions(base, count, lay)
    for i in range(count):
        bits = (inputs[:, i, None] >> np.arange(32)).astype(np.uint8) & 1
        for j in range(32):
            p = in_pos[32 * i + j]
            active[:, p] = g.state_labels0[:, p] ^ bits[:, j, None] * g.r

    for t, word in enumerate(instrs):
        instr0, tables = g.garble_steps(1)
        ibits = np.array(lay.instr_bits(word), dtype=np.uint8)
        instr_active = instr0[:, 0] ^ ibits[None, :, None] * rb
        if reuse_seed:
            instr_active = np.broadcast_to(
                instr_active, (B,) + instr_active.shape[1:])

        def sink(labels, _t=t):
            flat = labels.reshape(B, -1)
            writer.add(_t, _POP8[flat].sum(axis=1))

        in_labels = np.concatenate([instr_active, active], axis=1)
        out = evaluate_batch(net, tables[:, 0], in_labels, label_sink=sink)
        active = out[:, net.output_wires]
    return _finish(writer, model, rng)


def make_campaign(program: MipsProgram, cpu: CpuStepConfig, target: str,
                  n_traces: int, x_fixed: list[int],
                  model: LeakageModel | None = None,
                  seed: int | None = None) -> TraceSet:
    """Fixed-vs-random trace campaign against one target."""
    if target not in TARGETS:
        raise LeakageError(f"unknown target {target!r}; pick from {TARGETS}")
    if n_traces < 4:
        raise LeakageError("need at least 4 traces")
    model = model or LeakageModel()
    rng = np.random.default_rng(secrets.randbits(64) if seed is None else seed)
    _, count = program.evaluator_input_region
    if len(x_fixed) != count:
        raise LeakageError(f"fixed input needs {count} words")

    populations = np.zeros(n_traces, dtype=np.uint8)
    populations[rng.permutation(n_traces)[:n_traces // 2]] = 1
    inputs = np.tile(np.array(x_fixed, dtype=np.uint32), (n_traces, 1))
    rand_rows = populations == 1
    inputs[rand_rows] = rng.integers(0, 1 << 32, size=(rand_rows.sum(), count),
                                     dtype=np.uint32)

    if target == "unprotected":
        traces = simulate_unprotected(program, cpu, inputs, model, rng)
    else:
        traces = simulate_garbled(program, cpu, inputs, model, rng,
                                  reuse_seed=target == "garbled-reused-seed")
    return TraceSet(traces=traces, populations=populations,
                    samples_per_step=model.samples_per_step, target=target)


# ---------------------------------------------------------------------------
# Statistics.

def welch_t(traces: TraceSet, variant: str = "standard") -> TScoreSeries:
    """Per-sample Welch t between the fixed and random populations.

    variant="n-squared" divides each variance by n^2 instead of n; it
    exists only so tests can demonstrate the difference and is not used
    by any verdict path."""
    if variant not in ("standard", "n-squared"):
        raise LeakageError(f"unknown variant {variant!r}")
    fixed = traces.traces[traces.populations == 0].astype(np.float64)
    rand = traces.traces[traces.populations == 1].astype(np.float64)
    n0, n1 = fixed.shape[0], rand.shape[0]
    if n0 < 2 or n1 < 2:
        raise LeakageError("need at least 2 traces in each population")
    m0, m1 = fixed.mean(axis=0), rand.mean(axis=0)
    v0, v1 = fixed.var(axis=0, ddof=1), rand.var(axis=0, ddof=1)
    d0, d1 = (n0 * n0, n1 * n1) if variant == "n-squared" else (n0, n1)
    denom = np.sqrt(v0 / d0 + v1 / d1)
    diff = m0 - m1
    with np.errstate(divide="ignore", invalid="ignore"):
        t = diff / denom
    # degenerate samples: equal constant populations score 0, unequal inf
    t[(denom == 0) & (diff == 0)] = 0.0
    return TScoreSeries(t=t, n_fixed=n0, n_random=n1)


def tvla_verdict(scores: TScoreSeries,
                 threshold: float = TVLA_THRESHOLD) -> TvlaVerdict:
    exceeding = int(np.sum(np.abs(scores.t) > threshold))
    return TvlaVerdict(leaks=exceeding > 0, max_abs_t=scores.max_abs(),
                       n_exceeding=exceeding, threshold=threshold)


# ---------------------------------------------------------------------------
# Trace files.

_HEADER = struct.Struct("<8sBII")


def export_traces(traces: TraceSet, path) -> None:
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION,
                             traces.n_traces, traces.n_samples))
        f.write(traces.populations.tobytes())
        f.write(np.ascontiguousarray(traces.traces,
                                     dtype="<f4").tobytes())


def import_traces(path) -> TraceSet:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _HEADER.size:
        raise LeakageError(f"{path}: truncated header at byte {len(data)}")
    magic, version, n_traces, n_samples = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise LeakageError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise LeakageError(f"{path}: unsupported version {version}")
    need = _HEADER.size + n_traces + 4 * n_traces * n_samples
    if len(data) != need:
        raise LeakageError(f"{path}: expected {need} bytes, file ends at "
                           f"byte {len(data)}")
    pops = np.frombuffer(data, dtype=np.uint8, count=n_traces,
                         offset=_HEADER.size)
    body = np.frombuffer(data, dtype="<f4", offset=_HEADER.size + n_traces)
    return TraceSet(traces=body.reshape(n_traces, n_samples).copy(),
                    populations=pops.copy(), samples_per_step=1,
                    target="imported")
