"""Two-party session engine over the garbled step core.

The garbler owns the program (the compiled model); the evaluator owns the
input words.  One session garbles T applications of the universal step
netlist with chained labels: the output 0-labels of step t become the
state-input 0-labels of step t+1, all under one global offset, so active
labels flow across steps with no translation.

Delivery modes: `full` sends every step in the OT flight (2 interaction
rounds total); `stream` sends k steps per round and waits for the
evaluator's boundary acknowledgement before the next batch (M + 2 rounds,
M = ceil(T/k)).  The evaluator erases each batch's tables after use, so
streaming bounds resident memory by one batch.

Malicious security is cut-and-choose: s independently seeded copies, a
digest of every copy's table stream committed up front, a random half
opened by seed for local re-garbling, majority decode over the rest.  The
table stream of the universal step circuit is program-independent, so
opening a seed reveals nothing about the model.  Received table streams
are also checked against the committed digests, which forces a cheating
garbler to commit to any corruption and risk the open.

Programs must have input-independent control flow (compiled inference
programs are branchless); the garbler verifies this before garbling.
"""

from __future__ import annotations

import hashlib
import random
import secrets
import struct
import threading
from dataclasses import dataclass, field
from math import ceil

import numpy as np

from . import channels
from .channels import Channel, ProtocolViolation
from .circuit import count_gates
from .garble import KeyStream, evaluate_batch, garble_batch, sample_offset
from .mips import MipsProgram, step_plain
from .mips.emulator import CpuStepConfig, initial_state
from .mips.stepnet import StepLayout, build_step_netlist
from .ot import (OtChoice, OtSenderInput, ot1_sender, ot2_receiver,
                 ot3_sender, ot_receive, select_group)

PROTOCOL_VERSION = 1
TABLE_ROW_BYTES = 48     # 3 rows x 16 bytes per nonfree gate
LABEL_BYTES = 16

_HELLO = struct.Struct("<BBIBBBB")       # version mode k security s hiding profile
_PHI = struct.Struct("<IIBIIIIIBB")      # T W mult in_base in_count out_base out_count n_state s check
_BATCH_HEAD = struct.Struct("<BIIB")     # flags round n_steps n_copies
_F = channels.FRAME_HEADER.size


class ProtocolError(Exception):
    pass


class CheatDetected(ProtocolError):
    def __init__(self, message: str, copy_index: int | None = None):
        super().__init__(message)
        self.copy_index = copy_index


@dataclass
class SessionConfig:
    mode: str = "full"                   # "full" | "stream"
    instructions_per_round: int = 1
    security: str = "hbc"                # "hbc" | "malicious"
    copies: int = 1
    fresh_seed: bytes = b""
    step_limit: int = 100_000
    cpu: CpuStepConfig = field(default_factory=CpuStepConfig)
    output_hiding: bool = False
    ot_profile: str | None = None

    def __post_init__(self):
        if self.mode not in ("full", "stream"):
            raise ProtocolError(f"unknown mode {self.mode!r}")
        if self.security not in ("hbc", "malicious"):
            raise ProtocolError(f"unknown security {self.security!r}")
        if self.instructions_per_round < 1:
            raise ProtocolError("instructions_per_round must be >= 1")
        if self.security == "malicious" and self.copies < 2:
            raise ProtocolError("malicious security needs at least 2 copies")
        if self.security == "hbc":
            self.copies = 1
        if not self.fresh_seed:
            self.fresh_seed = secrets.token_bytes(32)


@dataclass
class CommStats:
    ot_rounds: int = 0
    bytes_garbler_to_evaluator: int = 0
    bytes_evaluator_to_garbler: int = 0
    peak_resident_tables: int = 0
    peak_resident_labels: int = 0


@dataclass
class SideInfo:
    step_count: int
    step_netlist_shape: tuple[int, int, int]   # inputs, outputs, gates
    nothing_else: str = ("reveals step count and universal step-netlist "
                         "shape only; no weights, no architecture, no "
                         "instruction bits")


@dataclass
class SessionTranscript:
    frames: list[tuple[str, int, str]] = field(default_factory=list)

    def record(self, direction: str, tag: int, payload: bytes):
        self.frames.append((f"{direction}:{channels.TAG_NAMES.get(tag, tag)}",
                            len(payload),
                            hashlib.sha256(payload).hexdigest()))


@dataclass
class GarblerResult:
    stats: CommStats
    side_info: SideInfo
    transcript: SessionTranscript
    received_output: list[int] | bytes | None = None


@dataclass
class EvaluatorResult:
    y: list[int]
    stats: CommStats
    transcript: SessionTranscript
    verdict: str = "OK"


# ---------------------------------------------------------------------------
# Shared helpers.

def copy_seeds(fresh_seed: bytes, s: int) -> list[bytes]:
    return [hashlib.sha256(fresh_seed + b"copy" + i.to_bytes(4, "little")).digest()
            for i in range(s)]


def instruction_trace(program: MipsProgram, cpu: CpuStepConfig,
                      step_limit: int) -> list[int]:
    """The per-step instruction words.  Requires input-independent control
    flow, which is checked against a second, random input assignment."""
    base, count = program.evaluator_input_region

    def trace(x):
        st = initial_state(cpu)
        for a, w in program.dmem_init_garbler.items():
            st.dmem[a] = w
        for i, w in enumerate(x):
            st.dmem[base + i] = w & 0xFFFFFFFF
        seq = []
        while not st.halted:
            if len(seq) >= step_limit:
                raise ProtocolError(f"program exceeded step limit {step_limit}")
            word = program.instructions[st.pc]
            seq.append(word)
            st = step_plain(word, st, cpu)
        return seq

    rng = random.Random(0xC0FFEE)
    seq = trace([0] * count)
    if seq != trace([rng.getrandbits(32) for _ in range(count)]):
        raise ProtocolError("program control flow depends on evaluator input; "
                            "cannot garble a fixed step sequence")
    return seq


def _send(channel: Channel, transcript: SessionTranscript, tag: int,
          payload: bytes = b"") -> None:
    channel.send(tag, payload)
    transcript.record("tx", tag, payload)


def _expect(channel: Channel, transcript: SessionTranscript, tag: int) -> bytes:
    payload = channel.expect(tag)
    transcript.record("rx", tag, payload)
    return payload


def _pack_bits(bits) -> bytes:
    out = bytearray((len(bits) + 7) // 8)
    for i, b in enumerate(bits):
        if b:
            out[i >> 3] |= 1 << (i & 7)
    return bytes(out)


def _unpack_bits(data: bytes, n: int) -> list[int]:
    return [(data[i >> 3] >> (i & 7)) & 1 for i in range(n)]


def _initial_state_bits(program: MipsProgram, lay: StepLayout) -> list[int]:
    """Garbler-known initial state; evaluator-input words left at zero
    (their bit positions are delivered by OT, not by these labels)."""
    st = initial_state(lay.cfg)
    for a, w in program.dmem_init_garbler.items():
        if a >= lay.cfg.dmem_words:
            raise ProtocolError(f"dmem init address {a} outside configured memory")
        st.dmem[a] = w
    return lay.state_to_bits(st)


def _region_bit_positions(base: int, count: int, lay: StepLayout) -> list[int]:
    pos = []
    for i in range(count):
        off = lay.mem_word_offset(base + i)
        pos.extend(range(off, off + 32))
    return pos


def _hello_payload(cfg: SessionConfig) -> bytes:
    return _HELLO.pack(PROTOCOL_VERSION,
                       0 if cfg.mode == "full" else 1,
                       cfg.instructions_per_round,
                       0 if cfg.security == "hbc" else 1,
                       cfg.copies, int(cfg.output_hiding),
                       0 if (cfg.ot_profile or "secure") == "secure" else 1)


# ---------------------------------------------------------------------------
# One-time MAC output hiding: per 16-byte block an affine map over
# GF(2^128), XORed with a one-time mask.  mask = 0 leaves the bare MAC.

_GF_MOD = (1 << 128) | 0x87


def _gf_mul(a: int, b: int) -> int:
    r = 0
    while b:
        if b & 1:
            r ^= a
        a <<= 1
        if a >> 128:
            a ^= _GF_MOD
        b >>= 1
    return r


def _gf_inv(a: int) -> int:
    r, e = 1, (1 << 128) - 2
    while e:
        if e & 1:
            r = _gf_mul(r, a)
        a = _gf_mul(a, a)
        e >>= 1
    return r


def _mac_coeffs(mac_key: bytes, block: int) -> tuple[int, int]:
    d = hashlib.sha256(mac_key + block.to_bytes(4, "little")).digest()
    return int.from_bytes(d[:16], "big") | 1, int.from_bytes(d[16:], "big")


def hidden_len(n_bytes: int) -> int:
    return ceil(n_bytes / 16) * 16


def hide_output(y_bytes: bytes, mac_key: bytes, mask: bytes) -> bytes:
    out = bytearray()
    for blk in range(0, max(len(y_bytes), 1), 16):
        chunk = y_bytes[blk:blk + 16].ljust(16, b"\0")
        a, b = _mac_coeffs(mac_key, blk // 16)
        m = int.from_bytes(chunk, "big")
        out += (_gf_mul(a, m) ^ b).to_bytes(16, "big")
    mask = mask.ljust(len(out), b"\0")
    return bytes(x ^ y for x, y in zip(out, mask))


def unhide_output(hidden: bytes, mac_key: bytes, mask: bytes,
                  n_bytes: int) -> bytes:
    if len(hidden) != hidden_len(max(n_bytes, 1)):
        raise ProtocolError("hidden output has wrong length")
    raw = bytes(x ^ y for x, y in zip(hidden, mask.ljust(len(hidden), b"\0")))
    out = bytearray()
    for blk in range(0, len(raw), 16):
        a, b = _mac_coeffs(mac_key, blk // 16)
        v = int.from_bytes(raw[blk:blk + 16], "big") ^ b
        out += _gf_mul(v, _gf_inv(a)).to_bytes(16, "big")
    if any(out[n_bytes:]):
        raise ProtocolError("output MAC verification failed")
    y = bytes(out[:n_bytes])
    if hide_output(y, mac_key, mask) != hidden:
        raise ProtocolError("output MAC verification failed")
    return y


# ---------------------------------------------------------------------------
# Garbler-side label machinery.

class _CopyGarbler:
    """Sequential chained garbling of the step netlist for B independently
    seeded copies.  `corrupt` injects a single-bit table fault per step in
    the listed batch positions (cut-and-choose cheat harness); the fault is
    applied before digesting so a cheating garbler stays self-consistent."""

    def __init__(self, net, lay: StepLayout, seeds: list[bytes],
                 corrupt: frozenset = frozenset()):
        self.net = net
        self.streams = [KeyStream(s) for s in seeds]
        self.r = np.stack([sample_offset(s) for s in self.streams])
        self.state_labels0 = np.stack(
            [s.blocks(lay.n_state_bits) for s in self.streams])
        self.digests = [hashlib.sha256() for _ in seeds]
        self.corrupt = corrupt

    def garble_steps(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Garble the next n steps; returns (instr_labels0, tables) shaped
        (B, n, 32, 16) and (B, n, n_nonfree, 3, 16)."""
        B = self.r.shape[0]
        instr_all, tables_all = [], []
        for _ in range(n):
            instr0 = np.stack([s.blocks(32) for s in self.streams])
            in0 = np.concatenate([instr0, self.state_labels0], axis=1)
            tables, labels0 = garble_batch(self.net, self.r, in0)
            for b in self.corrupt:
                tables[b, 0, 0, 15] ^= 1
            self.state_labels0 = labels0[:, self.net.output_wires]
            for i in range(B):
                self.digests[i].update(tables[i].tobytes())
            instr_all.append(instr0)
            tables_all.append(tables)
        if not instr_all:
            nf = count_gates(self.net).nonfree
            return (np.zeros((B, 0, 32, LABEL_BYTES), np.uint8),
                    np.zeros((B, 0, nf, 3, LABEL_BYTES), np.uint8))
        return np.stack(instr_all, axis=1), np.stack(tables_all, axis=1)


def _table_digests(net, lay: StepLayout, seeds: list[bytes], T: int,
                   corrupt: frozenset = frozenset()) -> list[bytes]:
    g = _CopyGarbler(net, lay, seeds, corrupt)
    done = 0
    while done < T:
        n = min(32, T - done)
        g.garble_steps(n)
        done += n
    return [d.digest() for d in g.digests]


def run_garbler(cfg: SessionConfig, program: MipsProgram, channel: Channel,
                _corrupt: frozenset = frozenset()) -> GarblerResult:
    """Garbler role of one session over an established channel."""
    transcript = SessionTranscript()
    stats = CommStats()
    net, lay = build_step_netlist(cfg.cpu)
    instrs = instruction_trace(program, cfg.cpu, cfg.step_limit)
    T = len(instrs)
    side = SideInfo(step_count=T,
                    step_netlist_shape=(net.n_inputs, net.n_outputs,
                                        count_gates(net).total))
    rng = random.Random(int.from_bytes(
        hashlib.sha256(cfg.fresh_seed + b"ot").digest(), "big"))
    group = select_group(cfg.ot_profile)

    in_base, in_count = program.evaluator_input_region
    out_base, out_count = program.output_region
    s = cfg.copies
    check_count = s // 2 if cfg.security == "malicious" else 0
    seeds = copy_seeds(cfg.fresh_seed, s)

    _send(channel, transcript, channels.HELLO, _hello_payload(cfg))
    digests = b""
    if cfg.security == "malicious":
        digests = b"".join(_table_digests(net, lay, seeds, T, _corrupt))
    _send(channel, transcript, channels.PHI_META,
          _PHI.pack(T, cfg.cpu.dmem_words, int(cfg.cpu.include_mult),
                    in_base, in_count, out_base, out_count,
                    lay.n_state_bits, s, check_count) + digests)

    eval_idx = list(range(s))
    if cfg.security == "malicious":
        req = _expect(channel, transcript, channels.OPEN_SEED)
        picked = sorted(req)
        if len(picked) != check_count or len(set(picked)) != len(picked) \
                or any(i >= s for i in picked):
            channel.abort("bad check set")
            raise ProtocolError("bad check set")
        _send(channel, transcript, channels.OPEN_SEED,
              b"".join(seeds[i] for i in picked))
        eval_idx = [i for i in range(s) if i not in set(picked)]

    corrupt_local = frozenset(eval_idx.index(i) for i in _corrupt
                              if i in eval_idx)
    g = _CopyGarbler(net, lay, [seeds[i] for i in eval_idx], corrupt_local)
    B = len(eval_idx)
    rb = g.r[:, None, :]

    # initial boundary: garbler-known bits as active labels, input bits via OT
    state_bits = np.array(_initial_state_bits(program, lay), dtype=np.uint8)
    init_active = g.state_labels0 ^ state_bits[None, :, None] * rb
    in_pos = _region_bit_positions(in_base, in_count, lay)
    pairs = []
    for b in range(B):
        for p in in_pos:
            l0 = g.state_labels0[b, p].tobytes()
            pairs.append((l0, (g.state_labels0[b, p] ^ g.r[b]).tobytes()))

    st_ot, msg1 = ot1_sender(group, rng)
    _send(channel, transcript, channels.OT1, msg1)
    msg2 = _expect(channel, transcript, channels.OT2)
    _send(channel, transcript, channels.OT3,
          ot3_sender(st_ot, msg2, OtSenderInput(pairs)) if pairs else b"")
    stats.ot_rounds += 1

    step_cursor = 0

    def send_batch(round_no: int, n_steps: int, include_initial: bool):
        # per-step layout (instr labels then tables) lets the payload grow
        # incrementally; a whole-run batch is too large to stack and copy
        nonlocal step_cursor
        payload = bytearray(_BATCH_HEAD.pack(int(include_initial), round_no,
                                             n_steps, B))
        if include_initial:
            payload += init_active.tobytes()
        for _ in range(n_steps):
            instr0, tables = g.garble_steps(1)
            bits = np.array(lay.instr_bits(instrs[step_cursor]),
                            dtype=np.uint8)
            payload += (instr0[:, 0] ^ bits[None, :, None] * rb).tobytes()
            payload += tables.tobytes()
            step_cursor += 1
        _send(channel, transcript, channels.BATCH, bytes(payload))

    if cfg.mode == "full":
        send_batch(0, T, include_initial=True)
        _expect(channel, transcript, channels.YBACK)
    else:
        send_batch(0, 0, include_initial=True)   # rides in the OT flight
        k = cfg.instructions_per_round
        for m in range(ceil(T / k)):
            send_batch(m + 1, min(k, T - m * k), include_initial=False)
            _expect(channel, transcript, channels.YBACK)
            stats.ot_rounds += 1

    # decode bits for the output region of the final boundary
    out_pos = _region_bit_positions(out_base, out_count, lay)
    decode_payload = bytearray()
    for b in range(B):
        decode_payload += _pack_bits(
            [int(g.state_labels0[b, p, 15] & 1) for p in out_pos])
    if cfg.output_hiding:
        mac_key = hashlib.sha256(cfg.fresh_seed + b"mac").digest()[:16]
        n_mask = hidden_len(out_count * 4)
        mask = hashlib.sha256(cfg.fresh_seed + b"mask").digest()
        mask = (mask * ceil(n_mask / len(mask)))[:n_mask]
        decode_payload += mac_key + mask
    _send(channel, transcript, channels.DECODE, bytes(decode_payload))
    out_frame = _expect(channel, transcript, channels.OUTPUT)
    stats.ot_rounds += 1

    received: list[int] | bytes | None
    if cfg.output_hiding:
        received = bytes(out_frame)
    else:
        received = [int(v) for v in np.frombuffer(out_frame, dtype="<u4")]
    if cfg.security == "malicious":
        _expect(channel, transcript, channels.VERDICT)

    stats.bytes_garbler_to_evaluator = channel.bytes_sent
    stats.bytes_evaluator_to_garbler = channel.bytes_received
    return GarblerResult(stats=stats, side_info=side, transcript=transcript,
                         received_output=received)


# ---------------------------------------------------------------------------
# Evaluator.

def run_evaluator(cfg: SessionConfig, x: list[int], channel: Channel,
                  rng_seed: bytes | None = None) -> EvaluatorResult:
    transcript = SessionTranscript()
    stats = CommStats()
    rng = random.Random(int.from_bytes(
        hashlib.sha256((rng_seed or secrets.token_bytes(32)) + b"ev").digest(),
        "big"))
    group = select_group(cfg.ot_profile)

    hello = _expect(channel, transcript, channels.HELLO)
    if hello != _hello_payload(cfg):
        channel.abort("configuration mismatch")
        raise ProtocolError("configuration mismatch with garbler")
    phi = _expect(channel, transcript, channels.PHI_META)
    (T, W, mult, in_base, in_count, out_base, out_count,
     n_state, s, check_count) = _PHI.unpack(phi[:_PHI.size])
    if len(x) != in_count:
        channel.abort(f"need {in_count} input words")
        raise ProtocolError(f"expected {in_count} input words, got {len(x)}")
    cpu = CpuStepConfig(dmem_words=W, include_mult=bool(mult))
    net, lay = build_step_netlist(cpu)
    if lay.n_state_bits != n_state:
        raise ProtocolError("step netlist shape disagreement")
    n_nonfree = count_gates(net).nonfree

    eval_idx = list(range(s))
    committed: list[bytes] = []
    if cfg.security == "malicious":
        if len(phi) != _PHI.size + 32 * s:
            raise ProtocolViolation("bad digest block", 1)
        committed = [phi[_PHI.size + 32 * i:_PHI.size + 32 * (i + 1)]
                     for i in range(s)]
        picked = sorted(rng.sample(range(s), check_count))
        _send(channel, transcript, channels.OPEN_SEED, bytes(picked))
        opened = _expect(channel, transcript, channels.OPEN_SEED)
        seeds = [opened[32 * i:32 * (i + 1)] for i in range(check_count)]
        local = _table_digests(net, lay, seeds, T)
        for j, i in enumerate(picked):
            if local[j] != committed[i]:
                _send(channel, transcript, channels.VERDICT, bytes([1, i]))
                channel.abort("check copy digest mismatch")
                raise CheatDetected(
                    f"cut-and-choose: copy {i} digest mismatch", i)
        eval_idx = [i for i in range(s) if i not in set(picked)]
    B = len(eval_idx)

    x_bits = []
    for w in x:
        x_bits.extend((w >> i) & 1 for i in range(32))
    choice = x_bits * B
    msg1 = _expect(channel, transcript, channels.OT1)
    if choice:
        st_ot, msg2 = ot2_receiver(group, msg1, OtChoice(choice), rng)
        _send(channel, transcript, channels.OT2, msg2)
        got = ot_receive(st_ot, _expect(channel, transcript, channels.OT3))
    else:
        _send(channel, transcript, channels.OT2, b"")
        _expect(channel, transcript, channels.OT3)
        got = []
    stats.ot_rounds += 1

    in_pos = _region_bit_positions(in_base, in_count, lay)
    active_state = np.zeros((B, n_state, LABEL_BYTES), dtype=np.uint8)
    stream_hash = [hashlib.sha256() for _ in range(B)]
    resident_labels = 0
    peak_labels = 0
    peak_tables = 0

    def batch_payloads():
        nonlocal resident_labels, peak_labels
        done, rounds = 0, 0
        while True:
            payload = _expect(channel, transcript, channels.BATCH)
            flags, round_no, n_steps, nb = _BATCH_HEAD.unpack(
                payload[:_BATCH_HEAD.size])
            if nb != B:
                raise ProtocolViolation("copy count mismatch", round_no)
            off = _BATCH_HEAD.size
            if flags & 1:
                size = B * n_state * LABEL_BYTES
                init = np.frombuffer(payload[off:off + size], dtype=np.uint8)
                active_state[:] = init.reshape(B, n_state, LABEL_BYTES)
                npos = len(in_pos)
                for b in range(B):
                    for j, p in enumerate(in_pos):
                        active_state[b, p] = np.frombuffer(
                            got[b * npos + j], dtype=np.uint8)
                off += size
                resident_labels += B * n_state
                peak_labels = max(peak_labels, resident_labels)
            yield payload, off, n_steps
            done += n_steps
            rounds += 1
            if done >= T and (rounds > 1 or cfg.mode == "full" or T == 0):
                return

    instr_sz = B * 32 * LABEL_BYTES
    table_sz = B * n_nonfree * TABLE_ROW_BYTES
    for payload, off, n_steps in batch_payloads():
        peak_tables = max(peak_tables, B * n_steps * n_nonfree)
        resident_labels += B * n_steps * 32
        peak_labels = max(peak_labels, resident_labels)
        for t in range(n_steps):
            instr_active = np.frombuffer(
                payload, np.uint8, instr_sz, off).reshape(B, 32, LABEL_BYTES)
            off += instr_sz
            tables = np.frombuffer(payload, np.uint8, table_sz, off).reshape(
                B, n_nonfree, 3, LABEL_BYTES)
            off += table_sz
            if cfg.security == "malicious":
                for b in range(B):
                    stream_hash[b].update(tables[b].tobytes())
            in_labels = np.concatenate([instr_active, active_state], axis=1)
            out = evaluate_batch(net, tables, in_labels)
            active_state = out[:, net.output_wires]
        # erase: this batch's tables and instruction labels are dropped here
        del payload
        resident_labels -= B * n_steps * 32
        if n_steps or cfg.mode == "full":
            _send(channel, transcript, channels.YBACK,
                  hashlib.sha256(active_state.tobytes()).digest())
            if cfg.mode == "stream" and n_steps:
                stats.ot_rounds += 1

    if cfg.security == "malicious":
        for b, i in enumerate(eval_idx):
            if stream_hash[b].digest() != committed[i]:
                _send(channel, transcript, channels.VERDICT, bytes([1, i]))
                channel.abort("evaluated copy diverged from commitment")
                raise CheatDetected(
                    f"cut-and-choose: evaluated copy {i} diverged from "
                    f"its committed digest", i)

    decode_payload = _expect(channel, transcript, channels.DECODE)
    out_pos = _region_bit_positions(out_base, out_count, lay)
    nbits = len(out_pos)
    nbytes = (nbits + 7) // 8
    ys = []
    for b in range(B):
        dbits = _unpack_bits(decode_payload[b * nbytes:(b + 1) * nbytes], nbits)
        bits = [int(active_state[b, p, 15] & 1) ^ d
                for p, d in zip(out_pos, dbits)]
        ys.append([sum(bits[32 * i + j] << j for j in range(32))
                   for i in range(out_count)])

    if cfg.security == "malicious":
        counts: dict[tuple, int] = {}
        for yi in ys:
            counts[tuple(yi)] = counts.get(tuple(yi), 0) + 1
        best, n_best = max(counts.items(), key=lambda kv: kv[1])
        if 2 * n_best <= B:
            _send(channel, transcript, channels.OUTPUT, b"")
            _send(channel, transcript, channels.VERDICT, bytes([2, 0xFF]))
            raise CheatDetected(
                "cut-and-choose: no majority among evaluated copies")
        y = list(best)
    else:
        y = ys[0]

    if cfg.output_hiding:
        tail = decode_payload[B * nbytes:]
        mac_key, mask = tail[:16], tail[16:]
        y_bytes = b"".join(int(v).to_bytes(4, "little") for v in y)
        _send(channel, transcript, channels.OUTPUT,
              hide_output(y_bytes, mac_key, mask))
    else:
        _send(channel, transcript, channels.OUTPUT,
              b"".join(int(v).to_bytes(4, "little") for v in y))
    stats.ot_rounds += 1
    if cfg.security == "malicious":
        _send(channel, transcript, channels.VERDICT, bytes([0, 0xFF]))

    stats.peak_resident_tables = peak_tables
    stats.peak_resident_labels = peak_labels
    stats.bytes_garbler_to_evaluator = channel.bytes_received
    stats.bytes_evaluator_to_garbler = channel.bytes_sent
    return EvaluatorResult(y=y, stats=stats, transcript=transcript)


# ---------------------------------------------------------------------------
# Accounting and convenience wrappers.

def account(cfg: SessionConfig, program: MipsProgram) -> CommStats:
    """Closed-form prediction of rounds, bytes, and memory peaks for an
    honest single-copy session; byte counts mirror the frame layouts."""
    net, lay = build_step_netlist(cfg.cpu)
    T = len(instruction_trace(program, cfg.cpu, cfg.step_limit))
    n_nonfree = count_gates(net).nonfree
    n_state = lay.n_state_bits
    _, in_count = program.evaluator_input_region
    _, out_count = program.output_region
    n_ot = in_count * 32
    k = cfg.instructions_per_round
    M = ceil(T / k)

    stats = CommStats()
    stats.ot_rounds = 2 if cfg.mode == "full" else M + 2
    esz = 32  # group element bytes in both OT profiles

    def batch_bytes(n_steps: int, initial: bool) -> int:
        n = _F + _BATCH_HEAD.size
        if initial:
            n += n_state * LABEL_BYTES
        n += n_steps * 32 * LABEL_BYTES
        n += n_steps * n_nonfree * TABLE_ROW_BYTES
        return n

    g2e = (_F + _HELLO.size) + (_F + _PHI.size)            # HELLO, PHI_META
    g2e += (_F + esz) + (_F + (n_ot * 64 if n_ot else 0))  # OT1, OT3
    g2e += _F + out_count * 4                              # DECODE
    if cfg.output_hiding:
        g2e += 16 + hidden_len(out_count * 4)
    e2g = _F + (n_ot * esz if n_ot else 0)                 # OT2
    e2g += _F + (hidden_len(out_count * 4) if cfg.output_hiding
                 else out_count * 4)                       # OUTPUT
    if cfg.mode == "full":
        g2e += batch_bytes(T, initial=True)
        e2g += _F + 32                                     # YBACK digest
        stats.peak_resident_tables = T * n_nonfree
        stats.peak_resident_labels = n_state + T * 32
    else:
        g2e += batch_bytes(0, initial=True)
        for m in range(M):
            g2e += batch_bytes(min(k, T - m * k), initial=False)
        e2g += M * (_F + 32)
        stats.peak_resident_tables = min(k, T) * n_nonfree
        stats.peak_resident_labels = n_state + min(k, T) * 32
    stats.bytes_garbler_to_evaluator = g2e
    stats.bytes_evaluator_to_garbler = e2g
    return stats


def copies_for_multi_execution(s: int, t: int) -> int:
    """Copies needed to keep the single-shot cheating bound across t
    executions of the same garbling: s + log2(t)."""
    if t < 1:
        raise ProtocolError("execution count must be >= 1")
    return s + (t - 1).bit_length()


def run_session(cfg: SessionConfig, program: MipsProgram, x: list[int],
                rng_seed: bytes | None = None,
                _corrupt: frozenset = frozenset()
                ) -> tuple[EvaluatorResult, GarblerResult]:
    """Run both roles over a loopback channel pair (testing/CLI helper)."""
    # malicious full mode garbles every copy before the first metadata
    # frame, which can take minutes at realistic step counts
    ch_g, ch_e = channels.loopback_pair(timeout=600.0)
    box: dict = {}

    def garbler():
        try:
            box["g"] = run_garbler(cfg, program, ch_g, _corrupt=_corrupt)
        except Exception as exc:
            box["g_err"] = exc

    th = threading.Thread(target=garbler, daemon=True)
    th.start()
    try:
        box["e"] = run_evaluator(cfg, x, ch_e, rng_seed=rng_seed)
    finally:
        th.join(timeout=600)
    if "g" not in box:
        raise box.get("g_err") or ProtocolError("garbler did not finish")
    return box["e"], box["g"]
