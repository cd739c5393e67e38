"""Garbling scheme over netlists: Free-XOR, point-and-permute, 3-row tables
(implicit all-zero first row), fixed-key-cipher hashing.

Labels are 128-bit tokens, viewed as big-endian integers; the permute bit is
the least-significant bit (bit 0 of the last byte).  Sibling labels on a wire
differ by a circuit-global offset R with lsb(R) = 1.

The engine is batch-oriented: every label array carries a leading batch axis,
so many independent garblings/evaluations (fresh seeds per trace, copies of a
circuit, or many input vectors against one garbled circuit) run through the
same vectorized code.  The scalar five-function API (gb/en/ev_garbled/de plus
the plaintext eval in the circuit module) wraps the engine with batch size 1.
"""

from __future__ import annotations

import hashlib
import weakref
from dataclasses import dataclass

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .circuit import GateKind, Netlist, truth_table, validate

LABEL_BYTES = 16

# Fixed public key of the hash permutation.  Any constant works; this one is
# pinned so garblings are reproducible across builds.
FIXED_PERM_KEY = bytes.fromhex("8e2b7c1af05d93640b1e5a7d2c9f4e61")

_fixed_cipher = Cipher(algorithms.AES(FIXED_PERM_KEY), modes.ECB())


class GarbleError(Exception):
    pass


def _perm_blocks(data: np.ndarray) -> np.ndarray:
    """Apply the fixed 128-bit permutation to an (..., 16) uint8 array."""
    shape = data.shape
    flat = np.ascontiguousarray(data).tobytes()
    enc = _fixed_cipher.encryptor()
    out = enc.update(flat) + enc.finalize()
    return np.frombuffer(out, dtype=np.uint8).reshape(shape)


def _double(x: np.ndarray) -> np.ndarray:
    """Multiplication by x in GF(2^128), big-endian, poly x^128+x^7+x^2+x+1."""
    shifted = (x << 1).astype(np.uint8)
    shifted[..., :-1] |= x[..., 1:] >> 7
    carry = (x[..., 0] >> 7).astype(np.uint8)
    shifted[..., -1] ^= carry * np.uint8(0x87)
    return shifted


def _hash_blocks(k: np.ndarray) -> np.ndarray:
    """H(K) = P(K) xor K for (..., 16) blocks."""
    return _perm_blocks(k) ^ k


def gate_hash(a: bytes, b: bytes, tweak: int) -> bytes:
    """Fixed-key gate hash: H = P(K) xor K, K = 2A xor 4B xor T."""
    av = np.frombuffer(a, dtype=np.uint8)
    bv = np.frombuffer(b, dtype=np.uint8)
    t = np.frombuffer(int(tweak).to_bytes(16, "big"), dtype=np.uint8)
    k = _double(av) ^ _double(_double(bv)) ^ t
    return _hash_blocks(k).tobytes()


class KeyStream:
    """Counter-mode expansion of a caller-supplied seed into label material."""

    def __init__(self, seed: bytes):
        digest = hashlib.sha256(seed).digest()
        key = digest[:16]
        nonce = hashlib.sha256(seed + b"\x01nonce").digest()[:16]
        self._enc = Cipher(algorithms.AES(key), modes.CTR(nonce)).encryptor()

    def blocks(self, n: int) -> np.ndarray:
        out = self._enc.update(bytes(n * LABEL_BYTES))
        return np.frombuffer(out, dtype=np.uint8).reshape(n, LABEL_BYTES).copy()


# ---------------------------------------------------------------------------
# Gate schedule: levelized plan for vectorized garbling/evaluation.

@dataclass
class _FreePlan:
    i0: np.ndarray
    i1: np.ndarray
    out: np.ndarray
    flip: np.ndarray  # bool; True where the 0-label picks up R (XNOR)


@dataclass
class _UnaryPlan:
    i0: np.ndarray
    out: np.ndarray
    flip: np.ndarray  # True for NOT


@dataclass
class _TablePlan:
    i0: np.ndarray
    i1: np.ndarray
    out: np.ndarray
    slot: np.ndarray        # row index into the table array
    truth: np.ndarray       # (G, 4) uint8, indexed by (v << 1) | w
    tweak: np.ndarray       # (G, 16) uint8


@dataclass
class _Level:
    free: _FreePlan | None
    unary: _UnaryPlan | None
    table: _TablePlan | None


@dataclass
class _Schedule:
    levels: list[_Level]
    n_nonfree: int


_schedule_cache: "weakref.WeakKeyDictionary[Netlist, _Schedule]" = weakref.WeakKeyDictionary()


def _build_schedule(netlist: Netlist) -> _Schedule:
    n_in = netlist.n_inputs
    depth = np.zeros(netlist.n_wires, dtype=np.int32)
    gate_level = np.empty(len(netlist.gates), dtype=np.int32)
    for g in netlist.gates:
        d = depth[g.in0]
        if g.in1 is not None and depth[g.in1] > d:
            d = depth[g.in1]
        gate_level[g.id] = d + 1
        depth[g.out] = d + 1
    n_levels = int(gate_level.max()) + 1 if len(netlist.gates) else 1
    buckets: list[dict[str, list]] = [
        {"free": [], "unary": [], "table": []} for _ in range(n_levels)]
    slot = 0
    for g in netlist.gates:
        lv = buckets[gate_level[g.id]]
        if g.kind in (GateKind.XOR, GateKind.XNOR):
            lv["free"].append((g.in0, g.in1, g.out, g.kind is GateKind.XNOR))
        elif g.kind.is_unary:
            lv["unary"].append((g.in0, g.out, g.kind is GateKind.NOT))
        else:
            lv["table"].append((g.in0, g.in1, g.out, slot,
                                truth_table(g.kind), g.id))
            slot += 1
    levels = []
    for lv in buckets[1:]:
        free = unary = table = None
        if lv["free"]:
            i0, i1, out, flip = zip(*lv["free"])
            free = _FreePlan(np.array(i0), np.array(i1), np.array(out),
                             np.array(flip, dtype=bool))
        if lv["unary"]:
            i0, out, flip = zip(*lv["unary"])
            unary = _UnaryPlan(np.array(i0), np.array(out),
                               np.array(flip, dtype=bool))
        if lv["table"]:
            i0, i1, out, slots, truths, gids = zip(*lv["table"])
            tweaks = np.frombuffer(
                b"".join(int(i).to_bytes(16, "big") for i in gids),
                dtype=np.uint8).reshape(len(gids), 16)
            table = _TablePlan(np.array(i0), np.array(i1), np.array(out),
                               np.array(slots),
                               np.array(truths, dtype=np.uint8), tweaks)
        levels.append(_Level(free=free, unary=unary, table=table))
    return _Schedule(levels=levels, n_nonfree=slot)


def _schedule(netlist: Netlist) -> _Schedule:
    sched = _schedule_cache.get(netlist)
    if sched is None:
        sched = _build_schedule(netlist)
        _schedule_cache[netlist] = sched
    return sched


# ---------------------------------------------------------------------------
# Batch engine.

def sample_offset(stream: KeyStream) -> np.ndarray:
    """Draw the global offset R (lsb forced to 1) for one garbling."""
    r = stream.blocks(1)[0]
    r[15] |= 1
    return r


def garble_batch(netlist: Netlist, r: np.ndarray, in_labels0: np.ndarray
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Garble a netlist for a batch of independent label sets.

    r: (B, 16) global offsets; in_labels0: (B, n_inputs, 16) input 0-labels.
    Returns (tables, labels0) where tables is (B, n_nonfree, 3, 16) and
    labels0 is (B, n_wires, 16), the 0-label of every wire.
    """
    sched = _schedule(netlist)
    B = in_labels0.shape[0]
    L = np.zeros((B, netlist.n_wires, LABEL_BYTES), dtype=np.uint8)
    L[:, :netlist.n_inputs] = in_labels0
    tables = np.zeros((B, sched.n_nonfree, 3, LABEL_BYTES), dtype=np.uint8)
    rb = r[:, None, :]                      # (B, 1, 16)
    d_r = _double(r)[:, None, :]
    d2_r = _double(_double(r))[:, None, :]
    for level in sched.levels:
        if level.free is not None:
            p = level.free
            out = L[:, p.i0] ^ L[:, p.i1]
            if p.flip.any():
                out[:, p.flip] ^= rb
            L[:, p.out] = out
        if level.unary is not None:
            p = level.unary
            out = L[:, p.i0].copy()
            if p.flip.any():
                out[:, p.flip] ^= rb
            L[:, p.out] = out
        if level.table is not None:
            p = level.table
            a0 = L[:, p.i0]                 # (B, G, 16)
            b0 = L[:, p.i1]
            pa = a0[..., 15] & 1            # (B, G)
            pb = b0[..., 15] & 1
            base = _double(a0) ^ _double(_double(b0)) ^ p.tweak
            G = p.i0.shape[0]
            keys = np.empty((B, G, 4, LABEL_BYTES), dtype=np.uint8)
            uval = np.empty((B, G, 4), dtype=np.uint8)
            gidx = np.arange(G)
            for row, (i, j) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
                v = pa ^ i                  # semantic value on wire A for row
                w = pb ^ j
                k = base.copy()
                k ^= v[..., None] * d_r
                k ^= w[..., None] * d2_r
                keys[:, :, row] = k
                uval[:, :, row] = p.truth[gidx, (v << 1) | w]
            h = _hash_blocks(keys)
            out0 = h[:, :, 0] ^ uval[:, :, 0, None] * rb
            L[:, p.out] = out0
            for row in (1, 2, 3):
                tables[:, p.slot, row - 1] = (
                    h[:, :, row] ^ out0 ^ uval[:, :, row, None] * rb)
    return tables, L


def evaluate_batch(netlist: Netlist, tables: np.ndarray, in_labels: np.ndarray,
                   label_sink=None) -> np.ndarray:
    """Evaluate garbled gates on active labels.

    tables: (Bt, n_nonfree, 3, 16) with Bt in {1, B}; in_labels: (B, n_inputs, 16).
    Returns active labels for all wires, (B, n_wires, 16).  If label_sink is
    given it is called once per level batch with the newly computed labels
    (leakage hooks).
    """
    sched = _schedule(netlist)
    B = in_labels.shape[0]
    L = np.zeros((B, netlist.n_wires, LABEL_BYTES), dtype=np.uint8)
    L[:, :netlist.n_inputs] = in_labels
    bidx = np.arange(B)[:, None]
    tb = bidx if tables.shape[0] == B else np.zeros((B, 1), dtype=np.intp)
    for level in sched.levels:
        if level.free is not None:
            p = level.free
            out = L[:, p.i0] ^ L[:, p.i1]
            L[:, p.out] = out
            if label_sink is not None:
                label_sink(out)
        if level.unary is not None:
            p = level.unary
            out = L[:, p.i0]
            L[:, p.out] = out
            if label_sink is not None:
                label_sink(out)
        if level.table is not None:
            p = level.table
            a = L[:, p.i0]
            b = L[:, p.i1]
            row = ((a[..., 15] & 1) << 1) | (b[..., 15] & 1)   # (B, G)
            k = _double(a) ^ _double(_double(b)) ^ p.tweak
            h = _hash_blocks(k)
            ct = tables[tb, p.slot[None, :], np.maximum(row, 1) - 1]
            ct[row == 0] = 0
            out = h ^ ct
            L[:, p.out] = out
            if label_sink is not None:
                label_sink(out)
                label_sink(ct)
    return L


# ---------------------------------------------------------------------------
# Scalar (single-instance) API.

@dataclass
class Encoding:
    """Input encoding e: one label pair per input wire (1-labels are 0 xor R)."""
    zero_labels: np.ndarray    # (n_inputs, 16) uint8
    offset: np.ndarray         # (16,) uint8, garbler-private

    def __len__(self) -> int:
        return self.zero_labels.shape[0]

    def pair(self, i: int) -> tuple[bytes, bytes]:
        z = self.zero_labels[i]
        return z.tobytes(), (z ^ self.offset).tobytes()


@dataclass
class Decoding:
    bits: list[int]

    def __len__(self) -> int:
        return len(self.bits)


@dataclass
class GarbledCircuit:
    netlist: Netlist
    tables: np.ndarray         # (n_nonfree, 3, 16) uint8

    @property
    def n_tables(self) -> int:
        return self.tables.shape[0]


def gb(netlist: Netlist, seed: bytes) -> tuple[GarbledCircuit, Encoding, Decoding]:
    """Garble a netlist deterministically from a 256-bit seed."""
    report = validate(netlist)
    if not report.ok:
        raise GarbleError("cannot garble invalid netlist: "
                          + "; ".join(report.violations[:3]))
    stream = KeyStream(seed)
    r = sample_offset(stream)
    in0 = stream.blocks(netlist.n_inputs)
    tables, labels0 = garble_batch(netlist, r[None, :], in0[None, :, :])
    d = Decoding(bits=[int(labels0[0, w, 15] & 1) for w in netlist.output_wires])
    return (GarbledCircuit(netlist=netlist, tables=tables[0]),
            Encoding(zero_labels=in0, offset=r), d)


def en(e: Encoding, x) -> list[bytes]:
    """Select the input labels for plaintext bits x."""
    if len(x) != len(e):
        raise GarbleError(f"input length {len(x)} != encoding length {len(e)}")
    out = []
    for i, bit in enumerate(x):
        z = e.zero_labels[i]
        out.append((z ^ e.offset).tobytes() if bit else z.tobytes())
    return out


def ev_garbled(f: GarbledCircuit, x_labels: list[bytes]) -> list[bytes]:
    """Evaluate a garbled circuit on active input labels."""
    n = f.netlist
    if len(x_labels) != n.n_inputs:
        raise GarbleError(f"label count {len(x_labels)} != {n.n_inputs}")
    arr = np.frombuffer(b"".join(x_labels), dtype=np.uint8).reshape(1, n.n_inputs, 16)
    labels = evaluate_batch(n, f.tables[None], arr)
    return [labels[0, w].tobytes() for w in n.output_wires]


def de(d: Decoding, y_labels: list[bytes]) -> list[int]:
    """Decode output labels to plaintext bits: y_j = lsb(Y_j) xor d_j."""
    if len(y_labels) != len(d):
        raise GarbleError(f"label count {len(y_labels)} != decoding length {len(d)}")
    return [(lbl[15] & 1) ^ bit for lbl, bit in zip(y_labels, d.bits)]
