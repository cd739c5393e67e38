"""1-out-of-2 oblivious transfer (three-message simplest-OT pattern).

Sender publishes A = g^a.  For each choice bit c the receiver replies with
B = g^b (c = 0) or A * g^b (c = 1).  The sender derives one key per message
from (B)^a and (B * A^-1)^a; the receiver can compute only A^b, the secret
behind its chosen key.  Payloads travel AEAD-encrypted, so decrypting the
unchosen ciphertext fails its integrity tag.

The group is pluggable: an Edwards-curve group (secure profile, pure
Python, slow) and a small Schnorr group over a 256-bit prime (fast,
NOT cryptographically sized, refuses to run outside test harnesses).
Select with HWGN2_PROFILE={test,secure}; default is secure.

An ot_transfer of any width counts as ONE interaction round: the basic
protocol is repeated across bits inside a single three-frame exchange.
"""

from __future__ import annotations

import hashlib
import os
import secrets
from dataclasses import dataclass, field
from typing import Optional

from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .channels import OT1, OT2, OT3, Channel

MSG_BYTES = 16
_CT_BYTES = MSG_BYTES + 16  # AESGCM appends a 16-byte tag
_NONCE = bytes(12)          # keys are single-use, a fixed nonce is fine


class OtError(Exception):
    pass


@dataclass
class OtSenderInput:
    pairs: list[tuple[bytes, bytes]]

    def __post_init__(self):
        if not self.pairs:
            raise OtError("empty transfer")
        for m0, m1 in self.pairs:
            if len(m0) != MSG_BYTES or len(m1) != MSG_BYTES:
                raise OtError(f"messages must be {MSG_BYTES} bytes")


@dataclass
class OtChoice:
    bits: list[int]

    def __post_init__(self):
        if any(b not in (0, 1) for b in self.bits):
            raise OtError("choice bits must be 0/1")


# ---------------------------------------------------------------------------
# Pluggable groups.

class SchnorrTestGroup:
    """Order-Q subgroup of Z_P*, P 256 bits.  Fast and auditable but far
    below cryptographic strength; construction refuses outside tests."""

    P = 0xB15F5897D67DF48EB6F780C4A6381073F755C96420A138B78B98153825F79E95
    Q = 0xEB4AF73475BE22827F2FB63F32BA049C888D75637BC65D1B
    G = 0x26B966F6DAC3D056F21EB7C6465D897AD69BBC5A0214E4E382330CCC52E6C5D9
    ELEMENT_BYTES = 32

    def __init__(self):
        if (os.environ.get("HWGN2_PROFILE") != "test"
                and "PYTEST_CURRENT_TEST" not in os.environ):
            raise OtError("the test group runs only under HWGN2_PROFILE=test "
                          "or inside the test harness")

    def random_scalar(self, rng: Optional[secrets.SystemRandom] = None) -> int:
        r = rng or secrets.SystemRandom()
        return r.randrange(1, self.Q)

    def base_mul(self, k: int) -> int:
        return pow(self.G, k, self.P)

    def mul(self, elem: int, k: int) -> int:
        return pow(elem, k, self.P)

    def combine(self, a: int, b: int) -> int:
        return (a * b) % self.P

    def invert(self, elem: int) -> int:
        return pow(elem, self.P - 2, self.P)

    def encode(self, elem: int) -> bytes:
        return elem.to_bytes(self.ELEMENT_BYTES, "little")

    def decode(self, data: bytes) -> int:
        if len(data) != self.ELEMENT_BYTES:
            raise OtError("bad element length")
        v = int.from_bytes(data, "little")
        # subgroup membership check: v^Q == 1, v not the identity
        if not 1 < v < self.P or pow(v, self.Q, self.P) != 1:
            raise OtError("element not in the group")
        return v


class Ed25519Group:
    """The prime-order subgroup of the Ed25519 curve, in pure Python."""

    P = 2**255 - 19
    L = 2**252 + 27742317777372353535851937790883648493
    D = (-121665 * pow(121666, 2**255 - 21, 2**255 - 19)) % (2**255 - 19)
    BASE = (
        15112221349535400772501151409588531511454012693041857206046113283949847762202,
        46316835694926478169428394003475163141307993866256225615783033603165251855960,
    )
    ELEMENT_BYTES = 32

    # extended coordinates (X, Y, Z, T), T = XY/Z
    _IDENT = (0, 1, 1, 0)

    @classmethod
    def _add(cls, p, q):
        P = cls.P
        x1, y1, z1, t1 = p
        x2, y2, z2, t2 = q
        a = (y1 - x1) * (y2 - x2) % P
        b = (y1 + x1) * (y2 + x2) % P
        c = 2 * t1 * t2 * cls.D % P
        d = 2 * z1 * z2 % P
        e, f, g, h = b - a, d - c, d + c, b + a
        return (e * f % P, g * h % P, f * g % P, e * h % P)

    @classmethod
    def _scalar_mul(cls, p, k):
        q = cls._IDENT
        while k:
            if k & 1:
                q = cls._add(q, p)
            p = cls._add(p, p)
            k >>= 1
        return q

    @classmethod
    def _to_ext(cls, pt):
        x, y = pt
        return (x, y, 1, x * y % cls.P)

    @classmethod
    def _to_affine(cls, p):
        x, y, z, _ = p
        zi = pow(z, cls.P - 2, cls.P)
        return (x * zi % cls.P, y * zi % cls.P)

    def random_scalar(self, rng: Optional[secrets.SystemRandom] = None) -> int:
        r = rng or secrets.SystemRandom()
        return r.randrange(1, self.L)

    def base_mul(self, k: int):
        return self._to_affine(self._scalar_mul(self._to_ext(self.BASE), k))

    def mul(self, elem, k: int):
        return self._to_affine(self._scalar_mul(self._to_ext(elem), k))

    def combine(self, a, b):
        return self._to_affine(self._add(self._to_ext(a), self._to_ext(b)))

    def invert(self, elem):
        x, y = elem
        return ((-x) % self.P, y)

    def encode(self, elem) -> bytes:
        x, y = elem
        return (y | ((x & 1) << 255)).to_bytes(32, "little")

    def decode(self, data: bytes):
        if len(data) != self.ELEMENT_BYTES:
            raise OtError("bad element length")
        v = int.from_bytes(data, "little")
        sign = v >> 255
        y = v & ((1 << 255) - 1)
        P = self.P
        if y >= P:
            raise OtError("element not on the curve")
        # recover x from y: x^2 = (y^2 - 1) / (d y^2 + 1)
        u = (y * y - 1) % P
        w = (self.D * y * y + 1) % P
        x = (u * pow(w, 3, P)) * pow(u * pow(w, 7, P), (P - 5) // 8, P) % P
        if (x * x - u * pow(w, P - 2, P)) % P:
            x = x * pow(2, (P - 1) // 4, P) % P
        if (w * x * x - u) % P:
            raise OtError("element not on the curve")
        if x & 1 != sign:
            x = P - x
        pt = (x, y)
        # small-subgroup rejection: L * point must be the identity
        if self._to_affine(self._scalar_mul(self._to_ext(pt), self.L)) != (0, 1):
            raise OtError("element not in the prime-order subgroup")
        if pt == (0, 1):
            raise OtError("identity element rejected")
        return pt


def select_group(profile: Optional[str] = None):
    profile = profile or os.environ.get("HWGN2_PROFILE", "secure")
    if profile == "test":
        return SchnorrTestGroup()
    if profile == "secure":
        return Ed25519Group()
    raise OtError(f"unknown OT profile {profile!r}")


# ---------------------------------------------------------------------------
# Three-message exchange (message-level API; framing-agnostic).

def _derive_key(group, a_enc: bytes, b_enc: bytes, secret_enc: bytes,
                index: int) -> bytes:
    h = hashlib.sha256(a_enc + b_enc + secret_enc + index.to_bytes(4, "little"))
    return h.digest()[:16]


@dataclass
class SenderState:
    group: object
    a: int
    big_a: object
    a_enc: bytes


@dataclass
class ReceiverState:
    group: object
    bits: list[int]
    b_scalars: list[int]
    a_enc: bytes = b""
    big_a: object = None
    b_encs: list[bytes] = field(default_factory=list)


def ot1_sender(group, rng=None) -> tuple[SenderState, bytes]:
    a = group.random_scalar(rng)
    big_a = group.base_mul(a)
    a_enc = group.encode(big_a)
    return SenderState(group, a, big_a, a_enc), a_enc


def ot2_receiver(group, msg1: bytes, choice: OtChoice, rng=None
                 ) -> tuple[ReceiverState, bytes]:
    big_a = group.decode(msg1)
    st = ReceiverState(group, list(choice.bits), [], msg1, big_a)
    out = bytearray()
    for c in st.bits:
        b = group.random_scalar(rng)
        st.b_scalars.append(b)
        elem = group.base_mul(b)
        if c:
            elem = group.combine(big_a, elem)
        enc = group.encode(elem)
        st.b_encs.append(enc)
        out += enc
    return st, bytes(out)


def ot3_sender(st: SenderState, msg2: bytes, sender_input: OtSenderInput) -> bytes:
    group = st.group
    n = len(sender_input.pairs)
    esz = group.ELEMENT_BYTES
    if len(msg2) != n * esz:
        raise OtError(f"expected {n} receiver elements")
    inv_a = group.invert(st.big_a)
    out = bytearray()
    for i, (m0, m1) in enumerate(sender_input.pairs):
        b_enc = msg2[i * esz:(i + 1) * esz]
        big_b = group.decode(b_enc)
        s0 = group.encode(group.mul(big_b, st.a))
        s1 = group.encode(group.mul(group.combine(big_b, inv_a), st.a))
        k0 = _derive_key(group, st.a_enc, b_enc, s0, i)
        k1 = _derive_key(group, st.a_enc, b_enc, s1, i)
        out += AESGCM(k0).encrypt(_NONCE, m0, None)
        out += AESGCM(k1).encrypt(_NONCE, m1, None)
    return bytes(out)


def ot_receive(st: ReceiverState, msg3: bytes) -> list[bytes]:
    group = st.group
    n = len(st.bits)
    if len(msg3) != n * 2 * _CT_BYTES:
        raise OtError("bad ciphertext payload length")
    out = []
    for i, (c, b) in enumerate(zip(st.bits, st.b_scalars)):
        secret = group.encode(group.mul(st.big_a, b))
        key = _derive_key(group, st.a_enc, st.b_encs[i], secret, i)
        base = i * 2 * _CT_BYTES + c * _CT_BYTES
        ct = msg3[base:base + _CT_BYTES]
        try:
            out.append(AESGCM(key).decrypt(_NONCE, ct, None))
        except Exception:
            raise OtError(f"integrity failure on transfer {i}") from None
    return out


# ---------------------------------------------------------------------------
# Channel-level convenience: one transfer = one interaction round.

def run_ot_sender(channel: Channel, sender_input: OtSenderInput,
                  group=None, rng=None) -> None:
    group = group or select_group()
    st, msg1 = ot1_sender(group, rng)
    channel.send(OT1, msg1)
    msg2 = channel.expect(OT2)
    channel.send(OT3, ot3_sender(st, msg2, sender_input))


def run_ot_receiver(channel: Channel, choice: OtChoice,
                    group=None, rng=None) -> list[bytes]:
    group = group or select_group()
    msg1 = channel.expect(OT1)
    st, msg2 = ot2_receiver(group, msg1, choice, rng)
    channel.send(OT2, msg2)
    return ot_receive(st, channel.expect(OT3))


def ot_transfer(sender_input: OtSenderInput, choice: OtChoice,
                sender_channel: Channel, receiver_channel: Channel,
                group=None) -> list[bytes]:
    """Run both roles over a channel pair (loopback testing helper)."""
    import threading
    if len(sender_input.pairs) != len(choice.bits):
        raise OtError("pair/choice length mismatch")
    group = group or select_group()
    result: dict = {}

    def sender():
        run_ot_sender(sender_channel, sender_input, group)

    t = threading.Thread(target=sender, daemon=True)
    t.start()
    result["msgs"] = run_ot_receiver(receiver_channel, choice, group)
    t.join()
    return result["msgs"]
