"""Bit-exact wire formats: transport packets, ECM, EMM and short APDUs.

All multi-octet integers are big-endian. Decoders validate framing only;
MAC verification belongs to the card.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator

from .errors import FormatError, LengthError, SyncError

SYNC = 0x47
PACKET_SIZE = 188
HEADER_SIZE = 4
PAYLOAD_SIZE = PACKET_SIZE - HEADER_SIZE
STUFFING = 0xFF

SC_CLEAR = 0b00
SC_RESERVED = 0b01
SC_EVEN = 0b10
SC_ODD = 0b11

ECM_TABLE_ID = 0x80
EMM_TABLE_ID = 0x88
ECM_LENGTH = 50
EMM_FIXED_LENGTH = 34
MAX_ENTITLEMENTS_PER_EMM = 16
ADDRESS_UNIQUE = 0
ADDRESS_GLOBAL = 1
GLOBAL_CARD_ID = 0xFFFFFFFF

_ECM_BODY = struct.Struct(">BHBIH16s16s")
_EMM_HEAD = struct.Struct(">BBIBH16sB")
_ENTITLEMENT = struct.Struct(">HH")


def _check_uint(value: int, bits: int, name: str) -> None:
    if not isinstance(value, int) or not 0 <= value < (1 << bits):
        raise FormatError(f"{name} must be an unsigned {bits}-bit integer")


def _check_octets(value: bytes, n: int, name: str) -> None:
    if len(value) != n:
        raise LengthError(f"{name} must be {n} octets")


# --------------------------------------------------------------------------
# Transport packets


@dataclass(frozen=True)
class TsPacket:
    pid: int
    payload: bytes = bytes(PAYLOAD_SIZE)
    scrambling_control: int = SC_CLEAR
    continuity: int = 0

    @property
    def scrambled(self) -> bool:
        return self.scrambling_control != SC_CLEAR


def encode_packet(p: TsPacket) -> bytes:
    _check_uint(p.pid, 13, "pid")
    _check_uint(p.scrambling_control, 2, "scrambling_control")
    _check_uint(p.continuity, 4, "continuity")
    if p.scrambling_control == SC_RESERVED:
        raise FormatError("scrambling_control 01 is reserved")
    _check_octets(p.payload, PAYLOAD_SIZE, "packet payload")
    header = bytes((SYNC, p.pid >> 8, p.pid & 0xFF, (p.scrambling_control << 6) | p.continuity))
    return header + bytes(p.payload)


def decode_packet(data: bytes) -> TsPacket:
    if len(data) != PACKET_SIZE:
        raise LengthError(f"packet must be {PACKET_SIZE} octets, got {len(data)}")
    if data[0] != SYNC:
        raise SyncError(f"bad sync byte 0x{data[0]:02X}")
    if data[1] & 0xE0:
        raise FormatError("reserved PID high bits set")
    if data[3] & 0x30:
        raise FormatError("reserved header bits set")
    sc = data[3] >> 6
    if sc == SC_RESERVED:
        raise FormatError("scrambling_control 01 is reserved")
    return TsPacket(
        pid=((data[1] & 0x1F) << 8) | data[2],
        payload=bytes(data[HEADER_SIZE:]),
        scrambling_control=sc,
        continuity=data[3] & 0x0F,
    )


def iter_packets(data: bytes) -> Iterator[TsPacket]:
    """Split a stream file (concatenated packets, no framing) into packets."""
    if len(data) % PACKET_SIZE:
        raise LengthError("stream length is not a multiple of 188")
    for off in range(0, len(data), PACKET_SIZE):
        yield decode_packet(data[off:off + PACKET_SIZE])


def section_payload(body: bytes) -> bytes:
    """Stuff an ECM/EMM body to one packet payload."""
    if len(body) > PAYLOAD_SIZE:
        raise LengthError("section body exceeds one packet payload")
    return bytes(body) + bytes((STUFFING,)) * (PAYLOAD_SIZE - len(body))


# --------------------------------------------------------------------------
# ECM / EMM


@dataclass(frozen=True)
class Entitlement:
    product_id: int
    expiry_day: int


@dataclass(frozen=True)
class Ecm:
    channel_id: int
    sk_generation: int
    period_index: int
    product_id: int
    enc_cw_even: bytes
    enc_cw_odd: bytes
    mac: bytes = bytes(8)
    table_id: int = ECM_TABLE_ID

    def signed_part(self) -> bytes:
        return encode_ecm(self)[:-8]


@dataclass(frozen=True)
class Emm:
    card_id: int
    sk_generation: int
    channel_id: int
    enc_sk: bytes
    entitlements: tuple[Entitlement, ...] = ()
    address_type: int = ADDRESS_UNIQUE
    mac: bytes = bytes(8)
    table_id: int = EMM_TABLE_ID

    @property
    def entitlement_count(self) -> int:
        return len(self.entitlements)

    def signed_part(self) -> bytes:
        return encode_emm(self)[:-8]


def encode_ecm(m: Ecm) -> bytes:
    if m.table_id != ECM_TABLE_ID:
        raise FormatError(f"ECM table_id must be 0x{ECM_TABLE_ID:02X}")
    _check_uint(m.channel_id, 16, "channel_id")
    _check_uint(m.sk_generation, 8, "sk_generation")
    _check_uint(m.period_index, 32, "period_index")
    _check_uint(m.product_id, 16, "product_id")
    _check_octets(m.enc_cw_even, 16, "enc_cw_even")
    _check_octets(m.enc_cw_odd, 16, "enc_cw_odd")
    _check_octets(m.mac, 8, "mac")
    return _ECM_BODY.pack(m.table_id, m.channel_id, m.sk_generation, m.period_index,
                          m.product_id, m.enc_cw_even, m.enc_cw_odd) + bytes(m.mac)


def decode_ecm(data: bytes) -> Ecm:
    if len(data) != ECM_LENGTH:
        raise LengthError(f"ECM must be {ECM_LENGTH} octets, got {len(data)}")
    if data[0] != ECM_TABLE_ID:
        raise FormatError(f"not an ECM: table_id 0x{data[0]:02X}")
    tid, ch, gen, period, product, even, odd = _ECM_BODY.unpack_from(data)
    return Ecm(ch, gen, period, product, even, odd, bytes(data[42:50]), tid)


def encode_emm(m: Emm) -> bytes:
    if m.table_id != EMM_TABLE_ID:
        raise FormatError(f"EMM table_id must be 0x{EMM_TABLE_ID:02X}")
    if m.address_type not in (ADDRESS_UNIQUE, ADDRESS_GLOBAL):
        raise FormatError("EMM address_type must be 0 (unique) or 1 (global)")
    _check_uint(m.card_id, 32, "card_id")
    if m.address_type == ADDRESS_GLOBAL and m.card_id != GLOBAL_CARD_ID:
        raise FormatError("global EMM must carry card_id 0xFFFFFFFF")
    _check_uint(m.sk_generation, 8, "sk_generation")
    _check_uint(m.channel_id, 16, "channel_id")
    _check_octets(m.enc_sk, 16, "enc_sk")
    _check_octets(m.mac, 8, "mac")
    if len(m.entitlements) > MAX_ENTITLEMENTS_PER_EMM:
        raise FormatError(f"at most {MAX_ENTITLEMENTS_PER_EMM} entitlements per EMM")
    out = bytearray(_EMM_HEAD.pack(m.table_id, m.address_type, m.card_id, m.sk_generation,
                                   m.channel_id, m.enc_sk, len(m.entitlements)))
    for e in m.entitlements:
        _check_uint(e.product_id, 16, "product_id")
        _check_uint(e.expiry_day, 16, "expiry_day")
        out += _ENTITLEMENT.pack(e.product_id, e.expiry_day)
    return bytes(out) + bytes(m.mac)


def emm_length(count: int) -> int:
    return EMM_FIXED_LENGTH + 4 * count


def emm_length_in(data: bytes) -> int:
    """Total EMM length implied by the count octet of ``data``'s header."""
    if len(data) < _EMM_HEAD.size:
        raise LengthError("truncated EMM header")
    return emm_length(data[_EMM_HEAD.size - 1])


def decode_emm(data: bytes) -> Emm:
    if len(data) < EMM_FIXED_LENGTH:
        raise LengthError(f"EMM shorter than {EMM_FIXED_LENGTH} octets")
    if data[0] != EMM_TABLE_ID:
        raise FormatError(f"not an EMM: table_id 0x{data[0]:02X}")
    tid, addr, card_id, gen, ch, enc_sk, count = _EMM_HEAD.unpack_from(data)
    if count > MAX_ENTITLEMENTS_PER_EMM:
        raise FormatError(f"entitlement_count {count} exceeds {MAX_ENTITLEMENTS_PER_EMM}")
    if len(data) != emm_length(count):
        raise LengthError(f"EMM with {count} entitlements must be {emm_length(count)} octets")
    if addr not in (ADDRESS_UNIQUE, ADDRESS_GLOBAL):
        raise FormatError(f"unknown address_type {addr}")
    if addr == ADDRESS_GLOBAL and card_id != GLOBAL_CARD_ID:
        raise FormatError("global EMM must carry card_id 0xFFFFFFFF")
    ents = tuple(
        Entitlement(*_ENTITLEMENT.unpack_from(data, _EMM_HEAD.size + 4 * i)) for i in range(count)
    )
    return Emm(card_id, gen, ch, enc_sk, ents, addr, bytes(data[-8:]), tid)


# --------------------------------------------------------------------------
# APDUs


@dataclass(frozen=True)
class CommandApdu:
    cla: int
    ins: int
    p1: int = 0
    p2: int = 0
    data: bytes = b""
    le: int | None = None

    @property
    def case(self) -> int:
        if self.data:
            return 3 if self.le is None else 4
        return 1 if self.le is None else 2


@dataclass(frozen=True)
class ResponseApdu:
    data: bytes = b""
    sw1: int = 0x90
    sw2: int = 0x00

    @property
    def sw(self) -> int:
        return (self.sw1 << 8) | self.sw2

    @classmethod
    def status(cls, sw: int, data: bytes = b"") -> "ResponseApdu":
        return cls(bytes(data), sw >> 8, sw & 0xFF)


def encode_apdu_command(c: CommandApdu) -> bytes:
    for name in ("cla", "ins", "p1", "p2"):
        _check_uint(getattr(c, name), 8, name)
    if len(c.data) > 255:
        raise LengthError("short APDU data is limited to 255 octets")
    out = bytearray((c.cla, c.ins, c.p1, c.p2))
    if c.data:
        out.append(len(c.data))
        out += c.data
    if c.le is not None:
        if not 1 <= c.le <= 256:
            raise LengthError("Le must lie in 1..256")
        out.append(c.le & 0xFF)
    return bytes(out)


def decode_apdu_command(data: bytes) -> CommandApdu:
    n = len(data)
    if n < 4:
        raise LengthError("command APDU shorter than its 4-octet header")
    cla, ins, p1, p2 = data[:4]
    if n == 4:
        return CommandApdu(cla, ins, p1, p2)
    if n == 5:
        return CommandApdu(cla, ins, p1, p2, le=data[4] or 256)
    lc = data[4]
    if lc == 0:
        raise LengthError("Lc of zero is not a valid short APDU")
    if n == 5 + lc:
        return CommandApdu(cla, ins, p1, p2, bytes(data[5:]))
    if n == 6 + lc:
        return CommandApdu(cla, ins, p1, p2, bytes(data[5:-1]), data[-1] or 256)
    raise LengthError(f"Lc={lc} does not match a body of {n - 5} octets")


def encode_apdu_response(r: ResponseApdu) -> bytes:
    _check_uint(r.sw1, 8, "sw1")
    _check_uint(r.sw2, 8, "sw2")
    if len(r.data) > 256:
        raise LengthError("short response data is limited to 256 octets")
    return bytes(r.data) + bytes((r.sw1, r.sw2))


def decode_apdu_response(data: bytes) -> ResponseApdu:
    if len(data) < 2:
        raise LengthError("response APDU needs at least SW1 SW2")
    if len(data) > 258:
        raise LengthError("short response data is limited to 256 octets")
    return ResponseApdu(bytes(data[:-2]), data[-2], data[-1])


# --------------------------------------------------------------------------
# APDU trace log: ">" + command hex, "<" + response hex, one line each.


@dataclass
class ApduTrace:
    exchanges: list[tuple[bytes, bytes]] = field(default_factory=list)

    def record(self, command: bytes, response: bytes) -> None:
        self.exchanges.append((bytes(command), bytes(response)))

    def lines(self) -> Iterable[str]:
        for cmd, resp in self.exchanges:
            yield ">" + cmd.hex()
            yield "<" + resp.hex()

    def dumps(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def write(self, fh: IO[str]) -> None:
        fh.write(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "ApduTrace":
        trace = cls()
        pending: bytes | None = None
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line:
                continue
            try:
                payload = bytes.fromhex(line[1:])
            except ValueError as exc:
                raise FormatError(f"trace line {lineno}: bad hex") from exc
            if line[0] == ">" and pending is None:
                pending = payload
            elif line[0] == "<" and pending is not None:
                trace.record(pending, payload)
                pending = None
            else:
                raise FormatError(f"trace line {lineno}: unexpected direction marker")
        if pending is not None:
            raise FormatError("trace ends with an unanswered command")
        return trace

