"""Head-end: subscriber management, ECM/EMM generation, scrambling and mux."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from .codec import (
    ADDRESS_UNIQUE,
    MAX_ENTITLEMENTS_PER_EMM,
    PAYLOAD_SIZE,
    SC_CLEAR,
    Ecm,
    Emm,
    Entitlement,
    TsPacket,
    encode_ecm,
    encode_emm,
    section_payload,
)
from .crypto import Direction, MacCipher, PrngState, aes128_block, cbc_mac, ctr_keystream, prng_next, tdes_cbc
from .errors import CapacityError, ClockError, DomainError, DuplicateError, NotFoundError, StateError
from .keys import (
    DEFAULT_PERIOD_MS,
    ControlWord,
    CryptoPeriod,
    IndividualKey,
    ServiceKey,
    crypto_period_of,
    cw_generate,
    sk_generate,
    slot_words,
)

CONTENT_SEED_LABEL = int.from_bytes(b"content-payload", "big")


# --------------------------------------------------------------------------
# SMS / SAS


@dataclass
class SubscriberRecord:
    card_id: int
    individual_key: IndividualKey
    pairing_secret: bytes
    rsa_public: tuple[int, int]
    entitlements: list[Entitlement] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "card_id": self.card_id,
            "ik_hex": self.individual_key.key.hex(),
            "pairing_hex": self.pairing_secret.hex(),
            "rsa_n_hex": format(self.rsa_public[0], "x"),
            "rsa_e": self.rsa_public[1],
            "entitlements": [
                {"product_id": e.product_id, "expiry_day": e.expiry_day} for e in self.entitlements
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SubscriberRecord":
        card_id = int(obj["card_id"])
        return cls(
            card_id=card_id,
            individual_key=IndividualKey(bytes.fromhex(obj["ik_hex"]), card_id),
            pairing_secret=bytes.fromhex(obj["pairing_hex"]),
            rsa_public=(int(obj["rsa_n_hex"], 16), int(obj["rsa_e"])),
            entitlements=[Entitlement(int(e["product_id"]), int(e["expiry_day"]))
                          for e in obj.get("entitlements", [])],
        )


class SubscriberDb:
    """In-memory subscriber database persisted as a JSON list."""

    def __init__(self, records: list[SubscriberRecord] | None = None):
        self._records: dict[int, SubscriberRecord] = {}
        for rec in records or ():
            self._insert(rec)

    def _insert(self, rec: SubscriberRecord) -> None:
        if rec.card_id in self._records:
            raise DuplicateError(f"card {rec.card_id} already registered")
        self._records[rec.card_id] = rec

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, card_id: int) -> bool:
        return card_id in self._records

    def __iter__(self) -> Iterator[SubscriberRecord]:
        return iter(self.records())

    def __eq__(self, other: object) -> bool:
        return isinstance(other, SubscriberDb) and self.to_json() == other.to_json()

    def records(self) -> list[SubscriberRecord]:
        return [self._records[k] for k in sorted(self._records)]

    def get(self, card_id: int) -> SubscriberRecord:
        try:
            return self._records[card_id]
        except KeyError:
            raise NotFoundError(f"card {card_id} not registered") from None

    def register(self, card_id: int, ik: bytes | IndividualKey, pairing_secret: bytes,
                 rsa_public: tuple[int, int]) -> "SubscriberDb":
        if isinstance(ik, bytes):
            ik = IndividualKey(ik, card_id)
        if ik.card_id != card_id:
            raise DomainError("individual key belongs to another card")
        if len(pairing_secret) != 16:
            raise DomainError("pairing secret must be 16 octets")
        self._insert(SubscriberRecord(card_id, ik, bytes(pairing_secret), tuple(rsa_public)))
        return self

    def grant(self, card_id: int, product_id: int, expiry_day: int) -> "SubscriberDb":
        rec = self.get(card_id)
        kept = [e for e in rec.entitlements if e.product_id != product_id]
        kept.append(Entitlement(product_id, expiry_day))
        rec.entitlements = sorted(kept, key=lambda e: e.product_id)
        return self

    def revoke(self, card_id: int, product_id: int) -> "SubscriberDb":
        rec = self.get(card_id)
        rec.entitlements = [e for e in rec.entitlements if e.product_id != product_id]
        return self

    def to_json(self) -> list[dict]:
        return [rec.to_json() for rec in self.records()]

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> "SubscriberDb":
        return cls([SubscriberRecord.from_json(obj) for obj in json.loads(text)])

    @classmethod
    def load(cls, path: str | os.PathLike) -> "SubscriberDb":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def register_subscriber(db: SubscriberDb, card_id: int, ik, pairing_secret: bytes,
                        rsa_public: tuple[int, int]) -> SubscriberDb:
    return db.register(card_id, ik, pairing_secret, rsa_public)


def grant_entitlement(db: SubscriberDb, card_id: int, product_id: int, expiry_day: int) -> SubscriberDb:
    return db.grant(card_id, product_id, expiry_day)


def revoke_entitlement(db: SubscriberDb, card_id: int, product_id: int) -> SubscriberDb:
    return db.revoke(card_id, product_id)


# --------------------------------------------------------------------------
# Message construction


@dataclass(frozen=True)
class ChannelPlan:
    channel_id: int = 1
    pid_content: int = 0x100
    pid_ecm: int = 0x101
    pid_emm: int = 0x102
    product_id: int = 1
    cw_period_ms: int = DEFAULT_PERIOD_MS
    ecm_interval_ms: int = 100
    emm_cycle_ms: int = 1000
    tick_ms: int = 10
    content_per_tick: int = 10

    def __post_init__(self) -> None:
        pids = (self.pid_content, self.pid_ecm, self.pid_emm)
        if len(set(pids)) != 3:
            raise DomainError("content, ECM and EMM PIDs must be pairwise distinct")
        if any(not 0 <= p < (1 << 13) for p in pids):
            raise DomainError("PIDs must fit 13 bits")
        if min(self.cw_period_ms, self.ecm_interval_ms, self.emm_cycle_ms, self.tick_ms) <= 0:
            raise DomainError("intervals must be positive")
        if self.content_per_tick < 0:
            raise DomainError("content_per_tick must be non-negative")

    def to_json(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_json(cls, obj: dict) -> "ChannelPlan":
        return cls(**{k: int(v) for k, v in obj.items()})


def build_emm(record: SubscriberRecord, sk: ServiceKey, channel_id: int) -> Emm:
    """Unique-addressed EMM carrying the SK under the card's IK."""
    if len(record.entitlements) > MAX_ENTITLEMENTS_PER_EMM:
        raise CapacityError(f"card {record.card_id} holds more than {MAX_ENTITLEMENTS_PER_EMM} entitlements")
    ik = record.individual_key.key
    unsigned = Emm(
        card_id=record.card_id,
        sk_generation=sk.generation,
        channel_id=channel_id,
        enc_sk=tdes_cbc(ik, sk.key, Direction.ENCRYPT),
        entitlements=tuple(record.entitlements),
        address_type=ADDRESS_UNIQUE,
    )
    mac = cbc_mac(ik, unsigned.signed_part(), MacCipher.TDES)
    return Emm(**{**unsigned.__dict__, "mac": mac})


def build_ecm(plan: ChannelPlan, sk: ServiceKey, cw_even: ControlWord, cw_odd: ControlWord,
              period_index: int) -> Ecm:
    unsigned = Ecm(
        channel_id=plan.channel_id,
        sk_generation=sk.generation,
        period_index=period_index,
        product_id=plan.product_id,
        enc_cw_even=aes128_block(sk.key, cw_even.key, Direction.ENCRYPT),
        enc_cw_odd=aes128_block(sk.key, cw_odd.key, Direction.ENCRYPT),
    )
    mac = cbc_mac(sk.key, unsigned.signed_part(), MacCipher.AES)
    return Ecm(**{**unsigned.__dict__, "mac": mac})


def scrambling_iv(channel_id: int, period_index: int, continuity: int) -> bytes:
    """channel_id(2) || period_index(4) || continuity(1), zero-padded to 16."""
    return (channel_id.to_bytes(2, "big") + period_index.to_bytes(4, "big")
            + bytes((continuity,))).ljust(16, b"\x00")


def apply_keystream(p: TsPacket, cw: ControlWord, period: CryptoPeriod) -> bytes:
    ks = ctr_keystream(cw.key, scrambling_iv(period.channel_id, period.period_index, p.continuity),
                       PAYLOAD_SIZE)
    return (int.from_bytes(p.payload, "big") ^ int.from_bytes(ks, "big")).to_bytes(PAYLOAD_SIZE, "big")


def scramble_packet(p: TsPacket, cw: ControlWord, period: CryptoPeriod) -> TsPacket:
    """XOR the payload with the CW keystream and mark the period's parity."""
    if p.scrambling_control != SC_CLEAR:
        raise StateError("packet is already scrambled")
    return TsPacket(p.pid, apply_keystream(p, cw, period), period.parity.scrambling_control, p.continuity)


# --------------------------------------------------------------------------
# Multiplexer


class Mux:
    """Single-channel transmit chain advanced by a logical clock.

    Each tick emits, in order: an EMM packet if the EMM cycle is due, an ECM
    packet if the ECM interval is due, then ``content_per_tick`` scrambled
    content packets. The clear payloads are appended to ``clear_reference``.
    """

    def __init__(self, master_seed: bytes, plan: ChannelPlan, db: SubscriberDb,
                 sk_generation: int = 0):
        if len(master_seed) != 16:
            raise DomainError("master seed must be 16 octets")
        self.master_seed = bytes(master_seed)
        self.plan = plan
        self.db = db
        self.service_key = sk_generate(self.master_seed, plan.channel_id, sk_generation)
        self.clear_reference = bytearray()
        self._content_rng = PrngState(aes128_block(self.master_seed, CONTENT_SEED_LABEL.to_bytes(16, "big")))
        self._continuity: dict[int, int] = {}
        self._last_ms: int | None = None
        self._next_ecm_ms = 0
        self._next_emm_ms = 0
        self._emm_cursor = 0
        self._ecm_cache: tuple[int, int, bytes] | None = None
        self._cw_cache: dict[int, ControlWord] = {}

    def rekey(self) -> ServiceKey:
        """Advance the channel's SK to the next generation (mod 256)."""
        gen = (self.service_key.generation + 1) & 0xFF
        self.service_key = sk_generate(self.master_seed, self.plan.channel_id, gen)
        return self.service_key

    def control_word(self, period_index: int) -> ControlWord:
        cw = self._cw_cache.get(period_index)
        if cw is None:
            cw = cw_generate(self.master_seed, self.plan.channel_id, period_index)
            self._cw_cache = {period_index: cw}
        return cw

    def _cc(self, pid: int) -> int:
        cc = self._continuity.get(pid, 0)
        self._continuity[pid] = (cc + 1) & 0x0F
        return cc

    def _eligible(self) -> list[SubscriberRecord]:
        return [r for r in self.db.records() if r.entitlements]

    def _emm_packet(self) -> TsPacket | None:
        eligible = self._eligible()
        if not eligible:
            return None
        rec = eligible[self._emm_cursor % len(eligible)]
        self._emm_cursor = (self._emm_cursor + 1) % len(eligible)
        body = encode_emm(build_emm(rec, self.service_key, self.plan.channel_id))
        return TsPacket(self.plan.pid_emm, section_payload(body), SC_CLEAR, self._cc(self.plan.pid_emm))

    def _ecm_packet(self, period_index: int) -> TsPacket:
        key = (period_index, self.service_key.generation)
        if self._ecm_cache is None or self._ecm_cache[:2] != key:
            even, odd = slot_words(self.master_seed, self.plan.channel_id, period_index)
            body = encode_ecm(build_ecm(self.plan, self.service_key, even, odd, period_index))
            self._ecm_cache = (*key, section_payload(body))
        return TsPacket(self.plan.pid_ecm, self._ecm_cache[2], SC_CLEAR, self._cc(self.plan.pid_ecm))

    def tick(self, now_ms: int) -> list[TsPacket]:
        if self._last_ms is not None and now_ms < self._last_ms:
            raise ClockError(f"clock moved backwards: {now_ms} < {self._last_ms}")
        self._last_ms = now_ms
        plan = self.plan
        period_index = crypto_period_of(now_ms, plan.cw_period_ms)
        out: list[TsPacket] = []

        if now_ms >= self._next_emm_ms:
            while self._next_emm_ms <= now_ms:
                self._next_emm_ms += plan.emm_cycle_ms
            emm = self._emm_packet()
            if emm is not None:
                out.append(emm)
        if now_ms >= self._next_ecm_ms:
            while self._next_ecm_ms <= now_ms:
                self._next_ecm_ms += plan.ecm_interval_ms
            out.append(self._ecm_packet(period_index))

        period = CryptoPeriod(plan.channel_id, period_index, plan.cw_period_ms)
        cw = self.control_word(period_index)
        for _ in range(plan.content_per_tick):
            self._content_rng, clear = prng_next(self._content_rng, PAYLOAD_SIZE)
            self.clear_reference += clear
            pkt = TsPacket(plan.pid_content, clear, SC_CLEAR, self._cc(plan.pid_content))
            out.append(scramble_packet(pkt, cw, period))
        return out

    def ticks(self, duration_ms: int, start_ms: int = 0) -> Iterator[tuple[int, list[TsPacket]]]:
        for now in range(start_ms, start_ms + duration_ms, self.plan.tick_ms):
            yield now, self.tick(now)
