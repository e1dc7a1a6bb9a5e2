"""Virtual smart card running the CA applet.

The card processes one APDU at a time. Each command is charged a transport
cost plus the configured cost of every primitive it actually invokes, so the
simulated latency of a command is a pure function of the code path taken.
Rejected commands leave the persistent store untouched.
"""

from __future__ import annotations

import copy
import json
import os
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .codec import (
    ADDRESS_GLOBAL,
    CommandApdu,
    ResponseApdu,
    decode_apdu_command,
    decode_ecm,
    decode_emm,
    encode_apdu_response,
)
from .crypto import (
    RSA_BYTES,
    Direction,
    MacCipher,
    PrngState,
    RsaKeyPair,
    aes128_block,
    cbc_mac,
    kdf_session,
    prng_next,
    rsa_apply,
    rsa_unpad,
    tdes_cbc,
    xor_bytes,
)
from .errors import CodecError, DomainError, FormatError, LengthError
from .keys import IndividualKey, ServiceKey

EEPROM_BUDGET = 72 * 1024
RAM_BUDGET = 4096
EEPROM_PER_ENTITLEMENT = 8
EEPROM_PER_SERVICE_KEY = 24
SESSION_RAM = 64
NONCE_LENGTH = 16
CARD_INFO_LENGTH = 4 + RSA_BYTES + 4
STATUS_PAGE = 60
PROOF_MASK = b"\x55" * 16

DEFAULT_AID = bytes.fromhex("A1B2C3D4E5")

SW_OK = 0x9000
SW_WRONG_LENGTH = 0x6700
SW_SECURITY = 0x6982
SW_CONDITIONS = 0x6985
SW_WRONG_DATA = 0x6A80
SW_NOT_FOUND = 0x6A82
SW_MEMORY_FULL = 0x6A84
SW_WRONG_P1P2 = 0x6A86
SW_REF_NOT_FOUND = 0x6A88
SW_INS_UNKNOWN = 0x6D00

CLA_ISO = 0x00
CLA_PROPRIETARY = 0x80
INS_SELECT = 0xA4
INS_GET_CARD_INFO = 0x10
INS_AUTHENTICATE_1 = 0x20
INS_AUTHENTICATE_2 = 0x22
INS_PROCESS_EMM = 0x40
INS_PROCESS_ECM = 0x42
INS_GET_STATUS = 0x44

_RNG_LABEL = b"card-nonce-rng\x00\x00"


@dataclass(frozen=True)
class LatencyModel:
    """Per-invocation cost in simulated milliseconds."""

    tdes: int = 5
    aes: int = 10
    rsa: int = 100
    rng: int = 1
    apdu_transport: int = 2

    def __post_init__(self) -> None:
        for name, value in self.__dict__.items():
            if value < 0:
                raise DomainError(f"latency {name} must be non-negative")

    def cost(self, primitive: str) -> int:
        return getattr(self, primitive)

    def to_json(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_json(cls, obj: dict | None) -> "LatencyModel":
        return cls(**{k: int(v) for k, v in (obj or {}).items()})


class Lifecycle(str, Enum):
    IDLE = "idle"
    SELECTED = "selected"
    AUTHENTICATED = "authenticated"


@dataclass
class CardProvisioning:
    card_id: int
    individual_key: bytes
    pairing_secret: bytes
    rsa: RsaKeyPair
    aid: bytes = DEFAULT_AID

    def to_json(self) -> dict:
        return {
            "card_id": self.card_id,
            "ik_hex": self.individual_key.hex(),
            "pairing_hex": self.pairing_secret.hex(),
            "rsa_n_hex": format(self.rsa.modulus_n, "x"),
            "rsa_e": self.rsa.public_e,
            "rsa_d_hex": format(self.rsa.private_d, "x"),
            "aid_hex": self.aid.hex(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CardProvisioning":
        return cls(
            card_id=int(obj["card_id"]),
            individual_key=bytes.fromhex(obj["ik_hex"]),
            pairing_secret=bytes.fromhex(obj["pairing_hex"]),
            rsa=RsaKeyPair(int(obj["rsa_n_hex"], 16), int(obj["rsa_e"]), int(obj["rsa_d_hex"], 16)),
            aid=bytes.fromhex(obj.get("aid_hex", DEFAULT_AID.hex())),
        )

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "CardProvisioning":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class CardPersistentStore:
    card_id: int
    individual_key: IndividualKey
    rsa_private: RsaKeyPair
    pairing_secret: bytes
    aid: bytes = DEFAULT_AID
    service_keys: dict[int, ServiceKey] = field(default_factory=dict)
    entitlements: dict[int, int] = field(default_factory=dict)
    eeprom_used: int = 0
    rng: PrngState | None = None

    def __post_init__(self) -> None:
        if self.rng is None:
            self.rng = PrngState(aes128_block(self.individual_key.key, _RNG_LABEL))

    @classmethod
    def provision(cls, prov: CardProvisioning) -> "CardPersistentStore":
        return cls(prov.card_id, IndividualKey(prov.individual_key, prov.card_id), prov.rsa,
                   prov.pairing_secret, prov.aid)

    def snapshot(self) -> tuple:
        """Hashable image of everything persistent, for before/after comparison."""
        return (
            self.card_id, self.individual_key.key, self.rsa_private, self.pairing_secret, self.aid,
            tuple(sorted((ch, sk.key, sk.generation) for ch, sk in self.service_keys.items())),
            tuple(sorted(self.entitlements.items())), self.eeprom_used, self.rng,
        )


@dataclass
class CardSession:
    lifecycle: Lifecycle = Lifecycle.IDLE
    n_card: bytes | None = None
    pending_key: bytes | None = None
    session_key: bytes | None = None

    @property
    def ram_used(self) -> int:
        return 0 if self.lifecycle is Lifecycle.IDLE else SESSION_RAM

    def wipe(self, lifecycle: Lifecycle) -> None:
        self.lifecycle = lifecycle
        self.n_card = self.pending_key = self.session_key = None


class _Reply(Exception):
    def __init__(self, sw: int, data: bytes = b""):
        self.sw = sw
        self.data = data


class VirtualCard:
    """CA applet instance. ``day`` is the card's notion of the current sim day."""

    def __init__(self, store: CardPersistentStore, latency: LatencyModel | None = None, day: int = 0):
        self.store = store
        self.latency = latency or LatencyModel()
        self.day = day
        self.session = CardSession()
        self.last_calls: Counter[str] = Counter()
        self.total_calls: Counter[str] = Counter()
        self.cw_released = 0
        self._handlers = {
            (CLA_ISO, INS_SELECT): self._select,
            (CLA_PROPRIETARY, INS_GET_CARD_INFO): self._get_card_info,
            (CLA_PROPRIETARY, INS_AUTHENTICATE_1): self._authenticate_1,
            (CLA_PROPRIETARY, INS_AUTHENTICATE_2): self._authenticate_2,
            (CLA_PROPRIETARY, INS_PROCESS_EMM): self._process_emm,
            (CLA_PROPRIETARY, INS_PROCESS_ECM): self._process_ecm,
            (CLA_PROPRIETARY, INS_GET_STATUS): self._get_status,
        }

    @classmethod
    def from_provisioning(cls, prov: CardProvisioning, latency: LatencyModel | None = None) -> "VirtualCard":
        return cls(CardPersistentStore.provision(prov), latency)

    def reset(self) -> None:
        self.session = CardSession()

    # -- dispatch ----------------------------------------------------------

    def _charge(self, primitive: str) -> None:
        self.last_calls[primitive] += 1

    def process_apdu(self, cmd: CommandApdu) -> tuple[ResponseApdu, int]:
        """Run one command; returns the response and its simulated elapsed ms."""
        self.last_calls = Counter()
        handler = self._handlers.get((cmd.cla, cmd.ins))
        try:
            if handler is None:
                raise _Reply(SW_INS_UNKNOWN)
            if cmd.ins != INS_SELECT and self.session.lifecycle is Lifecycle.IDLE:
                raise _Reply(SW_CONDITIONS)
            handler(cmd)
            raise AssertionError("handler returned without a reply")
        except _Reply as reply:
            resp = ResponseApdu.status(reply.sw, reply.data)
        self.total_calls.update(self.last_calls)
        elapsed = self.latency.apdu_transport + sum(
            self.latency.cost(name) * count for name, count in self.last_calls.items()
        )
        assert self.store.eeprom_used <= EEPROM_BUDGET and self.session.ram_used <= RAM_BUDGET
        return resp, elapsed

    def transmit(self, raw: bytes) -> tuple[bytes, int]:
        """Wire-level entry point: command octets in, response octets out."""
        try:
            cmd = decode_apdu_command(raw)
        except CodecError:
            self.last_calls = Counter()
            return encode_apdu_response(ResponseApdu.status(SW_WRONG_LENGTH)), self.latency.apdu_transport
        resp, elapsed = self.process_apdu(cmd)
        return encode_apdu_response(resp), elapsed

    # -- handlers ----------------------------------------------------------

    def _select(self, cmd: CommandApdu) -> None:
        if cmd.p1 != 0x04 or cmd.p2 != 0x00:
            raise _Reply(SW_WRONG_P1P2)
        if cmd.data != self.store.aid:
            raise _Reply(SW_NOT_FOUND)
        self.session.wipe(Lifecycle.SELECTED)
        raise _Reply(SW_OK)

    def _get_card_info(self, cmd: CommandApdu) -> None:
        if cmd.data:
            raise _Reply(SW_WRONG_LENGTH)
        rsa = self.store.rsa_private
        data = (self.store.card_id.to_bytes(4, "big") + rsa.modulus_n.to_bytes(RSA_BYTES, "big")
                + rsa.public_e.to_bytes(4, "big"))
        raise _Reply(SW_OK, data)

    def _authenticate_1(self, cmd: CommandApdu) -> None:
        if self.session.lifecycle is not Lifecycle.SELECTED:
            raise _Reply(SW_CONDITIONS)
        if len(cmd.data) != RSA_BYTES:
            raise _Reply(SW_WRONG_LENGTH)
        rsa = self.store.rsa_private
        c = int.from_bytes(cmd.data, "big")
        if c >= rsa.modulus_n:
            self.session.wipe(Lifecycle.SELECTED)
            raise _Reply(SW_SECURITY)
        self._charge("rsa")
        n_stb = rsa_unpad(rsa_apply(rsa.private_d, rsa.modulus_n, c), NONCE_LENGTH)
        if n_stb is None:
            self.session.wipe(Lifecycle.SELECTED)
            raise _Reply(SW_SECURITY)
        self._charge("rng")
        self.store.rng, n_card = prng_next(self.store.rng, NONCE_LENGTH)
        self._charge("aes")
        pending = kdf_session(n_stb, n_card, self.store.pairing_secret)
        self._charge("aes")
        wrapped = aes128_block(n_stb, n_card, Direction.ENCRYPT)
        self.session.wipe(Lifecycle.SELECTED)
        self.session.n_card = n_card
        self.session.pending_key = pending
        raise _Reply(SW_OK, wrapped)

    def _authenticate_2(self, cmd: CommandApdu) -> None:
        s = self.session
        if s.lifecycle is not Lifecycle.SELECTED or s.pending_key is None:
            raise _Reply(SW_CONDITIONS)
        if len(cmd.data) != 16:
            raise _Reply(SW_WRONG_LENGTH)
        self._charge("aes")
        expected = aes128_block(s.pending_key, xor_bytes(s.n_card, PROOF_MASK), Direction.ENCRYPT)
        if cmd.data != expected:
            s.wipe(Lifecycle.SELECTED)
            raise _Reply(SW_SECURITY)
        key = s.pending_key
        s.wipe(Lifecycle.AUTHENTICATED)
        s.session_key = key
        raise _Reply(SW_OK)

    def _process_emm(self, cmd: CommandApdu) -> None:
        try:
            emm = decode_emm(cmd.data)
        except LengthError:
            raise _Reply(SW_WRONG_LENGTH) from None
        except FormatError:
            raise _Reply(SW_WRONG_DATA) from None
        store = self.store
        if emm.address_type != ADDRESS_GLOBAL and emm.card_id != store.card_id:
            raise _Reply(SW_CONDITIONS)
        ik = store.individual_key.key
        self._charge("tdes")
        if cbc_mac(ik, emm.signed_part(), MacCipher.TDES) != emm.mac:
            raise _Reply(SW_SECURITY)
        self._charge("tdes")
        sk = ServiceKey(tdes_cbc(ik, emm.enc_sk, Direction.DECRYPT), emm.sk_generation)

        fresh = {e.product_id for e in emm.entitlements} - store.entitlements.keys()
        cost = EEPROM_PER_ENTITLEMENT * len(fresh)
        if emm.channel_id not in store.service_keys:
            cost += EEPROM_PER_SERVICE_KEY
        if store.eeprom_used + cost > EEPROM_BUDGET:
            raise _Reply(SW_MEMORY_FULL)
        store.service_keys[emm.channel_id] = sk
        for e in emm.entitlements:
            store.entitlements[e.product_id] = e.expiry_day
        store.eeprom_used += cost
        raise _Reply(SW_OK)

    def entitled(self, product_id: int) -> bool:
        expiry = self.store.entitlements.get(product_id)
        return expiry is not None and expiry >= self.day

    def _process_ecm(self, cmd: CommandApdu) -> None:
        s = self.session
        if s.lifecycle is not Lifecycle.AUTHENTICATED:
            raise _Reply(SW_CONDITIONS)
        try:
            ecm = decode_ecm(cmd.data)
        except LengthError:
            raise _Reply(SW_WRONG_LENGTH) from None
        except FormatError:
            raise _Reply(SW_WRONG_DATA) from None
        sk = self.store.service_keys.get(ecm.channel_id)
        if sk is None or sk.generation != ecm.sk_generation:
            raise _Reply(SW_REF_NOT_FOUND)
        self._charge("aes")
        if cbc_mac(sk.key, ecm.signed_part(), MacCipher.AES) != ecm.mac:
            raise _Reply(SW_SECURITY)
        if not self.entitled(ecm.product_id):
            raise _Reply(SW_SECURITY)
        out = b""
        for enc in (ecm.enc_cw_even, ecm.enc_cw_odd):
            self._charge("aes")
            cw = aes128_block(sk.key, enc, Direction.DECRYPT)
            self._charge("aes")
            out += aes128_block(s.session_key, cw, Direction.ENCRYPT)
        self.cw_released += 2
        raise _Reply(SW_OK, out)

    def _get_status(self, cmd: CommandApdu) -> None:
        if cmd.data:
            raise _Reply(SW_WRONG_LENGTH)
        store = self.store
        if cmd.p1 == 0x00:
            entries = [pid.to_bytes(2, "big") + exp.to_bytes(2, "big")
                       for pid, exp in sorted(store.entitlements.items())]
        elif cmd.p1 == 0x01:
            entries = [ch.to_bytes(2, "big") + bytes((sk.generation, 0))
                       for ch, sk in sorted(store.service_keys.items())]
        else:
            raise _Reply(SW_WRONG_P1P2)
        page = entries[cmd.p2 * STATUS_PAGE:(cmd.p2 + 1) * STATUS_PAGE]
        header = (len(store.entitlements).to_bytes(2, "big") + len(store.service_keys).to_bytes(2, "big")
                  + store.eeprom_used.to_bytes(4, "big") + self.session.ram_used.to_bytes(2, "big"))
        raise _Reply(SW_OK, header + b"".join(page))


@dataclass(frozen=True)
class CardStatus:
    entitlement_count: int
    service_key_count: int
    eeprom_used: int
    ram_used: int
    entries: tuple[bytes, ...]

    @classmethod
    def parse(cls, data: bytes) -> "CardStatus":
        if len(data) < 10 or (len(data) - 10) % 4:
            raise LengthError("malformed GET STATUS payload")
        body = data[10:]
        return cls(
            int.from_bytes(data[0:2], "big"), int.from_bytes(data[2:4], "big"),
            int.from_bytes(data[4:8], "big"), int.from_bytes(data[8:10], "big"),
            tuple(body[i:i + 4] for i in range(0, len(body), 4)),
        )


def process_apdu(store: CardPersistentStore, session: CardSession, cmd: CommandApdu,
                 latency: LatencyModel | None = None, day: int = 0
                 ) -> tuple[CardPersistentStore, CardSession, ResponseApdu, int]:
    """Value-style wrapper: inputs are not modified."""
    card = VirtualCard(copy.deepcopy(store), latency, day)
    card.session = copy.deepcopy(session)
    resp, elapsed = card.process_apdu(cmd)
    return card.store, card.session, resp, elapsed


# Command builders shared by the receiver and tests.

def select_cmd(aid: bytes = DEFAULT_AID) -> CommandApdu:
    return CommandApdu(CLA_ISO, INS_SELECT, 0x04, 0x00, aid)


def get_card_info_cmd() -> CommandApdu:
    return CommandApdu(CLA_PROPRIETARY, INS_GET_CARD_INFO, le=CARD_INFO_LENGTH)


def authenticate_1_cmd(ciphertext: bytes) -> CommandApdu:
    return CommandApdu(CLA_PROPRIETARY, INS_AUTHENTICATE_1, data=ciphertext, le=16)


def authenticate_2_cmd(proof: bytes) -> CommandApdu:
    return CommandApdu(CLA_PROPRIETARY, INS_AUTHENTICATE_2, data=proof)


def process_emm_cmd(emm: bytes) -> CommandApdu:
    return CommandApdu(CLA_PROPRIETARY, INS_PROCESS_EMM, data=emm)


def process_ecm_cmd(ecm: bytes) -> CommandApdu:
    return CommandApdu(CLA_PROPRIETARY, INS_PROCESS_ECM, data=ecm, le=32)


def get_status_cmd(selector: int = 0, page: int = 0) -> CommandApdu:
    return CommandApdu(CLA_PROPRIETARY, INS_GET_STATUS, selector, page, le=256)
