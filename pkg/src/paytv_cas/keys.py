"""CW / SK / IK key hierarchy and crypto-period scheduling.

Layer ciphers: CW under SK is AES-128 (ECM), SK under IK is two-key 3DES
(EMM), and CW release from card to receiver is AES-128 under the session key.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .crypto import Direction, aes128_block
from .errors import DomainError, LengthError

DEFAULT_PERIOD_MS = 10_000

# SK counters live above every CW counter (those stay below 2**48).
_SK_DOMAIN = 1 << 127


class Parity(str, Enum):
    EVEN = "even"
    ODD = "odd"

    @property
    def scrambling_control(self) -> int:
        return 0b10 if self is Parity.EVEN else 0b11

    @classmethod
    def from_scrambling_control(cls, code: int) -> "Parity":
        if code == 0b10:
            return cls.EVEN
        if code == 0b11:
            return cls.ODD
        raise DomainError(f"scrambling control {code:02b} carries no parity")


def _u(value: int, bits: int, what: str) -> int:
    if not 0 <= value < (1 << bits):
        raise DomainError(f"{what} must fit {bits} bits")
    return value


@dataclass(frozen=True)
class ControlWord:
    key: bytes

    def __post_init__(self) -> None:
        if len(self.key) != 16:
            raise LengthError("control word must be 16 octets")

    def __repr__(self) -> str:
        return "ControlWord(<redacted>)"


@dataclass(frozen=True)
class ServiceKey:
    key: bytes
    generation: int = 0

    def __post_init__(self) -> None:
        if len(self.key) != 16:
            raise LengthError("service key must be 16 octets")
        _u(self.generation, 8, "SK generation")

    def __repr__(self) -> str:
        return f"ServiceKey(<redacted>, generation={self.generation})"


@dataclass(frozen=True)
class IndividualKey:
    key: bytes
    card_id: int

    def __post_init__(self) -> None:
        if len(self.key) != 16:
            raise LengthError("individual key must be 16 octets")
        _u(self.card_id, 32, "card_id")

    def __repr__(self) -> str:
        return f"IndividualKey(<redacted>, card_id={self.card_id})"


@dataclass(frozen=True)
class CryptoPeriod:
    channel_id: int
    period_index: int
    period_ms: int = DEFAULT_PERIOD_MS

    def __post_init__(self) -> None:
        _u(self.channel_id, 16, "channel_id")
        _u(self.period_index, 32, "period_index")
        if self.period_ms <= 0:
            raise DomainError("period_ms must be positive")

    @property
    def parity(self) -> Parity:
        return parity_of(self.period_index)

    @property
    def start_ms(self) -> int:
        return self.period_index * self.period_ms


def crypto_period_of(time_ms: int, period_ms: int = DEFAULT_PERIOD_MS) -> int:
    if period_ms <= 0:
        raise DomainError("period_ms must be positive")
    return time_ms // period_ms


def parity_of(period_index: int) -> Parity:
    return Parity.EVEN if period_index % 2 == 0 else Parity.ODD


def cw_generate(master_seed: bytes, channel_id: int, period_index: int) -> ControlWord:
    """One PRNG block at counter (channel_id << 32) | period_index."""
    counter = (_u(channel_id, 16, "channel_id") << 32) | _u(period_index, 32, "period_index")
    return ControlWord(aes128_block(master_seed, counter.to_bytes(16, "big"), Direction.ENCRYPT))


def sk_generate(master_seed: bytes, channel_id: int, generation: int) -> ServiceKey:
    """Service key for a channel generation, from a counter domain disjoint from CWs."""
    counter = _SK_DOMAIN | (_u(channel_id, 16, "channel_id") << 8) | _u(generation, 8, "generation")
    return ServiceKey(aes128_block(master_seed, counter.to_bytes(16, "big"), Direction.ENCRYPT), generation)


def slot_words(master_seed: bytes, channel_id: int, period_index: int) -> tuple[ControlWord, ControlWord]:
    """(even, odd) CWs an ECM carries in a period: the current one and the next."""
    current = cw_generate(master_seed, channel_id, period_index)
    following = cw_generate(master_seed, channel_id, (period_index + 1) & 0xFFFFFFFF)
    if parity_of(period_index) is Parity.EVEN:
        return current, following
    return following, current
