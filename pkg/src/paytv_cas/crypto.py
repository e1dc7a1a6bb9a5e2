"""Deterministic cryptographic primitives.

Block ciphers are backed by the ``cryptography`` package; everything layered
on top (CTR keystream, CBC-MAC framing, PRNG, session KDF, RSA) is built here.
All functions are pure: outputs depend only on arguments.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

from cryptography.hazmat.decrepit.ciphers.algorithms import TripleDES
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import DomainError, LengthError

AES_BLOCK = 16
TDES_BLOCK = 8
MAC_LENGTH = 8
RSA_BITS = 1024
RSA_BYTES = RSA_BITS // 8
KEYSTREAM_CAP = 1 << 20
_U128 = (1 << 128) - 1


class Direction(str, Enum):
    ENCRYPT = "encrypt"
    DECRYPT = "decrypt"


class MacCipher(str, Enum):
    AES = "aes"
    TDES = "tdes"


@dataclass(frozen=True)
class RsaKeyPair:
    modulus_n: int
    public_e: int
    private_d: int

    def __post_init__(self) -> None:
        if not (1 << (RSA_BITS - 1)) <= self.modulus_n < (1 << RSA_BITS):
            raise DomainError("RSA modulus must be exactly 1024 bits")

    @property
    def public(self) -> tuple[int, int]:
        return self.modulus_n, self.public_e


@dataclass(frozen=True)
class PrngState:
    """Counter-mode generator state; the counter counts 16-octet blocks."""

    seed_key: bytes
    counter: int = 0

    def __post_init__(self) -> None:
        _check_len(self.seed_key, 16, "PRNG seed key")
        if not 0 <= self.counter <= _U128:
            raise DomainError("PRNG counter must fit 128 bits")


def _check_len(data: bytes, n: int, what: str) -> None:
    if len(data) != n:
        raise LengthError(f"{what} must be {n} octets, got {len(data)}")


def xor_bytes(a: bytes, b: bytes) -> bytes:
    if len(a) != len(b):
        raise LengthError("xor operands differ in length")
    n = len(a)
    return (int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).to_bytes(n, "big")


@lru_cache(maxsize=256)
def _aes_ecb(key: bytes) -> Cipher:
    return Cipher(algorithms.AES(key), modes.ECB())


def _tdes(key: bytes) -> TripleDES:
    # K1 K2 K1 spelled out as a three-key bundle
    return TripleDES(key + key[:8])


@lru_cache(maxsize=64)
def _tdes_ecb(key: bytes) -> Cipher:
    return Cipher(_tdes(key), modes.ECB())


def aes128_block(key: bytes, block: bytes, direction: Direction | str = Direction.ENCRYPT) -> bytes:
    """Single AES-128 block operation."""
    _check_len(key, 16, "AES-128 key")
    _check_len(block, AES_BLOCK, "AES block")
    cipher = _aes_ecb(bytes(key))
    ctx = cipher.encryptor() if Direction(direction) is Direction.ENCRYPT else cipher.decryptor()
    return ctx.update(block) + ctx.finalize()


def tdes_block(key: bytes, block: bytes, direction: Direction | str = Direction.ENCRYPT) -> bytes:
    """Two-key EDE triple DES (K1, K2, K1) on one 8-octet block."""
    _check_len(key, 16, "3DES key")
    _check_len(block, TDES_BLOCK, "3DES block")
    cipher = _tdes_ecb(bytes(key))
    ctx = cipher.encryptor() if Direction(direction) is Direction.ENCRYPT else cipher.decryptor()
    return ctx.update(block) + ctx.finalize()


def tdes_cbc(key: bytes, data: bytes, direction: Direction | str = Direction.ENCRYPT) -> bytes:
    """3DES-CBC with a zero IV; ``data`` must be a whole number of blocks."""
    _check_len(key, 16, "3DES key")
    if len(data) % TDES_BLOCK:
        raise LengthError("3DES-CBC input must be a multiple of 8 octets")
    cipher = Cipher(_tdes(bytes(key)), modes.CBC(bytes(TDES_BLOCK)))
    ctx = cipher.encryptor() if Direction(direction) is Direction.ENCRYPT else cipher.decryptor()
    return ctx.update(data) + ctx.finalize()


def ctr_keystream(key: bytes, iv: bytes, length: int) -> bytes:
    """AES-128 counter keystream: E(iv), E(iv+1), ... truncated to ``length``.

    The counter is the full 16-octet IV read as a big-endian integer and
    wraps modulo 2**128.
    """
    _check_len(key, 16, "AES-128 key")
    _check_len(iv, AES_BLOCK, "CTR IV")
    if not 0 <= length <= KEYSTREAM_CAP:
        raise DomainError(f"keystream length must be within [0, {KEYSTREAM_CAP}]")
    if length == 0:
        return b""
    ctx = Cipher(algorithms.AES(bytes(key)), modes.CTR(bytes(iv))).encryptor()
    return ctx.update(bytes(length))


def cbc_mac(key: bytes, message: bytes, cipher: MacCipher | str = MacCipher.AES) -> bytes:
    """Length-prefixed CBC-MAC with zero IV, truncated to 8 octets.

    The message is prefixed with its length as a 4-octet big-endian integer
    and zero-padded to the cipher's block size.
    """
    cipher = MacCipher(cipher)
    _check_len(key, 16, "MAC key")
    block = AES_BLOCK if cipher is MacCipher.AES else TDES_BLOCK
    framed = len(message).to_bytes(4, "big") + bytes(message)
    framed += bytes(-len(framed) % block)
    algo = algorithms.AES(bytes(key)) if cipher is MacCipher.AES else _tdes(bytes(key))
    ctx = Cipher(algo, modes.CBC(bytes(block))).encryptor()
    out = ctx.update(framed) + ctx.finalize()
    return out[-block:][:MAC_LENGTH]


def prng_next(state: PrngState, length: int) -> tuple[PrngState, bytes]:
    """Draw ``length`` octets; the counter advances by ceil(length / 16)."""
    out = ctr_keystream(state.seed_key, state.counter.to_bytes(16, "big"), length)
    blocks = -(-length // AES_BLOCK)
    return PrngState(state.seed_key, (state.counter + blocks) & _U128), out


def kdf_session(n_stb: bytes, n_card: bytes, pairing_secret: bytes) -> bytes:
    """Session key both ends derive after exchanging nonces."""
    _check_len(n_stb, 16, "STB nonce")
    _check_len(n_card, 16, "card nonce")
    return aes128_block(pairing_secret, xor_bytes(n_stb, n_card), Direction.ENCRYPT)


def rsa_apply(exponent: int, modulus: int, m: int) -> int:
    """Raw RSA: m ** exponent mod modulus."""
    if modulus <= 1:
        raise DomainError("modulus must exceed 1")
    if not 0 <= m < modulus:
        raise DomainError("message representative must lie in [0, modulus)")
    if exponent < 0:
        raise DomainError("exponent must be non-negative")
    return pow(m, exponent, modulus)


def rsa_pad(message: bytes) -> int:
    """Left-pad with zeros to the modulus width (deterministic, simulator-grade)."""
    if len(message) > RSA_BYTES - 1:
        raise LengthError("RSA message too long")
    return int.from_bytes(message.rjust(RSA_BYTES, b"\x00"), "big")


def rsa_unpad(value: int, length: int) -> bytes | None:
    """Inverse of :func:`rsa_pad`; None if the leading octets are not zero."""
    if value >> (8 * length):
        return None
    return value.to_bytes(length, "big")


def rsa_generate(state: PrngState, e: int = 65537) -> tuple[RsaKeyPair, PrngState]:
    """Deterministic 1024-bit key pair drawn from ``state``."""
    from sympy import nextprime

    def draw_prime(st: PrngState) -> tuple[int, PrngState]:
        while True:
            st, raw = prng_next(st, RSA_BYTES // 2)
            cand = int.from_bytes(raw, "big") | (0b11 << (RSA_BITS // 2 - 2)) | 1
            p = int(nextprime(cand - 1))
            if p.bit_length() == RSA_BITS // 2 and (p - 1) % e:
                return p, st

    p, state = draw_prime(state)
    while True:
        q, state = draw_prime(state)
        if q != p:
            break
    phi = (p - 1) * (q - 1)
    d = pow(e, -1, phi)
    return RsaKeyPair(p * q, e, d), state
