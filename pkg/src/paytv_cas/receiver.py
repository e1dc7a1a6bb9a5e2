"""Set-top box: authenticate with the card, filter ECM/EMM, descramble.

The receiver has no wall clock. Its time base is the content stream: each
content packet advances the clock by ``content_interval_ms``, and section
packets are stamped with the time of the next content packet. The card is
half-duplex, so a command issued while it is still busy waits for it; keyslot
updates take effect only once the card's answer has arrived.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .codec import (
    ADDRESS_GLOBAL,
    ECM_LENGTH,
    ApduTrace,
    CommandApdu,
    ResponseApdu,
    TsPacket,
    decode_apdu_response,
    decode_ecm,
    decode_emm,
    emm_length_in,
    encode_apdu_command,
    iter_packets,
)
from .crypto import (
    RSA_BYTES,
    Direction,
    PrngState,
    aes128_block,
    kdf_session,
    prng_next,
    rsa_apply,
    rsa_pad,
    xor_bytes,
)
from .errors import AuthError, CodecError, GapError
from .headend import ChannelPlan, apply_keystream
from .keys import ControlWord, CryptoPeriod, Parity, parity_of
from .vcard import (
    CARD_INFO_LENGTH,
    DEFAULT_AID,
    NONCE_LENGTH,
    PROOF_MASK,
    SW_CONDITIONS,
    SW_OK,
    SW_SECURITY,
    VirtualCard,
    authenticate_1_cmd,
    authenticate_2_cmd,
    get_card_info_cmd,
    process_ecm_cmd,
    process_emm_cmd,
    select_cmd,
)

DAY_MS = 86_400_000
_STB_RNG_LABEL = b"stb-nonce-rng\x00\x00\x00"


@dataclass
class DescrambleMetrics:
    packets_total: int = 0
    packets_clear_ok: int = 0
    packets_gap: int = 0
    packets_pass_through: int = 0
    packets_pre_lock: int = 0
    auth_elapsed_ms: int | None = None
    ecm_latencies_ms: list[int] = field(default_factory=list)
    ecm_status: dict[str, int] = field(default_factory=dict)
    emm_status: dict[str, int] = field(default_factory=dict)
    cw_released: int = 0
    cw_ready_ms: dict[int, int] = field(default_factory=dict)
    first_ecm_response_ms: int | None = None
    first_clear_ms: int | None = None
    first_gap_ms: int | None = None
    reauth_count: int = 0
    sections_malformed: int = 0
    end_ms: int = 0

    def to_json(self) -> dict:
        out = asdict(self)
        out["cw_ready_ms"] = {str(k): v for k, v in sorted(self.cw_ready_ms.items())}
        out["ecm_status"] = dict(sorted(self.ecm_status.items()))
        out["emm_status"] = dict(sorted(self.emm_status.items()))
        return out


@dataclass(frozen=True)
class Keyslot:
    cw: ControlWord
    channel_id: int
    period_index: int


def descramble_packet(p: TsPacket, cw: ControlWord | None, period: CryptoPeriod) -> TsPacket:
    """Inverse of the head-end scrambler; clear packets pass through."""
    if not p.scrambled:
        return p
    if cw is None:
        raise GapError(f"no keyslot for {Parity.from_scrambling_control(p.scrambling_control).value} parity")
    return TsPacket(p.pid, apply_keystream(p, cw, period), 0, p.continuity)


class Receiver:
    def __init__(self, card: VirtualCard, pairing_secret: bytes, plan: ChannelPlan | None = None,
                 trace: ApduTrace | None = None, aid: bytes = DEFAULT_AID,
                 content_interval_ms: float | None = None):
        self.card = card
        self.pairing_secret = bytes(pairing_secret)
        self.plan = plan or ChannelPlan()
        self.trace = trace if trace is not None else ApduTrace()
        self.aid = aid
        if content_interval_ms is None:
            content_interval_ms = self.plan.tick_ms / max(self.plan.content_per_tick, 1)
        self.content_interval_ms = content_interval_ms
        self.metrics = DescrambleMetrics()
        self.session_key: bytes | None = None
        self.card_id: int | None = None
        self.keyslots: dict[Parity, Keyslot] = {}
        self.authorized = True
        self.clear_out = bytearray()
        self._rng = PrngState(aes128_block(self.pairing_secret, _STB_RNG_LABEL))
        self._pending: list[tuple[int, dict[Parity, Keyslot] | None]] = []
        self._done: set[tuple[int, int]] = set()
        self._latest_period: int | None = None
        self._card_free_ms = 0
        self._content_seen = 0
        self.now_ms = 0

    # -- card link ---------------------------------------------------------

    def _exchange(self, cmd: CommandApdu, at_ms: int) -> tuple[ResponseApdu, int, int]:
        """Send one APDU; returns (response, card elapsed, completion time)."""
        raw = encode_apdu_command(cmd)
        resp_raw, elapsed = self.card.transmit(raw)
        self.trace.record(raw, resp_raw)
        start = max(at_ms, self._card_free_ms)
        self._card_free_ms = start + elapsed
        return decode_apdu_response(resp_raw), elapsed, self._card_free_ms

    def auth_flow(self, at_ms: int = 0) -> tuple[bytes, int]:
        """SELECT, GET CARD INFO, AUTHENTICATE 1/2. Returns (session key, elapsed ms)."""
        latency = self.card.latency
        self.session_key = None
        begin = max(at_ms, self._card_free_ms)
        total = 0

        def step(cmd: CommandApdu, name: str) -> ResponseApdu:
            nonlocal total
            resp, elapsed, _ = self._exchange(cmd, begin + total)
            total += elapsed
            if resp.sw != SW_OK:
                raise AuthError(resp.sw, name)
            return resp

        step(select_cmd(self.aid), "select")
        info = step(get_card_info_cmd(), "get_card_info").data
        if len(info) != CARD_INFO_LENGTH:
            raise AuthError(0x6700, "get_card_info")
        self.card_id = int.from_bytes(info[:4], "big")
        n = int.from_bytes(info[4:4 + RSA_BYTES], "big")
        e = int.from_bytes(info[4 + RSA_BYTES:], "big")

        self._rng, n_stb = prng_next(self._rng, NONCE_LENGTH)
        cipher = rsa_apply(e, n, rsa_pad(n_stb)).to_bytes(RSA_BYTES, "big")
        total += latency.rng + latency.rsa
        self._card_free_ms = max(self._card_free_ms, begin + total)

        wrapped = step(authenticate_1_cmd(cipher), "authenticate_1").data
        if len(wrapped) != NONCE_LENGTH:
            raise AuthError(0x6700, "authenticate_1")
        n_card = aes128_block(n_stb, wrapped, Direction.DECRYPT)
        key = kdf_session(n_stb, n_card, self.pairing_secret)
        proof = aes128_block(key, xor_bytes(n_card, PROOF_MASK), Direction.ENCRYPT)
        step(authenticate_2_cmd(proof), "authenticate_2")

        self.session_key = key
        self.metrics.auth_elapsed_ms = total
        return key, total

    # -- packet path -------------------------------------------------------

    def _apply_pending(self, now_ms: int) -> None:
        while self._pending and self._pending[0][0] <= now_ms:
            at, slots = self._pending.pop(0)
            if slots is None:
                self.keyslots.clear()
                continue
            self.keyslots.update(slots)
            for slot in slots.values():
                self.metrics.cw_ready_ms.setdefault(slot.period_index, at)

    def _schedule(self, at_ms: int, slots: dict[Parity, Keyslot] | None) -> None:
        self._pending.append((at_ms, slots))
        self._pending.sort(key=lambda item: item[0])

    def _on_ecm(self, p: TsPacket, now_ms: int) -> None:
        try:
            ecm = decode_ecm(p.payload[:ECM_LENGTH])
        except CodecError:
            self.metrics.sections_malformed += 1
            return
        if ecm.channel_id != self.plan.channel_id:
            return
        self._latest_period = ecm.period_index
        if (ecm.period_index, ecm.sk_generation) in self._done or self.session_key is None:
            return
        self.card.day = now_ms // DAY_MS
        raw = p.payload[:ECM_LENGTH]
        resp, elapsed, done_at = self._exchange(process_ecm_cmd(raw), now_ms)
        if resp.sw == SW_CONDITIONS:
            # card lost its session (reset); re-authenticate and retry once
            self.metrics.reauth_count += 1
            try:
                self.auth_flow(done_at)
            except AuthError:
                return
            resp, elapsed, done_at = self._exchange(process_ecm_cmd(raw), now_ms)
        self.metrics.ecm_latencies_ms.append(elapsed)
        status = f"{resp.sw:04X}"
        self.metrics.ecm_status[status] = self.metrics.ecm_status.get(status, 0) + 1
        if self.metrics.first_ecm_response_ms is None:
            self.metrics.first_ecm_response_ms = done_at
        if resp.sw == SW_OK and len(resp.data) == 32:
            even = ControlWord(aes128_block(self.session_key, resp.data[:16], Direction.DECRYPT))
            odd = ControlWord(aes128_block(self.session_key, resp.data[16:], Direction.DECRYPT))
            cur = ecm.period_index
            nxt = (cur + 1) & 0xFFFFFFFF
            even_period, odd_period = (cur, nxt) if parity_of(cur) is Parity.EVEN else (nxt, cur)
            self._schedule(done_at, {
                Parity.EVEN: Keyslot(even, ecm.channel_id, even_period),
                Parity.ODD: Keyslot(odd, ecm.channel_id, odd_period),
            })
            self.metrics.cw_released += 2
            self.authorized = True
            self._done.add((ecm.period_index, ecm.sk_generation))
        elif resp.sw == SW_SECURITY:
            self.authorized = False
            self._schedule(done_at, None)

    def _on_emm(self, p: TsPacket, now_ms: int) -> None:
        try:
            emm = decode_emm(p.payload[:emm_length_in(p.payload)])
        except CodecError:
            self.metrics.sections_malformed += 1
            return
        if emm.address_type != ADDRESS_GLOBAL and emm.card_id != self.card_id:
            return
        resp, _, _ = self._exchange(process_emm_cmd(p.payload[:emm_length_in(p.payload)]), now_ms)
        status = f"{resp.sw:04X}"
        self.metrics.emm_status[status] = self.metrics.emm_status.get(status, 0) + 1

    def _valid_slot(self, parity: Parity) -> Keyslot | None:
        slot = self.keyslots.get(parity)
        if slot is None or self._latest_period is None:
            return slot
        if (slot.period_index - self._latest_period) & 0xFFFFFFFF not in (0, 1):
            return None
        return slot

    def _on_content(self, p: TsPacket, now_ms: int) -> TsPacket | None:
        m = self.metrics
        m.packets_total += 1
        if not p.scrambled:
            m.packets_pass_through += 1
            self.clear_out += p.payload
            return p
        slot = self._valid_slot(Parity.from_scrambling_control(p.scrambling_control))
        if slot is None:
            locked = m.first_ecm_response_ms is not None and m.first_ecm_response_ms <= now_ms
            if locked:
                m.packets_gap += 1
                if m.first_gap_ms is None:
                    m.first_gap_ms = now_ms
            else:
                m.packets_pre_lock += 1
            return None
        clear = descramble_packet(p, slot.cw, CryptoPeriod(slot.channel_id, slot.period_index))
        m.packets_clear_ok += 1
        if m.first_clear_ms is None:
            m.first_clear_ms = now_ms
        self.clear_out += clear.payload
        return clear

    def on_packet(self, p: TsPacket, now_ms: int) -> TsPacket | None:
        """Process one packet at ``now_ms``; returns the clear content packet if any."""
        self.now_ms = now_ms
        self._apply_pending(now_ms)
        if p.pid == self.plan.pid_ecm:
            self._on_ecm(p, now_ms)
        elif p.pid == self.plan.pid_emm:
            self._on_emm(p, now_ms)
        elif p.pid == self.plan.pid_content:
            return self._on_content(p, now_ms)
        return None

    def stream_time(self) -> int:
        return int(self._content_seen * self.content_interval_ms)

    def feed(self, packets) -> None:
        """Consume packets using the content-paced clock."""
        for p in packets:
            now = self.stream_time()
            self.on_packet(p, now)
            if p.pid == self.plan.pid_content:
                self._content_seen += 1
        self.metrics.end_ms = self.stream_time()

    def feed_bytes(self, data: bytes) -> None:
        self.feed(iter_packets(data))


def auth_flow(card: VirtualCard, pairing_secret: bytes, trace: ApduTrace | None = None) -> tuple[bytes, int]:
    """Run the mutual authentication against ``card``; returns (session key, elapsed ms)."""
    return Receiver(card, pairing_secret, trace=trace).auth_flow()


def metrics_json(metrics: DescrambleMetrics) -> str:
    return json.dumps(metrics.to_json(), indent=2, sort_keys=True) + "\n"

