"""Scenario runner and deadline verifier.

A scenario is fully determined by its JSON document: the master seed fixes
every control word, service key, content payload and nonce. Running it
twice yields byte-identical stream, trace and report files.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .codec import ApduTrace, encode_packet
from .crypto import Direction, PrngState, aes128_block, prng_next, rsa_generate
from .errors import AuthError, CasError
from .headend import ChannelPlan, Mux, SubscriberDb
from .receiver import Receiver
from .vcard import CardProvisioning, LatencyModel, VirtualCard

STREAM_FILE = "stream.ts"
REPORT_FILE = "report.json"
DEFAULT_DURATION_MS = 60_000
EVENT_KINDS = ("grant", "revoke", "rekey", "card_reset")

_KEYGEN_LABEL = b"keygen-stream\x00\x00\x00"


class ScenarioError(CasError):
    """Scenario failed validation; ``problems`` lists every issue found."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


@dataclass(frozen=True)
class Budgets:
    auth_ms: int = 3000
    ecm_round_trip_ms: int = 100

    def to_json(self) -> dict:
        return {"auth_ms": self.auth_ms, "ecm_round_trip_ms": self.ecm_round_trip_ms}


@dataclass(frozen=True)
class ReceiverSpec:
    card_id: int
    channel_id: int = 1
    expect_access: bool = True
    pairing_hex: str | None = None  # overrides the provisioned secret (impostor STB)

    def to_json(self) -> dict:
        out = {"card_id": self.card_id, "channel_id": self.channel_id, "expect_access": self.expect_access}
        if self.pairing_hex is not None:
            out["pairing_hex"] = self.pairing_hex
        return out


@dataclass
class Scenario:
    master_seed: bytes
    channels: list[ChannelPlan]
    subscribers: SubscriberDb
    cards: list[CardProvisioning]
    receivers: list[ReceiverSpec]
    duration_ms: int = DEFAULT_DURATION_MS
    latency: LatencyModel = field(default_factory=LatencyModel)
    events: list[dict] = field(default_factory=list)

    def validate(self) -> None:
        problems: list[str] = []
        if len(self.master_seed) != 16:
            problems.append("master_seed must be 16 octets")
        if self.duration_ms <= 0:
            problems.append("duration_ms must be positive")
        chan_ids = [c.channel_id for c in self.channels]
        if not self.channels:
            problems.append("at least one channel is required")
        if len(set(chan_ids)) != len(chan_ids):
            problems.append("channel ids must be unique")
        pids = [p for c in self.channels for p in (c.pid_content, c.pid_ecm, c.pid_emm)]
        if len(set(pids)) != len(pids):
            problems.append("PIDs must be unique across channels")
        if len({c.tick_ms for c in self.channels}) > 1:
            problems.append("all channels must share tick_ms")
        card_ids = [c.card_id for c in self.cards]
        if len(set(card_ids)) != len(card_ids):
            problems.append("card ids must be unique")
        rx_cards = [r.card_id for r in self.receivers]
        if len(set(rx_cards)) != len(rx_cards):
            problems.append("each card may sit in at most one receiver")
        for r in self.receivers:
            if r.card_id not in card_ids:
                problems.append(f"receiver references unknown card {r.card_id}")
            if r.channel_id not in chan_ids:
                problems.append(f"receiver references unknown channel {r.channel_id}")
        for rec in self.subscribers:
            if len(rec.entitlements) > 16:
                problems.append(f"subscriber {rec.card_id} has more than 16 entitlements")
        for i, ev in enumerate(self.events):
            kind = ev.get("kind")
            if kind not in EVENT_KINDS:
                problems.append(f"event {i}: unknown kind {kind!r}")
                continue
            if int(ev.get("at_ms", -1)) < 0:
                problems.append(f"event {i}: at_ms must be non-negative")
            if kind in ("grant", "revoke") and ev.get("card_id") not in self.subscribers:
                problems.append(f"event {i}: unknown subscriber {ev.get('card_id')}")
            if kind == "rekey" and ev.get("channel_id") not in chan_ids:
                problems.append(f"event {i}: unknown channel {ev.get('channel_id')}")
            if kind == "card_reset" and ev.get("card_id") not in card_ids:
                problems.append(f"event {i}: unknown card {ev.get('card_id')}")
        if problems:
            raise ScenarioError(problems)

    def to_json(self) -> dict:
        return {
            "master_seed": self.master_seed.hex(),
            "duration_ms": self.duration_ms,
            "channels": [c.to_json() for c in self.channels],
            "subscribers": self.subscribers.to_json(),
            "cards": [c.to_json() for c in self.cards],
            "receivers": [r.to_json() for r in self.receivers],
            "latency": self.latency.to_json(),
            "events": self.events,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, obj: dict) -> "Scenario":
        return cls(
            master_seed=bytes.fromhex(obj["master_seed"]),
            channels=[ChannelPlan.from_json(c) for c in obj.get("channels", [{}])],
            subscribers=SubscriberDb.loads(json.dumps(obj.get("subscribers", []))),
            cards=[CardProvisioning.from_json(c) for c in obj.get("cards", [])],
            receivers=[ReceiverSpec(**r) for r in obj.get("receivers", [])],
            duration_ms=int(obj.get("duration_ms", DEFAULT_DURATION_MS)),
            latency=LatencyModel.from_json(obj.get("latency")),
            events=list(obj.get("events", [])),
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Scenario":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def generate_cards(seed: bytes, count: int, first_card_id: int = 1) -> list[CardProvisioning]:
    """Deterministic card provisioning records (IK, pairing secret, RSA pair)."""
    state = PrngState(aes128_block(seed, _KEYGEN_LABEL, Direction.ENCRYPT))
    cards = []
    for i in range(count):
        state, ik = prng_next(state, 16)
        state, pairing = prng_next(state, 16)
        rsa, state = rsa_generate(state)
        cards.append(CardProvisioning(first_card_id + i, ik, pairing, rsa))
    return cards


def subscriber_db_for(cards: list[CardProvisioning]) -> SubscriberDb:
    db = SubscriberDb()
    for c in cards:
        db.register(c.card_id, c.individual_key, c.pairing_secret, c.rsa.public)
    return db


def default_scenario(seed: bytes, entitled: bool = True, duration_ms: int = DEFAULT_DURATION_MS,
                     latency: LatencyModel | None = None, plan: ChannelPlan | None = None) -> Scenario:
    """One channel, one card; the card holds the channel's product or, if not
    ``entitled``, an unrelated product."""
    plan = plan or ChannelPlan()
    cards = generate_cards(seed, 1)
    db = subscriber_db_for(cards)
    product = plan.product_id if entitled else (plan.product_id + 1) & 0xFFFF
    db.grant(cards[0].card_id, product, 365)
    return Scenario(
        master_seed=seed,
        channels=[plan],
        subscribers=db,
        cards=cards,
        receivers=[ReceiverSpec(cards[0].card_id, plan.channel_id, expect_access=entitled)],
        duration_ms=duration_ms,
        latency=latency or LatencyModel(),
    )


@dataclass
class ReceiverResult:
    spec: ReceiverSpec
    plan: ChannelPlan
    receiver: Receiver
    auth_error: str | None = None

    @property
    def trace_file(self) -> str:
        return f"trace_{self.spec.card_id}.log"

    @property
    def clear_file(self) -> str:
        return f"received_{self.spec.card_id}.bin"


@dataclass
class Report:
    """Outcome of one scenario run. ``data`` is the JSON-serialisable body."""

    data: dict[str, Any]
    stream: bytes = b""
    clear_references: dict[int, bytes] = field(default_factory=dict)
    traces: dict[int, str] = field(default_factory=dict)
    received: dict[int, bytes] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.data.get("pass"))

    def dumps(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"

    def write(self, out_dir: str | os.PathLike) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / STREAM_FILE).write_bytes(self.stream)
        for ch, ref in self.clear_references.items():
            (out / f"clear_{ch}.bin").write_bytes(ref)
        for rx in self.data["receivers"]:
            cid = rx["card_id"]
            (out / rx["trace_file"]).write_text(self.traces[cid], encoding="utf-8")
            (out / rx["clear_file"]).write_bytes(self.received[cid])
        path = out / REPORT_FILE
        path.write_text(self.dumps(), encoding="utf-8")
        return path


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _apply_event(ev: dict, db: SubscriberDb, muxes: dict[int, Mux], cards: dict[int, VirtualCard]) -> None:
    kind = ev["kind"]
    if kind == "grant":
        db.grant(int(ev["card_id"]), int(ev["product_id"]), int(ev["expiry_day"]))
    elif kind == "revoke":
        db.revoke(int(ev["card_id"]), int(ev["product_id"]))
    elif kind == "rekey":
        muxes[int(ev["channel_id"])].rekey()
    elif kind == "card_reset":
        cards[int(ev["card_id"])].reset()


def run_scenario(s: Scenario, out_dir: str | os.PathLike | None = None,
                 budgets: Budgets | None = None) -> Report:
    """Generate the broadcast, feed every receiver, and judge the deadlines."""
    s.validate()
    budgets = budgets or Budgets()
    db = SubscriberDb.loads(s.subscribers.dumps())
    muxes = {plan.channel_id: Mux(s.master_seed, plan, db) for plan in s.channels}
    plans = {plan.channel_id: plan for plan in s.channels}
    provs = {c.card_id: c for c in s.cards}
    cards = {cid: VirtualCard.from_provisioning(p, s.latency) for cid, p in provs.items()}

    results: list[ReceiverResult] = []
    for spec in s.receivers:
        prov = provs[spec.card_id]
        pairing = bytes.fromhex(spec.pairing_hex) if spec.pairing_hex else prov.pairing_secret
        rx = Receiver(cards[spec.card_id], pairing, plans[spec.channel_id], ApduTrace(), prov.aid)
        res = ReceiverResult(spec, plans[spec.channel_id], rx)
        try:
            rx.auth_flow(0)
        except AuthError as exc:
            res.auth_error = f"{exc.sw:04X}"
        results.append(res)

    events = sorted(s.events, key=lambda ev: int(ev["at_ms"]))
    next_event = 0
    stream = bytearray()
    tick_ms = s.channels[0].tick_ms
    for now in range(0, s.duration_ms, tick_ms):
        while next_event < len(events) and int(events[next_event]["at_ms"]) <= now:
            _apply_event(events[next_event], db, muxes, cards)
            next_event += 1
        packets = []
        for plan in s.channels:
            packets.extend(muxes[plan.channel_id].tick(now))
        for p in packets:
            stream += encode_packet(p)
        for res in results:
            if res.auth_error is None:
                res.receiver.feed(packets)

    receivers_json = []
    for res in results:
        m = res.receiver.metrics
        if res.auth_error is not None:
            m.end_ms = s.duration_ms
        receivers_json.append({
            "card_id": res.spec.card_id,
            "channel_id": res.spec.channel_id,
            "expect_access": res.spec.expect_access,
            "auth_error": res.auth_error,
            "cw_period_ms": res.plan.cw_period_ms,
            "metrics": m.to_json(),
            "trace_file": res.trace_file,
            "trace_sha256": _sha256(res.receiver.trace.dumps().encode()),
            "clear_file": res.clear_file,
            "clear_sha256": _sha256(bytes(res.receiver.clear_out)),
        })

    data: dict[str, Any] = {
        "scenario_sha256": _sha256(s.dumps().encode()),
        "duration_ms": s.duration_ms,
        "latency": s.latency.to_json(),
        "stream_file": STREAM_FILE,
        "stream_packets": len(stream) // 188,
        "stream_sha256": _sha256(bytes(stream)),
        "receivers": receivers_json,
    }
    verdicts = verify_deadlines(data, budgets)
    data["budgets"] = budgets.to_json()
    data["verdicts"] = verdicts
    data["pass"] = all(v["pass"] for rx in verdicts for v in rx["checks"].values())

    report = Report(
        data=data,
        stream=bytes(stream),
        clear_references={ch: bytes(m.clear_reference) for ch, m in muxes.items()},
        traces={res.spec.card_id: res.receiver.trace.dumps() for res in results},
        received={res.spec.card_id: bytes(res.receiver.clear_out) for res in results},
    )
    if out_dir is not None:
        report.write(out_dir)
    return report


def _missed_boundaries(metrics: dict, period_ms: int) -> list[int]:
    lock = metrics.get("first_clear_ms")
    if lock is None:
        return []
    ready = {int(k): v for k, v in metrics.get("cw_ready_ms", {}).items()}
    missed = []
    q = lock // period_ms + 1
    while q * period_ms < metrics["end_ms"]:
        at = ready.get(q)
        if at is None or at > q * period_ms:
            missed.append(q * period_ms)
        q += 1
    return missed


def verify_deadlines(report: dict | Report, budgets: Budgets | None = None) -> list[dict]:
    """Per-receiver verdicts computed only from recorded metrics."""
    budgets = budgets or Budgets()
    data = report.data if isinstance(report, Report) else report
    out = []
    for rx in data["receivers"]:
        m = rx["metrics"]
        auth = m.get("auth_elapsed_ms")
        ecm_max = max(m["ecm_latencies_ms"], default=0)
        got_access = m["cw_released"] > 0
        checks = {
            "auth": {
                "value_ms": auth,
                "budget_ms": budgets.auth_ms,
                "pass": rx.get("auth_error") is None and auth is not None and auth <= budgets.auth_ms,
            },
            "ecm_round_trip": {
                "max_ms": ecm_max,
                "budget_ms": budgets.ecm_round_trip_ms,
                "pass": ecm_max <= budgets.ecm_round_trip_ms,
            },
            "access": {"expected": rx["expect_access"], "observed": got_access,
                       "pass": got_access == rx["expect_access"]},
        }
        if rx["expect_access"]:
            missed = _missed_boundaries(m, rx["cw_period_ms"])
            checks["cw_before_boundary"] = {
                "missed_boundaries_ms": missed,
                "pass": got_access and not missed,
            }
        else:
            checks["cw_before_boundary"] = {"missed_boundaries_ms": [], "pass": True, "applicable": False}
        out.append({"card_id": rx["card_id"], "checks": checks})
    return out
