"""Command line entry point.

Exit codes: 0 success, 1 a deadline/access verdict failed (or the receiver
could not authenticate), 2 usage error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import crypto
from .codec import encode_packet, iter_packets
from .crypto import Direction, MacCipher
from .errors import AuthError, CasError
from .harness import Budgets, Scenario, default_scenario, generate_cards, run_scenario, subscriber_db_for
from .headend import ChannelPlan, Mux, SubscriberDb
from .receiver import Receiver, metrics_json
from .vcard import CardProvisioning, LatencyModel, VirtualCard

FIPS197_KEY = bytes(range(16))
FIPS197_PT = bytes.fromhex("00112233445566778899aabbccddeeff")
TDES_KEY = bytes.fromhex("0123456789abcdef23456789abcdef01")
TDES_PT = bytes.fromhex("4e6f772069732074")


def kat_vectors() -> list[tuple[str, str]]:
    """(name, lowercase hex) for each built-in known-answer computation."""
    aes_ct = crypto.aes128_block(FIPS197_KEY, FIPS197_PT, Direction.ENCRYPT)
    tdes_ct = crypto.tdes_block(TDES_KEY, TDES_PT, Direction.ENCRYPT)
    rsa_c = crypto.rsa_apply(17, 3233, 65)
    rsa_m = crypto.rsa_apply(2753, 3233, rsa_c)
    prng = crypto.PrngState(FIPS197_KEY)
    _, prng_out = crypto.prng_next(prng, 16)
    return [
        ("aes128_encrypt", aes_ct.hex()),
        ("aes128_decrypt", crypto.aes128_block(FIPS197_KEY, aes_ct, Direction.DECRYPT).hex()),
        ("tdes_ede2_encrypt", tdes_ct.hex()),
        ("tdes_ede2_decrypt", crypto.tdes_block(TDES_KEY, tdes_ct, Direction.DECRYPT).hex()),
        ("rsa_3233_e17_m65", format(rsa_c, "x")),
        ("rsa_3233_d2753_c2790", format(rsa_m, "x")),
        ("ctr_keystream_32", crypto.ctr_keystream(FIPS197_KEY, bytes(16), 32).hex()),
        ("cbc_mac_aes_empty", crypto.cbc_mac(FIPS197_KEY, b"", MacCipher.AES).hex()),
        ("cbc_mac_tdes_empty", crypto.cbc_mac(TDES_KEY, b"", MacCipher.TDES).hex()),
        ("prng_block0", prng_out.hex()),
        ("kdf_session", crypto.kdf_session(bytes(16), bytes([0xFF] * 16), FIPS197_KEY).hex()),
    ]


def _seed(value: str) -> bytes:
    try:
        seed = bytes.fromhex(value)
    except ValueError:
        raise click.BadParameter("seed must be hex") from None
    if len(seed) != 16:
        raise click.BadParameter("seed must be 32 hex digits (16 octets)")
    return seed


def _seed_option(required: bool = True):
    return click.option("--seed", "seed", required=required, callback=lambda ctx, p, v: _seed(v) if v else None,
                        help="master seed, 32 hex digits")


def _plan(channel: int, product: int, pid_base: int) -> ChannelPlan:
    return ChannelPlan(channel_id=channel, product_id=product,
                       pid_content=pid_base, pid_ecm=pid_base + 1, pid_emm=pid_base + 2)


@click.group()
def main() -> None:
    """PayTV conditional access simulator."""


@main.command()
def kat() -> None:
    """Print known-answer results, one name=hex line each."""
    for name, value in kat_vectors():
        click.echo(f"{name}={value}")


@main.command()
@_seed_option()
@click.option("--count", default=1, show_default=True, type=click.IntRange(1, 1000))
@click.option("--first-card-id", default=1, show_default=True, type=click.IntRange(0, 0xFFFFFFFF))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False, path_type=Path))
@click.option("--product", default=None, type=click.IntRange(0, 0xFFFF), help="grant this product to every card")
@click.option("--expiry-day", default=365, show_default=True, type=click.IntRange(0, 0xFFFF))
def keygen(seed, count, first_card_id, out_dir, product, expiry_day) -> None:
    """Emit card provisioning files and a matching subscriber DB."""
    cards = generate_cards(seed, count, first_card_id)
    out_dir.mkdir(parents=True, exist_ok=True)
    db = subscriber_db_for(cards)
    for card in cards:
        card.save(out_dir / f"card_{card.card_id}.json")
        if product is not None:
            db.grant(card.card_id, product, expiry_day)
    db.save(out_dir / "db.json")
    click.echo(f"wrote {count} card(s) and db.json to {out_dir}")


@main.command()
@click.option("--db", "db_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--channel", default=1, show_default=True, type=click.IntRange(0, 0xFFFF))
@click.option("--product", default=1, show_default=True, type=click.IntRange(0, 0xFFFF))
@click.option("--pid-base", default=0x100, show_default=True, type=click.IntRange(0, 0x1FFD),
              help="content PID; ECM and EMM use the next two")
@click.option("--duration-ms", default=60_000, show_default=True, type=click.IntRange(1))
@_seed_option()
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.option("--clear-out", required=True, type=click.Path(dir_okay=False, path_type=Path))
def headend(db_path, channel, product, pid_base, duration_ms, seed, out, clear_out) -> None:
    """Generate a scrambled broadcast stream and its clear reference."""
    mux = Mux(seed, _plan(channel, product, pid_base), SubscriberDb.load(db_path))
    with open(out, "wb") as fh:
        for _, packets in mux.ticks(duration_ms):
            fh.write(b"".join(encode_packet(p) for p in packets))
    clear_out.write_bytes(bytes(mux.clear_reference))


@main.command()
@click.option("--stream", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--card", "card_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.option("--metrics", "metrics_path", required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.option("--trace", "trace_path", default=None, type=click.Path(dir_okay=False, path_type=Path))
@click.option("--channel", default=1, show_default=True, type=click.IntRange(0, 0xFFFF))
@click.option("--product", default=1, show_default=True, type=click.IntRange(0, 0xFFFF))
@click.option("--pid-base", default=0x100, show_default=True, type=click.IntRange(0, 0x1FFD))
def receive(stream, card_path, out, metrics_path, trace_path, channel, product, pid_base) -> None:
    """Authenticate with a virtual card and descramble a stream file."""
    prov = CardProvisioning.load(card_path)
    card = VirtualCard.from_provisioning(prov)
    rx = Receiver(card, prov.pairing_secret, _plan(channel, product, pid_base), aid=prov.aid)
    try:
        rx.auth_flow(0)
    except AuthError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    try:
        rx.feed(iter_packets(stream.read_bytes()))
    except CasError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    out.write_bytes(bytes(rx.clear_out))
    metrics_path.write_text(metrics_json(rx.metrics), encoding="utf-8")
    if trace_path is not None:
        trace_path.write_text(rx.trace.dumps(), encoding="utf-8")


@main.command()
@_seed_option(required=False)
@click.option("--scenario", "scenario_path", default=None,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out-dir", default=None, type=click.Path(file_okay=False, path_type=Path))
@click.option("--duration-ms", default=60_000, show_default=True, type=click.IntRange(1))
@click.option("--unentitled", is_flag=True, help="default scenario: card lacks the channel product")
@click.option("--latency", "latency_json", default=None, help='JSON overrides, e.g. \'{"rsa": 5000}\'')
@click.option("--ecm-interval-ms", default=None, type=click.IntRange(1))
@click.option("--auth-budget-ms", default=3000, show_default=True, type=click.IntRange(0))
@click.option("--ecm-budget-ms", default=100, show_default=True, type=click.IntRange(0))
def e2e(seed, scenario_path, out_dir, duration_ms, unentitled, latency_json, ecm_interval_ms,
        auth_budget_ms, ecm_budget_ms) -> None:
    """Run a scenario end to end and print the report; exit 1 on any failed verdict."""
    if scenario_path is None and seed is None:
        raise click.UsageError("either --seed or --scenario is required")
    try:
        overrides = json.loads(latency_json) if latency_json else {}
        latency = LatencyModel(**{**LatencyModel().to_json(), **overrides})
    except (ValueError, TypeError) as exc:
        raise click.BadParameter(f"--latency: {exc}") from None
    if scenario_path is not None:
        scenario = Scenario.load(scenario_path)
        if latency_json:
            scenario.latency = latency
    else:
        plan = ChannelPlan(ecm_interval_ms=ecm_interval_ms) if ecm_interval_ms else ChannelPlan()
        scenario = default_scenario(seed, entitled=not unentitled, duration_ms=duration_ms,
                                    latency=latency, plan=plan)
    budgets = Budgets(auth_ms=auth_budget_ms, ecm_round_trip_ms=ecm_budget_ms)
    try:
        report = run_scenario(scenario, out_dir, budgets)
    except CasError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(report.dumps(), nl=False)
    sys.exit(0 if report.passed else 1)


if __name__ == "__main__":
    main()
