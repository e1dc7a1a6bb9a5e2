from __future__ import annotations

import pytest

from paytv_cas.harness import generate_cards, subscriber_db_for
from paytv_cas.receiver import Receiver
from paytv_cas.vcard import VirtualCard

SEED = bytes(range(16))

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def seed() -> bytes:
    return SEED


@pytest.fixture(scope="session")
def provisioned():
    """Two deterministic cards; RSA generation is the slow part, so share them."""
    return generate_cards(SEED, 2)


@pytest.fixture
def card(provisioned):
    return VirtualCard.from_provisioning(provisioned[0])


@pytest.fixture
def other_card(provisioned):
    return VirtualCard.from_provisioning(provisioned[1])


@pytest.fixture
def db(provisioned):
    return subscriber_db_for(provisioned)


@pytest.fixture
def authed(card, provisioned):
    """(card, receiver) after a successful mutual authentication."""
    rx = Receiver(card, provisioned[0].pairing_secret)
    rx.auth_flow()
    return card, rx
