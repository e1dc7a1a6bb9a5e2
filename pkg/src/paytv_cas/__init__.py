"""Desk-scale PayTV conditional access simulator.

Head-end scrambling and entitlement messaging, a virtual ISO 7816 card
running the CA applet, a receiver that filters and descrambles, and a
harness that checks timing budgets under a logical clock.
"""

__version__ = "0.1.0"
