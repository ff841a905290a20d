"""Near-field imaging from modulated-signal observations."""

__version__ = "0.1.0"
