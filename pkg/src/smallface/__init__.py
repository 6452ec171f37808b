"""Single-level small-face detector with hard image mining."""

__version__ = "0.1.0"
