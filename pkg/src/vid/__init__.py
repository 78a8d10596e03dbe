"""Self-supervised video representation learning by incoherence detection."""

__version__ = "0.1.0"
